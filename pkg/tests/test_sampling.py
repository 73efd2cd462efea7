import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from nonsac.sampling import (
    DISJOINT,
    UNIFORM,
    SamplePlan,
    clt_std,
    draw_samples,
    sample_inlier_proportion_stats,
)


class TestSamplePlan:
    def test_bad_values(self):
        with pytest.raises(ValueError):
            SamplePlan(0, 10)
        with pytest.raises(ValueError):
            SamplePlan(1, 0)
        with pytest.raises(ValueError):
            SamplePlan(1, 10, mode="stratified")

    def test_dataset_too_small(self):
        with pytest.raises(ValueError, match="smaller than sample size"):
            SamplePlan(2, 10).validate(5)

    def test_cannot_partition(self):
        with pytest.raises(ValueError, match="cannot partition"):
            SamplePlan(3, 10, DISJOINT).validate(25)

    def test_below_minimal(self):
        with pytest.raises(ValueError, match="minimal"):
            SamplePlan(2, 4).validate(100, minimal_size=5)


class TestDrawSamples:
    def test_disjoint_covers_permutation_prefix(self):
        s = draw_samples(SamplePlan(10, 1000, DISJOINT), 10_000, 4)
        assert len(s) == 10
        allidx = np.concatenate(s.indices)
        assert len(np.unique(allidx)) == 10_000
        assert all(len(i) == 1000 for i in s.indices)

    def test_full_sample(self):
        s = draw_samples(SamplePlan(1, 50), 50, 0)
        assert np.array_equal(s.indices[0], np.arange(50))

    def test_deterministic(self):
        a = draw_samples(SamplePlan(3, 5, UNIFORM), 6, 99)
        b = draw_samples(SamplePlan(3, 5, UNIFORM), 6, 99)
        assert [x.tobytes() for x in a.indices] == [x.tobytes() for x in b.indices]

    def test_fixed_sample_repeats(self):
        s = draw_samples(SamplePlan(4, 20, UNIFORM, fixed_sample=True), 100, 1)
        assert all(np.array_equal(s.indices[0], x) for x in s.indices)

    def test_seed_sequence_accepted(self):
        ss = np.random.SeedSequence(5)
        a = draw_samples(SamplePlan(2, 3), 10, ss)
        b = draw_samples(SamplePlan(2, 3), 10, np.random.SeedSequence(5))
        assert all(np.array_equal(x, y) for x, y in zip(a.indices, b.indices))

    def test_union(self):
        s = draw_samples(SamplePlan(3, 4, DISJOINT), 12, 0)
        assert np.array_equal(s.union(), np.arange(12))

    @given(st.integers(1, 6), st.integers(1, 20), st.integers(0, 10), st.integers(0, 1000))
    def test_sample_properties(self, m, N, extra, seed):
        n = m * N + extra
        for mode in (UNIFORM, DISJOINT):
            s = draw_samples(SamplePlan(m, N, mode), n, seed)
            for idx in s.indices:
                assert len(idx) == N
                assert len(np.unique(idx)) == N
                assert idx.min() >= 0 and idx.max() < n
            if mode == DISJOINT:
                assert len(np.unique(np.concatenate(s.indices))) == m * N


class TestInlierProportion:
    @pytest.mark.parametrize("P,N", [(0.5, 1000), (0.35, 1000), (0.1, 2000)])
    def test_clt(self, P, N):
        n = 20 * N
        mask = np.zeros(n, dtype=bool)
        mask[: int(P * n)] = True
        mean, std = sample_inlier_proportion_stats(mask, SamplePlan(1, N), np.random.default_rng(0), 2000)
        assert mean == pytest.approx(P, abs=0.01)
        assert abs(std - clt_std(P, N)) <= 0.2 * clt_std(P, N)

    def test_clt_value(self):
        assert clt_std(0.5, 1000) == pytest.approx(0.0158, abs=1e-4)

    @pytest.mark.parametrize("value", [False, True])
    def test_saturated(self, value):
        mask = np.full(500, value)
        mean, std = sample_inlier_proportion_stats(mask, SamplePlan(1, 100), np.random.default_rng(0), 100)
        assert mean == float(value) and std == 0.0

    def test_too_few_draws(self):
        with pytest.raises(ValueError):
            sample_inlier_proportion_stats(np.ones(10, bool), SamplePlan(1, 5), np.random.default_rng(0), 10)
