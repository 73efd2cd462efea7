import numpy as np
import pytest

from nonsac.datagen import SceneConfig, gen_relpose
from nonsac.geometry import rotation_distance_deg
from nonsac.ransac import (
    EstimationFailed,
    EstimatorOutput,
    RansacConfig,
    draw_minimal_sets,
    is_low_support,
    ransac,
    tie_break,
    truncated_cost,
)
from nonsac.relpose import estimate_relpose


def _out(n, resid_sum, iteration=0):
    res = np.full(n, resid_sum / max(n, 1))
    return EstimatorOutput(None, np.arange(n), res, 1, iteration=iteration)


class TestTieBreak:
    def test_single(self):
        c = _out(3, 1.0)
        assert tie_break([c]) is c

    def test_more_inliers_wins(self):
        a, b = _out(40, 1.0), _out(41, 5.0)
        assert tie_break([a, b]) is b

    def test_residual_sum_breaks_count_tie(self):
        a, b = _out(10, 3.1), _out(10, 2.9)
        assert tie_break([a, b]) is b

    def test_earliest_iteration_last(self):
        a, b = _out(10, 2.0, iteration=5), _out(10, 2.0, iteration=2)
        assert tie_break([a, b]) is b

    def test_empty(self):
        with pytest.raises(ValueError):
            tie_break([])


class TestConfig:
    def test_validation(self):
        with pytest.raises(ValueError):
            RansacConfig(0.0)
        with pytest.raises(ValueError):
            RansacConfig(1.0, minimal_iterations=0)


class TestDrawMinimalSets:
    def test_rows_distinct(self, rng):
        idx = draw_minimal_sets(rng, 7, 5, 2000)
        assert idx.shape == (2000, 5)
        assert all(len(set(r)) == 5 for r in idx)
        assert idx.min() >= 0 and idx.max() < 7

    def test_too_large(self, rng):
        with pytest.raises(ValueError):
            draw_minimal_sets(rng, 3, 5, 1)


class TestLoop:
    def _line_problem(self, rng, n=200, inlier_frac=0.5):
        # y = 2x + 1 with outliers; minimal solver on 2 points
        x = rng.uniform(-1, 1, n)
        y = 2 * x + 1
        k = int((1 - inlier_frac) * n)
        y[:k] = rng.uniform(-3, 3, k)
        pts = np.column_stack([x, y])

        def solve(idx):
            p, q = pts[idx[:, 0]], pts[idx[:, 1]]
            a = (q[:, 1] - p[:, 1]) / (q[:, 0] - p[:, 0])
            b = p[:, 1] - a * p[:, 0]
            models = np.column_stack([a, b])[:, None, :]
            return models, np.isfinite(models[..., 0])

        def residuals(models):
            return np.abs(pts[:, 1][None] - models[:, :1] * pts[:, 0][None] - models[:, 1:2])

        return pts, solve, residuals

    def test_recovers_line_and_budget(self, rng):
        pts, solve, res = self._line_problem(rng)
        out = ransac(len(pts), solve, res, 2, RansacConfig(1e-6, 50), rng)
        assert np.allclose(out.model, [2, 1])
        assert out.n_inliers == 100
        assert out.iterations_used == 50
        assert not out.low_support

    def test_budget_scale(self, rng):
        pts, solve, res = self._line_problem(rng)
        out = ransac(len(pts), solve, res, 2, RansacConfig(1e-6, 50), rng, budget_scale=3)
        assert out.iterations_used == 150

    def test_failure_when_nothing_fits(self, rng):
        pts, _, res = self._line_problem(rng, n=20, inlier_frac=1.0)

        def no_solutions(idx):
            return np.zeros((len(idx), 1, 2)), np.zeros((len(idx), 1), bool)

        with pytest.raises(EstimationFailed):
            ransac(len(pts), no_solutions, res, 2, RansacConfig(1e-6, 5), rng)

    def test_deterministic(self):
        pts, solve, res = self._line_problem(np.random.default_rng(0))
        a = ransac(len(pts), solve, res, 2, RansacConfig(0.1, 20), np.random.default_rng(3))
        b = ransac(len(pts), solve, res, 2, RansacConfig(0.1, 20), np.random.default_rng(3))
        assert np.array_equal(a.model, b.model) and a.iteration == b.iteration


class TestLowSupport:
    def test_bound(self):
        assert is_low_support(10, {"minimal_size": 5})
        assert not is_low_support(11, {"minimal_size": 5})
        assert is_low_support(35, {"minimal_size": 5, "chance_inliers": 20.0})
        assert not is_low_support(60, {"minimal_size": 5, "chance_inliers": 20.0})

    def test_truncated_cost(self):
        assert truncated_cost(np.array([0.0, 0.5, 2.0, np.nan]), 1.0, 2) == pytest.approx(2.25)


class TestRelposeRansacBehaviour:
    def test_pure_inlier_noiseless(self):
        data, gt = gen_relpose(SceneConfig("relpose", 300, 0.0, 0.0), np.random.default_rng(1))
        out = estimate_relpose(data.a, data.b, RansacConfig(1e-10, 20), np.random.default_rng(2))
        assert out.n_inliers == 300
        assert rotation_distance_deg(out.model.rotation, gt.rotation) < 1e-6

    def test_pure_outlier_flagged(self, rng):
        x1, x2 = rng.uniform(-1, 1, (2, 1000, 2))
        out = estimate_relpose(x1, x2, RansacConfig(1e-4, 100), rng)
        assert out.low_support
        assert out.n_inliers < 0.1 * len(x1)

    @pytest.mark.slow
    def test_hit_probability(self):
        # Closed form: one all-inlier 5-point draw among 100 at 35% inliers.
        p_hit = 1 - (1 - 0.35**5) ** 100
        assert p_hit == pytest.approx(0.41, abs=0.005)
        ss = np.random.SeedSequence(2024)
        runs = 500
        hits = 0
        for child in ss.spawn(runs):
            s1, s2 = child.spawn(2)
            data, gt = gen_relpose(SceneConfig("relpose", 1000, 0.0, 0.65), np.random.default_rng(s1))
            try:
                out = estimate_relpose(data.a, data.b, RansacConfig(1e-10, 100), np.random.default_rng(s2))
            except EstimationFailed:
                continue
            hits += rotation_distance_deg(out.model.rotation, gt.rotation) < 1e-4
        assert abs(hits / runs - p_hit) <= 0.07
