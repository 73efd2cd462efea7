import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nonsac.datagen import SceneConfig, gen_pcr
from nonsac.geometry import random_rotation, rotation_distance_deg
from nonsac.pcr import (
    Pcr99Config,
    consistency_matrix,
    estimate_pcr,
    pairwise_consistency,
    procrustes_3pt,
    registration_residuals,
    score_correspondences,
)
from nonsac.ransac import EstimationFailed


class TestConfig:
    def test_from_sigma(self):
        c = Pcr99Config.from_sigma(0.01)
        assert c.prescreen_tolerance == pytest.approx(0.06)
        assert c.inlier_threshold == pytest.approx(0.05)

    @pytest.mark.parametrize("kw", [
        dict(termination_mode="forever"),
        dict(ordering="random"),
        dict(max_valid_triplets=0),
        dict(partners_per_anchor=1),
        dict(termination_mode="inlier-ratio", target_inlier_ratio=0.0),
    ])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            Pcr99Config.from_sigma(0.01, **kw)


class TestConsistency:
    def test_exact_inliers_zero(self, rng):
        R, t = random_rotation(rng), rng.uniform(-1, 1, 3)
        p = rng.uniform(0, 1, (2, 3))
        q = p @ R.T + t
        assert pairwise_consistency(p[0], p[1], q[0], q[1]) < 1e-12

    def test_noisy_inliers_within_6_sigma(self):
        rng = np.random.default_rng(0)
        n = 10_000
        p = rng.uniform(0, 1, (n, 2, 3))
        q = p + 0.01 * rng.standard_normal(p.shape)
        v = pairwise_consistency(p[:, 0], p[:, 1], q[:, 0], q[:, 1])
        assert np.mean(v < 0.06) >= 0.99

    def test_outlier_scale(self):
        rng = np.random.default_rng(1)
        p = rng.uniform(0, 1, (5000, 2, 3))
        q = p.copy()
        q[:, 1] = rng.uniform(0, 1, (5000, 3))
        v = pairwise_consistency(p[:, 0], p[:, 1], q[:, 0], q[:, 1])
        assert 0.1 < np.median(v) < 1.0

    def test_matrix_matches_pairwise(self, rng):
        a, b = rng.uniform(0, 1, (2, 30, 3))
        C = consistency_matrix(a, b, 0.3)
        ref = pairwise_consistency(a[:, None], a[None], b[:, None], b[None]) < 0.3
        np.fill_diagonal(ref, False)
        assert np.array_equal(C, ref)


class TestScores:
    def test_pure_inliers_saturate(self, rng):
        src = rng.uniform(0, 1, (200, 3))
        cfg = Pcr99Config(0.01, 0.01, scoring_subset_size=50)
        scores = score_correspondences(src, src + 0.5, cfg, rng)
        assert np.all(scores == 50)

    def test_outliers_far_below(self, rng):
        src, dst = rng.uniform(0, 1, (2, 400, 3))
        cfg = Pcr99Config(0.01, 0.01, scoring_subset_size=100)
        scores = score_correspondences(src, dst, cfg, rng)
        assert scores.mean() < 10

    @staticmethod
    def _corfree_scores(seed):
        # 100 + 100 points with full overlap: 10,000 pairs, 1% true matches
        from nonsac.datagen import bunny_like_cloud, gen_corfree

        cfg = SceneConfig("corfree", 10_000, 0.01, 0.0, points_per_cloud=100, overlap=1.0)
        pairs, gt = gen_corfree(bunny_like_cloud(), cfg, np.random.default_rng(seed))
        a, b = pairs.take(np.arange(len(pairs)))
        s = score_correspondences(a, b, Pcr99Config.from_sigma(0.01), np.random.default_rng(0))
        return s[gt.inlier_mask], s[~gt.inlier_mask]

    def test_inlier_scores_significantly_higher(self):
        si, so = self._corfree_scores(1)
        se = np.sqrt(si.var(ddof=1) / len(si) + so.var(ddof=1) / len(so))
        assert si.mean() - so.mean() >= 3 * se

    @pytest.mark.xfail(strict=True, reason="degree scores overlap: effect size is about 1, not 3")
    def test_inlier_scores_separated_by_three_pooled_std(self):
        si, so = self._corfree_scores(1)
        pooled = np.sqrt((si.var() + so.var()) / 2)
        assert si.mean() - so.mean() >= 3 * pooled


class TestProcrustes:
    def test_identity(self, rng):
        p = rng.uniform(0, 1, (3, 3))
        T = procrustes_3pt(p, p)
        assert np.abs(T.rotation - np.eye(3)).max() < 1e-12
        assert np.abs(T.translation).max() < 1e-12

    def test_pure_translation(self, rng):
        p = rng.uniform(0, 1, (3, 3))
        T = procrustes_3pt(p, p + [0, 0, 1])
        assert np.allclose(T.translation, [0, 0, 1], atol=1e-12)

    def test_collinear(self):
        p = np.array([[0.0, 0, 0], [1, 1, 1], [2, 2, 2]])
        with pytest.raises(ValueError, match="degenerate"):
            procrustes_3pt(p, p)

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=200)
    def test_round_trip(self, seed):
        rng = np.random.default_rng(seed)
        R, t = random_rotation(rng), rng.uniform(-1, 1, 3)
        p = rng.uniform(0, 1, (3, 3))
        T = procrustes_3pt(p, p @ R.T + t)
        assert np.abs(T.rotation - R).max() < 1e-9
        assert np.abs(T.translation - t).max() < 1e-9

    def test_residuals_shape(self, rng):
        R = np.stack([np.eye(3)] * 4)
        t = np.zeros((4, 3))
        assert registration_residuals(R, t, *rng.uniform(0, 1, (2, 10, 3))).shape == (4, 10)


class TestEstimatePcr:
    def test_pure_inlier_exact(self):
        data, gt = gen_pcr(SceneConfig("pcr", 200, 0.0, 0.0), np.random.default_rng(0))
        out = estimate_pcr(data.a, data.b, Pcr99Config(1e-6, 1e-6), np.random.default_rng(1))
        assert out.n_inliers == 200
        assert rotation_distance_deg(out.model.rotation, gt.rotation) < 1e-6

    def test_pure_outlier(self, rng):
        src, dst = rng.uniform(0, 1, (2, 1000, 3))
        try:
            out = estimate_pcr(src, dst, Pcr99Config.from_sigma(0.01), rng)
        except EstimationFailed:
            return
        assert out.low_support

    @pytest.mark.parametrize("ordering", ["rank", "anchor"])
    def test_high_outlier_sample(self, ordering):
        # 1% inliers among 2000 correspondences, the per-sample regime
        data, gt = gen_pcr(SceneConfig("pcr", 2000, 0.01, 0.99), np.random.default_rng(7))
        cfg = Pcr99Config.from_sigma(0.01, ordering=ordering)
        out = estimate_pcr(data.a, data.b, cfg, np.random.default_rng(8))
        assert out.iterations_used <= cfg.max_total_triplets
        assert out.extra["valid_triplets"] <= cfg.max_valid_triplets
        if ordering == "anchor":
            assert rotation_distance_deg(out.model.rotation, gt.rotation) < 2.0

    def test_budget_scale_raises_cap(self):
        data, _ = gen_pcr(SceneConfig("pcr", 500, 0.01, 0.99), np.random.default_rng(2))
        cfg = Pcr99Config.from_sigma(0.01, max_total_triplets=100, max_valid_triplets=10**6)
        try:
            out = estimate_pcr(data.a, data.b, cfg, np.random.default_rng(3), budget_scale=5)
        except EstimationFailed:
            pytest.skip("no hypothesis in this draw")
        assert 100 < out.iterations_used <= 500

    def test_inlier_ratio_mode(self):
        data, gt = gen_pcr(SceneConfig("pcr", 1000, 0.01, 0.9), np.random.default_rng(4))
        cfg = Pcr99Config.from_sigma(0.01, termination_mode="inlier-ratio", target_inlier_ratio=0.05,
                                     min_valid_triplets=50)
        out = estimate_pcr(data.a, data.b, cfg, np.random.default_rng(5))
        assert out.n_inliers >= 50
        assert rotation_distance_deg(out.model.rotation, gt.rotation) < 2.0

    def test_too_few(self):
        with pytest.raises(ValueError):
            estimate_pcr(np.zeros((2, 3)), np.zeros((2, 3)), Pcr99Config.from_sigma(0.01))
