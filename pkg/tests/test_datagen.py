import numpy as np
import pytest

from nonsac.datagen import (
    AllPairs,
    SceneConfig,
    bunny_like_cloud,
    gen_corfree,
    gen_pcr,
    gen_pnp,
    gen_relpose,
    generate,
    normalize_to_unit_cube,
)
from nonsac.geometry import essential_from_pose, is_rotation, sampson_error
from nonsac.pcr import registration_residuals
from nonsac.pnp import reprojection_errors


class TestSceneConfig:
    @pytest.mark.parametrize("kw", [
        dict(problem="stereo"), dict(outlier_ratio=1.0), dict(outlier_ratio=-0.1), dict(sigma=-1.0),
        dict(n=2), dict(overlap=0.0),
    ])
    def test_invalid(self, kw):
        base = dict(problem="relpose", n=100, sigma=0.0, outlier_ratio=0.5)
        base.update(kw)
        with pytest.raises(ValueError):
            SceneConfig(**base)


class TestRelpose:
    def test_noiseless_consistent(self, rng):
        data, gt = gen_relpose(SceneConfig("relpose", 300, 0.0, 0.0), rng)
        E = essential_from_pose(gt.rotation, gt.translation)
        assert np.max(sampson_error(data.a, data.b, E)) < 1e-20

    def test_outlier_count_and_baseline(self, rng):
        data, gt = gen_relpose(SceneConfig("relpose", 10_000, 0.002, 0.65), rng)
        assert gt.inlier_mask.sum() == 3500
        assert np.linalg.norm(gt.translation) == pytest.approx(1.0, abs=1e-12)
        assert is_rotation(gt.rotation)
        assert np.abs(data.a).max() <= 1.0 + 0.05 and np.abs(data.b).max() <= 1.0 + 0.05

    def test_deterministic(self):
        a, _ = gen_relpose(SceneConfig("relpose", 50, 0.01, 0.5), np.random.default_rng(3))
        b, _ = gen_relpose(SceneConfig("relpose", 50, 0.01, 0.5), np.random.default_rng(3))
        assert np.array_equal(a.a, b.a) and np.array_equal(a.b, b.b)


class TestPnP:
    def test_noiseless_zero_error(self, rng):
        data, gt = gen_pnp(SceneConfig("pnp", 300, 0.0, 0.0), rng)
        P = np.column_stack([gt.rotation, gt.translation])
        assert np.max(reprojection_errors(P, data.a, data.b)) < 1e-12

    def test_inlier_fraction_and_depths(self, rng):
        data, gt = gen_pnp(SceneConfig("pnp", 1000, 0.005, 0.92), rng)
        assert gt.inlier_mask.sum() == 80
        depth2 = (data.a @ gt.rotation.T + gt.translation)[:, 2]
        assert depth2.min() > 0.1


class TestPcr:
    def test_noiseless_triplet(self, rng):
        from nonsac.pcr import procrustes_3pt

        data, gt = gen_pcr(SceneConfig("pcr", 50, 0.0, 0.0), rng)
        T = procrustes_3pt(data.a[:3], data.b[:3])
        assert np.allclose(T.rotation, gt.rotation, atol=1e-9)
        assert np.max(registration_residuals(gt.rotation, gt.translation, data.a, data.b)) < 1e-12

    def test_outliers(self, rng):
        data, gt = gen_pcr(SceneConfig("pcr", 20_000, 0.01, 0.99), rng)
        assert gt.inlier_mask.sum() == 200
        center = gt.rotation @ np.full(3, 0.5) + gt.translation
        d = np.linalg.norm(data.b[~gt.inlier_mask] - center, axis=1)
        assert d.max() <= np.sqrt(3) / 2 + 1e-12


class TestCorfree:
    def test_counts_full_scale(self, rng):
        cloud = bunny_like_cloud(3000)
        pairs, gt = gen_corfree(cloud, SceneConfig("corfree", 250_000, 0.01, 0.0, 500, 0.5), rng)
        assert len(pairs) == 250_000
        assert gt.inlier_mask.sum() == 250
        assert gt.inlier_mask.mean() == pytest.approx(0.001)

    def test_counts_desk_scale(self, rng):
        pairs, gt = gen_corfree(bunny_like_cloud(1000), SceneConfig("corfree", 40_000, 0.01, 0.0, 200, 0.5), rng)
        assert len(pairs) == 40_000 and gt.inlier_mask.sum() == 100

    def test_identity_full_overlap(self, rng):
        cloud = rng.uniform(0, 1, (50, 3))
        cfg = SceneConfig("corfree", 2500, 0.0, 0.0, 50, 1.0)
        pairs, gt = gen_corfree(cloud, cfg, rng, transform=False)
        a, b = pairs.take(np.flatnonzero(gt.inlier_mask))
        assert np.array_equal(a, b)

    def test_true_pairs_follow_transform(self, rng):
        pairs, gt = gen_corfree(bunny_like_cloud(500), SceneConfig("corfree", 10_000, 0.0, 0.0, 100, 0.5), rng)
        a, b = pairs.take(np.flatnonzero(gt.inlier_mask))
        assert np.max(registration_residuals(gt.rotation, gt.translation, a, b)) < 1e-12

    def test_cloud_too_small(self, rng):
        with pytest.raises(ValueError, match="needed"):
            gen_corfree(rng.uniform(0, 1, (100, 3)), SceneConfig("corfree", 10_000, 0.0, 0.0, 100, 0.5), rng)

    def test_all_pairs_indexing(self):
        src = np.arange(6.0).reshape(2, 3)
        tgt = np.arange(9.0).reshape(3, 3) + 100
        pairs = AllPairs(src, tgt)
        assert len(pairs) == 6
        a, b = pairs.take([4])
        assert np.array_equal(a[0], src[1]) and np.array_equal(b[0], tgt[1])

    def test_normalize(self, rng):
        p = normalize_to_unit_cube(rng.normal(5, 3, (100, 3)))
        assert p.min() >= 0 and p.max() == pytest.approx(1.0)
        with pytest.raises(ValueError):
            normalize_to_unit_cube(np.ones((4, 3)))

    def test_generate_requires_cloud(self, rng):
        with pytest.raises(ValueError):
            generate(SceneConfig("corfree", 100, 0.0, 0.0, 10), rng)

    def test_bunny_like_cloud(self):
        c = bunny_like_cloud(2000, seed=1)
        assert c.shape == (2000, 3)
        assert np.array_equal(c, bunny_like_cloud(2000, seed=1))
