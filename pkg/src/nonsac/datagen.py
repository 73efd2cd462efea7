"""Synthetic scenes for relative pose, PnP, registration and correspondence-free registration."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import axis_angle, random_rotation, random_unit_vector
from .ply import load_ply, write_ply  # noqa: F401  (re-exported)

PROBLEMS = ("relpose", "pnp", "pcr", "corfree")
MAX_POSE_ATTEMPTS = 100_000
# Camera-2 proposal: rotation angle bound (deg) about a random axis.
PROPOSAL_MAX_ANGLE_DEG = 5.0
MIN_DEPTH = 0.1
MAX_DEPTH = 10.0


class PoseSamplingError(RuntimeError):
    pass


@dataclass(frozen=True)
class SceneConfig:
    problem: str
    n: int
    sigma: float
    outlier_ratio: float
    points_per_cloud: int = 500
    overlap: float = 0.5

    def __post_init__(self):
        if self.problem not in PROBLEMS:
            raise ValueError(f"unknown problem {self.problem!r}")
        if not 0.0 <= self.outlier_ratio < 1.0:
            raise ValueError("outlier_ratio must lie in [0, 1)")
        if self.sigma < 0:
            raise ValueError("sigma must be non-negative")
        if self.n < 3:
            raise ValueError("n must be at least 3")
        if not 0.0 < self.overlap <= 1.0:
            raise ValueError("overlap must lie in (0, 1]")


@dataclass
class GroundTruth:
    rotation: np.ndarray
    translation: np.ndarray
    inlier_mask: np.ndarray


class Correspondences:
    """Matched pairs ``(a[i], b[i])``; the kind fixes what a and b hold.

    ``relpose``: a, b are (n, 2) image points in views 1 and 2.
    ``pnp``:     a is (n, 3) world points, b is (n, 2) image points.
    ``pcr``:     a is (n, 3) source points, b is (n, 3) target points.
    """

    def __init__(self, kind: str, a: np.ndarray, b: np.ndarray):
        if len(a) != len(b):
            raise ValueError("correspondence arrays differ in length")
        self.kind = kind
        self.a = a
        self.b = b

    def __len__(self) -> int:
        return len(self.a)

    def take(self, idx) -> tuple[np.ndarray, np.ndarray]:
        idx = np.asarray(idx)
        return self.a[idx], self.b[idx]


class AllPairs(Correspondences):
    """All-to-all pairs between two clouds, materialized only on ``take``.

    Pair id ``k`` stands for ``(source[k // nb], target[k % nb])``.
    """

    def __init__(self, source: np.ndarray, target: np.ndarray):
        self.kind = "pcr"
        self.source = source
        self.target = target

    def __len__(self) -> int:
        return len(self.source) * len(self.target)

    def pair(self, idx):
        idx = np.asarray(idx)
        nb = len(self.target)
        return idx // nb, idx % nb

    def take(self, idx):
        i, j = self.pair(idx)
        return self.source[i], self.target[j]


def _choose_outliers(rng, n: int, ratio: float) -> np.ndarray:
    """Boolean mask with exactly round(ratio * n) outliers."""
    n_out = int(round(ratio * n))
    mask = np.zeros(n, dtype=bool)
    mask[rng.permutation(n)[:n_out]] = True
    return mask


def _project(X):
    return X[:, :2] / X[:, 2:3]


def _two_view_scene(n: int, rng):
    """Points in front of camera 1 and a camera-2 pose meeting the visibility constraints.

    Returns world points (camera-1 frame), (R, t) with ``X2 = R X1 + t`` and
    ``|t| = 1`` (camera centers one unit apart), and the view-2 points.
    """
    uv = rng.uniform(-1.0, 1.0, size=(n, 2))
    depth = rng.uniform(MIN_DEPTH, MAX_DEPTH, size=n)
    X = np.column_stack([uv, np.ones(n)]) * depth[:, None]
    for _ in range(MAX_POSE_ATTEMPTS):
        # Camera 2 must see the whole view-1 frustum, so propose centers on the
        # rear hemisphere and rotations close to the identity.
        C = random_unit_vector(rng)
        if C[2] > 0:
            C[2] = -C[2]
        R = axis_angle(random_unit_vector(rng), rng.uniform(0.0, PROPOSAL_MAX_ANGLE_DEG))
        X2 = (X - C) @ R.T
        if np.any(X2[:, 2] <= MIN_DEPTH):
            continue
        x2 = _project(X2)
        if np.all(np.abs(x2) <= 1.0):
            return X, R, -R @ C, X2
    raise PoseSamplingError("pose sampling failed: no valid second camera after "
                            f"{MAX_POSE_ATTEMPTS} attempts (reseed)")


def gen_relpose(config: SceneConfig, rng: np.random.Generator):
    X, R, t, X2 = _two_view_scene(config.n, rng)
    x1 = _project(X) + config.sigma * rng.standard_normal((config.n, 2))
    x2 = _project(X2) + config.sigma * rng.standard_normal((config.n, 2))
    out = _choose_outliers(rng, config.n, config.outlier_ratio)
    k = int(out.sum())
    x1[out] = rng.uniform(-1.0, 1.0, size=(k, 2))
    x2[out] = rng.uniform(-1.0, 1.0, size=(k, 2))
    return Correspondences("relpose", x1, x2), GroundTruth(R, t, ~out)


def gen_pnp(config: SceneConfig, rng: np.random.Generator):
    X, R, t, X2 = _two_view_scene(config.n, rng)
    x2 = _project(X2) + config.sigma * rng.standard_normal((config.n, 2))
    out = _choose_outliers(rng, config.n, config.outlier_ratio)
    x2[out] = rng.uniform(-1.0, 1.0, size=(int(out.sum()), 2))
    return Correspondences("pnp", X, x2), GroundTruth(R, t, ~out)


def _uniform_ball(rng, k: int, radius: float) -> np.ndarray:
    d = rng.standard_normal((k, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    r = radius * rng.uniform(0.0, 1.0, size=k) ** (1.0 / 3.0)
    return d * r[:, None]


def gen_pcr(config: SceneConfig, rng: np.random.Generator):
    n = config.n
    src = rng.uniform(0.0, 1.0, size=(n, 3))
    R = random_rotation(rng)
    t = rng.uniform(-1.0, 1.0, size=3)
    dst = src @ R.T + t + config.sigma * rng.standard_normal((n, 3))
    out = _choose_outliers(rng, n, config.outlier_ratio)
    center = R @ np.full(3, 0.5) + t
    dst[out] = center + _uniform_ball(rng, int(out.sum()), np.sqrt(3.0) / 2.0)
    return Correspondences("pcr", src, dst), GroundTruth(R, t, ~out)


def normalize_to_unit_cube(points: np.ndarray) -> np.ndarray:
    """Isotropic scale and shift putting the bounding box inside [0, 1]^3."""
    pts = np.asarray(points, dtype=float)
    lo = pts.min(axis=0)
    extent = float(np.max(pts.max(axis=0) - lo))
    if extent <= 0:
        raise ValueError("point cloud has zero extent")
    return (pts - lo) / extent


def gen_corfree(points: np.ndarray, config: SceneConfig, rng: np.random.Generator,
                transform: bool = True):
    """Two overlapping subsets of a cloud; every source-target pair is a candidate match.

    The first ``shared`` points of each subset are the same cloud points, so
    the true matches are the pairs ``(i, i)`` for ``i < shared``.
    """
    k = config.points_per_cloud
    shared = int(round(config.overlap * k))
    need = 2 * k - shared
    cloud = normalize_to_unit_cube(points)
    if len(cloud) < need:
        raise ValueError(f"point cloud has {len(cloud)} points, {need} needed for two subsets "
                         f"of {k} with {shared} shared")
    pick = rng.permutation(len(cloud))[:need]
    common = cloud[pick[:shared]]
    only_a = cloud[pick[shared:k]]
    only_b = cloud[pick[k:need]]
    src = np.vstack([common, only_a])
    tgt = np.vstack([common, only_b])
    if transform:
        R = random_rotation(rng)
        t = rng.uniform(-1.0, 1.0, size=3)
    else:
        R, t = np.eye(3), np.zeros(3)
    tgt = tgt @ R.T + t + config.sigma * rng.standard_normal(tgt.shape)
    pairs = AllPairs(src, tgt)
    mask = np.zeros(len(pairs), dtype=bool)
    mask[np.arange(shared) * k + np.arange(shared)] = True
    return pairs, GroundTruth(R, t, mask)


# (center, radii) of the ellipsoids making up the stand-in test cloud: body,
# head, two ears of different length, tail, front paw.
_BUNNY_PARTS = (
    ((0.45, 0.35, 0.30), (0.32, 0.22, 0.26)),
    ((0.78, 0.52, 0.42), (0.14, 0.12, 0.13)),
    ((0.80, 0.72, 0.55), (0.04, 0.16, 0.05)),
    ((0.72, 0.68, 0.32), (0.035, 0.12, 0.045)),
    ((0.12, 0.40, 0.28), (0.06, 0.06, 0.06)),
    ((0.70, 0.14, 0.38), (0.08, 0.05, 0.07)),
)


def bunny_like_cloud(n: int = 3000, seed: int = 0) -> np.ndarray:
    """Asymmetric surface cloud built from overlapping ellipsoids.

    Points are spread over the ellipsoid surfaces in proportion to their
    approximate areas, and points falling inside another part are dropped,
    so the result samples the outer surface only.
    """
    rng = np.random.default_rng(seed)
    centers = np.array([c for c, _ in _BUNNY_PARTS])
    radii = np.array([r for _, r in _BUNNY_PARTS])
    # Knud Thomsen's approximation of an ellipsoid's surface area
    pw = 1.6075
    a, b, c = radii.T
    area = 4 * np.pi * (((a * b) ** pw + (a * c) ** pw + (b * c) ** pw) / 3) ** (1 / pw)
    pts = []
    total = 0
    while total < n:
        part = rng.choice(len(radii), size=4 * n, p=area / area.sum())
        d = rng.standard_normal((4 * n, 3))
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        cand = centers[part] + d * radii[part]
        inside = np.zeros(len(cand), dtype=bool)
        for k in range(len(radii)):
            q = np.sum(((cand - centers[k]) / radii[k]) ** 2, axis=1)
            inside |= (q < 1.0 - 1e-9) & (part != k)
        keep = cand[~inside]
        pts.append(keep)
        total += len(keep)
    return np.vstack(pts)[:n]


def generate(config: SceneConfig, rng: np.random.Generator, points: np.ndarray | None = None):
    if config.problem == "relpose":
        return gen_relpose(config, rng)
    if config.problem == "pnp":
        return gen_pnp(config, rng)
    if config.problem == "pcr":
        return gen_pcr(config, rng)
    if points is None:
        raise ValueError("corfree scenes need an input point cloud")
    return gen_corfree(points, config, rng)
