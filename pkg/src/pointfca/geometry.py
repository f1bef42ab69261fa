"""Procedural shape corpus, cloud normalization, FPS, KNN grouping and
the two sparsification strategies (uniform and nearest-patch).

All samplers are pure functions of (inputs, seed). Ties are broken by
lower index everywhere so results are platform-stable.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .rng import RngStream, derive_seed

CATEGORIES = (
    "sphere",
    "cube",
    "cylinder",
    "cone",
    "torus",
    "pyramid",
    "ellipsoid",
    "disk",
    "helix",
    "cross",
)

DEFAULT_UNSEEN = ("torus", "cone", "helix", "cross")


class GeometryError(ValueError):
    pass


@dataclass
class PointCloud:
    points: np.ndarray  # (n, 3) float32, normalized frame
    category_id: int
    seed: int

    @property
    def n(self) -> int:
        return len(self.points)


@dataclass
class ShapeSpec:
    category: str
    scale_jitter: float = 0.1
    noise_sigma: float = 0.01

    def __post_init__(self):
        if self.scale_jitter < 0 or self.noise_sigma < 0:
            raise GeometryError("jitter and noise must be nonnegative")


@dataclass
class GroupIndex:
    centers: np.ndarray  # (g,) point indices
    neighbors: np.ndarray  # (g, s) point indices


def normalize(points: np.ndarray) -> np.ndarray:
    """Center on the centroid and scale so the farthest point has norm 1."""
    p = np.asarray(points, dtype=np.float32)
    p = p - p.mean(axis=0, keepdims=True)
    m = float(np.sqrt((p * p).sum(axis=1)).max())
    if m > 1e-12:
        p = p / np.float32(m)
    return p.astype(np.float32)


# ---------------------------------------------------------------------------
# parametric families
# ---------------------------------------------------------------------------


def _sample_sphere(rng: RngStream, n: int) -> np.ndarray:
    z = rng.uniform(-1.0, 1.0, n).astype(np.float64)
    phi = rng.uniform(0.0, 2 * np.pi, n).astype(np.float64)
    r = np.sqrt(np.maximum(0.0, 1.0 - z * z))
    return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)


def _sample_cube(rng: RngStream, n: int) -> np.ndarray:
    face = rng.integers(6, size=n)
    u = rng.uniform(-1.0, 1.0, n).astype(np.float64)
    v = rng.uniform(-1.0, 1.0, n).astype(np.float64)
    pts = np.empty((n, 3))
    axis = face // 2
    sign = np.where(face % 2 == 0, 1.0, -1.0)
    for a in range(3):
        m = axis == a
        others = [i for i in range(3) if i != a]
        pts[m, a] = sign[m]
        pts[m, others[0]] = u[m]
        pts[m, others[1]] = v[m]
    return pts


def _sample_cylinder(rng: RngStream, n: int) -> np.ndarray:
    radius, half_h = 0.5, 0.8
    lateral = 2 * np.pi * radius * (2 * half_h)
    caps = 2 * np.pi * radius**2
    on_side = rng.uniform(0.0, 1.0, n).astype(np.float64) < lateral / (lateral + caps)
    phi = rng.uniform(0.0, 2 * np.pi, n).astype(np.float64)
    z = rng.uniform(-half_h, half_h, n).astype(np.float64)
    r_cap = radius * np.sqrt(rng.uniform(0.0, 1.0, n).astype(np.float64))
    top = rng.uniform(0.0, 1.0, n).astype(np.float64) < 0.5
    r = np.where(on_side, radius, r_cap)
    zz = np.where(on_side, z, np.where(top, half_h, -half_h))
    return np.stack([r * np.cos(phi), r * np.sin(phi), zz], axis=1)


def _sample_cone(rng: RngStream, n: int) -> np.ndarray:
    radius, height = 0.6, 1.2
    slant = np.sqrt(radius**2 + height**2)
    lateral = np.pi * radius * slant
    base = np.pi * radius**2
    on_side = rng.uniform(0.0, 1.0, n).astype(np.float64) < lateral / (lateral + base)
    phi = rng.uniform(0.0, 2 * np.pi, n).astype(np.float64)
    t = np.sqrt(rng.uniform(0.0, 1.0, n).astype(np.float64))  # area-uniform along slant
    r_base = radius * np.sqrt(rng.uniform(0.0, 1.0, n).astype(np.float64))
    r = np.where(on_side, radius * t, r_base)
    z = np.where(on_side, height * (1.0 - t), 0.0) - height / 2
    return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)


def _sample_torus(rng: RngStream, n: int) -> np.ndarray:
    major, minor = 0.7, 0.25
    theta = rng.uniform(0.0, 2 * np.pi, n).astype(np.float64)
    phi = rng.uniform(0.0, 2 * np.pi, n).astype(np.float64)
    w = major + minor * np.cos(theta)
    return np.stack([w * np.cos(phi), w * np.sin(phi), minor * np.sin(theta)], axis=1)


def _sample_pyramid(rng: RngStream, n: int) -> np.ndarray:
    half, apex_z, base_z = 0.6, 0.7, -0.5
    apex = np.array([0.0, 0.0, apex_z])
    corners = np.array(
        [[-half, -half, base_z], [half, -half, base_z], [half, half, base_z], [-half, half, base_z]]
    )
    slant = np.sqrt(half**2 + (apex_z - base_z) ** 2)
    tri_area = 0.5 * (2 * half) * slant
    base_area = (2 * half) ** 2
    areas = np.array([tri_area] * 4 + [base_area])
    probs = np.cumsum(areas / areas.sum())
    pick = rng.uniform(0.0, 1.0, n).astype(np.float64)
    face = np.searchsorted(probs, pick)
    u = rng.uniform(0.0, 1.0, n).astype(np.float64)
    v = rng.uniform(0.0, 1.0, n).astype(np.float64)
    pts = np.empty((n, 3))
    for f in range(4):
        m = face == f
        a, b, c = corners[f], corners[(f + 1) % 4], apex
        su = np.sqrt(u[m])
        bary = (1 - su)[:, None] * a + (su * (1 - v[m]))[:, None] * b + (su * v[m])[:, None] * c
        pts[m] = bary
    m = face == 4
    pts[m, 0] = (u[m] * 2 - 1) * half
    pts[m, 1] = (v[m] * 2 - 1) * half
    pts[m, 2] = base_z
    return pts


def _sample_ellipsoid(rng: RngStream, n: int) -> np.ndarray:
    return _sample_sphere(rng, n) * np.array([1.0, 0.65, 0.4])


def _sample_disk(rng: RngStream, n: int) -> np.ndarray:
    r = np.sqrt(rng.uniform(0.0, 1.0, n).astype(np.float64))
    phi = rng.uniform(0.0, 2 * np.pi, n).astype(np.float64)
    return np.stack([r * np.cos(phi), r * np.sin(phi), np.zeros(n)], axis=1)


def _sample_helix(rng: RngStream, n: int) -> np.ndarray:
    major, height, turns, tube = 0.7, 1.4, 2.5, 0.12
    t = rng.uniform(0.0, 1.0, n).astype(np.float64)
    ang = 2 * np.pi * turns * t
    center = np.stack([major * np.cos(ang), major * np.sin(ang), height * (t - 0.5)], axis=1)
    tangent = np.stack(
        [-major * np.sin(ang), major * np.cos(ang), np.full(n, height / (2 * np.pi * turns))], axis=1
    )
    tangent /= np.linalg.norm(tangent, axis=1, keepdims=True)
    up = np.array([0.0, 0.0, 1.0])
    nrm = np.cross(tangent, up)
    nrm /= np.linalg.norm(nrm, axis=1, keepdims=True)
    binrm = np.cross(tangent, nrm)
    psi = rng.uniform(0.0, 2 * np.pi, n).astype(np.float64)[:, None]
    return center + tube * (np.cos(psi) * nrm + np.sin(psi) * binrm)


def _sample_cross(rng: RngStream, n: int) -> np.ndarray:
    half = np.array([0.8, 0.175, 0.175])
    arm = rng.integers(3, size=n)
    face = rng.integers(6, size=n)
    u = rng.uniform(-1.0, 1.0, n).astype(np.float64)
    v = rng.uniform(-1.0, 1.0, n).astype(np.float64)
    pts = np.empty((n, 3))
    axis = face // 2
    sign = np.where(face % 2 == 0, 1.0, -1.0)
    for a in range(3):
        m = axis == a
        others = [i for i in range(3) if i != a]
        pts[m, a] = sign[m] * half[a]
        pts[m, others[0]] = u[m] * half[others[0]]
        pts[m, others[1]] = v[m] * half[others[1]]
    # roll each point's box onto its arm axis
    out = np.empty((n, 3))
    for k in range(3):
        m = arm == k
        out[m] = np.roll(pts[m], k, axis=1)
    return out


_SAMPLERS = {
    "sphere": _sample_sphere,
    "cube": _sample_cube,
    "cylinder": _sample_cylinder,
    "cone": _sample_cone,
    "torus": _sample_torus,
    "pyramid": _sample_pyramid,
    "ellipsoid": _sample_ellipsoid,
    "disk": _sample_disk,
    "helix": _sample_helix,
    "cross": _sample_cross,
}


def sample_shape(spec: ShapeSpec, n: int, seed: int) -> PointCloud:
    """Sample n surface points for one of the parametric families.

    Per-axis scale jitter and per-point Gaussian noise are applied before
    normalization.
    """
    if n < 8:
        raise GeometryError(f"need at least 8 points, got {n}")
    if spec.category not in _SAMPLERS:
        raise GeometryError(
            f"unknown category {spec.category!r}; known: {sorted(_SAMPLERS)}"
        )
    rng = RngStream(seed, f"shape/{spec.category}")
    pts = _SAMPLERS[spec.category](rng.child("surface"), n)
    if spec.scale_jitter > 0:
        axes = rng.child("jitter").uniform(
            1.0 - spec.scale_jitter, 1.0 + spec.scale_jitter, 3
        )
        pts = pts * axes.astype(np.float64)
    if spec.noise_sigma > 0:
        pts = pts + rng.child("noise").normal((n, 3), std=spec.noise_sigma).astype(np.float64)
    return PointCloud(
        points=normalize(pts),
        category_id=CATEGORIES.index(spec.category),
        seed=seed,
    )


# ---------------------------------------------------------------------------
# sparsification and grouping
# ---------------------------------------------------------------------------


def downsample_uniform(pc: PointCloud, n_target: int, seed: int) -> PointCloud:
    """Keep n_target distinct indices drawn uniformly without replacement."""
    n = pc.n
    if not 1 <= n_target <= n:
        raise GeometryError(f"n_target {n_target} out of range [1, {n}]")
    rng = RngStream(derive_seed(pc.seed, "uniform", seed), "downsample")
    idx = np.sort(rng.choice(n, n_target, replace=False))
    return PointCloud(
        points=pc.points[idx].copy(),
        category_id=pc.category_id,
        seed=derive_seed(pc.seed, "uniform", seed),
    )


def downsample_knn_patch(pc: PointCloud, n_target: int, seed: int) -> PointCloud:
    """Keep the n_target points nearest to one uniformly chosen center."""
    n = pc.n
    if not 1 <= n_target <= n:
        raise GeometryError(f"n_target {n_target} out of range [1, {n}]")
    rng = RngStream(derive_seed(pc.seed, "knn_patch", seed), "downsample")
    center = int(rng.integers(n))
    d = ((pc.points - pc.points[center]) ** 2).sum(axis=1)
    order = np.argsort(d, kind="stable")  # ties by lower index
    idx = np.sort(order[:n_target])
    return PointCloud(
        points=pc.points[idx].copy(),
        category_id=pc.category_id,
        seed=derive_seed(pc.seed, "knn_patch", seed),
    )


def fps(points: np.ndarray, g: int, seed: int) -> np.ndarray:
    """Greedy farthest-point sampling; returns g center indices.

    First center is uniform from the seed; each next center maximizes the
    minimum distance to the chosen set, ties by lower index.
    """
    n = len(points)
    if not 1 <= g <= n:
        raise GeometryError(f"g {g} out of range [1, {n}]")
    rng = RngStream(seed, "fps")
    first = int(rng.integers(n))
    centers = np.empty(g, dtype=np.int64)
    centers[0] = first
    d = ((points - points[first]) ** 2).sum(axis=1)
    for i in range(1, g):
        nxt = int(np.argmax(d))  # first max = lowest index on ties
        centers[i] = nxt
        d = np.minimum(d, ((points - points[nxt]) ** 2).sum(axis=1))
    return centers


def knn_group(points: np.ndarray, centers: np.ndarray, s: int) -> GroupIndex:
    """For each center, the s nearest points by Euclidean distance.

    Ties break by lower index; the center is always first in its own row.
    If n < s the sorted-by-distance list repeats cyclically so every row
    has exactly s entries.
    """
    if s < 1:
        raise GeometryError("s must be >= 1")
    centers = np.asarray(centers, dtype=np.int64)
    if centers.size == 0:
        raise GeometryError("centers must be nonempty")
    n = len(points)
    diff = points[centers][:, None, :] - points[None, :, :]
    d = (diff * diff).sum(axis=2)  # (g, n)
    d[np.arange(len(centers)), centers] = -1.0  # pin each center first
    order = np.argsort(d, axis=1, kind="stable")
    cols = np.arange(s) % n
    return GroupIndex(centers=centers, neighbors=order[:, cols])
