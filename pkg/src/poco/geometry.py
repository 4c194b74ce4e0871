"""Point clouds, triangle meshes and exact nearest-neighbour search."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

logger = logging.getLogger(__name__)

NORMAL_TOL = 1e-4


def _as_points(a, name="points"):
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[1] != 3:
        raise ValueError(f"{name} must have shape (N, 3), got {a.shape}")
    return a


def _distances(points, q):
    # Shared by the kd-tree and brute-force paths so that ties compare bit-identically.
    d = points - q
    return np.sqrt(d[..., 0] * d[..., 0] + d[..., 1] * d[..., 1] + d[..., 2] * d[..., 2])


@dataclass
class PointCloud:
    """Ordered surface samples with optional unit normals."""

    points: np.ndarray
    normals: np.ndarray | None = None

    def __post_init__(self):
        self.points = _as_points(self.points)
        if len(self.points) == 0:
            raise ValueError("empty point cloud")
        if not np.all(np.isfinite(self.points)):
            raise ValueError("point coordinates must be finite")
        if self.normals is not None:
            self.normals = _as_points(self.normals, "normals")
            if len(self.normals) != len(self.points):
                raise ValueError("normals and points differ in length")
            err = np.abs(np.linalg.norm(self.normals, axis=1) - 1.0)
            if err.size and err.max() > NORMAL_TOL:
                raise ValueError(f"normal {int(err.argmax())} is not unit length")

    def __len__(self):
        return len(self.points)

    @property
    def has_normals(self):
        return self.normals is not None

    def subset(self, indices):
        indices = np.asarray(indices)
        normals = None if self.normals is None else self.normals[indices]
        return PointCloud(self.points[indices], normals)

    def centroid(self):
        return self.points.mean(axis=0)

    def aabb(self):
        return Aabb(self.points.min(axis=0), self.points.max(axis=0))


@dataclass(frozen=True)
class Aabb:
    min: np.ndarray
    max: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.min, dtype=np.float64)
        hi = np.asarray(self.max, dtype=np.float64)
        if np.any(lo > hi):
            raise ValueError("Aabb min must be <= max componentwise")
        object.__setattr__(self, "min", lo)
        object.__setattr__(self, "max", hi)

    @property
    def extent(self):
        return self.max - self.min

    @property
    def center(self):
        return 0.5 * (self.min + self.max)

    def inflated(self, fraction):
        """Grow every side by ``fraction`` of the extent along that axis."""
        pad = fraction * self.extent
        return Aabb(self.min - pad, self.max + pad)

    def contains(self, points):
        points = np.atleast_2d(points)
        return np.all((points >= self.min) & (points <= self.max), axis=1)

    def sample(self, count, rng):
        return self.min + rng.random((count, 3)) * self.extent


@dataclass
class Mesh:
    """Triangle mesh; faces are counter-clockwise seen from the empty side."""

    vertices: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    triangles: np.ndarray = field(default_factory=lambda: np.zeros((0, 3), dtype=np.int64))

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.triangles = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        if self.triangles.size and (
            self.triangles.min() < 0 or self.triangles.max() >= len(self.vertices)
        ):
            raise ValueError("triangle index out of range")

    def __len__(self):
        return len(self.triangles)

    def triangle_corners(self):
        v = self.vertices[self.triangles]
        return v[:, 0], v[:, 1], v[:, 2]

    def face_normals(self):
        """Unnormalised cross products; their length is twice the triangle area."""
        a, b, c = self.triangle_corners()
        return np.cross(b - a, c - a)

    def triangle_areas(self):
        return 0.5 * np.linalg.norm(self.face_normals(), axis=1)

    def area(self):
        return float(self.triangle_areas().sum())

    def signed_volume(self):
        a, b, c = self.triangle_corners()
        return float(np.einsum("ij,ij->i", a, np.cross(b, c)).sum() / 6.0)


class KdTree:
    """Immutable exact kNN index.

    Candidate neighbours come from :class:`scipy.spatial.cKDTree`; the final
    ranking is redone with the same distance routine as :func:`knn_brute`,
    sorting by (distance, index), so both paths return identical sequences.
    """

    def __init__(self, cloud):
        points = cloud.points if isinstance(cloud, PointCloud) else _as_points(cloud)
        if len(points) == 0:
            raise ValueError("empty point cloud")
        self.points = points
        self._tree = cKDTree(points)

    def __len__(self):
        return len(self.points)

    def query(self, queries, k):
        """Batched kNN: ``(indices, distances)`` of shape (Q, min(k, N))."""
        if k < 1:
            raise ValueError("k must be >= 1")
        queries = np.atleast_2d(np.asarray(queries, dtype=np.float64))
        n = len(self.points)
        if k > n:
            logger.debug("knn: k=%d clamped to N=%d", k, n)
            k = n
        if k == n:
            idx = np.broadcast_to(np.arange(n), (len(queries), n))
            return _rank(self.points, queries, idx, k)

        _, cand = self._tree.query(queries, k + 1)
        cand = cand.reshape(len(queries), k + 1)
        d = _distances(self.points[cand], queries[:, None, :])
        d.sort(axis=1)
        kth, nxt = d[:, k - 1], d[:, k]
        ambiguous = nxt - kth <= 1e-9 * np.maximum(kth, 1e-300) + 1e-300
        idx, dist = _rank(self.points, queries, cand, k)
        for row in np.flatnonzero(ambiguous):
            # Ties at the k-th distance: collect everything on that shell and rank exactly.
            radius = kth[row] * (1 + 1e-9) + 1e-12
            ball = np.asarray(self._tree.query_ball_point(queries[row], radius), dtype=np.int64)
            i, dd = _rank(self.points, queries[row : row + 1], ball[None, :], k)
            idx[row], dist[row] = i[0], dd[0]
        return idx, dist


def _rank(points, queries, cand, k):
    cand = np.asarray(cand)
    d = _distances(points[cand], queries[:, None, :])
    order = np.lexsort((cand, d), axis=1)[:, :k]
    return np.take_along_axis(cand, order, 1).astype(np.int64), np.take_along_axis(d, order, 1)


def build_kdtree(cloud):
    return KdTree(cloud)


def knn(tree, q, k):
    """Exact ``k`` nearest neighbours of one query, ties broken by lower index."""
    idx, dist = tree.query(np.asarray(q, dtype=np.float64)[None, :], k)
    return idx[0], dist[0]


def knn_brute(cloud, q, k):
    """O(N) scan with the same contract as :func:`knn`; used as a test oracle."""
    points = cloud.points if isinstance(cloud, PointCloud) else _as_points(cloud)
    if k < 1:
        raise ValueError("k must be >= 1")
    k = min(k, len(points))
    d = _distances(points, np.asarray(q, dtype=np.float64))
    order = np.lexsort((np.arange(len(points)), d))[:k]
    return order.astype(np.int64), d[order]


def mean_nn_distance(cloud, tree=None):
    """Mean distance from each point to its nearest other point."""
    if len(cloud) < 2:
        raise ValueError("mean_nn_distance needs at least 2 points")
    tree = tree or KdTree(cloud)
    idx, dist = tree.query(cloud.points, 2)
    self_first = idx[:, 0] == np.arange(len(cloud))
    nearest = np.where(self_first, dist[:, 1], dist[:, 0])
    return float(nearest.mean())


def rescale_to_reference(cloud, target_mean_nn):
    """Scale ``cloud`` about its centroid so its mean NN distance equals the target.

    Returns the rescaled cloud and the scale factor applied.
    """
    if target_mean_nn <= 0:
        raise ValueError("target_mean_nn must be positive")
    current = mean_nn_distance(cloud)
    if current == 0.0:
        raise ValueError("zero nearest-neighbor distance")
    scale = target_mean_nn / current
    c = cloud.centroid()
    return PointCloud(c + (cloud.points - c) * scale, cloud.normals), scale


def add_gaussian_noise(cloud, sigma, seed=None):
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    if sigma == 0:
        return PointCloud(cloud.points.copy(), cloud.normals)
    rng = np.random.default_rng(seed)
    return PointCloud(cloud.points + rng.normal(0.0, sigma, cloud.points.shape), cloud.normals)


def sample_surface(mesh, count, seed=None):
    """Area-uniform samples on ``mesh``; each carries its host face normal."""
    rng = np.random.default_rng(seed)
    cross = mesh.face_normals()
    areas = 0.5 * np.linalg.norm(cross, axis=1)
    total = areas.sum()
    if len(mesh) == 0 or total <= 0:
        raise ValueError("mesh has no triangle with positive area")
    face = rng.choice(len(areas), size=count, p=areas / total)
    u, v = rng.random(count), rng.random(count)
    flip = u + v > 1
    u[flip], v[flip] = 1 - u[flip], 1 - v[flip]
    a, b, c = (x[face] for x in mesh.triangle_corners())
    points = a + u[:, None] * (b - a) + v[:, None] * (c - a)
    normals = cross[face] / (2 * areas[face])[:, None]
    return PointCloud(points, normals)


def point_triangle_distance(p, a, b, c):
    """Distance from points ``p`` to triangles ``(a, b, c)``, row by row.

    Standard closest-point-on-triangle region test, vectorised.
    """
    p, a, b, c = (np.atleast_2d(np.asarray(x, dtype=np.float64)) for x in (p, a, b, c))
    ab, ac, ap = b - a, c - a, p - a
    d1 = np.einsum("ij,ij->i", ab, ap)
    d2 = np.einsum("ij,ij->i", ac, ap)
    bp = p - b
    d3 = np.einsum("ij,ij->i", ab, bp)
    d4 = np.einsum("ij,ij->i", ac, bp)
    cp = p - c
    d5 = np.einsum("ij,ij->i", ab, cp)
    d6 = np.einsum("ij,ij->i", ac, cp)
    va = d3 * d6 - d5 * d4
    vb = d5 * d2 - d1 * d6
    vc = d1 * d4 - d3 * d2

    with np.errstate(divide="ignore", invalid="ignore"):
        denom = va + vb + vc
        v = vb / denom
        w = vc / denom
        closest = a + ab * v[:, None] + ac * w[:, None]
        t_ab = d1 / (d1 - d3)
        t_ac = d2 / (d2 - d6)
        t_bc = (d4 - d3) / ((d4 - d3) + (d5 - d6))

    regions = [
        ((d1 <= 0) & (d2 <= 0), a),
        ((d3 >= 0) & (d4 <= d3), b),
        ((vc <= 0) & (d1 >= 0) & (d3 <= 0), a + ab * t_ab[:, None]),
        ((d6 >= 0) & (d5 <= d6), c),
        ((vb <= 0) & (d2 >= 0) & (d6 <= 0), a + ac * t_ac[:, None]),
        ((va <= 0) & (d4 - d3 >= 0) & (d5 - d6 >= 0), b + (c - b) * t_bc[:, None]),
    ]
    # Earlier regions take precedence, so apply them last.
    for mask, target in reversed(regions):
        closest = np.where(mask[:, None], target, closest)
    return np.linalg.norm(p - closest, axis=1)
