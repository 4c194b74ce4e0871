"""Surface and volume reconstruction metrics.

Surface metrics compare two point samplings: Chamfer with L1 point distances,
normal consistency at Euclidean nearest neighbours, and F-score at a distance
threshold. Volume IoU compares inside/outside labels of box samples.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .geometry import Aabb, Mesh, PointCloud, sample_surface
from .mesher import watertight_check

logger = logging.getLogger(__name__)


def _points(p):
    pts = p.points if isinstance(p, PointCloud) else np.asarray(p, dtype=np.float64)
    if len(pts) == 0:
        raise ValueError("empty point cloud")
    return pts


def chamfer_l1(p1, p2):
    """Symmetric Chamfer distance with L1 nearest neighbours (raw, not x100)."""
    a, b = _points(p1), _points(p2)
    d12, _ = cKDTree(b).query(a, p=1)
    d21, _ = cKDTree(a).query(b, p=1)
    return 0.5 * d12.mean() + 0.5 * d21.mean()


def normal_consistency(p1, p2, absolute=True):
    """Symmetric mean cosine between normals at Euclidean nearest neighbours.

    ``absolute=False`` gives the signed variant (orientation-sensitive).
    """
    if p1.normals is None or p2.normals is None:
        raise ValueError("normal consistency needs normals on both clouds")
    _, i12 = cKDTree(p2.points).query(p1.points)
    _, i21 = cKDTree(p1.points).query(p2.points)
    c12 = np.einsum("ij,ij->i", p1.normals, p2.normals[i12])
    c21 = np.einsum("ij,ij->i", p2.normals, p1.normals[i21])
    if absolute:
        c12, c21 = np.abs(c12), np.abs(c21)
    return 0.5 * c12.mean() + 0.5 * c21.mean()


def precision_recall(p1, p2, t=0.01):
    """Recall: share of ``p1`` closer than ``t`` to ``p2``; precision the converse."""
    if t <= 0:
        raise ValueError("threshold must be positive")
    a, b = _points(p1), _points(p2)
    d12, _ = cKDTree(b).query(a)
    d21, _ = cKDTree(a).query(b)
    return float(np.mean(d21 < t)), float(np.mean(d12 < t))


def fscore(p1, p2, t=0.01):
    precision, recall = precision_recall(p1, p2, t)
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def iou_occupancy(pred, gt):
    pred = np.asarray(pred).astype(bool)
    gt = np.asarray(gt).astype(bool)
    if pred.shape != gt.shape:
        raise ValueError("pred and gt labels differ in length")
    tp = np.count_nonzero(pred & gt)
    fp = np.count_nonzero(pred & ~gt)
    fn = np.count_nonzero(~pred & gt)
    if tp + fp + fn == 0:
        return 1.0
    return tp / (tp + fp + fn)


# ---------------------------------------------------------------------------
# Mesh containment by ray parity


def _ray_hits(p, a, b, c, tol=1e-10):
    """Crossings of +z rays from ``p`` with triangles ``a, b, c`` (rows paired).

    Returns ``(hit, degenerate)``; degenerate rows graze an edge or vertex in
    the xy projection and need a perturbed retry.
    """

    def cross2(u, v):
        return (u[:, 0] - p[:, 0]) * (v[:, 1] - p[:, 1]) - (u[:, 1] - p[:, 1]) * (v[:, 0] - p[:, 0])

    wa, wb, wc = cross2(b, c), cross2(c, a), cross2(a, b)
    total = wa + wb + wc
    upright = np.abs(total) > 1e-300  # vertical triangles never count
    lam = np.stack([wa, wb, wc], 1) / np.where(upright, total, 1.0)[:, None]
    lam_min = lam.min(axis=1)
    z = lam[:, 0] * a[:, 2] + lam[:, 1] * b[:, 2] + lam[:, 2] * c[:, 2]
    above = upright & (z > p[:, 2])
    return above & (lam_min > tol), above & (np.abs(lam_min) <= tol)


def mesh_contains(mesh, points, bins=64, max_retries=8):
    """Inside test by +z ray parity; assumes a closed mesh.

    Rays that graze an edge or vertex are re-cast from a slightly shifted
    origin (deterministic sequence) until the crossing count is unambiguous.
    """
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    inside = np.zeros(len(points), dtype=bool)
    if len(mesh) == 0:
        return inside
    tri = mesh.vertices[mesh.triangles]
    lo, hi = tri[:, :, :2].min(axis=1), tri[:, :, :2].max(axis=1)
    box_lo, box_hi = lo.min(axis=0), hi.max(axis=0)
    cell = np.maximum((box_hi - box_lo) / bins, 1e-12)

    # Triangle -> xy bins it overlaps.
    b0 = np.clip(((lo - box_lo) / cell).astype(np.int64), 0, bins - 1)
    b1 = np.clip(((hi - box_lo) / cell).astype(np.int64), 0, bins - 1)
    span = b1 - b0 + 1
    reps = span[:, 0] * span[:, 1]
    tri_id = np.repeat(np.arange(len(tri)), reps)
    local = np.arange(reps.sum()) - np.repeat(np.cumsum(reps) - reps, reps)
    bx = b0[tri_id, 0] + local % span[tri_id, 0]
    by = b0[tri_id, 1] + local // span[tri_id, 0]
    order = np.argsort(bx * bins + by, kind="stable")
    bin_tris = tri_id[order]
    bin_start = np.searchsorted((bx * bins + by)[order], np.arange(bins * bins + 1))

    rng = np.random.default_rng(12345)
    todo = np.flatnonzero(np.all((points[:, :2] >= box_lo) & (points[:, :2] <= box_hi), axis=1))
    origin = points.copy()
    for attempt in range(max_retries + 1):
        if len(todo) == 0:
            break
        q = origin[todo]
        pb = np.clip(((q[:, :2] - box_lo) / cell).astype(np.int64), 0, bins - 1)
        pbin = pb[:, 0] * bins + pb[:, 1]
        counts = bin_start[pbin + 1] - bin_start[pbin]
        owner = np.repeat(np.arange(len(todo)), counts)
        offs = np.arange(counts.sum()) - np.repeat(np.cumsum(counts) - counts, counts)
        cand = bin_tris[bin_start[pbin][owner] + offs]
        t = tri[cand]
        hit, degenerate = _ray_hits(q[owner], t[:, 0], t[:, 1], t[:, 2])
        parity = np.bincount(owner, weights=hit, minlength=len(todo)).astype(np.int64) % 2
        bad = np.bincount(owner, weights=degenerate, minlength=len(todo)) > 0
        inside[todo[~bad]] = parity[~bad] == 1
        todo = todo[bad]
        if len(todo):
            jitter = (rng.random((len(todo), 2)) - 0.5) * cell * 1e-6 * (attempt + 1)
            origin[todo, :2] = points[todo, :2] + jitter
    if len(todo):
        warnings.warn(f"{len(todo)} containment rays stayed degenerate; counted as outside")
    return inside


# ---------------------------------------------------------------------------


@dataclass
class MetricsReport:
    chamfer_x100: float
    normal_consistency: float
    fscore: float
    iou: float
    n_surface_samples: int
    n_volume_samples: int
    fs_threshold: float
    pred_closed: bool = True

    def lines(self):
        rows = [
            ("chamfer_x100", f"{self.chamfer_x100:.6f}"),
            ("normal_consistency", f"{self.normal_consistency:.6f}"),
            ("fscore", f"{self.fscore:.6f}"),
            ("iou", f"{self.iou:.6f}"),
            ("fs_threshold", f"{self.fs_threshold:g}"),
            ("n_surface_samples", str(self.n_surface_samples)),
            ("n_volume_samples", str(self.n_volume_samples)),
            ("pred_closed", str(self.pred_closed).lower()),
        ]
        return rows

    def as_text(self):
        width = max(len(k) for k, _ in self.lines())
        return "\n".join(f"{k.ljust(width)}  {v}" for k, v in self.lines())

    def as_key_values(self):
        return "\n".join(f"{k}={v}" for k, v in self.lines())


def _surface_samples(shape, count, seed):
    if isinstance(shape, Mesh):
        return sample_surface(shape, count, seed)
    return shape.sample_surface(count, seed)


def _bounds(shape):
    if isinstance(shape, Mesh):
        return Aabb(shape.vertices.min(axis=0), shape.vertices.max(axis=0))
    return shape.bounds()


def _labels(shape, points):
    if isinstance(shape, Mesh):
        return mesh_contains(shape, points)
    return np.asarray(shape(points)) >= 0.5


def evaluate_reconstruction(
    mesh_pred, gt, n_surface_samples=100_000, n_volume_samples=100_000, seed=0, fs_threshold=0.01
):
    """All four metrics of ``mesh_pred`` against an analytic field or a mesh."""
    rng = np.random.default_rng(seed)
    s_pred, s_gt, s_vol = rng.integers(0, 2**63, size=3)
    pred_pts = sample_surface(mesh_pred, n_surface_samples, s_pred)
    gt_pts = _surface_samples(gt, n_surface_samples, s_gt)

    closed = watertight_check(mesh_pred).is_closed
    if not closed:
        warnings.warn("predicted mesh is not closed; IoU containment is ill-defined")
    lo = np.minimum(_bounds(mesh_pred).min, _bounds(gt).min)
    hi = np.maximum(_bounds(mesh_pred).max, _bounds(gt).max)
    box = Aabb(lo, hi).inflated(0.05)
    vol = box.sample(n_volume_samples, np.random.default_rng(s_vol))
    iou = iou_occupancy(mesh_contains(mesh_pred, vol), _labels(gt, vol))

    return MetricsReport(
        chamfer_x100=100.0 * chamfer_l1(pred_pts, gt_pts),
        normal_consistency=normal_consistency(pred_pts, gt_pts),
        fscore=fscore(pred_pts, gt_pts, fs_threshold),
        iou=iou,
        n_surface_samples=n_surface_samples,
        n_volume_samples=n_volume_samples,
        fs_threshold=fs_threshold,
        pred_closed=closed,
    )
