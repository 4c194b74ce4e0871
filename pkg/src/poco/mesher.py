"""Marching cubes over occupancy fields: dense, region-growing, and mesh checks.

Surface vertices are not interpolated linearly: each sign-change edge is
bisected against the field a fixed number of times and the vertex goes to the
middle of the final bracket.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field as dc_field

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from ._mc_tables import CORNER_OFFSETS, EDGE_CORNERS, TRIANGLE_TABLE
from .geometry import Aabb, Mesh

logger = logging.getLogger(__name__)

THRESHOLD = 0.5
UNEVALUATED, EMPTY, FULL = -1, 0, 1
GROW_RADIUS = 2  # Chebyshev radius of the region-growing window, in grid steps

_WINDOW = np.stack(
    np.meshgrid(*[np.arange(-GROW_RADIUS, GROW_RADIUS + 1)] * 3, indexing="ij"), -1
).reshape(-1, 3)


@dataclass(frozen=True)
class GridSpec:
    """Regular lattice of ``dims`` corners per axis, spaced ``step`` from ``origin``."""

    origin: tuple
    step: float
    dims: tuple

    def __post_init__(self):
        object.__setattr__(self, "origin", tuple(float(x) for x in self.origin))
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        if self.step <= 0:
            raise ValueError("grid step must be positive")
        if len(self.dims) != 3 or min(self.dims) < 2:
            raise ValueError("grid needs at least 2 corners per axis")

    @classmethod
    def from_bounds(cls, box, resolution=None, step=None):
        """Cover ``box`` with ``resolution`` corners along its longest side, or a fixed ``step``."""
        extent = np.maximum(box.extent, 1e-12)
        if step is None:
            if resolution is None or resolution < 2:
                raise ValueError("need resolution >= 2 or a step")
            step = float(extent.max() / (resolution - 1))
        dims = np.maximum(np.ceil(extent / step - 1e-9).astype(int) + 1, 2)
        origin = box.center - 0.5 * step * (dims - 1)
        return cls(tuple(origin), float(step), tuple(dims))

    @property
    def shape(self):
        return self.dims

    def corner(self, ijk):
        return np.asarray(self.origin) + self.step * np.asarray(ijk, dtype=np.float64)

    def bounds(self):
        o = np.asarray(self.origin)
        return Aabb(o, o + self.step * (np.asarray(self.dims) - 1))

    def n_corners(self):
        return int(np.prod(self.dims))


@dataclass
class MeshingStats:
    corner_evaluations: int = 0
    edge_evaluations: int = 0
    waves: int = 0


@dataclass
class OccupancyCache:
    """Per-corner state (-1 unevaluated, 0 empty, 1 full) and stored probability."""

    grid: GridSpec
    state: np.ndarray = dc_field(init=False)
    prob: np.ndarray = dc_field(init=False)

    def __post_init__(self):
        self.state = np.full(self.grid.dims, UNEVALUATED, dtype=np.int8)
        self.prob = np.full(self.grid.dims, np.nan, dtype=np.float32)

    def evaluate(self, field, ijk, threshold, stats=None):
        """Query the field at corners ``ijk`` (M, 3) that are not yet cached."""
        ijk = np.asarray(ijk, dtype=np.int64).reshape(-1, 3)
        ijk = ijk[self.state[tuple(ijk.T)] == UNEVALUATED]
        if len(ijk) == 0:
            return ijk, np.zeros(0, dtype=np.int8)
        p = np.asarray(field(self.grid.corner(ijk)), dtype=np.float64)
        full = (p >= threshold).astype(np.int8)
        self.state[tuple(ijk.T)] = full
        self.prob[tuple(ijk.T)] = p
        if stats is not None:
            stats.corner_evaluations += len(ijk)
        return ijk, full

    def n_evaluated(self):
        return int(np.count_nonzero(self.state != UNEVALUATED))


def dichotomic_edge_vertices(field, a, b, a_full, iters=10, threshold=THRESHOLD, stats=None):
    """Bisect segments ``a -> b`` (M, 3) whose endpoints straddle the threshold.

    ``a_full`` gives the class of ``a``; ``b`` must be of the other class.
    Returns the midpoints of the final brackets, of length ``|b - a| 2^-iters``.
    """
    lo = np.array(a, dtype=np.float64, copy=True)
    hi = np.array(b, dtype=np.float64, copy=True)
    a_full = np.asarray(a_full, dtype=bool)
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        same = (np.asarray(field(mid)) >= threshold) == a_full
        lo = np.where(same[:, None], mid, lo)
        hi = np.where(same[:, None], hi, mid)
        if stats is not None:
            stats.edge_evaluations += len(mid)
    return 0.5 * (lo + hi)


def dichotomic_edge_vertex(field, a, b, iters=10, threshold=THRESHOLD):
    """Single-edge bisection; endpoints must lie on opposite sides of the threshold."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    pa, pb = np.asarray(field(np.stack([a, b])), dtype=np.float64)
    if (pa >= threshold) == (pb >= threshold):
        raise ValueError("edge endpoints are on the same side of the threshold")
    return dichotomic_edge_vertices(field, a[None], b[None], [pa >= threshold], iters, threshold)[0]


def _march(grid, state, field, iters, threshold, stats):
    """Triangulate every cell whose eight corners are all evaluated."""
    nx, ny, nz = (d - 1 for d in grid.dims)
    corners = [state[ox : ox + nx, oy : oy + ny, oz : oz + nz] for ox, oy, oz in CORNER_OFFSETS]
    known = np.ones((nx, ny, nz), dtype=bool)
    case = np.zeros((nx, ny, nz), dtype=np.int64)
    for bit, c in enumerate(corners):
        known &= c != UNEVALUATED
        case |= (c == FULL).astype(np.int64) << bit
    active = known & (case != 0) & (case != 255)
    cells = np.argwhere(active)
    if len(cells) == 0:
        return Mesh()

    edges = TRIANGLE_TABLE[case[tuple(cells.T)]]  # (M, 15), -1 padded
    m_idx, slot = np.nonzero(edges >= 0)
    e = edges[m_idx, slot]
    ca = cells[m_idx] + CORNER_OFFSETS[EDGE_CORNERS[e, 0]]
    cb = cells[m_idx] + CORNER_OFFSETS[EDGE_CORNERS[e, 1]]
    lower = np.minimum(ca, cb)
    axis = np.argmax(np.abs(cb - ca), axis=1)
    key = np.ravel_multi_index(tuple(lower.T), grid.dims) * 3 + axis

    ukey, inverse = np.unique(key, return_inverse=True)
    flat, ax = np.divmod(ukey, 3)
    lo_ijk = np.stack(np.unravel_index(flat, grid.dims), axis=1)
    hi_ijk = lo_ijk.copy()
    hi_ijk[np.arange(len(ax)), ax] += 1
    lo_full = state[tuple(lo_ijk.T)] == FULL
    vertices = dichotomic_edge_vertices(
        field, grid.corner(lo_ijk), grid.corner(hi_ijk), lo_full, iters, threshold, stats
    )
    # Table triangles come out wound clockwise seen from the empty side; swap to CCW.
    tris = inverse.reshape(-1, 3)[:, ::-1]
    return Mesh(vertices, tris)


def mc_dense(field, grid, dichotomy_iters=10, threshold=THRESHOLD, stats=None):
    """Evaluate every grid corner, then march all cells."""
    cache = OccupancyCache(grid)
    ny, nz = grid.dims[1], grid.dims[2]
    jk = np.stack(np.meshgrid(np.arange(ny), np.arange(nz), indexing="ij"), -1).reshape(-1, 2)
    for i in range(grid.dims[0]):
        cache.evaluate(field, np.column_stack([np.full(len(jk), i), jk]), threshold, stats)
    return _march(grid, cache.state, field, dichotomy_iters, threshold, stats)


def seed_cells(grid, seeds):
    """Cell index (M, 3) enclosing each seed point; raises for seeds off the grid."""
    pts = np.atleast_2d(np.asarray(seeds, dtype=np.float64))
    rel = (pts - np.asarray(grid.origin)) / grid.step
    upper = np.asarray(grid.dims) - 1
    tol = 1e-9
    bad = np.flatnonzero(np.any((rel < -tol) | (rel > upper + tol), axis=1))
    if len(bad):
        raise ValueError(f"seed {int(bad[0])} lies outside the grid")
    return np.clip(np.floor(rel).astype(np.int64), 0, upper - 1)


def grow_region(field, grid, seeds, threshold=THRESHOLD, stats=None):
    """Evaluate seed cells, then grow along the empty/full frontier to a fixpoint.

    A corner is evaluated once it has both an evaluated Empty and an
    evaluated Full corner within Chebyshev distance 2.
    """
    cache = OccupancyCache(grid)
    cells = np.unique(seed_cells(grid, seeds), axis=0)
    start = (cells[:, None, :] + CORNER_OFFSETS[None]).reshape(-1, 3)
    new, _ = cache.evaluate(field, np.unique(start, axis=0), threshold, stats)

    dims = np.asarray(grid.dims)
    r = GROW_RADIUS
    padded = np.full(tuple(dims + 2 * r), UNEVALUATED, dtype=np.int8)
    inner = tuple(slice(r, r + d) for d in dims)
    pdims = padded.shape
    window = np.ravel_multi_index(tuple((_WINDOW + r).T), pdims) - np.ravel_multi_index(
        (r, r, r), pdims
    )
    while len(new):
        padded[inner] = cache.state
        cand = (new[:, None, :] + _WINDOW[None]).reshape(-1, 3)
        cand = cand[np.all((cand >= 0) & (cand < dims), axis=1)]
        cand = np.unique(np.ravel_multi_index(tuple(cand.T), grid.dims))
        cand = np.stack(np.unravel_index(cand, grid.dims), axis=1)
        cand = cand[cache.state[tuple(cand.T)] == UNEVALUATED]
        if len(cand) == 0:
            break
        centre = np.ravel_multi_index(tuple((cand + r).T), pdims)
        around = padded.reshape(-1)[centre[:, None] + window[None, :]]
        grow = np.any(around == FULL, axis=1) & np.any(around == EMPTY, axis=1)
        new, _ = cache.evaluate(field, cand[grow], threshold, stats)
        if stats is not None:
            stats.waves += 1
    return cache


def mc_regro(field, grid, seeds, dichotomy_iters=10, threshold=THRESHOLD, stats=None):
    """Region-growing marching cubes seeded at ``seeds`` (typically the input points).

    Only cells whose eight corners were reached by the growth are marched,
    so surface components no seed touches are skipped entirely.
    """
    points = seeds.points if hasattr(seeds, "points") else seeds
    cache = grow_region(field, grid, points, threshold, stats)
    return _march(grid, cache.state, field, dichotomy_iters, threshold, stats)


@dataclass(frozen=True)
class WatertightReport:
    is_closed: bool
    boundary_edge_count: int
    non_manifold_edge_count: int


def edge_use_counts(mesh):
    """Undirected edges (E, 2) and how many triangles use each."""
    t = mesh.triangles
    e = np.sort(np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]]), axis=1)
    return np.unique(e, axis=0, return_counts=True)


def watertight_check(mesh):
    if len(mesh) == 0:
        return WatertightReport(True, 0, 0)
    _, counts = edge_use_counts(mesh)
    boundary = int(np.count_nonzero(counts == 1))
    non_manifold = int(np.count_nonzero(counts > 2))
    return WatertightReport(boundary == 0 and non_manifold == 0, boundary, non_manifold)


def mesh_components(mesh):
    """Connected-component label per triangle (shared vertices connect)."""
    nv, nt = len(mesh.vertices), len(mesh)
    if nt == 0:
        return np.zeros(0, dtype=np.int64)
    rows = np.repeat(np.arange(nt), 3)
    # Bipartite triangle/vertex graph; triangles are the first nt nodes.
    n = nt + nv
    graph = coo_matrix(
        (np.ones(3 * nt), (rows, nt + mesh.triangles.reshape(-1))), shape=(n, n)
    )
    _, labels = connected_components(graph, directed=False)
    return labels[:nt]


def submesh(mesh, triangle_mask):
    """Triangles selected by ``triangle_mask`` with unused vertices dropped."""
    tris = mesh.triangles[triangle_mask]
    used, inverse = np.unique(tris.reshape(-1), return_inverse=True)
    return Mesh(mesh.vertices[used], inverse.reshape(-1, 3))
