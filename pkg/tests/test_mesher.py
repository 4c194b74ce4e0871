import numpy as np
import pytest

from _support import HalfSpace, TwoSpheres, canonical_triangles
from poco import AnalyticField, Mesh, PointCloud
from poco.geometry import Aabb
from poco.mesher import (
    EMPTY,
    FULL,
    UNEVALUATED,
    GridSpec,
    MeshingStats,
    OccupancyCache,
    dichotomic_edge_vertex,
    edge_use_counts,
    grow_region,
    mc_dense,
    mc_regro,
    mesh_components,
    seed_cells,
    submesh,
    watertight_check,
)


def unit_grid(res):
    return GridSpec.from_bounds(Aabb(-np.ones(3), np.ones(3)), res)


def test_grid_from_bounds():
    g = unit_grid(5)
    assert g.dims == (5, 5, 5)
    assert g.step == pytest.approx(0.5)
    assert np.allclose(g.corner([4, 4, 4]), [1, 1, 1])
    g2 = GridSpec.from_bounds(Aabb(np.zeros(3), np.array([1.0, 0.5, 0.25])), step=0.25)
    assert g2.dims == (5, 3, 2)
    with pytest.raises(ValueError):
        GridSpec((0, 0, 0), 0.0, (3, 3, 3))


def test_cache_evaluates_each_corner_once():
    calls = []

    def field(p):
        calls.append(len(p))
        return np.zeros(len(p))

    cache = OccupancyCache(unit_grid(4))
    cache.evaluate(field, [[0, 0, 0], [1, 1, 1]], 0.5)
    cache.evaluate(field, [[0, 0, 0], [2, 2, 2]], 0.5)
    assert calls == [2, 1]
    assert cache.n_evaluated() == 3
    assert cache.state[0, 0, 0] == EMPTY and cache.state[3, 3, 3] == UNEVALUATED


def test_threshold_boundary_counts_as_full():
    cache = OccupancyCache(unit_grid(3))
    cache.evaluate(lambda p: np.full(len(p), 0.5), [[1, 1, 1]], 0.5)
    assert cache.state[1, 1, 1] == FULL


def test_constant_fields_give_empty_mesh():
    g = unit_grid(6)
    assert len(mc_dense(lambda p: np.zeros(len(p)), g)) == 0
    assert len(mc_dense(lambda p: np.ones(len(p)), g)) == 0


def test_dichotomic_edge_vertex_bound():
    field = HalfSpace([1, 0, 0], 0.0123)
    a, b = np.array([0.0, 0.3, 0.3]), np.array([0.2, 0.3, 0.3])
    v = dichotomic_edge_vertex(field, a, b, iters=10)
    assert abs(v[0] - 0.0123) <= 0.2 * 2**-11 + 1e-15
    assert dichotomic_edge_vertex(field, b, a, iters=10)[0] == pytest.approx(v[0])
    with pytest.raises(ValueError):
        dichotomic_edge_vertex(field, a + 0.1, b, iters=10)


def test_single_cell_cases_are_closed_when_padded():
    # A lone full corner on an otherwise empty grid yields a closed tetrahedron-like blob.
    g = unit_grid(5)
    centre = g.corner([2, 2, 2])
    mesh = mc_dense(lambda p: (np.abs(p - centre).max(axis=1) < 1e-9).astype(float), g)
    assert len(mesh) == 8
    assert watertight_check(mesh).is_closed
    assert mesh.signed_volume() > 0


def test_sphere_mesh_is_watertight_and_outward():
    sphere = AnalyticField.sphere()
    g = unit_grid(24)
    mesh = mc_dense(sphere, g)
    report = watertight_check(mesh)
    assert report.is_closed and report.boundary_edge_count == 0
    assert mesh.signed_volume() > 0
    n = mesh.face_normals()
    centroids = mesh.vertices[mesh.triangles].mean(axis=1)
    assert np.mean(np.einsum("ij,ij->i", n, centroids) > 0) > 0.99
    assert np.abs(np.linalg.norm(mesh.vertices, axis=1) - 0.5).max() <= g.step * 2**-9 + 1e-12


def test_box_field_all_cases_consistent():
    field = AnalyticField.box(lo=(-0.37, -0.21, -0.52), hi=(0.44, 0.3, 0.1))
    mesh = mc_dense(field, unit_grid(17))
    assert watertight_check(mesh).is_closed


def test_random_fields_are_closed(rng):
    # Random blobs exercise every marching-cubes case; the grid border is kept empty.
    g = unit_grid(9)
    for _ in range(10):
        occ = rng.random(g.dims) < 0.5
        occ[[0, -1], :, :] = occ[:, [0, -1], :] = occ[:, :, [0, -1]] = False

        def field(p, occ=occ):
            ijk = np.rint((p - np.asarray(g.origin)) / g.step).astype(int)
            ijk = np.clip(ijk, 0, 8)
            return occ[tuple(ijk.T)].astype(float)

        mesh = mc_dense(field, g, dichotomy_iters=0)
        report = watertight_check(mesh)
        assert report.boundary_edge_count == 0


def test_seed_outside_grid_raises():
    with pytest.raises(ValueError, match="outside"):
        seed_cells(unit_grid(5), np.array([[2.0, 0.0, 0.0]]))
    assert seed_cells(unit_grid(5), np.array([[1.0, 1.0, 1.0]])).tolist() == [[3, 3, 3]]


def test_regro_matches_dense_on_sphere():
    sphere = AnalyticField.sphere()
    g = unit_grid(32)
    seeds = sphere.sample_surface(200, seed=1)
    dense_stats, regro_stats = MeshingStats(), MeshingStats()
    dense = mc_dense(sphere, g, stats=dense_stats)
    regro = mc_regro(sphere, g, seeds, stats=regro_stats)
    assert np.array_equal(canonical_triangles(dense), canonical_triangles(regro))
    assert regro_stats.corner_evaluations < dense_stats.corner_evaluations / 4


def test_regro_skips_untouched_component():
    field = TwoSpheres()
    g = unit_grid(32)
    seeds = PointCloud(np.array([[-0.5, 0.0, 0.3]]))
    regro = mc_regro(field, g, seeds)
    assert len(regro) > 0
    assert np.all(regro.vertices[:, 0] < 0)
    assert len(np.unique(mesh_components(regro))) == 1


def test_regro_with_no_surface_in_seed_cell():
    sphere = AnalyticField.sphere()
    stats = MeshingStats()
    mesh = mc_regro(sphere, unit_grid(16), np.zeros((1, 3)), stats=stats)
    assert len(mesh) == 0
    assert stats.corner_evaluations == 8


def test_grow_region_reaches_every_surface_cell():
    sphere = AnalyticField.sphere()
    g = unit_grid(20)
    cache = grow_region(sphere, g, sphere.sample_surface(5, seed=0).points)
    full = OccupancyCache(g)
    ijk = np.argwhere(np.ones(g.dims, bool))
    full.evaluate(sphere, ijk, 0.5)
    # Every evaluated corner agrees with the dense evaluation.
    known = cache.state != UNEVALUATED
    assert np.array_equal(cache.state[known], full.state[known])


def test_watertight_check_detects_holes_and_fins():
    v = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1], [1, 1, 1]], float)
    tet = np.array([[0, 2, 1], [0, 1, 3], [0, 3, 2], [1, 2, 3]])
    assert watertight_check(Mesh(v, tet)).is_closed
    open_mesh = watertight_check(Mesh(v, tet[:3]))
    assert open_mesh.boundary_edge_count == 3 and not open_mesh.is_closed
    fin = watertight_check(Mesh(v, np.vstack([tet, [[1, 2, 4]]])))
    assert fin.non_manifold_edge_count == 1
    edges, counts = edge_use_counts(Mesh(v, tet))
    assert len(edges) == 6 and np.all(counts == 2)


def test_components_and_submesh():
    field = TwoSpheres()
    mesh = mc_dense(field, unit_grid(24))
    labels = mesh_components(mesh)
    assert len(np.unique(labels)) == 2
    part = submesh(mesh, labels == labels[0])
    assert watertight_check(part).is_closed
    assert len(part) < len(mesh)
