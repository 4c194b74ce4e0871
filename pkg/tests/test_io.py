import numpy as np
import pytest

from poco import AnalyticField, Mesh, PointCloud, PocoConfig, PocoModel, encode
from poco.geometry import Aabb
from poco.io import (
    FormatError,
    ModelFileError,
    RunConfig,
    load_model,
    model_from_bytes,
    model_to_bytes,
    read_config,
    read_obj,
    read_xyz,
    save_model,
    write_obj,
    write_xyz,
)
from poco.mesher import GridSpec, mc_dense, watertight_check
from poco.model import occupancy_batch


def test_read_xyz_basic(tmp_path):
    p = tmp_path / "a.xyz"
    p.write_text("# header\n0 0 0\n1 0 0\n")
    cloud = read_xyz(p)
    assert cloud.points.tolist() == [[0, 0, 0], [1, 0, 0]]
    assert cloud.normals is None


def test_xyz_round_trip(tmp_path, rng):
    cloud = PointCloud(rng.normal(size=(50, 3)) * 1e3)
    write_xyz(cloud, tmp_path / "c.xyz")
    back = read_xyz(tmp_path / "c.xyz")
    assert np.allclose(back.points, cloud.points, rtol=1e-9, atol=0)


def test_xyz_normals_renormalised(tmp_path):
    p = tmp_path / "n.xyz"
    p.write_text("0 0 0 0 0 1.0005\n1 1 1 0.6 0.8 0\n")
    cloud = read_xyz(p)
    assert np.allclose(np.linalg.norm(cloud.normals, axis=1), 1.0)
    p.write_text("0 0 0 0 0 1.5\n")
    with pytest.raises(FormatError, match="unit"):
        read_xyz(p)


def test_xyz_errors_name_the_line(tmp_path):
    p = tmp_path / "bad.xyz"
    p.write_text("0 0 0\n1 1 1 0 0 1\n")
    with pytest.raises(FormatError, match=":2:"):
        read_xyz(p)
    p.write_text("0 0\n")
    with pytest.raises(FormatError, match=":1:"):
        read_xyz(p)
    p.write_text("0 0 x\n")
    with pytest.raises(FormatError, match="number"):
        read_xyz(p)
    p.write_text("# nothing\n")
    with pytest.raises(FormatError):
        read_xyz(p)


def test_obj_round_trip(tmp_path):
    v = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]], float) + 1 / 3
    t = np.array([[0, 2, 1], [0, 1, 3], [0, 3, 2], [1, 2, 3]])
    write_obj(Mesh(v, t), tmp_path / "t.obj")
    back = read_obj(tmp_path / "t.obj")
    assert np.array_equal(back.vertices, v)
    assert np.array_equal(back.triangles, t)


def test_empty_obj_is_header_only(tmp_path):
    write_obj(Mesh(), tmp_path / "e.obj")
    lines = (tmp_path / "e.obj").read_text().splitlines()
    assert len(lines) == 1 and lines[0].startswith("#")
    assert len(read_obj(tmp_path / "e.obj")) == 0


def test_obj_reader_variants(tmp_path):
    p = tmp_path / "v.obj"
    p.write_text("v 0 0 0\nv 1 0 0\nv 0 1 0\nvn 0 0 1\nf 1/1/1 2/2/1 -1\n")
    assert read_obj(p).triangles.tolist() == [[0, 1, 2]]
    p.write_text("v 0 0 0\nv 1 0 0\nv 0 1 0\nv 1 1 0\nf 1 2 4 3\n")
    with pytest.raises(FormatError, match="triangles"):
        read_obj(p)


def test_mc_mesh_round_trip_keeps_watertightness(tmp_path):
    mesh = mc_dense(AnalyticField.sphere(), GridSpec.from_bounds(Aabb(-np.ones(3), np.ones(3)), 16))
    write_obj(mesh, tmp_path / "s.obj")
    back = read_obj(tmp_path / "s.obj")
    assert watertight_check(back) == watertight_check(mesh)
    assert np.array_equal(back.vertices, mesh.vertices)


def test_model_round_trip_is_byte_identical(tmp_path, small_model):
    save_model(small_model, tmp_path / "m.poco")
    loaded = load_model(tmp_path / "m.poco")
    save_model(loaded, tmp_path / "m2.poco")
    assert (tmp_path / "m.poco").read_bytes() == (tmp_path / "m2.poco").read_bytes()
    assert loaded.config == small_model.config


def test_model_header_layout(small_model):
    data = model_to_bytes(small_model)
    assert data[:4] == b"POCO"
    assert int.from_bytes(data[4:8], "little") == 1
    assert [int.from_bytes(data[8 + 4 * i : 12 + 4 * i], "little") for i in range(6)] == [8, 8, 4, 2, 6, 16]


def test_loaded_model_reproduces_probe(rng, small_model):
    cloud = PointCloud(rng.random((50, 3)))
    q = rng.random((20, 3))
    before = occupancy_batch(small_model, encode(small_model, cloud), q)
    loaded = model_from_bytes(model_to_bytes(small_model))
    after = occupancy_batch(loaded, encode(loaded, cloud), q)
    assert np.abs(before - after).max() < 1e-5


@pytest.mark.parametrize(
    "mutate, message",
    [
        (lambda d: b"PACO" + d[4:], "magic"),
        (lambda d: d[:4] + (2).to_bytes(4, "little") + d[8:], "version"),
        (lambda d: d[:20], "truncated"),
        (lambda d: d[:-3], "truncated"),
        (lambda d: d + b"\0", "trailing"),
        (lambda d: d[:33] + (99).to_bytes(4, "little") + d[37:], "shape"),
    ],
)
def test_corrupted_model_rejected(small_model, mutate, message):
    with pytest.raises(ModelFileError, match=message):
        model_from_bytes(mutate(model_to_bytes(small_model)))


def test_nan_parameter_rejected():
    model = PocoModel(PocoConfig(n=4, k=4, h=2, L=1, k_enc=4, hidden=8))
    model.params["dec.b"][0, 0] = np.nan
    with pytest.raises(ModelFileError, match="non-finite"):
        model_from_bytes(model_to_bytes(model))


def test_run_config_defaults_and_file(tmp_path):
    cfg = RunConfig()
    assert (cfg.k, cfg.h, cfg.n, cfg.n_view, cfg.dichotomies, cfg.fs_threshold) == (64, 64, 32, 10, 10, 0.01)
    p = tmp_path / "run.cfg"
    p.write_text("# comment\ngrid_res = 64\nuse_normals = yes  # inline\nthreshold=0.4\n")
    cfg = read_config(p)
    assert cfg.grid_res == 64 and cfg.use_normals is True and cfg.threshold == 0.4
    p.write_text("gird_res = 64\n")
    with pytest.raises(KeyError, match="gird_res"):
        read_config(p)
    p.write_text("grid_res 64\n")
    with pytest.raises(FormatError):
        read_config(p)
    p.write_text("grid_res = abc\n")
    with pytest.raises(ValueError, match="grid_res"):
        read_config(p)
