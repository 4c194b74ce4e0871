"""XYZ point files, OBJ meshes, the binary model container and run configs."""

from __future__ import annotations

import struct
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .geometry import Mesh, PointCloud
from .model import PocoConfig, PocoModel, parameter_layout
from .numerics import ParamStore

MAGIC = b"POCO"
MODEL_VERSION = 1
XYZ_NORMAL_TOL = 1e-3


class FormatError(ValueError):
    """Malformed input file; the message names the offending line or field."""


class ModelFileError(FormatError):
    pass


# ---------------------------------------------------------------------------
# XYZ


def read_xyz(path):
    rows, arity = [], None
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) not in (3, 6):
                raise FormatError(f"{path}:{lineno}: expected 3 or 6 values, got {len(parts)}")
            if arity is None:
                arity = len(parts)
            elif len(parts) != arity:
                raise FormatError(f"{path}:{lineno}: mixed column count ({len(parts)} vs {arity})")
            try:
                rows.append([float(x) for x in parts])
            except ValueError:
                raise FormatError(f"{path}:{lineno}: not a number") from None
    if not rows:
        raise FormatError(f"{path}: no points")
    data = np.array(rows)
    if arity == 3:
        return PointCloud(data)
    normals = data[:, 3:]
    norm = np.linalg.norm(normals, axis=1)
    bad = np.flatnonzero(np.abs(norm - 1.0) > XYZ_NORMAL_TOL)
    if len(bad):
        raise FormatError(f"{path}: normal on point {int(bad[0])} is not unit length")
    return PointCloud(data[:, :3], normals / norm[:, None])


def write_xyz(cloud, path):
    data = cloud.points if cloud.normals is None else np.hstack([cloud.points, cloud.normals])
    np.savetxt(path, data, fmt="%.17g")


# ---------------------------------------------------------------------------
# OBJ


def write_obj(mesh, path):
    with open(path, "w") as fh:
        fh.write(f"# {len(mesh.vertices)} vertices, {len(mesh)} triangles\n")
        np.savetxt(fh, mesh.vertices, fmt="v %.17g %.17g %.17g")
        np.savetxt(fh, mesh.triangles + 1, fmt="f %d %d %d")


def read_obj(path):
    vertices, faces = [], []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            if parts[0] == "v":
                if len(parts) < 4:
                    raise FormatError(f"{path}:{lineno}: vertex needs 3 coordinates")
                vertices.append([float(x) for x in parts[1:4]])
            elif parts[0] == "f":
                if len(parts) != 4:
                    raise FormatError(f"{path}:{lineno}: only triangles are supported")
                idx = [int(p.split("/")[0]) for p in parts[1:]]
                # Negative indices are relative to the vertices read so far.
                faces.append([i - 1 if i > 0 else len(vertices) + i for i in idx])
    return Mesh(np.array(vertices).reshape(-1, 3), np.array(faces, dtype=np.int64).reshape(-1, 3))


# ---------------------------------------------------------------------------
# Model container
#
# "POCO" | u32 version | u32 n, k, h, L, k_enc, hidden | u8 use_normals
# then per parameter (parameter_layout order): u32 rows, u32 cols, float32[rows*cols]
# All little-endian.

_HEADER = struct.Struct("<4sI6IB")
_SHAPE = struct.Struct("<II")


def model_to_bytes(model):
    cfg = model.config
    out = [_HEADER.pack(MAGIC, MODEL_VERSION, cfg.n, cfg.k, cfg.h, cfg.L, cfg.k_enc, cfg.hidden,
                        int(cfg.use_normals))]
    for name, _ in parameter_layout(cfg):
        p = model.params[name]
        out.append(_SHAPE.pack(*p.shape))
        out.append(np.ascontiguousarray(p, dtype="<f4").tobytes())
    return b"".join(out)


def model_from_bytes(data):
    if len(data) < _HEADER.size:
        raise ModelFileError("truncated model file: header incomplete")
    magic, version, n, k, h, L, k_enc, hidden, normals = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise ModelFileError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if version != MODEL_VERSION:
        raise ModelFileError(f"unsupported model version {version}")
    if normals not in (0, 1):
        raise ModelFileError(f"invalid use_normals byte {normals}")
    try:
        cfg = PocoConfig(n=n, k=k, h=h, L=L, k_enc=k_enc, hidden=hidden, use_normals=bool(normals))
    except ValueError as exc:
        raise ModelFileError(f"invalid model configuration: {exc}") from None
    params = ParamStore()
    offset = _HEADER.size
    for name, shape in parameter_layout(cfg):
        if offset + _SHAPE.size > len(data):
            raise ModelFileError(f"truncated model file at parameter {name}")
        rows, cols = _SHAPE.unpack_from(data, offset)
        offset += _SHAPE.size
        if (rows, cols) != shape:
            raise ModelFileError(f"parameter {name} has shape {(rows, cols)}, expected {shape}")
        size = 4 * rows * cols
        if offset + size > len(data):
            raise ModelFileError(f"truncated model file in parameter {name}")
        values = np.frombuffer(data, dtype="<f4", count=rows * cols, offset=offset)
        if not np.all(np.isfinite(values)):
            raise ModelFileError(f"non-finite values in parameter {name}")
        params.add(name, values.reshape(shape))
        offset += size
    if offset != len(data):
        raise ModelFileError(f"{len(data) - offset} unexpected trailing bytes")
    return PocoModel(cfg, params=params)


def save_model(model, path):
    Path(path).write_bytes(model_to_bytes(model))


def load_model(path):
    return model_from_bytes(Path(path).read_bytes())


# ---------------------------------------------------------------------------
# Run configuration


@dataclass
class RunConfig:
    """Flat settings shared by the command-line tools."""

    # network
    n: int = 32
    k: int = 64
    h: int = 64
    L: int = 4
    k_enc: int = 16
    hidden: int = 64
    use_normals: bool = False
    # training
    shape: str = "sphere"
    steps: int = 2000
    points: int = 512
    queries: int = 200
    lr: float = 1e-3
    noise_sigma: float = 0.05
    seed: int = 0
    # reconstruction
    grid_res: int = 128
    grid_step: float = 0.0
    mesher: str = "regro"
    dichotomies: int = 10
    threshold: float = 0.5
    tta_views: int = 1
    tta_size: int = 3000
    n_view: int = 10
    chunk_size: int = 0
    chunk_views: int = 3
    rescale_nn: float = 0.0
    # evaluation
    samples: int = 100_000
    volume_samples: int = 100_000
    fs_threshold: float = 0.01

    def model_config(self):
        return PocoConfig(n=self.n, k=self.k, h=self.h, L=self.L, k_enc=self.k_enc,
                          hidden=self.hidden, use_normals=self.use_normals)

    def update(self, values):
        known = {f.name: f for f in fields(self)}
        for key, value in values.items():
            if key not in known:
                raise KeyError(f"unknown config key {key!r}")
            setattr(self, key, _coerce(known[key].type, value, key))
        return self


def _coerce(kind, value, key):
    if not isinstance(value, str):
        return value
    try:
        if kind in ("bool", bool):
            if value.lower() not in ("1", "0", "true", "false", "yes", "no"):
                raise ValueError(value)
            return value.lower() in ("1", "true", "yes")
        if kind in ("int", int):
            return int(value)
        if kind in ("float", float):
            return float(value)
    except ValueError:
        raise ValueError(f"bad value {value!r} for {key}") from None
    return value


def read_config(path, base=None):
    """Parse ``key = value`` lines ('#' comments) onto ``base`` (default RunConfig())."""
    values = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise FormatError(f"{path}:{lineno}: expected key=value")
            key, value = (s.strip() for s in line.split("=", 1))
            if key in values:
                raise FormatError(f"{path}:{lineno}: duplicate key {key!r}")
            values[key] = value
    return (base or RunConfig()).update(values)
