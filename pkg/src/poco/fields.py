"""Occupancy fields: the query interface and hard analytic shapes."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol

import numpy as np

from .geometry import Aabb, PointCloud


class OccupancyField(Protocol):
    """Anything mapping (M, 3) points to (M,) probabilities in [0, 1]."""

    def __call__(self, points: np.ndarray) -> np.ndarray: ...


@dataclass(frozen=True)
class AnalyticField:
    """Sphere, axis-aligned box or z-axis torus with exact 0/1 occupancy.

    ``params`` per kind: sphere ``(center, radius)``, box ``(min, max)``,
    torus ``(center, major_radius, minor_radius)``.
    """

    kind: str
    params: tuple

    @classmethod
    def sphere(cls, center=(0.0, 0.0, 0.0), radius=0.5):
        if radius <= 0:
            raise ValueError("radius must be positive")
        return cls("sphere", (np.asarray(center, float), float(radius)))

    @classmethod
    def box(cls, lo=(-0.4, -0.4, -0.4), hi=(0.4, 0.4, 0.4)):
        lo, hi = np.asarray(lo, float), np.asarray(hi, float)
        if np.any(hi <= lo):
            raise ValueError("box max must exceed min")
        return cls("box", (lo, hi))

    @classmethod
    def torus(cls, center=(0.0, 0.0, 0.0), major=0.35, minor=0.15):
        if not 0 < minor < major:
            raise ValueError("torus needs 0 < minor < major")
        return cls("torus", (np.asarray(center, float), float(major), float(minor)))

    @classmethod
    def named(cls, kind):
        try:
            return {"sphere": cls.sphere, "box": cls.box, "torus": cls.torus}[kind]()
        except KeyError:
            raise ValueError(f"unknown shape {kind!r}") from None

    def __call__(self, points):
        p = np.atleast_2d(np.asarray(points, dtype=np.float64))
        if self.kind == "sphere":
            c, r = self.params
            inside = np.sum((p - c) ** 2, axis=1) <= r * r
        elif self.kind == "box":
            lo, hi = self.params
            inside = np.all((p >= lo) & (p <= hi), axis=1)
        elif self.kind == "torus":
            c, R, r = self.params
            d = p - c
            ring = np.sqrt(d[:, 0] ** 2 + d[:, 1] ** 2) - R
            inside = ring**2 + d[:, 2] ** 2 <= r * r
        else:
            raise ValueError(f"unknown shape {self.kind!r}")
        return inside.astype(np.float64)

    def query(self, q):
        return int(self(np.asarray(q, float)[None, :])[0])

    def bounds(self):
        if self.kind == "sphere":
            c, r = self.params
            return Aabb(c - r, c + r)
        if self.kind == "box":
            return Aabb(*self.params)
        c, R, r = self.params
        ext = np.array([R + r, R + r, r])
        return Aabb(c - ext, c + ext)

    def area(self):
        if self.kind == "sphere":
            return 4 * np.pi * self.params[1] ** 2
        if self.kind == "box":
            e = self.params[1] - self.params[0]
            return 2 * (e[0] * e[1] + e[1] * e[2] + e[0] * e[2])
        _, R, r = self.params
        return 4 * np.pi**2 * R * r

    def volume(self):
        if self.kind == "sphere":
            return 4 / 3 * np.pi * self.params[1] ** 3
        if self.kind == "box":
            return float(np.prod(self.params[1] - self.params[0]))
        _, R, r = self.params
        return 2 * np.pi**2 * R * r * r

    def sample_surface(self, count, seed=None):
        """Area-uniform surface samples with outward unit normals."""
        rng = np.random.default_rng(seed)
        if self.kind == "sphere":
            c, r = self.params
            n = rng.normal(size=(count, 3))
            n /= np.linalg.norm(n, axis=1, keepdims=True)
            return PointCloud(c + r * n, n)
        if self.kind == "box":
            return _sample_box(self.params, count, rng)
        return _sample_torus(self.params, count, rng)


def _sample_box(params, count, rng):
    lo, hi = params
    e = hi - lo
    # Faces in pairs along each axis; area of the pair along axis a is the product of the other two.
    face_area = np.array([e[1] * e[2], e[0] * e[2], e[0] * e[1]])
    axis = rng.choice(3, size=count, p=face_area / face_area.sum())
    side = rng.integers(0, 2, size=count)
    points = lo + rng.random((count, 3)) * e
    rows = np.arange(count)
    points[rows, axis] = np.where(side == 1, hi[axis], lo[axis])
    normals = np.zeros((count, 3))
    normals[rows, axis] = np.where(side == 1, 1.0, -1.0)
    return PointCloud(points, normals)


def _sample_torus(params, count, rng):
    c, R, r = params
    u_all, v_all = [], []
    need = count
    while need > 0:
        # Area element is proportional to R + r cos(v); rejection on v.
        u = rng.uniform(0, 2 * np.pi, 2 * need)
        v = rng.uniform(0, 2 * np.pi, 2 * need)
        keep = rng.random(2 * need) * (R + r) <= R + r * np.cos(v)
        u_all.append(u[keep][:need])
        v_all.append(v[keep][:need])
        need -= len(u_all[-1])
    u, v = np.concatenate(u_all), np.concatenate(v_all)
    normals = np.stack([np.cos(v) * np.cos(u), np.cos(v) * np.sin(u), np.sin(v)], axis=1)
    ring = np.stack([R * np.cos(u), R * np.sin(u), np.zeros_like(u)], axis=1)
    return PointCloud(c + ring + r * normals, normals)


def analytic_query(field, q):
    """Hard occupancy (0 or 1) of a single point."""
    return field.query(q)
