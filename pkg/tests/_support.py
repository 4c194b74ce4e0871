"""Shared fixtures-as-functions for the unit and acceptance tests."""

import numpy as np

from poco import AnalyticField, PocoConfig, PocoModel
from poco.model import loss_and_grads
from poco.numerics import finite_diff_check
from poco.training import make_training_batch

GRADCHECK_CONFIG = PocoConfig(n=4, k=4, h=2, L=1, k_enc=4)


def gradient_check(seed=0, cfg=GRADCHECK_CONFIG, n_points=16, n_queries=20, max_entries=None):
    """Max relative error of the training-loss gradient against central differences.

    Biases are drawn away from zero so no pre-activation sits on a ReLU kink.
    A long-double copy of the weights resolves the tiny gradients that float64
    round-off cannot.
    """
    model = PocoModel(cfg, seed=seed)
    rng = np.random.default_rng(seed)
    for name, p in model.params.items():
        if name.endswith(".b"):
            p[:] = rng.uniform(-0.5, 0.5, p.shape)
    cloud, queries, labels = make_training_batch(
        AnalyticField.sphere(), n_points, n_queries, 0.02, seed=3 + seed
    )
    model.params.zero_grad()
    loss_and_grads(model, cloud, queries, labels)
    analytic = {k: v.copy() for k, v in model.params.grads.items()}
    fine = PocoModel(cfg, params=model.params.copy(np.longdouble))
    return finite_diff_check(
        lambda: loss_and_grads(model, cloud, queries, labels, accumulate=False),
        model.params,
        analytic,
        max_entries=max_entries,
        precise=(lambda: loss_and_grads(fine, cloud, queries, labels, accumulate=False), fine.params),
    )


class TwoSpheres:
    """Union of two disjoint balls with hard 0/1 occupancy."""

    def __init__(self, centers=((-0.5, 0.0, 0.0), (0.5, 0.0, 0.0)), radius=0.3):
        self.centers = np.asarray(centers, dtype=np.float64)
        self.radius = radius

    def __call__(self, points):
        p = np.atleast_2d(points)
        d = np.linalg.norm(p[:, None, :] - self.centers[None], axis=-1).min(axis=1)
        return (d <= self.radius).astype(np.float64)


class HalfSpace:
    """Full where ``x . normal <= offset``."""

    def __init__(self, normal, offset):
        self.normal = np.asarray(normal, dtype=np.float64) / np.linalg.norm(normal)
        self.offset = float(offset)

    def __call__(self, points):
        return (np.atleast_2d(points) @ self.normal <= self.offset).astype(np.float64)


def canonical_triangles(mesh):
    """(T, 9) coordinates, each triangle rotated to start at its smallest vertex, rows sorted.

    Rotation keeps the winding, so two meshes agree as oriented triangle
    multisets iff these arrays agree.
    """
    tri = mesh.vertices[mesh.triangles]  # (T, 3, 3)
    first = np.array([min(range(3), key=lambda j: tuple(t[j])) for t in tri], dtype=np.int64)
    order = (first[:, None] + np.arange(3)[None]) % 3
    tri = np.take_along_axis(tri, order[:, :, None], axis=1).reshape(-1, 9)
    return tri[np.lexsort(tri.T[::-1])]
