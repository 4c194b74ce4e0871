"""Receptive field of the point encoder, measured by back-propagation."""

from __future__ import annotations

import numpy as np

from .model import encoder_backward, encoder_forward, encoder_neighbors, input_features


def receptive_field_probe(model, cloud, point_index, threshold=1e-7):
    """Input points whose features reach the latent of ``point_index``.

    Runs a linearised copy of the encoder (no ReLU, mean instead of max
    aggregation), back-propagates a unit cotangent on the sum of the probed
    point's latent, and keeps the points whose input gradient has an L2 norm
    above ``threshold``. Coordinates feed the encoder both as features and
    through neighbour offsets; both paths are summed. The centroid shift of
    centred inputs is treated as a constant.
    """
    if not 0 <= point_index < len(cloud):
        raise IndexError(f"point index {point_index} out of range")
    cfg = model.config
    nbr = encoder_neighbors(cloud, cfg.k_enc)
    feats, pos = input_features(cfg, cloud)
    latents, cache = encoder_forward(model, pos, feats, nbr, linear_twin=True)
    seed = np.zeros_like(latents)
    seed[point_index] = 1.0
    dfeats, dpos = encoder_backward(model, cache, seed, accumulate=False)
    grad = dfeats.copy()
    grad[:, :3] += dpos
    norms = np.linalg.norm(grad, axis=1)
    return set(np.flatnonzero(norms > threshold).tolist())


def knn_graph_closure(neighbors, start, hops):
    """Indices reachable from ``start`` in at most ``hops`` steps along kNN edges."""
    reached = {start}
    frontier = {start}
    for _ in range(hops):
        frontier = {int(j) for i in frontier for j in neighbors[i]} - reached
        reached |= frontier
    return reached
