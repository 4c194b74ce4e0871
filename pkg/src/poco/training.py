"""Synthetic training batches from analytic shapes and the Adam training loop."""

from __future__ import annotations

import logging

import numpy as np

from .geometry import add_gaussian_noise
from .model import loss_and_grads
from .numerics import AdamState, adam_step

logger = logging.getLogger(__name__)

QUERY_BOX_INFLATION = 0.10


def make_training_batch(field, n_points, n_queries, sigma_noise, seed=None):
    """Noisy surface samples, uniform box queries and their 0/1 labels."""
    rng = np.random.default_rng(seed)
    surface_seed, noise_seed = rng.integers(0, 2**63, size=2)
    cloud = field.sample_surface(n_points, seed=surface_seed)
    cloud = add_gaussian_noise(cloud, sigma_noise, seed=noise_seed)
    queries = field.bounds().inflated(QUERY_BOX_INFLATION).sample(n_queries, rng)
    labels = field(queries).astype(np.int64)
    return cloud, queries, labels


def train(
    model,
    field,
    steps,
    batch_points=512,
    batch_queries=200,
    lr=1e-3,
    seed=0,
    sigma_noise=0.0,
    log_every=0,
    optimizer=None,
):
    """Train ``model`` in place on fresh batches; returns the per-step losses."""
    if steps < 1:
        raise ValueError("steps must be >= 1")
    state = optimizer or AdamState(model.params, lr=lr)
    step_seeds = np.random.default_rng(seed).integers(0, 2**63, size=steps)
    losses = []
    model.params.zero_grad()
    for step, step_seed in enumerate(step_seeds):
        cloud, queries, labels = make_training_batch(
            field, batch_points, batch_queries, sigma_noise, seed=step_seed
        )
        loss = loss_and_grads(model, cloud, queries, labels)
        if not np.isfinite(loss):
            raise FloatingPointError(f"loss is not finite at step {step}")
        adam_step(model.params, state)
        losses.append(loss)
        if log_every and (step + 1) % log_every == 0:
            logger.info("step %d  loss %.4f", step + 1, np.mean(losses[-log_every:]))
    return np.array(losses)
