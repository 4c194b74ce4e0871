"""Latent-level test-time augmentation and kNN chunking of large clouds.

Both strategies encode several overlapping subsets of the input and average
each point's latent over the subsets that contain it. Subset selection always
favours the points seen least so far.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import KdTree
from .model import LatentField, encode

DEFAULT_SUBSAMPLE_VIEWS = 10
DEFAULT_CHUNK_VIEWS = 3


@dataclass
class SubsamplePlan:
    subsamples: list
    counts: np.ndarray


@dataclass
class ChunkPlan:
    chunks: list
    counts: np.ndarray


def _least_seen(counts, size, rng):
    """``size`` distinct indices drawn uniformly, lowest appearance count first."""
    chosen = []
    need = size
    for level in np.unique(counts):
        pool = np.flatnonzero(counts == level)
        if len(pool) <= need:
            chosen.append(pool)
            need -= len(pool)
        else:
            chosen.append(rng.choice(pool, need, replace=False))
            need = 0
        if need == 0:
            break
    return np.sort(np.concatenate(chosen))


def plan_subsamples(n_points, sample_size, n_view=DEFAULT_SUBSAMPLE_VIEWS, seed=None):
    """Build subsamples until every index has appeared at least ``n_view`` times."""
    if not 1 <= sample_size <= n_points:
        raise ValueError("need 1 <= sample_size <= N")
    if n_view < 1:
        raise ValueError("n_view must be >= 1")
    rng = np.random.default_rng(seed)
    counts = np.zeros(n_points, dtype=np.int64)
    subsamples = []
    while counts.min() < n_view:
        sub = _least_seen(counts, sample_size, rng)
        counts[sub] += 1
        subsamples.append(sub)
    return SubsamplePlan(subsamples, counts)


def _average_latents(model, cloud, index_sets):
    total = np.zeros((len(cloud), model.config.n))
    seen = np.zeros(len(cloud), dtype=np.int64)
    # Fixed summation order (plan order) keeps the result reproducible.
    for idx in index_sets:
        total[idx] += encode(model, cloud.subset(idx)).latents
        seen[idx] += 1
    if np.any(seen == 0):
        raise ValueError("plan does not cover every point")
    return total / seen[:, None]


def encode_with_tta(model, cloud, plan, tree=None):
    """Encode each subsample and average every point's latents over its occurrences."""
    latents = _average_latents(model, cloud, plan.subsamples)
    return LatentField(cloud, tree or KdTree(cloud), latents)


def plan_chunks(cloud, n_test, n_view=DEFAULT_CHUNK_VIEWS, seed=None, tree=None):
    """Chunks of a least-seen seed point plus its ``n_test - 1`` nearest neighbours."""
    n = len(cloud)
    if n <= n_test:
        return ChunkPlan([np.arange(n)], np.ones(n, dtype=np.int64))
    tree = tree or KdTree(cloud)
    rng = np.random.default_rng(seed)
    counts = np.zeros(n, dtype=np.int64)
    chunks = []
    while counts.min() < n_view:
        pool = np.flatnonzero(counts == counts.min())
        seed_idx = rng.choice(pool)
        members, _ = tree.query(cloud.points[seed_idx], n_test)
        members = members[0]
        if seed_idx not in members:
            members[-1] = seed_idx
        members = np.sort(members)
        counts[members] += 1
        chunks.append(members)
    return ChunkPlan(chunks, counts)


def encode_chunked(model, cloud, chunk_plan, tree=None):
    """Encode chunks independently; overlapping latents are averaged."""
    latents = _average_latents(model, cloud, chunk_plan.chunks)
    return LatentField(cloud, tree or KdTree(cloud), latents)
