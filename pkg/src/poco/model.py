"""Point-convolution occupancy network.

Pipeline for a query ``q`` against an encoded cloud:

1. every input point ``p`` carries a latent ``z_p`` from the point encoder;
2. the ``k`` nearest input points of ``q`` are gathered;
3. each neighbour latent is re-encoded with the offset ``q - p`` by a 3-layer MLP;
4. ``h`` attention heads score the relative latents, each softmaxed over the
   neighbours, and the head-averaged weights blend the relative latents;
5. a linear layer turns the blended feature into empty/full logits.

The encoder is a small residual kNN message-passing stack (max aggregation),
not a reproduction of any particular published backbone.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from .geometry import KdTree, PointCloud
from .numerics import (
    ParamStore,
    cross_entropy,
    cross_entropy_backward,
    linear,
    linear_backward,
    max_over_group,
    max_over_group_backward,
    relu,
    relu_backward,
    scatter_add_rows,
    softmax_rows,
    softmax_rows_backward,
)

FULL = 1  # logit / label index of the "inside" class
QUERY_CHUNK = 4096


@dataclass(frozen=True)
class PocoConfig:
    n: int = 32  # latent size
    k: int = 64  # interpolation neighbours
    h: int = 64  # attention heads
    L: int = 4  # encoder layers
    k_enc: int = 16  # encoder neighbours per layer
    hidden: int = 64  # encoder width
    use_normals: bool = False
    center_input: bool = True

    def __post_init__(self):
        for name in ("n", "k", "h", "k_enc", "hidden"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.L < 0:
            raise ValueError("L must be >= 0")
        for name in ("n", "k", "h"):
            if getattr(self, name) > 4096:
                raise ValueError(f"{name} must be <= 4096")

    @property
    def in_features(self):
        return 6 if self.use_normals else 3

    def replace(self, **changes):
        values = {f.name: getattr(self, f.name) for f in fields(self)}
        values.update(changes)
        return PocoConfig(**values)


def parameter_layout(cfg):
    """``(name, shape)`` for every parameter, in serialisation order."""
    layout = []
    d = cfg.in_features
    for layer in range(cfg.L):
        layout += [
            (f"enc.{layer}.msg1.W", (cfg.hidden, d + 3)),
            (f"enc.{layer}.msg1.b", (cfg.hidden, 1)),
            (f"enc.{layer}.msg2.W", (cfg.hidden, cfg.hidden)),
            (f"enc.{layer}.msg2.b", (cfg.hidden, 1)),
            (f"enc.{layer}.res.W", (cfg.hidden, d)),
        ]
        d = cfg.hidden
    layout += [
        ("enc.out.W", (cfg.n, d)),
        ("enc.out.b", (cfg.n, 1)),
        ("rel.1.W", (cfg.n, cfg.n + 3)),
        ("rel.1.b", (cfg.n, 1)),
        ("rel.2.W", (cfg.n, cfg.n)),
        ("rel.2.b", (cfg.n, 1)),
        ("rel.3.W", (cfg.n, cfg.n)),
        ("rel.3.b", (cfg.n, 1)),
        ("att.W", (cfg.h, cfg.n)),
        ("dec.W", (2, cfg.n)),
        ("dec.b", (2, 1)),
    ]
    return layout


class PocoModel:
    """Configuration plus a :class:`ParamStore` holding every weight."""

    def __init__(self, config=None, seed=0, params=None):
        self.config = config or PocoConfig()
        if params is None:
            rng = np.random.default_rng(seed)
            params = ParamStore()
            for name, shape in parameter_layout(self.config):
                if name.endswith(".b"):
                    params.add(name, np.zeros(shape))
                else:
                    bound = np.sqrt(6.0 / (shape[0] + shape[1]))
                    params.add(name, rng.uniform(-bound, bound, shape))
        self.params = params
        expected = dict(parameter_layout(self.config))
        if list(params) != list(expected) or any(
            params[k].shape != s for k, s in expected.items()
        ):
            raise ValueError("parameters do not match the model configuration")

    def __getitem__(self, name):
        return self.params[name]


@dataclass
class LatentField:
    """An encoded cloud: one latent row per input point, plus its kd-tree."""

    cloud: PointCloud
    tree: KdTree
    latents: np.ndarray

    def __post_init__(self):
        if len(self.latents) != len(self.cloud):
            raise ValueError("latent rows must match the number of points")
        if not np.all(np.isfinite(self.latents)):
            raise ValueError("non-finite latent vector")


# ---------------------------------------------------------------------------
# Encoder


def encoder_neighbors(cloud, k_enc, tree=None):
    """Indices (N, k_enc) of each point's nearest points, itself included."""
    if len(cloud) < k_enc:
        raise ValueError(f"cloud has {len(cloud)} points, encoder needs at least k_enc={k_enc}")
    tree = tree or KdTree(cloud)
    idx, _ = tree.query(cloud.points, k_enc)
    return idx


def input_features(cfg, cloud):
    pos = cloud.points
    if cfg.center_input:
        pos = pos - pos.mean(axis=0)
    if cfg.use_normals:
        if cloud.normals is None:
            raise ValueError("model expects normals but the cloud has none")
        return np.concatenate([pos, cloud.normals], axis=1), pos
    return pos, pos


def encoder_forward(model, pos, feats, nbr, linear_twin=False):
    """Run the encoder; returns ``(latents, cache)``.

    ``linear_twin`` drops every ReLU and swaps max aggregation for a mean,
    which is the network used by the receptive-field probe.
    """
    P, cfg = model.params, model.config
    act = (lambda x: x) if linear_twin else relu
    F = feats
    layers = []
    for layer in range(cfg.L):
        pre = f"enc.{layer}."
        rel = pos[nbr] - pos[:, None, :]
        inp = np.concatenate([F[nbr], rel], axis=-1)
        a1 = linear(inp, P[pre + "msg1.W"], P[pre + "msg1.b"])
        m = linear(act(a1), P[pre + "msg2.W"], P[pre + "msg2.b"])
        if linear_twin:
            agg, arg = m.mean(axis=1), None
        else:
            agg, arg = max_over_group(m, axis=1)
        z = agg + linear(F, P[pre + "res.W"])
        layers.append((F, inp, a1, arg, z))
        F = act(z)
    latents = linear(F, P["enc.out.W"], P["enc.out.b"])
    return latents, (pos, nbr, layers, F, linear_twin)


def encoder_backward(model, cache, dlatents, accumulate=True):
    """Back-propagate ``dlatents``; returns ``(dfeats, dpos)``.

    Parameter gradients are added to ``model.params.grads`` when ``accumulate``.
    """
    P, cfg = model.params, model.config
    pos, nbr, layers, F, linear_twin = cache
    grads = P.grads

    def acc(name, g):
        if accumulate:
            grads[name] += g

    dF, dW, db = linear_backward(dlatents, F, P["enc.out.W"])
    acc("enc.out.W", dW)
    acc("enc.out.b", db)
    dpos = np.zeros_like(pos)
    k_enc = nbr.shape[1]
    for layer in reversed(range(cfg.L)):
        pre = f"enc.{layer}."
        F_in, inp, a1, arg, z = layers[layer]
        dz = dF if linear_twin else relu_backward(dF, z)
        dF_in, dW, _ = linear_backward(dz, F_in, P[pre + "res.W"], has_bias=False)
        acc(pre + "res.W", dW)
        if linear_twin:
            dm = np.repeat(dz[:, None, :] / k_enc, k_enc, axis=1)
        else:
            dm = max_over_group_backward(dz, arg, k_enc, axis=1)
        h1 = a1 if linear_twin else relu(a1)
        dh1, dW, db = linear_backward(dm, h1, P[pre + "msg2.W"])
        acc(pre + "msg2.W", dW)
        acc(pre + "msg2.b", db)
        da1 = dh1 if linear_twin else relu_backward(dh1, a1)
        dinp, dW, db = linear_backward(da1, inp, P[pre + "msg1.W"])
        acc(pre + "msg1.W", dW)
        acc(pre + "msg1.b", db)
        d = F_in.shape[1]
        dF_in += scatter_add_rows(nbr, dinp[..., :d], len(F_in))
        drel = dinp[..., d:]
        dpos += scatter_add_rows(nbr, drel, len(pos)) - drel.sum(axis=1)
        dF = dF_in
    return dF, dpos


def encode(model, cloud, tree=None):
    """Latent vector for every point of ``cloud``."""
    tree = tree or KdTree(cloud)
    nbr = encoder_neighbors(cloud, model.config.k_enc, tree)
    feats, pos = input_features(model.config, cloud)
    latents, _ = encoder_forward(model, pos, feats, nbr)
    return LatentField(cloud, tree, latents)


# ---------------------------------------------------------------------------
# Query side


def relative_encode(model, z_p, delta):
    """Relative latent(s) from latent(s) ``z_p`` and offset(s) ``delta = q - p``."""
    x = np.concatenate([np.asarray(z_p, float), np.asarray(delta, float)], axis=-1)
    return _relative_forward(model.params, x)[0]


def _relative_forward(P, x):
    a1 = linear(x, P["rel.1.W"], P["rel.1.b"])
    a2 = linear(relu(a1), P["rel.2.W"], P["rel.2.b"])
    zr = linear(relu(a2), P["rel.3.W"], P["rel.3.b"])
    return zr, (x, a1, a2)


def _relative_backward(P, grads, dzr, cache):
    x, a1, a2 = cache
    dh2, dW, db = linear_backward(dzr, relu(a2), P["rel.3.W"])
    grads["rel.3.W"] += dW
    grads["rel.3.b"] += db
    dh1, dW, db = linear_backward(relu_backward(dh2, a2), relu(a1), P["rel.2.W"])
    grads["rel.2.W"] += dW
    grads["rel.2.b"] += db
    dx, dW, db = linear_backward(relu_backward(dh1, a1), x, P["rel.1.W"])
    grads["rel.1.W"] += dW
    grads["rel.1.b"] += db
    return dx


def head_weights(W, Zrel):
    """Per-head softmax over neighbours: (..., k, h)."""
    return softmax_rows(linear(Zrel, W), axis=-2)


def attention_weights(model, Zrel):
    """Interpolation weights (..., k): per-head softmaxes averaged over heads."""
    return head_weights(model.params["att.W"], np.asarray(Zrel, float)).mean(axis=-1)


def interpolate(Zrel, s):
    """Weighted sum of relative latents over the neighbour axis."""
    Zrel = np.asarray(Zrel, float)
    s = np.asarray(s, float)
    if np.any(np.abs(s.sum(axis=-1) - 1.0) > 1e-6):
        raise ValueError("interpolation weights must sum to 1")
    return (s[..., None] * Zrel).sum(axis=-2)


def decode(model, z_q):
    """Empty/full logits and the probability of the full class."""
    logits = linear(np.asarray(z_q, float), model.params["dec.W"], model.params["dec.b"])
    return logits, softmax_rows(logits)[..., FULL]


def query_forward(model, field_points, latents, queries, nbr):
    """Logits (Q, 2) for a batch of queries with precomputed neighbours (Q, k)."""
    P = model.params
    delta = queries[:, None, :] - field_points[nbr]
    x = np.concatenate([latents[nbr], delta], axis=-1)
    zr, rcache = _relative_forward(P, x)
    S = head_weights(P["att.W"], zr)
    s = S.mean(axis=-1)
    zq = (s[..., None] * zr).sum(axis=1)
    logits = linear(zq, P["dec.W"], P["dec.b"])
    return logits, (nbr, zr, rcache, S, s, zq)


def query_backward(model, cache, dlogits, n_points):
    """Accumulate query-side parameter gradients; returns dlatents (N, n)."""
    P, grads = model.params, model.params.grads
    nbr, zr, rcache, S, s, zq = cache
    dzq, dW, db = linear_backward(dlogits, zq, P["dec.W"])
    grads["dec.W"] += dW
    grads["dec.b"] += db
    dzr = s[..., None] * dzq[:, None, :]
    ds = (zr * dzq[:, None, :]).sum(axis=-1)
    h = S.shape[-1]
    dS = np.repeat(ds[..., None] / h, h, axis=-1)
    dA = softmax_rows_backward(dS, S, axis=-2)
    dzr_att, dW, _ = linear_backward(dA, zr, P["att.W"], has_bias=False)
    dzr += dzr_att
    grads["att.W"] += dW
    dx = _relative_backward(P, grads, dzr, rcache)
    return scatter_add_rows(nbr, dx[..., : zr.shape[-1]], n_points)


def occupancy_batch(model, field, queries, chunk=QUERY_CHUNK):
    """Full-class probability for each query, in input order."""
    queries = np.atleast_2d(np.asarray(queries, dtype=np.float64))
    out = np.empty(len(queries))
    for start in range(0, len(queries), chunk):
        q = queries[start : start + chunk]
        nbr, _ = field.tree.query(q, model.config.k)
        logits, _ = query_forward(model, field.cloud.points, field.latents, q, nbr)
        out[start : start + chunk] = softmax_rows(logits)[:, FULL]
    return out


def occupancy(model, field, q):
    return float(occupancy_batch(model, field, np.asarray(q, float)[None, :])[0])


class ModelField:
    """Occupancy field backed by a model and an encoded cloud; callable on (M, 3)."""

    def __init__(self, model, latent_field):
        self.model = model
        self.latent_field = latent_field

    def __call__(self, points):
        return occupancy_batch(self.model, self.latent_field, points)


# ---------------------------------------------------------------------------
# Training loss


def loss_and_grads(model, cloud, queries, labels, accumulate=True):
    """Mean cross-entropy over ``queries``; gradients land in ``model.params.grads``."""
    cfg = model.config
    tree = KdTree(cloud)
    enc_nbr = encoder_neighbors(cloud, cfg.k_enc, tree)
    feats, pos = input_features(cfg, cloud)
    latents, enc_cache = encoder_forward(model, pos, feats, enc_nbr)
    q_nbr, _ = tree.query(queries, cfg.k)
    logits, q_cache = query_forward(model, cloud.points, latents, queries, q_nbr)
    loss = cross_entropy(logits, labels)
    if accumulate:
        dlogits = cross_entropy_backward(logits, labels)
        dlat = query_backward(model, q_cache, dlogits, len(cloud))
        encoder_backward(model, enc_cache, dlat)
    return loss
