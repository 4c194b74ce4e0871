"""Dense layers with hand-derived backward rules, Adam, and a gradient checker.

Matrices are plain float64 numpy arrays. Every forward function is paired with
a ``*_backward`` that takes the upstream gradient and whatever the forward
needs to be replayed, and returns input/parameter gradients.
"""

from __future__ import annotations

from collections import OrderedDict

import numpy as np


def _check_shapes(x, W, b):
    if x.shape[-1] != W.shape[1]:
        raise ValueError(f"linear: input {x.shape} does not match weight {W.shape}")
    if b is not None and b.shape not in ((W.shape[0], 1), (W.shape[0],)):
        raise ValueError(f"linear: bias {b.shape} does not match weight {W.shape}")


def linear(x, W, b=None):
    """``y = x W^T + b`` over the last axis of ``x``; ``b`` is (O, 1) or (O,)."""
    _check_shapes(x, W, b)
    # One 2-D GEMM instead of a batched matmul over leading axes.
    y = x.reshape(-1, x.shape[-1]) @ W.T
    if b is not None:
        y += b.reshape(-1)
    return y.reshape(x.shape[:-1] + (W.shape[0],))


def linear_backward(dy, x, W, has_bias=True):
    """Returns ``(dx, dW, db)``; ``db`` is (O, 1) or None."""
    dy2 = dy.reshape(-1, dy.shape[-1])
    dx = (dy2 @ W).reshape(dy.shape[:-1] + (W.shape[1],))
    dW = dy2.T @ x.reshape(-1, x.shape[-1])
    db = dy2.sum(axis=0)[:, None] if has_bias else None
    return dx, dW, db


def relu(x):
    return np.maximum(x, 0.0)


def relu_backward(dy, x):
    # Subgradient 0 at x == 0.
    return dy * (x > 0)


def softmax_rows(x, axis=-1):
    """Max-shifted softmax along ``axis`` (rows by default)."""
    z = x - x.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def softmax_rows_backward(dy, y, axis=-1):
    return y * (dy - (dy * y).sum(axis=axis, keepdims=True))


def log_softmax_rows(x):
    z = x - x.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def _check_labels(labels, rows):
    labels = np.asarray(labels)
    if labels.shape != (rows,):
        raise ValueError(f"expected {rows} labels, got shape {labels.shape}")
    if not np.all((labels == 0) | (labels == 1)):
        raise ValueError("labels must be 0 or 1")
    return labels.astype(np.int64)


def cross_entropy(logits, labels):
    """Mean of ``-log softmax(logits)[label]`` over rows (log-sum-exp stable)."""
    labels = _check_labels(labels, len(logits))
    logp = log_softmax_rows(logits)
    # Kept as a numpy scalar so extended-precision evaluations stay extended.
    return -logp[np.arange(len(labels)), labels].mean()


def cross_entropy_backward(logits, labels):
    labels = _check_labels(labels, len(logits))
    g = softmax_rows(logits)
    g[np.arange(len(labels)), labels] -= 1.0
    return g / len(labels)


def scatter_add_rows(index, values, n_rows):
    """Sum rows of ``values`` (..., C) into an (n_rows, C) array at ``index`` (...)."""
    cols = values.shape[-1]
    flat = (np.asarray(index).reshape(-1, 1) * cols + np.arange(cols)).reshape(-1)
    out = np.bincount(flat, weights=values.reshape(-1), minlength=n_rows * cols)
    return out.reshape(n_rows, cols)


def max_over_group(x, axis=-2):
    """Max over the group axis; returns ``(values, argmax)``.

    ``argmax`` picks the first row on ties, which is where the gradient goes.
    """
    arg = np.argmax(x, axis=axis)
    values = np.take_along_axis(x, np.expand_dims(arg, axis), axis).squeeze(axis)
    return values, arg


def max_over_group_backward(dy, arg, group_size, axis=-2):
    axis = axis % (dy.ndim + 1)
    shape = list(dy.shape)
    shape.insert(axis, group_size)
    dx = np.zeros(shape, dtype=dy.dtype)
    np.put_along_axis(dx, np.expand_dims(arg, axis), np.expand_dims(dy, axis), axis)
    return dx


class ParamStore:
    """Named parameters with paired gradient buffers, in insertion order."""

    def __init__(self):
        self.params = OrderedDict()
        self.grads = OrderedDict()

    def add(self, name, value, dtype=np.float64):
        if name in self.params:
            raise KeyError(f"duplicate parameter {name!r}")
        value = np.array(value, dtype=dtype)
        self.params[name] = value
        self.grads[name] = np.zeros_like(value)
        return value

    def __getitem__(self, name):
        return self.params[name]

    def __contains__(self, name):
        return name in self.params

    def __iter__(self):
        return iter(self.params)

    def __len__(self):
        return len(self.params)

    def items(self):
        return self.params.items()

    def accumulate(self, name, grad):
        self.grads[name] += grad.reshape(self.grads[name].shape)

    def zero_grad(self):
        for g in self.grads.values():
            g.fill(0.0)

    def size(self):
        return sum(p.size for p in self.params.values())

    def copy(self, dtype=np.float64):
        other = ParamStore()
        for name, value in self.params.items():
            other.add(name, value, dtype=dtype)
        return other


class AdamState:
    """Adam with bias correction; beta/epsilon defaults are the usual ones."""

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, epsilon=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.step = 0
        self.m = {name: np.zeros_like(p) for name, p in params.items()}
        self.v = {name: np.zeros_like(p) for name, p in params.items()}


def adam_step(params, state):
    """One in-place Adam update of ``params`` from its gradient buffers, then zero them."""
    for name, g in params.grads.items():
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient in parameter {name!r}")
    state.step += 1
    t = state.step
    bc1 = 1.0 - state.beta1**t
    bc2 = 1.0 - state.beta2**t
    for name, p in params.params.items():
        g = params.grads[name]
        m, v = state.m[name], state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.epsilon)
    params.zero_grad()


def _central_difference(loss_fn, flat, i, eps):
    old = flat[i]
    flat[i] = old + eps
    up = loss_fn()
    flat[i] = old - eps
    down = loss_fn()
    flat[i] = old
    return (up - down) / (2 * eps)


def _relative_error(a, b):
    return float(abs(a - b) / max(abs(a), abs(b), 1e-8))


def finite_diff_check(
    loss_fn, params, analytic, eps=1e-5, names=None, max_entries=None, seed=0, precise=None
):
    """Max relative error between ``analytic`` gradients and central differences.

    ``loss_fn()`` is re-evaluated with each scalar of ``params`` nudged by
    ``+-eps``; the relative error uses ``max(|a|, |b|, 1e-8)`` as denominator.
    Inputs should be kept off ReLU kinks and max ties, where the one-sided
    slopes differ and no finite difference can agree. ``max_entries`` caps the
    number of scalars probed per parameter (random subset, seeded).

    Round-off in ``loss_fn`` limits the check to gradients well above
    ``loss * machine_eps / eps``. ``precise=(loss_fn, params)`` supplies a
    twin evaluated at higher precision (e.g. ``np.longdouble`` weights); any
    entry whose error exceeds 1e-6 is recomputed with it.
    """
    rng = np.random.default_rng(seed)
    worst = 0.0
    for name in names or list(params):
        flat = params[name].reshape(-1)
        entries = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            entries = rng.choice(flat.size, max_entries, replace=False)
        ga = np.asarray(analytic[name]).reshape(-1)
        for i in entries:
            err = _relative_error(_central_difference(loss_fn, flat, i, eps), ga[i])
            if precise is not None and err > 1e-6:
                fine_fn, fine_params = precise
                num = _central_difference(fine_fn, fine_params[name].reshape(-1), i, eps)
                err = _relative_error(num, ga[i])
            worst = max(worst, err)
    return worst
