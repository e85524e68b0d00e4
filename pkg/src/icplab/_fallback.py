"""Numpy implementation of the hot kernels.

Selected automatically when the compiled ``_kernels`` extension is not
importable, or when ``ICPLAB_PURE_PYTHON=1`` is set. The function
signatures and the arithmetic (stable sigmoid, softplus-form BCE, ReLU
derivative taken as ``z > 0``) match the compiled module; results agree
to rounding, not bit for bit, because summation order differs.
"""

import numpy as np

from icplab._params import unpack

NAME = "python"


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _softplus(z):
    return np.maximum(z, 0.0) + np.log1p(np.exp(-np.abs(z)))


def _forward(layers, X):
    acts = [X]
    a = X
    last = len(layers) - 1
    for l, (W, b) in enumerate(layers):
        z = a @ W.T + b
        a = z if l == last else np.maximum(z, 0.0)
        acts.append(a)
    return acts


def _accumulate(layers, acts, y, grad_layers):
    """Add summed gradients into ``grad_layers``; return summed loss."""
    z = acts[-1]
    T = np.zeros_like(z)
    T[np.arange(len(y)), y] = 1.0
    loss = float(np.sum(_softplus(z) - T * z))
    d = _sigmoid(z) - T
    for l in range(len(layers) - 1, -1, -1):
        a_in = acts[l]
        gW, gb = grad_layers[l]
        gW += d.T @ a_in
        gb += d.sum(axis=0)
        if l > 0:
            d = (d @ layers[l][0]) * (a_in > 0.0)
    return loss


def forward_batch(theta, sizes, X):
    layers = unpack(np.asarray(theta, dtype=np.float64), sizes)
    return _sigmoid(_forward(layers, np.asarray(X, dtype=np.float64))[-1])


def batch_gradient(theta, sizes, X, y):
    """Mean gradient and mean loss over the rows of ``X``."""
    theta = np.asarray(theta, dtype=np.float64)
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    layers = unpack(theta, sizes)
    grad = np.zeros_like(theta)
    loss = _accumulate(layers, _forward(layers, X), y, unpack(grad, sizes))
    n = X.shape[0]
    grad /= n
    return grad, loss / n


def sgd_epoch(theta, sizes, X, y, order, lr, batch_size):
    """One pass of mini-batch SGD over ``order``, updating ``theta`` in place.

    Returns the mean per-example loss, each example's loss taken before
    the update of its own batch.
    """
    layers = unpack(theta, sizes)
    grad = np.zeros_like(theta)
    grad_layers = unpack(grad, sizes)
    n = len(order)
    total = 0.0
    # a diverging run is reported by the caller from the returned loss
    with np.errstate(over="ignore", invalid="ignore"):
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            grad[:] = 0.0
            total += _accumulate(layers, _forward(layers, X[idx]), y[idx], grad_layers)
            theta -= (lr / len(idx)) * grad
    return total / n


def count_leq(sorted_scores, queries):
    """Number of entries of ``sorted_scores`` that are <= each query."""
    q = np.asarray(queries, dtype=np.float64)
    return np.searchsorted(sorted_scores, q.ravel(), side="right").reshape(q.shape)
