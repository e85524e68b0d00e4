# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled MLP and conformal-counting kernels.

Same contract as ``icplab._fallback``. Parameters are one flat float64
vector (per layer: input-major weights, then bias; see ``_params``).
Each example is processed on its own, gathering the nonzero entries of
every layer input first, so the one-hot indicator block of the inputs and
the zeroed ReLU units are skipped in both passes. With input-major
storage every remaining update is a contiguous sweep over output units.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log1p
from libc.stdlib cimport malloc, free
from libc.string cimport memset

cnp.import_array()

NAME = "compiled"


cdef inline double _sigmoid(double z) noexcept nogil:
    cdef double e
    if z >= 0:
        return 1.0 / (1.0 + exp(-z))
    e = exp(z)
    return e / (1.0 + e)


cdef inline double _softplus(double z) noexcept nogil:
    if z > 0:
        return z + log1p(exp(-z))
    return log1p(exp(z))


cdef struct Net:
    int n_layers          # number of weight layers
    long long* sizes      # n_layers + 1 unit counts
    long long* w_off      # offset of each layer's weights in theta
    long long* a_off      # offset of each layer's units in acts / deltas
    double* acts          # input, hidden activations, output logits
    double* deltas
    long long* nz         # scratch: indices of nonzero layer inputs


cdef int _net_init(Net* net, const cnp.int64_t[::1] sizes) except -1:
    cdef int L = sizes.shape[0] - 1
    cdef int l
    cdef long long pos = 0, apos = 0, widest = 0
    net.n_layers = L
    net.sizes = <long long*> malloc((L + 1) * sizeof(long long))
    net.w_off = <long long*> malloc(L * sizeof(long long))
    net.a_off = <long long*> malloc((L + 1) * sizeof(long long))
    if not net.sizes or not net.w_off or not net.a_off:
        raise MemoryError()
    for l in range(L + 1):
        net.sizes[l] = sizes[l]
        net.a_off[l] = apos
        apos += sizes[l]
        if sizes[l] > widest:
            widest = sizes[l]
    for l in range(L):
        net.w_off[l] = pos
        pos += sizes[l + 1] * sizes[l] + sizes[l + 1]
    net.acts = <double*> malloc(apos * sizeof(double))
    net.deltas = <double*> malloc(apos * sizeof(double))
    net.nz = <long long*> malloc(widest * sizeof(long long))
    if not net.acts or not net.deltas or not net.nz:
        raise MemoryError()
    return 0


cdef void _net_free(Net* net) noexcept:
    free(net.sizes)
    free(net.w_off)
    free(net.a_off)
    free(net.acts)
    free(net.deltas)
    free(net.nz)


cdef inline long long _gather_nz(const double* a, long long n, long long* nz) noexcept nogil:
    cdef long long j, m = 0
    for j in range(n):
        if a[j] != 0.0:
            nz[m] = j
            m += 1
    return m


cdef void _forward_one(Net* net, const double* theta, const double* x) noexcept nogil:
    cdef int l, L = net.n_layers
    cdef long long j, k, t, n_in, n_out, nnz
    cdef const double* W
    cdef const double* b
    cdef const double* row
    cdef double* a_in
    cdef double* a_out
    cdef double s
    for j in range(net.sizes[0]):
        net.acts[j] = x[j]
    for l in range(L):
        n_in = net.sizes[l]
        n_out = net.sizes[l + 1]
        a_in = net.acts + net.a_off[l]
        a_out = net.acts + net.a_off[l + 1]
        W = theta + net.w_off[l]
        b = W + n_out * n_in
        nnz = _gather_nz(a_in, n_in, net.nz)
        for k in range(n_out):
            a_out[k] = b[k]
        for t in range(nnz):
            j = net.nz[t]
            s = a_in[j]
            row = W + j * n_out
            for k in range(n_out):
                a_out[k] += s * row[k]
        if l < L - 1:
            for k in range(n_out):
                if a_out[k] < 0.0:
                    a_out[k] = 0.0


cdef double _backward_one(Net* net, const double* theta, double* grad,
                          long long label) noexcept nogil:
    """Accumulate this example's gradient into ``grad``; return its loss."""
    cdef int l, L = net.n_layers
    cdef long long j, k, t, n_in, n_out, nnz
    cdef const double* W
    cdef const double* row
    cdef double* gW
    cdef double* gb
    cdef double* grow
    cdef double* a_in
    cdef double* d_in
    cdef double* d_out
    cdef double z, tk, dk, loss = 0.0
    n_out = net.sizes[L]
    a_in = net.acts + net.a_off[L]
    d_out = net.deltas + net.a_off[L]
    for k in range(n_out):
        z = a_in[k]
        tk = 1.0 if k == label else 0.0
        loss += _softplus(z) - tk * z
        d_out[k] = _sigmoid(z) - tk
    for l in range(L - 1, -1, -1):
        n_in = net.sizes[l]
        n_out = net.sizes[l + 1]
        a_in = net.acts + net.a_off[l]
        d_in = net.deltas + net.a_off[l]
        d_out = net.deltas + net.a_off[l + 1]
        W = theta + net.w_off[l]
        gW = grad + net.w_off[l]
        gb = gW + n_out * n_in
        nnz = _gather_nz(a_in, n_in, net.nz)
        for k in range(n_out):
            gb[k] += d_out[k]
        for t in range(nnz):
            j = net.nz[t]
            dk = a_in[j]
            grow = gW + j * n_out
            for k in range(n_out):
                grow[k] += dk * d_out[k]
        if l > 0:
            # hidden inputs are ReLU outputs: nonzero exactly where z > 0
            memset(d_in, 0, n_in * sizeof(double))
            for t in range(nnz):
                j = net.nz[t]
                row = W + j * n_out
                z = 0.0
                for k in range(n_out):
                    z += row[k] * d_out[k]
                d_in[j] = z
    return loss


def forward_batch(const double[::1] theta, const cnp.int64_t[::1] sizes,
                  const double[:, ::1] X):
    cdef Net net
    cdef Py_ssize_t i, k, n = X.shape[0]
    cdef long long n_out = sizes[sizes.shape[0] - 1]
    if X.shape[1] != sizes[0]:
        raise ValueError(f"input has {X.shape[1]} features, model expects {sizes[0]}")
    out = np.empty((n, n_out), dtype=np.float64)
    cdef double[:, ::1] P = out
    cdef double* logits
    _net_init(&net, sizes)
    try:
        logits = net.acts + net.a_off[net.n_layers]
        with nogil:
            for i in range(n):
                _forward_one(&net, &theta[0], &X[i, 0])
                for k in range(n_out):
                    P[i, k] = _sigmoid(logits[k])
    finally:
        _net_free(&net)
    return out


def batch_gradient(const double[::1] theta, const cnp.int64_t[::1] sizes,
                   const double[:, ::1] X, const cnp.int64_t[::1] y):
    cdef Net net
    cdef Py_ssize_t i, p, n = X.shape[0]
    cdef double loss = 0.0
    if X.shape[1] != sizes[0]:
        raise ValueError(f"input has {X.shape[1]} features, model expects {sizes[0]}")
    grad_arr = np.zeros(theta.shape[0], dtype=np.float64)
    cdef double[::1] grad = grad_arr
    _net_init(&net, sizes)
    try:
        with nogil:
            for i in range(n):
                _forward_one(&net, &theta[0], &X[i, 0])
                loss += _backward_one(&net, &theta[0], &grad[0], y[i])
            for p in range(grad.shape[0]):
                grad[p] /= n
    finally:
        _net_free(&net)
    return grad_arr, loss / n


def sgd_epoch(double[::1] theta, const cnp.int64_t[::1] sizes,
              const double[:, ::1] X, const cnp.int64_t[::1] y,
              const cnp.int64_t[::1] order, double lr, Py_ssize_t batch_size):
    cdef Net net
    cdef Py_ssize_t n = order.shape[0], P = theta.shape[0]
    cdef Py_ssize_t start, stop, i, p
    cdef long long idx
    cdef double step, total = 0.0
    if X.shape[1] != sizes[0]:
        raise ValueError(f"input has {X.shape[1]} features, model expects {sizes[0]}")
    cdef double* grad = <double*> malloc(P * sizeof(double))
    if not grad:
        raise MemoryError()
    _net_init(&net, sizes)
    try:
        with nogil:
            start = 0
            while start < n:
                stop = start + batch_size
                if stop > n:
                    stop = n
                memset(grad, 0, P * sizeof(double))
                for i in range(start, stop):
                    idx = order[i]
                    _forward_one(&net, &theta[0], &X[idx, 0])
                    total += _backward_one(&net, &theta[0], grad, y[idx])
                step = lr / (stop - start)
                for p in range(P):
                    theta[p] -= step * grad[p]
                start = stop
    finally:
        _net_free(&net)
        free(grad)
    return total / n


def count_leq(const double[::1] sorted_scores, queries):
    q = np.ascontiguousarray(queries, dtype=np.float64)
    flat = q.reshape(-1)
    out = np.empty(flat.shape[0], dtype=np.int64)
    cdef const double[::1] qv = flat
    cdef cnp.int64_t[::1] ov = out
    cdef Py_ssize_t i, lo, hi, mid, m = sorted_scores.shape[0]
    cdef double v
    with nogil:
        for i in range(qv.shape[0]):
            v = qv[i]
            lo = 0
            hi = m
            while lo < hi:
                mid = (lo + hi) >> 1
                if sorted_scores[mid] <= v:
                    lo = mid + 1
                else:
                    hi = mid
            ov[i] = lo
    return out.reshape(q.shape)
