"""Flat parameter-vector layout shared by both kernel backends.

Layer ``l`` occupies a contiguous block: its weights stored input-major,
i.e. a row-major ``(sizes[l], sizes[l+1])`` array, then its bias vector.
``unpack`` hands the weights out as the transposed ``(out, in)`` view, so
callers see the conventional orientation while the kernels stream over
contiguous output rows.
"""

import numpy as np


def n_params(sizes) -> int:
    return int(sum(o * i + o for i, o in zip(sizes[:-1], sizes[1:])))


def layer_offsets(sizes) -> list[int]:
    offsets = []
    pos = 0
    for i, o in zip(sizes[:-1], sizes[1:]):
        offsets.append(pos)
        pos += o * i + o
    return offsets


def unpack(theta: np.ndarray, sizes) -> list[tuple[np.ndarray, np.ndarray]]:
    """Return ``(W, b)`` views into ``theta`` for every layer."""
    layers = []
    for off, (i, o) in zip(layer_offsets(sizes), zip(sizes[:-1], sizes[1:])):
        W = theta[off:off + o * i].reshape(i, o).T
        b = theta[off + o * i:off + o * i + o]
        layers.append((W, b))
    return layers
