"""Synthetic stand-in with the Covtype record layout.

Used by the test-suite, the benchmark and smoke configs when the real
``covtype.data`` is unavailable: 10 integer-valued terrain-like columns,
one active indicator among 4 "wilderness" columns and one among 40 "soil"
columns, 7 classes. The class-conditional distributions are fixed by
``STRUCTURE_SEED``; ``seed`` only controls which examples are drawn.
"""

import numpy as np

from icplab.data import N_CLASSES, Dataset

STRUCTURE_SEED = 20240531
_OFFSET = np.array([2900, 155, 14, 270, 46, 2350, 212, 223, 142, 1980], dtype=float)
_SCALE = np.array([280, 110, 7.5, 210, 58, 1560, 27, 20, 38, 1320], dtype=float)


def make_covtype_like(per_class, seed: int = 0, separation: float = 0.9) -> Dataset:
    """Draw a dataset; ``per_class`` is an int or one count per class.

    ``separation`` scales the distance between class centres relative to
    the within-class noise; the default leaves classes heavily overlapping
    so that a small MLP stays far from perfect accuracy.
    """
    counts = np.broadcast_to(np.asarray(per_class, dtype=np.int64), (N_CLASSES,))
    srng = np.random.default_rng(STRUCTURE_SEED)
    centres = srng.normal(size=(N_CLASSES, 10)) * separation
    mixing = np.eye(10) + 0.3 * srng.normal(size=(10, 10))
    wild_p = srng.dirichlet(np.full(4, 0.8), size=N_CLASSES)
    soil_p = srng.dirichlet(np.full(40, 0.25), size=N_CLASSES)

    rng = np.random.default_rng(seed)
    blocks, labels = [], []
    for c, n in enumerate(counts):
        latent = centres[c] + rng.normal(size=(n, 10))
        latent = latent @ mixing + 0.25 * np.sin(2.0 * latent)
        cont = np.round(_OFFSET + _SCALE * latent)
        wild = np.eye(4)[rng.choice(4, size=n, p=wild_p[c])]
        soil = np.eye(40)[rng.choice(40, size=n, p=soil_p[c])]
        blocks.append(np.hstack([cont, wild, soil]))
        labels.append(np.full(n, c))
    X = np.vstack(blocks)
    y = np.concatenate(labels)
    order = rng.permutation(len(y))
    return Dataset(X[order], y[order])
