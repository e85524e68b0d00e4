"""Seeded train / calibration / test index partitions for the three protocols.

A: disjoint sets, calibration gets whatever the test and training draws
   leave over.
B: equal-sized training and calibration sets sharing a fixed overlap;
   indices not drawn are discarded.
C: a fixed pool split so that ``shared`` indices sit in both sets and the
   rest is divided evenly.

Every protocol draws the test set first, then any shared indices, then the
remaining sets, all uniformly without replacement.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np


class PartitionError(ValueError):
    pass


def _frozen(a) -> np.ndarray:
    a = np.sort(np.asarray(a, dtype=np.int64))
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Partition:
    train_idx: np.ndarray
    cal_idx: np.ndarray
    test_idx: np.ndarray
    overlap_size: int

    def __post_init__(self):
        for name in ("train_idx", "cal_idx", "test_idx"):
            arr = _frozen(getattr(self, name))
            if np.any(np.diff(arr) == 0):
                raise PartitionError(f"{name} repeats an index")
            object.__setattr__(self, name, arr)
        if np.intersect1d(self.test_idx, np.union1d(self.train_idx, self.cal_idx)).size:
            raise PartitionError("test indices overlap training or calibration")
        shared = np.intersect1d(self.train_idx, self.cal_idx).size
        if shared != self.overlap_size:
            raise PartitionError(f"declared overlap {self.overlap_size}, actual {shared}")

    def roles(self) -> list[tuple[int, str]]:
        """``(index, role)`` rows, role in {train, cal, both, test}, by index."""
        rows = {int(i): "test" for i in self.test_idx}
        for i in self.train_idx:
            rows[int(i)] = "train"
        for i in self.cal_idx:
            rows[int(i)] = "both" if rows.get(int(i)) == "train" else "cal"
        return sorted(rows.items())

    def write_csv(self, path, source_index=None) -> None:
        """One row per used index; ``source_index`` maps back to raw file rows."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["index", "role"])
            for i, role in self.roles():
                w.writerow([int(source_index[i]) if source_index is not None else i, role])


def _take(pool: np.ndarray, k: int, rng: np.random.Generator):
    """Draw ``k`` of ``pool`` uniformly without replacement; return (drawn, rest)."""
    perm = rng.permutation(pool.shape[0])
    return pool[perm[:k]], pool[perm[k:]]


def split_experiment_a(n: int, test_size: int, train_size: int, rng: np.random.Generator) -> Partition:
    if test_size < 1 or train_size < 1 or n - test_size - train_size < 1:
        raise PartitionError(
            f"infeasible split: n={n}, test={test_size}, train={train_size} "
            "(need test >= 1, train >= 1 and at least one calibration example)"
        )
    test, rest = _take(np.arange(n), test_size, rng)
    train, cal = _take(rest, train_size, rng)
    return Partition(train, cal, test, 0)


def split_experiment_b(n: int, test_size: int, set_size: int, overlap: int,
                       rng: np.random.Generator) -> Partition:
    if test_size < 1 or set_size < 1 or not 0 <= overlap <= set_size \
            or test_size + 2 * set_size - overlap > n:
        raise PartitionError(
            f"infeasible split: n={n}, test={test_size}, set_size={set_size}, overlap={overlap}"
        )
    test, rest = _take(np.arange(n), test_size, rng)
    shared, rest = _take(rest, overlap, rng)
    train_only, rest = _take(rest, set_size - overlap, rng)
    cal_only, _ = _take(rest, set_size - overlap, rng)
    return Partition(np.concatenate([shared, train_only]),
                     np.concatenate([shared, cal_only]), test, overlap)


def split_experiment_c(n: int, test_size: int, pool: int, shared: int,
                       rng: np.random.Generator) -> Partition:
    if test_size < 1 or not 0 <= shared <= pool or test_size + pool > n:
        raise PartitionError(f"infeasible split: n={n}, test={test_size}, pool={pool}, shared={shared}")
    if (pool - shared) % 2:
        raise PartitionError(f"pool - shared must be even, got {pool - shared}")
    if shared + (pool - shared) // 2 < 1:
        raise PartitionError("training and calibration sets would be empty")
    test, rest = _take(np.arange(n), test_size, rng)
    drawn, _ = _take(rest, pool, rng)
    both, rest = drawn[:shared], drawn[shared:]
    half = (pool - shared) // 2
    return Partition(np.concatenate([both, rest[:half]]),
                     np.concatenate([both, rest[half:]]), test, shared)
