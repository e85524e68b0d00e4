"""Inductive conformal prediction for classification.

The conformity of a labelled example is the model's sigmoid output for
that label. A candidate label enters the prediction set at significance
``eps`` when

    #{calibration scores <= candidate score} + 1  >  eps * (m + 1)

with ``m`` the number of calibration scores supplied. Whatever calibration
set is passed in is used as-is, so train/calibration overlap is decided
entirely by the caller.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from icplab.kernels import backend
from icplab.mlp import MlpModel, predict_proba


@dataclass(frozen=True, eq=False)
class CalibrationScores:
    """Sorted multiset of calibration conformity scores (duplicates kept)."""

    scores: np.ndarray

    def __post_init__(self):
        s = np.sort(np.asarray(self.scores, dtype=np.float64).reshape(-1))
        if s.size == 0:
            raise ValueError("calibration needs at least one score")
        if not np.all(np.isfinite(s)):
            raise ValueError("calibration scores must be finite")
        s.setflags(write=False)
        object.__setattr__(self, "scores", s)

    @property
    def count(self) -> int:
        return self.scores.shape[0]

    def __len__(self):
        return self.count

    def mean(self) -> float:
        return float(self.scores.mean())


@dataclass(frozen=True)
class PredictionSet:
    members: frozenset
    significance: float
    n_labels: int = 7

    def __contains__(self, label):
        return label in self.members

    def __len__(self):
        return len(self.members)

    @property
    def mask(self) -> np.ndarray:
        m = np.zeros(self.n_labels, dtype=bool)
        m[list(self.members)] = True
        return m

    @property
    def bitmask(self) -> int:
        return sum(1 << k for k in self.members)


def _check_epsilons(epsilons) -> np.ndarray:
    eps = np.atleast_1d(np.asarray(epsilons, dtype=np.float64))
    if eps.ndim != 1 or not np.all((eps > 0.0) & (eps < 1.0)):
        raise ValueError(f"significance levels must lie in (0, 1), got {epsilons}")
    return eps


def conformity_scores(model: MlpModel, X, y) -> np.ndarray:
    P = predict_proba(model, X)
    y = np.asarray(y, dtype=np.int64)
    if y.shape != (P.shape[0],):
        raise ValueError("one label per input row is required")
    if y.size and (y.min() < 0 or y.max() >= model.n_outputs):
        raise ValueError("label outside the model's output range")
    return P[np.arange(P.shape[0]), y]


def conformity_score(model: MlpModel, x, y: int) -> float:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError("expected a single feature vector")
    return float(conformity_scores(model, x[None, :], [y])[0])


def calibrate(model: MlpModel, calibration) -> CalibrationScores:
    if len(calibration) == 0:
        raise ValueError("calibration set is empty")
    return CalibrationScores(conformity_scores(model, calibration.X, calibration.y))


def prediction_mask(scores: CalibrationScores, candidate_scores, epsilons) -> np.ndarray:
    """Membership array of shape ``(n, len(epsilons), n_labels)``.

    ``candidate_scores`` is ``(n, n_labels)``: the conformity of every
    candidate label for every test input.
    """
    eps = _check_epsilons(epsilons)
    cand = np.asarray(candidate_scores, dtype=np.float64)
    if cand.ndim != 2:
        raise ValueError("candidate scores must be a 2-D (inputs x labels) array")
    counts = backend.count_leq(scores.scores, cand)
    thresholds = eps * (scores.count + 1)
    return (counts[:, None, :] + 1) > thresholds[None, :, None]


def predict_set(scores: CalibrationScores, model: MlpModel, x, epsilon: float) -> PredictionSet:
    x = np.asarray(x, dtype=np.float64)
    mask = prediction_mask(scores, predict_proba(model, x[None, :]), [epsilon])[0, 0]
    return PredictionSet(frozenset(int(k) for k in np.flatnonzero(mask)),
                         float(epsilon), model.n_outputs)


@dataclass(frozen=True, eq=False)
class PredictionTable:
    """Prediction sets for every (test example, significance level)."""

    mask: np.ndarray          # (n_test, n_eps, n_labels) bool
    epsilons: np.ndarray
    labels: np.ndarray | None = None

    def set(self, i: int, e: int) -> PredictionSet:
        return PredictionSet(frozenset(int(k) for k in np.flatnonzero(self.mask[i, e])),
                             float(self.epsilons[e]), self.mask.shape[2])

    def sizes(self) -> np.ndarray:
        return self.mask.sum(axis=2)

    def hits(self) -> np.ndarray:
        if self.labels is None:
            raise ValueError("table was built without true labels")
        return self.mask[np.arange(self.mask.shape[0]), :, self.labels]

    def write_csv(self, path) -> None:
        weights = 1 << np.arange(self.mask.shape[2], dtype=np.int64)
        bitmask = (self.mask * weights).sum(axis=2)
        sizes = self.sizes()
        hits = self.hits() if self.labels is not None else None
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["example_id", "epsilon", "set_bitmask", "set_size", "hit"])
            for i in range(self.mask.shape[0]):
                for e, eps in enumerate(self.epsilons):
                    hit = "" if hits is None else int(hits[i, e])
                    w.writerow([i, repr(float(eps)), int(bitmask[i, e]), int(sizes[i, e]), hit])


def predict_batch(scores: CalibrationScores, model: MlpModel, test, epsilons) -> PredictionTable:
    """Prediction sets for a whole test Dataset over a grid of significance levels."""
    eps = _check_epsilons(epsilons)
    mask = prediction_mask(scores, predict_proba(model, test.X), eps)
    return PredictionTable(mask, eps, np.asarray(test.y, dtype=np.int64))
