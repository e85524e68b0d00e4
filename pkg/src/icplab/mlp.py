"""Multilayer perceptron with ReLU hidden units and independent sigmoid outputs.

Trained by plain mini-batch SGD on the per-example sum of binary
cross-entropies between the sigmoid outputs and the one-hot target,
averaged over the batch. The heavy loops live in ``icplab.kernels``.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np

from icplab._params import n_params, unpack
from icplab.kernels import backend

logger = logging.getLogger(__name__)

COVTYPE_LAYERS = (54, 108, 12, 7)
INIT_RULES = ("he",)
MODEL_FORMAT = "icplab-mlp"


class TrainingDivergence(RuntimeError):
    def __init__(self, epoch: int, loss: float):
        super().__init__(f"non-finite training loss {loss!r} at epoch {epoch}")
        self.epoch = epoch
        self.loss = loss

    def __reduce__(self):
        return (type(self), (self.epoch, self.loss))


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.05
    epochs: int = 60
    batch_size: int = 32
    init: str = "he"
    seed: int = 0

    def __post_init__(self):
        # lr == 0 is allowed so a zero step can be exercised
        if not self.learning_rate >= 0:
            raise ValueError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.init not in INIT_RULES:
            raise ValueError(f"unknown init rule {self.init!r}")


@dataclass(eq=False)
class MlpModel:
    layer_sizes: tuple
    params: np.ndarray
    loss_history: list = field(default_factory=list, repr=False)

    def __post_init__(self):
        self.layer_sizes = tuple(int(s) for s in self.layer_sizes)
        self.params = np.ascontiguousarray(self.params, dtype=np.float64)
        if self.params.shape != (n_params(self.layer_sizes),):
            raise ValueError(
                f"{self.params.size} parameters do not fit layers {self.layer_sizes}"
            )
        self._sizes = np.asarray(self.layer_sizes, dtype=np.int64)

    @property
    def weights(self) -> list[np.ndarray]:
        """Per-layer weight matrices, shape (out, in); views into ``params``."""
        return [W for W, _ in unpack(self.params, self.layer_sizes)]

    @property
    def biases(self) -> list[np.ndarray]:
        return [b for _, b in unpack(self.params, self.layer_sizes)]

    @property
    def n_inputs(self) -> int:
        return self.layer_sizes[0]

    @property
    def n_outputs(self) -> int:
        return self.layer_sizes[-1]

    def copy(self) -> "MlpModel":
        return MlpModel(self.layer_sizes, self.params.copy(), list(self.loss_history))

    def to_dict(self) -> dict:
        return {
            "format": MODEL_FORMAT,
            "version": 1,
            "layer_sizes": list(self.layer_sizes),
            "weights": [W.ravel().tolist() for W in self.weights],
            "biases": [b.tolist() for b in self.biases],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MlpModel":
        if d.get("format") != MODEL_FORMAT:
            raise ValueError(f"not an {MODEL_FORMAT} document")
        sizes = tuple(d["layer_sizes"])
        model = cls(sizes, np.zeros(n_params(sizes)))
        if len(d["weights"]) != len(sizes) - 1 or len(d["biases"]) != len(sizes) - 1:
            raise ValueError("layer count does not match layer_sizes")
        for W, b, w_flat, b_list in zip(model.weights, model.biases, d["weights"], d["biases"]):
            W[...] = np.asarray(w_flat, dtype=np.float64).reshape(W.shape)
            b[...] = b_list
        return model

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, path) -> "MlpModel":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def init_model(layer_sizes, rng: np.random.Generator) -> MlpModel:
    """He-normal weights (std = sqrt(2 / fan_in)) and zero biases."""
    sizes = tuple(int(s) for s in layer_sizes)
    if len(sizes) < 2 or min(sizes) < 1:
        raise ValueError(f"invalid layer sizes {layer_sizes}")
    model = MlpModel(sizes, np.zeros(n_params(sizes)))
    for W in model.weights:
        W[...] = rng.normal(0.0, np.sqrt(2.0 / W.shape[1]), size=W.shape)
    return model


def _as_inputs(model: MlpModel, X) -> np.ndarray:
    X = np.ascontiguousarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != model.n_inputs:
        raise ValueError(f"expected inputs of width {model.n_inputs}, got shape {X.shape}")
    return X


def predict_proba(model: MlpModel, X) -> np.ndarray:
    """Sigmoid outputs for every row of ``X``; rows are not normalised."""
    return backend.forward_batch(model.params, model._sizes, _as_inputs(model, X))


def forward(model: MlpModel, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        return predict_proba(model, x[None, :])[0]
    return predict_proba(model, x)


def _as_labels(model: MlpModel, y, n: int) -> np.ndarray:
    y = np.ascontiguousarray(y, dtype=np.int64).reshape(-1)
    if y.shape[0] != n:
        raise ValueError(f"{y.shape[0]} labels for {n} inputs")
    if n and (y.min() < 0 or y.max() >= model.n_outputs):
        raise ValueError("label outside the model's output range")
    return y


def gradient(model: MlpModel, X, y) -> np.ndarray:
    """Exact gradient of the mean batch loss, laid out like ``model.params``."""
    X = _as_inputs(model, X)
    if X.shape[0] == 0:
        raise ValueError("gradient of an empty batch")
    grad, _ = backend.batch_gradient(model.params, model._sizes, X, _as_labels(model, y, len(X)))
    return grad


def loss(model: MlpModel, X, y) -> float:
    X = _as_inputs(model, X)
    if X.shape[0] == 0:
        raise ValueError("loss of an empty batch")
    _, value = backend.batch_gradient(model.params, model._sizes, X, _as_labels(model, y, len(X)))
    return float(value)


def train_sgd(data, config: TrainConfig, layer_sizes=None, model: MlpModel | None = None) -> MlpModel:
    """Fit an MLP to ``data`` (a Dataset) by mini-batch SGD.

    ``layer_sizes`` defaults to ``(n_features, 108, 12, n_classes)``.
    A starting ``model`` may be supplied instead; it is copied, not
    mutated. Epoch losses are stored on ``model.loss_history``. The run is
    deterministic for a fixed ``config.seed`` and kernel backend.
    """
    if len(data) == 0:
        raise ValueError("cannot train on an empty dataset")
    init_ss, shuffle_ss = np.random.SeedSequence(config.seed).spawn(2)
    if model is None:
        if layer_sizes is None:
            layer_sizes = (data.n_features,) + COVTYPE_LAYERS[1:-1] + (data.n_classes,)
        model = init_model(layer_sizes, np.random.default_rng(init_ss))
    else:
        model = model.copy()
        model.loss_history = []
    X = _as_inputs(model, data.X)
    y = _as_labels(model, data.y, len(X))
    rng = np.random.default_rng(shuffle_ss)
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(X)).astype(np.int64)
        value = backend.sgd_epoch(model.params, model._sizes, X, y, order,
                                  float(config.learning_rate), int(config.batch_size))
        if not np.isfinite(value) or not np.all(np.isfinite(model.params)):
            raise TrainingDivergence(epoch, value)
        model.loss_history.append(float(value))
    logger.debug("trained %s on %d examples: lr=%g bs=%d epochs=%d final loss %.4f",
                 model.layer_sizes, len(X), config.learning_rate, config.batch_size,
                 config.epochs, model.loss_history[-1])
    return model
