"""Inductive conformal prediction lab.

Studies how splitting development data between training, calibration and
test sets (including train/calibration overlap) affects the validity and
efficiency of an inductive conformal predictor built on a small MLP.
"""

from icplab.data import Dataset, balance_undersample, load_covtype
from icplab.icp import CalibrationScores, PredictionSet, calibrate, predict_batch, predict_set
from icplab.kernels import backend
from icplab.mlp import MlpModel, TrainConfig, init_model, train_sgd

__version__ = "0.1.0"

__all__ = [
    "CalibrationScores",
    "Dataset",
    "MlpModel",
    "PredictionSet",
    "TrainConfig",
    "backend",
    "balance_undersample",
    "calibrate",
    "init_model",
    "load_covtype",
    "predict_batch",
    "predict_set",
    "train_sgd",
]
