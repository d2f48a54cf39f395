"""
Contains the family independent prediction entry points.
"""

from typing import Sequence

import numpy as np

from ..core import Epoch
from ..errors import InvalidArgumentError
from ..features import feature_matrix
from ..types import FloatArray
from .base import ModelKind, TrainedModel
from .cnn import cnn_predict
from .forest import forest_predict


def predict_proba_batch(model: TrainedModel, trials: np.ndarray) -> FloatArray:
    """
    Target probabilities of a batch: an (n, 44) feature matrix for forests, (n, 2, 350) epochs for the CNN.
    """
    match model.kind:
        case ModelKind.FOREST:
            return forest_predict(model, np.asarray(trials))
        case ModelKind.CNN:
            return cnn_predict(model, np.asarray(trials))
    raise InvalidArgumentError(f"Unknown model kind {model.kind}")


def predict_proba(model: TrainedModel, trial: np.ndarray) -> float:
    """
    Target probability of a single trial: a feature vector for forests, a (2, 350) epoch for the CNN.
    """
    return float(predict_proba_batch(model, np.asarray(trial)[np.newaxis])[0])


def model_inputs(kind: ModelKind, epochs: Sequence[Epoch]) -> np.ndarray:
    """The model input of each epoch stacked into a batch"""
    if kind == ModelKind.FOREST:
        return feature_matrix(epochs)
    if not epochs:
        return np.empty((0, 2, 350), dtype=np.float64)
    return np.stack([epoch.model_input for epoch in epochs])


def predict_epochs(model: TrainedModel, epochs: Sequence[Epoch]) -> FloatArray:
    """Target probabilities of the epochs"""
    if len(epochs) == 0:
        return np.empty(0, dtype=np.float64)
    return predict_proba_batch(model, model_inputs(model.kind, epochs))
