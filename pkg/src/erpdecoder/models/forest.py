"""
Contains the random forest on feature vectors. The trees are grown by scikit-learn (weighted Gini, bootstrap,
random feature subsets per split) and exported into flat float32 node arrays, which are the predictor.
"""

import dataclasses
import logging
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from frozendict import frozendict
from pydantic import BaseModel, ConfigDict, Field
from sklearn.ensemble import RandomForestClassifier
from sklearn.metrics import balanced_accuracy_score

from ..core import TrainingTag
from ..errors import InvalidArgumentError
from ..types import Float32Array, FloatArray, IntArray
from .base import ModelKind, TrainedModel

_logger = logging.getLogger("erpdecoder.models.forest")

_NO_CHILD = -1


class ForestConfig(BaseModel):
    """
    Hyper parameters of the forest. `features_per_split` defaults to floor(sqrt(n_features)).
    """

    model_config = ConfigDict(frozen=True)

    n_trees: int = Field(default=1000, ge=1)
    max_depth: int = Field(default=12, ge=1)
    target_weight: float = Field(default=5.0, gt=0)
    non_target_weight: float = Field(default=1.0, gt=0)
    features_per_split: Optional[int] = Field(default=None, ge=1)
    bootstrap: bool = True
    seed: int = Field(default=0, ge=0, lt=2**64)
    n_jobs: int = 1

    def resolved_features_per_split(self, n_features: int) -> int:
        """The number of features drawn per split"""
        if self.features_per_split is None:
            return max(1, math.isqrt(n_features))
        return min(self.features_per_split, n_features)


def _round_down_float32(thresholds: FloatArray) -> Float32Array:
    """
    The largest float32 not above each threshold. For float32 inputs x, `x <= t` and `x <= round_down(t)` agree.
    """
    rounded = thresholds.astype(np.float32)
    too_high = rounded.astype(np.float64) > thresholds
    rounded[too_high] = np.nextafter(rounded[too_high], np.float32(-np.inf))
    return rounded


def _export_trees(estimator: RandomForestClassifier) -> dict[str, np.ndarray]:
    features, thresholds, lefts, rights, votes, offsets = [], [], [], [], [], []
    offset = 0
    for tree in estimator.estimators_:
        structure = tree.tree_
        is_leaf = structure.children_left == _NO_CHILD
        values = structure.value[:, 0, :]
        vote = np.where(values[:, 1] > values[:, 0], 1.0, np.where(values[:, 1] < values[:, 0], 0.0, 0.5))
        features.append(np.where(is_leaf, 0, structure.feature))
        thresholds.append(_round_down_float32(np.where(is_leaf, 0.0, structure.threshold)))
        lefts.append(structure.children_left)
        rights.append(structure.children_right)
        votes.append(vote)
        offsets.append(offset)
        offset += structure.node_count
    if offset >= 2**24:
        raise InvalidArgumentError(f"{offset} nodes can't be indexed exactly by float32")
    return {
        "feature": np.concatenate(features),
        "threshold": np.concatenate(thresholds),
        "left": np.concatenate(lefts),
        "right": np.concatenate(rights),
        "vote": np.concatenate(votes),
        "tree_offsets": np.asarray(offsets),
        "importances": estimator.feature_importances_,
    }


@dataclass(frozen=True)
class _FlatForest:
    """The node arrays in global indexing, rebuilt once per model"""

    feature: IntArray
    threshold: Float32Array
    left: IntArray
    right: IntArray
    vote: Float32Array
    roots: IntArray
    n_features: int
    max_depth: int

    @classmethod
    def from_model(cls, model: TrainedModel) -> "_FlatForest":
        parameters = model.parameters
        roots = parameters["tree_offsets"].astype(np.int64)
        node_offsets = np.repeat(roots, np.diff(np.append(roots, parameters["vote"].size)))
        local_left = parameters["left"].astype(np.int64)
        local_right = parameters["right"].astype(np.int64)
        return cls(
            feature=parameters["feature"].astype(np.int64),
            threshold=parameters["threshold"],
            left=np.where(local_left == _NO_CHILD, _NO_CHILD, local_left + node_offsets),
            right=np.where(local_right == _NO_CHILD, _NO_CHILD, local_right + node_offsets),
            vote=parameters["vote"],
            roots=roots,
            n_features=int(model.config["n_features"]),
            max_depth=int(model.config["max_depth"]),
        )

    def predict(self, features: np.ndarray) -> FloatArray:
        """Mean tree vote for the target class, shape (n,)"""
        rows = np.asarray(features, dtype=np.float32)
        current = np.broadcast_to(self.roots, (rows.shape[0], self.roots.size)).copy()
        sample_index = np.arange(rows.shape[0])[:, None]
        for _ in range(self.max_depth + 1):
            inner = self.left[current] != _NO_CHILD
            if not inner.any():
                break
            go_left = rows[sample_index, self.feature[current]] <= self.threshold[current]
            current = np.where(inner, np.where(go_left, self.left[current], self.right[current]), current)
        return self.vote[current].astype(np.float64).mean(axis=1)


def forest_predict(model: TrainedModel, features: np.ndarray) -> FloatArray:
    """
    Target probabilities of an (n, n_features) matrix.
    """
    cache = model.runtime_cache()
    if "forest" not in cache:
        cache["forest"] = _FlatForest.from_model(model)
    flat: _FlatForest = cache["forest"]
    if features.ndim != 2 or features.shape[1] != flat.n_features:
        raise InvalidArgumentError(f"Expected features of shape (n, {flat.n_features}), got {features.shape}")
    return flat.predict(features)


def fit_forest(
    features: np.ndarray,
    labels: np.ndarray,
    config: ForestConfig = ForestConfig(),
    *,
    subject_id: str = "",
    training_set_tag: TrainingTag = TrainingTag.IN_LAB,
) -> TrainedModel:
    """
    Fits the forest on an (n, n_features) matrix and binary labels (1 = target). Sample weights are the class
    weights of the config.
    """
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if features.ndim != 2 or features.shape[0] != labels.shape[0]:
        raise InvalidArgumentError(f"Features {features.shape} don't match labels {labels.shape}")
    if np.unique(labels).size < 2:
        raise InvalidArgumentError("The training set must contain targets and non-targets")
    n_features = features.shape[1]
    estimator = RandomForestClassifier(
        n_estimators=config.n_trees,
        criterion="gini",
        max_depth=config.max_depth,
        max_features=config.resolved_features_per_split(n_features),
        bootstrap=config.bootstrap,
        class_weight={0: config.non_target_weight, 1: config.target_weight},
        random_state=config.seed % 2**32,
        n_jobs=config.n_jobs,
    )
    estimator.fit(features, labels)
    model = TrainedModel.create(
        ModelKind.FOREST,
        _export_trees(estimator),
        {**config.model_dump(mode="json"), "n_features": n_features},
        subject_id=subject_id,
        training_set_tag=training_set_tag,
        seed=config.seed,
    )
    train_accuracy = float(balanced_accuracy_score(labels, forest_predict(model, features) > 0.5))
    _logger.info(
        "Fitted %i trees on %i trials, training balanced accuracy %.3f", config.n_trees, len(labels), train_accuracy
    )
    metrics = {"train_balanced_accuracy": train_accuracy, "n_nodes": float(model.parameters["vote"].size)}
    return dataclasses.replace(model, metrics=frozendict(metrics))


def feature_importances(model: TrainedModel) -> FloatArray:
    """Mean weighted impurity decrease per feature, normalized to sum 1"""
    if model.kind != ModelKind.FOREST:
        raise InvalidArgumentError(f"Only forests have feature importances, got a {model.kind} model")
    return model.parameters["importances"].astype(np.float64)
