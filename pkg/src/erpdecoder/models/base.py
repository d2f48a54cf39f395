"""
Contains the trained model type shared by both classifier families and its file format.
"""

import base64
import json
from dataclasses import dataclass, field
from enum import StrEnum
from pathlib import Path
from typing import Any, Mapping

import numpy as np
from frozendict import frozendict

from ..core import TrainingTag
from ..errors import FormatError
from ..types import Float32Array, JsonDict

MODEL_FORMAT_VERSION = 1


class ModelKind(StrEnum):
    """
    The classifier families
    """

    FOREST = "Forest"
    CNN = "Cnn"


# pylint: disable=too-many-instance-attributes
@dataclass(frozen=True, eq=False)
class TrainedModel:
    """
    A fitted classifier. All parameters are little endian float32 arrays, predictions only depend on them and the
    config snapshot, so a saved and loaded model predicts bit-identically.
    """

    kind: ModelKind
    parameters: frozendict[str, Float32Array]
    config: frozendict[str, Any]
    subject_id: str
    training_set_tag: TrainingTag
    seed: int
    metrics: frozendict[str, float] = frozendict()
    format_version: int = MODEL_FORMAT_VERSION
    _runtime: dict[str, Any] = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        for name, values in self.parameters.items():
            if values.dtype != np.float32:
                raise TypeError(f"Parameter {name} must be float32, got {values.dtype}")

    @classmethod
    def create(
        cls,
        kind: ModelKind,
        parameters: Mapping[str, np.ndarray],
        config: JsonDict,
        *,
        subject_id: str = "",
        training_set_tag: TrainingTag = TrainingTag.IN_LAB,
        seed: int = 0,
        metrics: Mapping[str, float] | None = None,
    ) -> "TrainedModel":
        """Freezes the parameters to contiguous float32 arrays"""
        return cls(
            kind=kind,
            parameters=frozendict(
                {name: np.ascontiguousarray(values, dtype=np.float32) for name, values in sorted(parameters.items())}
            ),
            config=frozendict(config),
            subject_id=subject_id,
            training_set_tag=training_set_tag,
            seed=seed,
            metrics=frozendict({name: float(value) for name, value in (metrics or {}).items()}),
        )

    def runtime_cache(self) -> dict[str, Any]:
        """Storage for objects derived from the parameters, e.g. the torch module"""
        return self._runtime

    def to_document(self) -> JsonDict:
        """The JSON document of the model file"""
        return {
            "format_version": self.format_version,
            "kind": str(self.kind),
            "subject_id": self.subject_id,
            "training_set_tag": str(self.training_set_tag),
            "seed": self.seed,
            "config": dict(self.config),
            "metrics": dict(self.metrics),
            "parameters": {
                name: {
                    "shape": list(values.shape),
                    "dtype": "<f4",
                    "data": base64.b64encode(values.astype("<f4").tobytes()).decode("ascii"),
                }
                for name, values in self.parameters.items()
            },
        }

    @classmethod
    def from_document(cls, document: JsonDict) -> "TrainedModel":
        """Inverse of `to_document`"""
        try:
            if document["format_version"] != MODEL_FORMAT_VERSION:
                raise FormatError(f"Unsupported model format version {document['format_version']}", offset=0)
            parameters: dict[str, np.ndarray] = {}
            for name, blob in document["parameters"].items():
                if blob["dtype"] != "<f4":
                    raise FormatError(f"Parameter {name} has the unsupported dtype {blob['dtype']}", offset=0)
                raw = np.frombuffer(base64.b64decode(blob["data"]), dtype="<f4")
                parameters[name] = raw.reshape(blob["shape"]).astype(np.float32)
            return cls.create(
                ModelKind(document["kind"]),
                parameters,
                document["config"],
                subject_id=document["subject_id"],
                training_set_tag=TrainingTag(document["training_set_tag"]),
                seed=int(document["seed"]),
                metrics=document["metrics"],
            )
        except (KeyError, ValueError, TypeError) as error:
            raise FormatError(f"Invalid model document: {error}", offset=0) from error


def save_model(model: TrainedModel, path: Path) -> Path:
    """Writes the model as JSON with sorted keys"""
    Path(path).write_text(json.dumps(model.to_document(), sort_keys=True, indent=1), encoding="utf-8")
    return Path(path)


def load_model(path: Path) -> TrainedModel:
    """Reads a model written by `save_model`"""
    try:
        document = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as error:
        raise FormatError(f"{path} is no JSON document: {error.msg}", offset=error.pos) from error
    return TrainedModel.from_document(document)
