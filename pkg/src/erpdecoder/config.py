"""
Contains the experiment configuration, the derivation of per stage seeds from the master seed and the logging setup
of the command line interface.
"""

import hashlib
import logging
import os
from pathlib import Path
from typing import Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from .core import TrainingTag
from .errors import ConfigError
from .models import CnnConfig, ForestConfig, ModelKind, OptimizerConfig
from .preprocess import PreprocessOptions

LOG_ENV_VAR = "ERP_DECODER_LOG"
LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"
_SEED_MASK = 2**64 - 1


def derive_seed(master_seed: int, stage: str) -> int:
    """
    The seed of a stage: the first 8 bytes of the BLAKE2b hash of the stage name XOR the master seed.
    """
    digest = hashlib.blake2b(stage.encode("utf-8")).digest()
    return (int.from_bytes(digest[:8], "little") ^ master_seed) & _SEED_MASK


def configure_logging(level: Optional[str | int] = None) -> logging.Logger:
    """
    Configures the "erpdecoder" logger. Without an explicit level the environment variable ERP_DECODER_LOG is used,
    falling back to WARNING.
    """
    if level is None:
        level = os.environ.get(LOG_ENV_VAR, "WARNING")
    if isinstance(level, str):
        resolved = logging.getLevelName(level.upper())
        if not isinstance(resolved, int):
            raise ConfigError(f"Unknown log level {level!r} (set via {LOG_ENV_VAR} or --verbose)")
        level = resolved
    logger = logging.getLogger("erpdecoder")
    logger.setLevel(level)
    if not logger.handlers:
        handler = logging.StreamHandler()
        handler.setFormatter(logging.Formatter(LOG_FORMAT))
        logger.addHandler(handler)
    return logger


class ExperimentConfig(BaseModel):
    """
    Everything `run_pipeline` needs. Unset `roster_path` means the built-in roster of ten synthetic subjects.
    """

    model_config = ConfigDict(frozen=True)

    master_seed: int = Field(default=0, ge=0, lt=2**64)
    output_dir: Path = Path("erpdecoder-output")
    roster_path: Optional[Path] = None
    n_in_lab_sessions: int = Field(default=6, ge=1)
    n_in_car_sessions: int = Field(default=3, ge=3)
    in_car_runs: int = Field(default=50, ge=1)
    idle_s_range: tuple[float, float] = (4.0, 8.0)
    preprocess: PreprocessOptions = PreprocessOptions()
    families: tuple[ModelKind, ...] = (ModelKind.FOREST, ModelKind.CNN)
    tags: tuple[TrainingTag, ...] = (TrainingTag.IN_LAB, TrainingTag.IN_CAR, TrainingTag.HYBRID)
    forest: ForestConfig = ForestConfig()
    forest_depth_grid: tuple[int, ...] = (12,)
    cnn: CnnConfig = CnnConfig()
    optimizer: OptimizerConfig = OptimizerConfig()
    cnn_epoch_grid: tuple[int, ...] = tuple(range(20, 201, 20))
    n_folds: int = Field(default=5, ge=2)
    n_permutations: int = Field(default=100, ge=1)
    hybrid_repetitions: int = Field(default=5, ge=1)
    jobs: int = 1

    @field_validator("families", "tags", "forest_depth_grid", "cnn_epoch_grid")
    @classmethod
    def _not_empty(cls, value: tuple) -> tuple:
        if len(value) == 0:
            raise ValueError("must not be empty")
        return value

    @field_validator("forest_depth_grid", "cnn_epoch_grid")
    @classmethod
    def _positive(cls, value: tuple[int, ...]) -> tuple[int, ...]:
        if any(item < 1 for item in value):
            raise ValueError("grid values must be positive")
        return value

    def validate_paths(self):
        """Raises a ConfigError naming the missing roster file"""
        if self.roster_path is not None and not self.roster_path.is_file():
            raise ConfigError(f"The roster file {self.roster_path} does not exist")

    def seed_for(self, stage: str) -> int:
        """The derived seed of a stage"""
        return derive_seed(self.master_seed, stage)

    @classmethod
    def from_file(cls, path: Path) -> "ExperimentConfig":
        """Reads a JSON config, raising ConfigError for missing or invalid files"""
        try:
            return cls.model_validate_json(Path(path).read_text(encoding="utf-8"))
        except FileNotFoundError as error:
            raise ConfigError(f"The config file {path} does not exist") from error
        except ValidationError as error:
            raise ConfigError(f"Invalid config {path}: {error}") from error

    def write(self, path: Path) -> Path:
        """Writes the config as JSON"""
        Path(path).write_text(self.model_dump_json(indent=2), encoding="utf-8")
        return Path(path)
