"""
Contains the shared domain types of erpdecoder: channels, icons, labels, session layouts and epochs.
Sample indices are the authoritative clock, a timestamp is always `index / SAMPLING_RATE_HZ` seconds from stream start.
"""

import dataclasses
import logging
from dataclasses import dataclass, field
from enum import StrEnum
from typing import Literal, Optional, Sequence

import numpy as np
from bidict import frozenbidict
from pydantic import BaseModel, ConfigDict, Field, model_validator

from .errors import InvalidArgumentError
from .types import FloatArray

_logger = logging.getLogger("erpdecoder.core")

SAMPLING_RATE_HZ = 500
SAMPLE_PERIOD_MS = 1000 / SAMPLING_RATE_HZ
N_ICONS = 6
STIM_MS = 700
ISI_MS = 100
SOA_SAMPLES = (STIM_MS + ISI_MS) * SAMPLING_RATE_HZ // 1000
EPOCH_WINDOW_MS = (-100, 700)
EPOCH_SAMPLES = 400
BASELINE_SAMPLES = 50
RUN_PAD_SAMPLES = 2 * SAMPLING_RATE_HZ
"""Every run is analysed on the segment [first onset - 2 s, last onset + 2 s)"""


def ms_to_epoch_index(time_ms: float) -> int:
    """
    Converts a time relative to the stimulus onset into the sample index inside an epoch.
    """
    return int(round((time_ms - EPOCH_WINDOW_MS[0]) / SAMPLE_PERIOD_MS))


def epoch_times_ms() -> FloatArray:
    """
    The time axis of an epoch in ms relative to the stimulus onset.
    """
    return EPOCH_WINDOW_MS[0] + SAMPLE_PERIOD_MS * np.arange(EPOCH_SAMPLES, dtype=np.float64)


class Channel(StrEnum):
    """
    The acquisition channels. Cz and Pz carry the ERP, Fp1 is used to detect ocular artifacts only.
    """

    CZ = "Cz"
    PZ = "Pz"
    FP1 = "Fp1"


CHANNEL_ROWS: frozenbidict[Channel, int] = frozenbidict({Channel.CZ: 0, Channel.PZ: 1, Channel.FP1: 2})
MODEL_CHANNELS: tuple[Channel, ...] = (Channel.CZ, Channel.PZ)


def channel_rows(channels: Sequence[Channel]) -> tuple[int, ...]:
    """
    Returns the data rows of the given channels in acquisition order.
    """
    return tuple(sorted(CHANNEL_ROWS[Channel(channel)] for channel in channels))


def parse_channels(text: str) -> tuple[Channel, ...]:
    """
    Parses a comma separated channel list like "Cz,Pz".
    """
    try:
        return tuple(Channel(name.strip()) for name in text.split(",") if name.strip())
    except ValueError as error:
        raise InvalidArgumentError(f"Unknown channel in '{text}'") from error


@dataclass(frozen=True)
class ChannelSet:
    """
    The fixed montage. The reference electrode is informational only.
    """

    channels: tuple[Channel, ...] = (Channel.CZ, Channel.PZ, Channel.FP1)
    reference: str = "left earlobe"

    def __post_init__(self):
        if self.channels != tuple(CHANNEL_ROWS):
            raise InvalidArgumentError(f"The montage must be {[str(c) for c in CHANNEL_ROWS]}, got {self.channels}")

    @property
    def model_channels(self) -> tuple[Channel, ...]:
        """The channels fed into the classifiers"""
        return MODEL_CHANNELS


class IconColor(StrEnum):
    """
    The colors an icon can be flashed in. Colors are metadata and never enter a classifier.
    """

    BLACK = "black"
    GREEN = "green"
    YELLOW = "yellow"
    MAGENTA = "magenta"
    RED = "red"
    BLUE = "blue"


@dataclass(frozen=True, order=True)
class IconId:
    """
    One of the six menu icons. Two icons are equal if their index is equal.
    """

    index: int
    color: Optional[IconColor] = field(default=None, compare=False)

    def __post_init__(self):
        if not 0 <= self.index < N_ICONS:
            raise InvalidArgumentError(f"Icon index must be in [0, {N_ICONS - 1}], got {self.index}")

    def __index__(self) -> int:
        return self.index

    def __int__(self) -> int:
        return self.index


class TrialKind(StrEnum):
    """
    Whether the flashed icon was the one the subject attended to
    """

    TARGET = "Target"
    NON_TARGET = "NonTarget"


@dataclass(frozen=True)
class TrialLabel:
    """
    The label of a single trial
    """

    kind: TrialKind
    icon: IconId

    @property
    def is_target(self) -> bool:
        """True for target trials"""
        return self.kind == TrialKind.TARGET


class Condition(StrEnum):
    """
    The recording condition of a session
    """

    IN_LAB = "InLab"
    IN_CAR = "InCar"


class TrainingTag(StrEnum):
    """
    Names the training set a model was fitted on
    """

    IN_LAB = "InLab"
    IN_CAR = "InCar"
    HYBRID = "Hybrid"


class QualityFlag(StrEnum):
    """
    The outcome of the trial rejection for a single epoch
    """

    KEPT = "kept"
    REJECTED_GAP = "rejected_gap"
    REJECTED_AMPLITUDE = "rejected_amplitude"


def random_icon_colors(seed: int) -> tuple[IconColor, ...]:
    """
    Draws a random bijection between the icons and the colors. Entry i is the color of icon i.
    """
    rng = np.random.default_rng(seed)
    palette = list(IconColor)
    return tuple(palette[i] for i in rng.permutation(N_ICONS))


class SessionSpec(BaseModel):
    """
    Declarative description of one oddball session. In-lab sessions always consist of 6 runs with 10 repetitions per
    icon, in-car sessions of `n_runs` runs with 3 repetitions per icon. The icon colors are fixed for the whole
    session.
    """

    model_config = ConfigDict(frozen=True)

    schema_version: Literal[1] = 1
    condition: Condition
    n_runs: int = Field(ge=1)
    reps_per_icon: int = Field(ge=1)
    isi_ms: Literal[100] = ISI_MS
    stim_ms: Literal[700] = STIM_MS
    rest_s: float = Field(default=30.0, ge=0)
    idle_s_range: tuple[float, float] = (4.0, 8.0)
    """Self-initiated pause between in-car runs, drawn uniformly from this range"""
    sampling_rate_hz: Literal[500] = SAMPLING_RATE_HZ
    seed: int = Field(ge=0, lt=2**64)
    icon_colors: tuple[IconColor, ...]

    @model_validator(mode="after")
    def _check_layout(self) -> "SessionSpec":
        if self.condition == Condition.IN_LAB and (self.n_runs, self.reps_per_icon) != (6, 10):
            raise ValueError("An in-lab session consists of 6 runs with 10 repetitions per icon")
        if self.condition == Condition.IN_CAR and self.reps_per_icon != 3:
            raise ValueError("An in-car session uses 3 repetitions per icon")
        if sorted(self.icon_colors) != sorted(IconColor):
            raise ValueError(f"icon_colors must be a permutation of all {N_ICONS} colors")
        if not 0 <= self.idle_s_range[0] <= self.idle_s_range[1]:
            raise ValueError(f"Invalid idle range {self.idle_s_range}")
        return self

    @classmethod
    def in_lab(cls, seed: int) -> "SessionSpec":
        """The in-lab layout: 6 runs, 60 trials each, 30 s breaks"""
        return cls(
            condition=Condition.IN_LAB, n_runs=6, reps_per_icon=10, seed=seed, icon_colors=random_icon_colors(seed)
        )

    @classmethod
    def in_car(cls, seed: int, n_runs: int = 50, idle_s_range: tuple[float, float] = (4.0, 8.0)) -> "SessionSpec":
        """The in-car layout: `n_runs` self-initiated runs, 18 trials each"""
        return cls(
            condition=Condition.IN_CAR,
            n_runs=n_runs,
            reps_per_icon=3,
            idle_s_range=idle_s_range,
            seed=seed,
            icon_colors=random_icon_colors(seed),
        )

    @property
    def trials_per_run(self) -> int:
        """Number of stimuli per run"""
        return N_ICONS * self.reps_per_icon

    @property
    def n_trials(self) -> int:
        """Nominal number of trials of the whole session"""
        return self.n_runs * self.trials_per_run

    @property
    def soa_samples(self) -> int:
        """Distance between two stimulus onsets in samples"""
        return (self.stim_ms + self.isi_ms) * self.sampling_rate_hz // 1000

    @property
    def color_map(self) -> frozenbidict[int, IconColor]:
        """The bijection icon index <-> color"""
        return frozenbidict(enumerate(self.icon_colors))

    def icon(self, index: int) -> IconId:
        """Returns the icon with its session color"""
        return IconId(index, self.icon_colors[index])

    def to_json(self) -> str:
        """Serializes the session layout into its versioned JSON document"""
        return self.model_dump_json()

    @classmethod
    def from_json(cls, document: str | bytes) -> "SessionSpec":
        """Parses a versioned JSON document"""
        return cls.model_validate_json(document)


def block_randomized_order(n_blocks: int, seed: int) -> tuple[IconId, ...]:
    """
    Returns a stimulus sequence of `6 * n_blocks` icons in which every consecutive block of 6 is a permutation of
    all icons.
    """
    if n_blocks < 1:
        raise InvalidArgumentError(f"n_blocks must be at least 1, got {n_blocks}")
    rng = np.random.default_rng(seed)
    return tuple(IconId(int(index)) for _ in range(n_blocks) for index in rng.permutation(N_ICONS))


def run_segment_bounds(onset_indices: Sequence[int], n_samples: int, pad: int = RUN_PAD_SAMPLES) -> tuple[int, int]:
    """
    Returns the half open sample range [start, stop) a run is processed on: from `pad` samples before its first
    stimulus onset to `pad` samples after its last one, clipped to the stream.
    Offline and online decoding both use this segment, hence both see identical filter input.
    """
    if len(onset_indices) == 0:
        raise InvalidArgumentError("A run needs at least one stimulus onset")
    return max(0, min(onset_indices) - pad), min(n_samples, max(onset_indices) + pad)


# pylint: disable=too-many-instance-attributes
@dataclass(frozen=True, eq=False)
class Epoch:
    """
    One baseline corrected trial window [-100, 700) ms around the (delay corrected) stimulus onset. The data has the
    shape (3, 400) in acquisition channel order. `onset_index` is the stream index of the stimulus onset.
    Epochs are identified by (subject, session, run, trial_index), which is also used for hashing.
    """

    subject: str
    session: str
    run: int
    trial_index: int
    repetition: int
    label: TrialLabel
    onset_index: int
    t0: float
    data: FloatArray
    quality: QualityFlag = QualityFlag.KEPT

    def __post_init__(self):
        if self.data.shape != (len(CHANNEL_ROWS), EPOCH_SAMPLES):
            raise InvalidArgumentError(f"Epoch data must have the shape (3, {EPOCH_SAMPLES}), got {self.data.shape}")

    @property
    def key(self) -> tuple[str, str, int, int]:
        """Unique identifier of the trial"""
        return self.subject, self.session, self.run, self.trial_index

    @property
    def trial_id(self) -> str:
        """The key as string"""
        return f"{self.subject}/{self.session}/{self.run}/{self.trial_index}"

    @property
    def is_target(self) -> bool:
        """True for target trials"""
        return self.label.is_target

    @property
    def icon(self) -> int:
        """Index of the flashed icon"""
        return self.label.icon.index

    @property
    def kept(self) -> bool:
        """True if the epoch survived the rejection"""
        return self.quality == QualityFlag.KEPT

    @property
    def model_input(self) -> FloatArray:
        """The CNN input: Cz and Pz in [0, 700) ms, shape (2, 350)"""
        return self.data[list(channel_rows(MODEL_CHANNELS)), BASELINE_SAMPLES:]

    def with_quality(self, quality: QualityFlag) -> "Epoch":
        """Returns a copy carrying the given flag"""
        return dataclasses.replace(self, quality=quality)

    def __hash__(self) -> int:
        return hash(self.key)

    def __eq__(self, other) -> bool:
        return isinstance(other, Epoch) and self.key == other.key

    def __str__(self) -> str:
        return f"Epoch({self.trial_id}, {self.label.kind}, icon {self.icon}, {self.quality})"


def kept_epochs(epochs: Sequence[Epoch]) -> list[Epoch]:
    """Filters the epochs which survived the rejection"""
    return [epoch for epoch in epochs if epoch.kept]


def labels_of(epochs: Sequence[Epoch]) -> np.ndarray:
    """Returns the binary labels (1 = target) of the epochs"""
    return np.fromiter((epoch.is_target for epoch in epochs), dtype=np.int64, count=len(epochs))
