"""
Contains the extraction of the 44 dimensional feature vector of an epoch: five windowed means and 17 morphological
features on each of Cz and Pz.

The morphological features are computed on the analysis window (default 200 to 600 ms after the onset). Times are
in ms relative to the onset, areas in µV·s (sums times the sample period), slopes in µV/s:

====  ==========================================================================
LAT   time of the maximum, 0 if the window is flat
AMP   the maximum
LAR   LAT / AMP, 0 if AMP is 0
AAMP  abs(AMP)
ALAR  abs(LAR)
PAR   area of the positive samples
NAR   area of the negative samples (<= 0)
TAR   PAR + NAR
ATAR  abs(TAR)
TAAR  PAR - NAR, the area of the absolute signal
AASS  mean absolute slope between consecutive samples
PP    maximum - minimum
PPT   time of the maximum - time of the minimum
PPS   PP / PPT (per second), 0 if PPT is 0
ZC    number of sign changes, zero samples are skipped
ZCD   ZC per second of the analysis window
SSA   number of sign changes of the slope, zero slopes are skipped
====  ==========================================================================
"""

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .core import (
    CHANNEL_ROWS,
    EPOCH_WINDOW_MS,
    MODEL_CHANNELS,
    SAMPLE_PERIOD_MS,
    Channel,
    Epoch,
    ms_to_epoch_index,
)
from .errors import DegenerateInputError, InvalidArgumentError
from .types import FloatArray

DEFAULT_INTERVAL_MS: tuple[float, float] = (200.0, 600.0)
DEFAULT_N_WINDOWS = 5
MORPH_CODES: tuple[str, ...] = (
    "LAT",
    "AMP",
    "LAR",
    "AAMP",
    "ALAR",
    "PAR",
    "NAR",
    "TAR",
    "ATAR",
    "TAAR",
    "AASS",
    "PP",
    "PPT",
    "PPS",
    "ZC",
    "ZCD",
    "SSA",
)
_DT_S = SAMPLE_PERIOD_MS / 1000


def _interval_indices(interval_ms: tuple[float, float]) -> tuple[int, int]:
    lo_ms, hi_ms = interval_ms
    if not EPOCH_WINDOW_MS[0] <= lo_ms < hi_ms <= EPOCH_WINDOW_MS[1]:
        raise InvalidArgumentError(f"The interval {interval_ms} ms is not inside the epoch window {EPOCH_WINDOW_MS}")
    return ms_to_epoch_index(lo_ms), ms_to_epoch_index(hi_ms)


def feature_names(
    channels: Sequence[Channel] = MODEL_CHANNELS, n_windows: int = DEFAULT_N_WINDOWS
) -> tuple[str, ...]:
    """The names of the feature vector entries in their fixed order"""
    return tuple(
        name
        for channel in channels
        for name in (
            *(f"{channel}_wm{index}" for index in range(1, n_windows + 1)),
            *(f"{channel}_{code}" for code in MORPH_CODES),
        )
    )


def windowed_means(
    signal: FloatArray, n_windows: int = DEFAULT_N_WINDOWS, interval_ms: tuple[float, float] = DEFAULT_INTERVAL_MS
) -> FloatArray:
    """
    Splits the interval into `n_windows` equal contiguous windows and returns the mean of each along the last axis of
    the epoch signal (shape (..., 400)).
    """
    lo, hi = _interval_indices(interval_ms)
    if n_windows < 1 or (hi - lo) % n_windows != 0:
        raise InvalidArgumentError(f"{hi - lo} samples can't be split into {n_windows} equal windows")
    window = np.asarray(signal, dtype=np.float64)[..., lo:hi]
    return window.reshape(*window.shape[:-1], n_windows, (hi - lo) // n_windows).mean(axis=-1)


def _sign_changes(values: FloatArray) -> int:
    signs = np.sign(values)
    signs = signs[signs != 0]
    return int(np.count_nonzero(signs[1:] != signs[:-1]))


# pylint: disable=too-many-locals
def morphological(signal: FloatArray, analysis_window_ms: tuple[float, float] = DEFAULT_INTERVAL_MS) -> FloatArray:
    """
    Returns the 17 morphological features (order of MORPH_CODES) of a single channel epoch signal of 400 samples.
    """
    lo, hi = _interval_indices(analysis_window_ms)
    window = np.asarray(signal, dtype=np.float64)[lo:hi]
    times_ms = analysis_window_ms[0] + SAMPLE_PERIOD_MS * np.arange(window.size)
    i_max, i_min = int(np.argmax(window)), int(np.argmin(window))
    amp = float(window[i_max])
    flat = window[i_max] == window[i_min]
    lat = 0.0 if flat else float(times_ms[i_max])
    lar = lat / amp if amp != 0 else 0.0
    par = float(window[window > 0].sum() * _DT_S)
    nar = float(window[window < 0].sum() * _DT_S)
    tar = par + nar
    slopes = np.diff(window) / _DT_S
    aass = float(np.abs(slopes).mean()) if slopes.size else 0.0
    pp = float(window[i_max] - window[i_min])
    ppt = 0.0 if flat else float(times_ms[i_max] - times_ms[i_min])
    pps = pp / (ppt / 1000) if ppt != 0 else 0.0
    zc = _sign_changes(window)
    zcd = zc / (window.size * _DT_S)
    ssa = _sign_changes(slopes)
    return np.array(
        [lat, amp, lar, abs(amp), abs(lar), par, nar, tar, abs(tar), par - nar, aass, pp, ppt, pps, zc, zcd, ssa],
        dtype=np.float64,
    )


@dataclass(frozen=True, eq=False)
class FeatureVector:
    """
    The feature values of one epoch with their names and the trial metadata.
    """

    names: tuple[str, ...]
    values: FloatArray
    trial_id: str
    run: int
    trial_index: int
    icon: int
    is_target: bool

    def __post_init__(self):
        if self.values.shape != (len(self.names),):
            raise InvalidArgumentError(f"Expected {len(self.names)} values, got shape {self.values.shape}")

    def __len__(self) -> int:
        return len(self.names)

    def as_dict(self) -> dict[str, float]:
        """Maps the feature names to their values"""
        return dict(zip(self.names, (float(value) for value in self.values)))


def extract_features(
    epoch: Epoch,
    n_windows: int = DEFAULT_N_WINDOWS,
    interval_ms: tuple[float, float] = DEFAULT_INTERVAL_MS,
    analysis_window_ms: tuple[float, float] = DEFAULT_INTERVAL_MS,
) -> FeatureVector:
    """
    Concatenates [Cz windowed means, Cz morphology, Pz windowed means, Pz morphology].
    """
    parts: list[FloatArray] = []
    for channel in MODEL_CHANNELS:
        signal = epoch.data[CHANNEL_ROWS[channel]]
        parts.append(windowed_means(signal, n_windows, interval_ms))
        parts.append(morphological(signal, analysis_window_ms))
    values = np.concatenate(parts)
    if not np.all(np.isfinite(values)):
        raise DegenerateInputError(f"Non finite features in {epoch}")
    return FeatureVector(
        names=feature_names(MODEL_CHANNELS, n_windows),
        values=values,
        trial_id=epoch.trial_id,
        run=epoch.run,
        trial_index=epoch.trial_index,
        icon=epoch.icon,
        is_target=epoch.is_target,
    )


def feature_matrix(epochs: Iterable[Epoch]) -> FloatArray:
    """Stacks the feature vectors of the epochs into an (n, 44) matrix"""
    rows = [extract_features(epoch).values for epoch in epochs]
    if not rows:
        return np.empty((0, len(feature_names())), dtype=np.float64)
    return np.vstack(rows)


_LABEL_COLUMNS = ("trial_id", "run", "trial_index", "icon", "label")


def write_features_csv(path: Path, vectors: Sequence[FeatureVector]) -> Path:
    """
    Writes one row per epoch: the feature values followed by the label columns.
    """
    names = vectors[0].names if vectors else feature_names()
    with open(path, "w", newline="", encoding="utf-8") as csv_file:
        writer = csv.writer(csv_file)
        writer.writerow((*names, *_LABEL_COLUMNS))
        for vector in vectors:
            writer.writerow(
                (
                    *(repr(float(value)) for value in vector.values),
                    vector.trial_id,
                    vector.run,
                    vector.trial_index,
                    vector.icon,
                    int(vector.is_target),
                )
            )
    return path
