"""
Contains the run wise preprocessing of a recording: gap filling, band-pass filtering, epoching and trial rejection.
Offline and online decoding both call `preprocess_run` on the same run segments.
"""

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator

from ..core import RUN_PAD_SAMPLES, Channel, Epoch, kept_epochs, run_segment_bounds
from ..stream.acquisition import GapEvent, MarkerEvent
from ..stream.container import Recording
from ..types import FloatArray
from .epochs import DEFAULT_DELAY_CORRECTION_MS, epochize
from .filtering import FilterSpec, bandpass
from .rejection import (
    ALL_CHANNELS,
    DEFAULT_MAX_GAP_SAMPLES,
    DEFAULT_THRESHOLD_UV,
    RejectionReport,
    flag_trials,
    normalize_channels,
)

_logger = logging.getLogger("erpdecoder.preprocess")


class PreprocessOptions(BaseModel):
    """
    The preprocessing parameters. Setting `delay_correction_ms` to 0 disables the display delay compensation.
    """

    model_config = ConfigDict(frozen=True)

    band_hz: tuple[float, float] = (0.1, 30.0)
    filter_order: int = Field(default=4, ge=1)
    delay_correction_ms: float = DEFAULT_DELAY_CORRECTION_MS
    step2_channels: tuple[Channel, ...] = ALL_CHANNELS
    max_gap_samples: int = Field(default=DEFAULT_MAX_GAP_SAMPLES, ge=0)
    amplitude_threshold_uv: float = Field(default=DEFAULT_THRESHOLD_UV, gt=0)
    pad_samples: int = Field(default=RUN_PAD_SAMPLES, ge=0)

    @field_validator("step2_channels")
    @classmethod
    def _channels_not_empty(cls, value: tuple[Channel, ...]) -> tuple[Channel, ...]:
        if len(value) == 0:
            raise ValueError("step2_channels must not be empty")
        return value

    @property
    def filter_spec(self) -> FilterSpec:
        """The band-pass described by these options"""
        return FilterSpec(band_hz=self.band_hz, order=self.filter_order)


@dataclass(frozen=True)
class PreprocessedSession:
    """
    The epochs of a run or a whole session. Rejected epochs are contained as well, carrying their quality flag.
    """

    epochs: tuple[Epoch, ...]
    report: RejectionReport
    n_skipped: int

    @property
    def kept(self) -> list[Epoch]:
        """The epochs that survived the rejection"""
        return kept_epochs(self.epochs)


def fill_gaps(segment: FloatArray) -> FloatArray:
    """
    Linearly interpolates missing (NaN) samples per channel, missing edges repeat the nearest valid sample.
    A channel without any valid sample becomes zero.
    """
    filled = np.array(segment, dtype=np.float64, copy=True)
    indices = np.arange(filled.shape[-1])
    for row in filled:
        missing = np.isnan(row)
        if not missing.any():
            continue
        if missing.all():
            row[:] = 0.0
            continue
        row[missing] = np.interp(indices[missing], indices[~missing], row[~missing])
    return filled


# pylint: disable=too-many-arguments
def preprocess_run(
    segment: FloatArray,
    start_index: int,
    markers: Sequence[MarkerEvent],
    gaps: Sequence[GapEvent],
    options: PreprocessOptions = PreprocessOptions(),
    *,
    subject: str = "",
    session: str = "",
) -> PreprocessedSession:
    """
    Preprocesses one run segment holding the samples from `start_index` on. Gaps are given in stream coordinates.
    """
    stop_index = start_index + segment.shape[-1]
    filtered = bandpass(fill_gaps(segment), options.filter_spec)
    epochs, n_skipped = epochize(
        filtered,
        markers,
        options.delay_correction_ms,
        start_index=start_index,
        subject=subject,
        session=session,
    )
    local_gaps = [gap for gap in gaps if gap.overlaps(start_index, stop_index)]
    flagged, report = flag_trials(
        epochs,
        local_gaps,
        options.step2_channels,
        options.max_gap_samples,
        options.amplitude_threshold_uv,
    )
    return PreprocessedSession(epochs=tuple(flagged), report=report, n_skipped=n_skipped)


def preprocess_recording(recording: Recording, options: PreprocessOptions = PreprocessOptions()) -> PreprocessedSession:
    """
    Preprocesses every run of the recording on its own segment. Epochs are ordered by run and trial index.
    A recording without markers yields no epochs and an empty report.
    """
    if len(recording.markers) == 0:
        _logger.warning("%s/%s contains no stimulus markers", recording.header.subject_id, recording.header.session_id)
        empty = RejectionReport.merge([], normalize_channels(options.step2_channels))
        return PreprocessedSession(epochs=(), report=empty, n_skipped=0)
    epochs: list[Epoch] = []
    reports: list[RejectionReport] = []
    n_skipped = 0
    for run, markers in recording.runs.items():
        start, stop = run_segment_bounds(
            [marker.onset_index for marker in markers], recording.n_samples, options.pad_samples
        )
        result = preprocess_run(
            recording.segment(start, stop),
            start,
            markers,
            recording.gaps,
            options,
            subject=recording.header.subject_id,
            session=recording.header.session_id,
        )
        _logger.debug("Run %i: %i epochs, %i kept", run, len(result.epochs), result.report.n_kept)
        epochs.extend(sorted(result.epochs, key=lambda epoch: epoch.trial_index))
        reports.append(result.report)
        n_skipped += result.n_skipped
    report = RejectionReport.merge(reports)
    _logger.info(
        "%s/%s: %i epochs, %.1f %% rejected, %i skipped at the stream edge",
        recording.header.subject_id,
        recording.header.session_id,
        len(epochs),
        report.total_rate_pct,
        n_skipped,
    )
    return PreprocessedSession(epochs=tuple(epochs), report=report, n_skipped=n_skipped)
