"""
Contains the two step trial rejection. Step 1 rejects epochs overlapping long data gaps, step 2 rejects the remaining
epochs exceeding the amplitude threshold on any of the selected channels.
"""

import logging
from typing import Iterable, Optional, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, computed_field

from ..core import BASELINE_SAMPLES, CHANNEL_ROWS, EPOCH_SAMPLES, Channel, Epoch, QualityFlag, channel_rows
from ..errors import InvalidArgumentError
from ..screening import EpochCheck, PathMappedCheck, ScreeningManager, ScreeningMode
from ..stream.acquisition import GapEvent

_logger = logging.getLogger("erpdecoder.preprocess")

DEFAULT_MAX_GAP_SAMPLES = 20
DEFAULT_THRESHOLD_UV = 100.0
ALL_CHANNELS: tuple[Channel, ...] = tuple(CHANNEL_ROWS)


class GapOverlapError(ValueError):
    """Raised by the gap check"""


class AmplitudeExceededError(ValueError):
    """Raised by the amplitude check"""


def no_long_gap(onset_index: int, gaps: tuple[GapEvent, ...], max_gap_samples: int) -> None:
    """
    The epoch must not overlap a gap of more than `max_gap_samples` consecutive missing samples.
    """
    start = onset_index - BASELINE_SAMPLES
    stop = start + EPOCH_SAMPLES
    for gap in gaps:
        if gap.length_samples > max_gap_samples and gap.overlaps(start, stop):
            raise GapOverlapError(f"{gap.length_samples} samples missing from index {gap.start_index}")


def within_amplitude(data: np.ndarray, rows: tuple[int, ...], threshold_uv: float) -> None:
    """
    No sample of the selected rows may exceed ±threshold_uv.
    """
    peak = float(np.max(np.abs(data[list(rows)])))
    if peak > threshold_uv:
        raise AmplitudeExceededError(f"|x| = {peak:.1f} µV exceeds {threshold_uv} µV")


_GAP_CHECK = EpochCheck(no_long_gap)
_AMPLITUDE_CHECK = EpochCheck(within_amplitude)


class RejectionReport(BaseModel):
    """
    Counts of the trial rejection. The step 2 rate refers to the epochs remaining after step 1, the total rate to all
    epochs.
    """

    model_config = ConfigDict(frozen=True)

    n_total: int = Field(ge=0)
    n_rejected_gap: int = Field(ge=0)
    n_rejected_amplitude: int = Field(ge=0)
    channels_used: tuple[Channel, ...] = ALL_CHANNELS

    @computed_field  # type: ignore[prop-decorator]
    @property
    def step1_rate_pct(self) -> float:
        """Percentage of all epochs rejected due to data loss"""
        return 100.0 * self.n_rejected_gap / self.n_total if self.n_total else 0.0

    @computed_field  # type: ignore[prop-decorator]
    @property
    def step2_rate_pct(self) -> float:
        """Percentage of the epochs remaining after step 1 rejected due to their amplitude"""
        remaining = self.n_total - self.n_rejected_gap
        return 100.0 * self.n_rejected_amplitude / remaining if remaining else 0.0

    @computed_field  # type: ignore[prop-decorator]
    @property
    def total_rate_pct(self) -> float:
        """Percentage of all epochs rejected"""
        return 100.0 * (self.n_rejected_gap + self.n_rejected_amplitude) / self.n_total if self.n_total else 0.0

    @property
    def n_kept(self) -> int:
        """Number of epochs surviving both steps"""
        return self.n_total - self.n_rejected_gap - self.n_rejected_amplitude

    @classmethod
    def merge(
        cls, reports: Iterable["RejectionReport"], channels_used: Optional[tuple[Channel, ...]] = None
    ) -> "RejectionReport":
        """Sums the counts of several reports, which must share their channel selection"""
        reports = list(reports)
        if channels_used is None:
            channels_used = reports[0].channels_used if reports else ALL_CHANNELS
        if any(report.channels_used != channels_used for report in reports):
            raise InvalidArgumentError("Only reports with the same channel selection can be merged")
        return cls(
            n_total=sum(report.n_total for report in reports),
            n_rejected_gap=sum(report.n_rejected_gap for report in reports),
            n_rejected_amplitude=sum(report.n_rejected_amplitude for report in reports),
            channels_used=channels_used,
        )


def normalize_channels(channels: Sequence[Channel]) -> tuple[Channel, ...]:
    """The selected channels in acquisition order"""
    if len(channels) == 0:
        raise InvalidArgumentError("Step 2 needs at least one channel")
    selected = {Channel(channel) for channel in channels}
    return tuple(channel for channel in ALL_CHANNELS if channel in selected)


def build_screening(
    gaps: Sequence[GapEvent],
    channels_for_step2: Sequence[Channel] = ALL_CHANNELS,
    max_gap_samples: int = DEFAULT_MAX_GAP_SAMPLES,
    threshold_uv: float = DEFAULT_THRESHOLD_UV,
) -> tuple[ScreeningManager[Epoch], PathMappedCheck, PathMappedCheck]:
    """
    Registers the gap check and the amplitude check, the latter depending on the former.
    """
    manager: ScreeningManager[Epoch] = ScreeningManager(manager_id="trial rejection")
    gap_check: PathMappedCheck = PathMappedCheck(
        _GAP_CHECK,
        {"onset_index": "onset_index"},
        bound={"gaps": tuple(gaps), "max_gap_samples": max_gap_samples},
    )
    amplitude_check: PathMappedCheck = PathMappedCheck(
        _AMPLITUDE_CHECK,
        {"data": "data"},
        bound={"rows": channel_rows(normalize_channels(channels_for_step2)), "threshold_uv": threshold_uv},
    )
    manager.register(gap_check, mode=ScreeningMode.REJECT)
    manager.register(amplitude_check, depends_on={gap_check}, mode=ScreeningMode.REJECT)
    return manager, gap_check, amplitude_check


def flag_trials(
    epochs: Sequence[Epoch],
    gaps: Sequence[GapEvent],
    channels_for_step2: Sequence[Channel] = ALL_CHANNELS,
    max_gap_samples: int = DEFAULT_MAX_GAP_SAMPLES,
    threshold_uv: float = DEFAULT_THRESHOLD_UV,
) -> tuple[list[Epoch], RejectionReport]:
    """
    Returns all epochs, each carrying its quality flag, and the rejection report.
    """
    channels = normalize_channels(channels_for_step2)
    manager, gap_check, amplitude_check = build_screening(gaps, channels, max_gap_samples, threshold_uv)
    result = manager.screen(*epochs)
    flags = {gap_check.name: QualityFlag.REJECTED_GAP, amplitude_check.name: QualityFlag.REJECTED_AMPLITUDE}
    flagged: list[Epoch] = []
    for epoch in epochs:
        check_name = result.first_rejecting_check(epoch)
        flagged.append(epoch.with_quality(QualityFlag.KEPT if check_name is None else flags[check_name]))
    counts = result.num_rejections_per_check
    report = RejectionReport(
        n_total=len(epochs),
        n_rejected_gap=counts[gap_check.name],
        n_rejected_amplitude=counts[amplitude_check.name],
        channels_used=channels,
    )
    _logger.info(
        "Rejected %i of %i epochs (%i gap, %i amplitude on %s)",
        report.n_total - report.n_kept,
        report.n_total,
        report.n_rejected_gap,
        report.n_rejected_amplitude,
        ",".join(channels),
    )
    return flagged, report


def reject_trials(
    epochs: Sequence[Epoch],
    gaps: Sequence[GapEvent],
    channels_for_step2: Sequence[Channel] = ALL_CHANNELS,
    max_gap_samples: int = DEFAULT_MAX_GAP_SAMPLES,
    threshold_uv: float = DEFAULT_THRESHOLD_UV,
) -> tuple[list[Epoch], RejectionReport]:
    """
    Returns the kept epochs and the rejection report.
    """
    flagged, report = flag_trials(epochs, gaps, channels_for_step2, max_gap_samples, threshold_uv)
    return [epoch for epoch in flagged if epoch.kept], report


def rejection_overview(
    channels_for_step2: Sequence[Channel] = ALL_CHANNELS,
    max_gap_samples: int = DEFAULT_MAX_GAP_SAMPLES,
    threshold_uv: float = DEFAULT_THRESHOLD_UV,
) -> str:
    """
    The checks of the trial rejection as CSV, one row per check in registration order.
    """
    manager, _, _ = build_screening((), channels_for_step2, max_gap_samples, threshold_uv)
    return manager.get_csv_formatted_check_infos()
