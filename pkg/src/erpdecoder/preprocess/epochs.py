"""
Contains the extraction of baseline corrected epochs from a filtered stream segment.
"""

import logging
from typing import Sequence

from ..core import (
    BASELINE_SAMPLES,
    EPOCH_SAMPLES,
    SAMPLING_RATE_HZ,
    Epoch,
    TrialKind,
    TrialLabel,
)
from ..stream.acquisition import MarkerEvent
from ..types import FloatArray

_logger = logging.getLogger("erpdecoder.preprocess")

DEFAULT_DELAY_CORRECTION_MS = 30.0


def corrected_onset_index(marker: MarkerEvent, delay_correction_ms: float = DEFAULT_DELAY_CORRECTION_MS) -> int:
    """
    The stream index at which the stimulus is assumed to appear: the marker onset shifted by the constant display
    delay.
    """
    return marker.onset_index + int(round(delay_correction_ms * SAMPLING_RATE_HZ / 1000))


def baseline_correct(window: FloatArray) -> FloatArray:
    """Subtracts the mean of the first 50 samples per channel"""
    return window - window[:, :BASELINE_SAMPLES].mean(axis=1, keepdims=True)


# pylint: disable=too-many-arguments
def epochize(
    stream: FloatArray,
    markers: Sequence[MarkerEvent],
    delay_correction_ms: float = DEFAULT_DELAY_CORRECTION_MS,
    *,
    start_index: int = 0,
    subject: str = "",
    session: str = "",
) -> tuple[list[Epoch], int]:
    """
    Cuts the window [onset - 50, onset + 350) samples around every delay corrected onset out of `stream`, which holds
    the samples from `start_index` on. Markers whose window exceeds the stream are skipped.
    Returns the epochs and the number of skipped markers.
    """
    epochs: list[Epoch] = []
    skipped = 0
    for marker in markers:
        onset = corrected_onset_index(marker, delay_correction_ms)
        lo = onset - BASELINE_SAMPLES - start_index
        hi = lo + EPOCH_SAMPLES
        if lo < 0 or hi > stream.shape[1]:
            skipped += 1
            continue
        kind = TrialKind.TARGET if marker.is_target else TrialKind.NON_TARGET
        epochs.append(
            Epoch(
                subject=subject,
                session=session,
                run=marker.run,
                trial_index=marker.trial_index,
                repetition=marker.repetition,
                label=TrialLabel(kind, marker.icon),
                onset_index=onset,
                t0=onset / SAMPLING_RATE_HZ,
                data=baseline_correct(stream[:, lo:hi]),
            )
        )
    if skipped:
        _logger.warning("Skipped %i of %i markers too close to the stream edge", skipped, len(markers))
    return epochs, skipped
