"""
Contains the signal quality report: trial RMS and ERP statistics per subject and condition, the condition comparison
of the power spectra and the plot data for grand averages, spectra and correlations.
"""

import csv
import logging
import math
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict

from .core import CHANNEL_ROWS, Channel, Condition, Epoch, epoch_times_ms, kept_epochs
from .errors import DegenerateInputError, InvalidArgumentError
from .preprocess import PreprocessOptions, rejection_overview
from .quality import (
    RmsSegment,
    amplitude_accuracy_correlation,
    compare_target_nontarget,
    median_grand_average,
    psd_condition_comparison,
    subject_median_waveform,
    summarize_erp,
    trial_rms,
    welch_psd,
)
from .stream import read_epochs

_logger = logging.getLogger("erpdecoder.report")

SessionsByCondition = Mapping[Condition, Sequence[Epoch]]

QUALITY_FILES = ("rms.csv", "psd.csv", "grand_average.csv", "correlation.csv", "rejection_checks.csv", "quality.json")


class SubjectQuality(BaseModel):
    """
    The quality figures of one subject in one condition. Missing tests are None.
    """

    model_config = ConfigDict(frozen=True, ser_json_inf_nan="constants")

    subject_id: str
    condition: Condition
    n_epochs: int
    rms_baseline_uV: float
    rms_whole_uV: float
    rms_with_replacement: bool
    peak_amp_uV: Optional[float] = None
    p2p_uV: Optional[float] = None
    peak_latency_ms: Optional[float] = None
    target_vs_non_target_p_peak: Optional[float] = None
    target_vs_non_target_p_p2p: Optional[float] = None


class QualityReport(BaseModel):
    """
    The quality figures of all subjects, the corrected PSD comparison between the conditions and, if accuracies are
    known, the correlations of the ERP statistics with the run accuracy.
    """

    model_config = ConfigDict(frozen=True, ser_json_inf_nan="constants")

    subjects: tuple[SubjectQuality, ...]
    psd_significant_hz: tuple[float, ...] = ()
    correlations: dict[str, float] = {}


def subject_quality(
    subject_id: str, condition: Condition, epochs: Sequence[Epoch], rng: np.random.Generator
) -> SubjectQuality:
    """RMS, ERP summary and target/non-target comparison of the kept epochs"""
    kept = kept_epochs(epochs)
    if not kept:
        raise InvalidArgumentError(f"No kept epochs of {subject_id} in {condition}")
    baseline = trial_rms(kept, RmsSegment.BASELINE, rng=rng)
    whole = trial_rms(kept, RmsSegment.WHOLE, rng=rng)
    erp: dict[str, Optional[float]] = {}
    try:
        summary = summarize_erp(kept)
        erp.update(peak_amp_uV=summary.peak_amp_uV, p2p_uV=summary.p2p_uV, peak_latency_ms=summary.peak_latency_ms)
        comparison = compare_target_nontarget(kept)
        erp.update(
            target_vs_non_target_p_peak=comparison["peak"].p_value,
            target_vs_non_target_p_p2p=comparison["p2p"].p_value,
        )
    except (InvalidArgumentError, DegenerateInputError) as error:
        _logger.warning("Incomplete ERP statistics of %s in %s: %s", subject_id, condition, error)
    return SubjectQuality(
        subject_id=subject_id,
        condition=condition,
        n_epochs=len(kept),
        rms_baseline_uV=baseline.rms_uV,
        rms_whole_uV=whole.rms_uV,
        rms_with_replacement=baseline.with_replacement,
        **erp,
    )


def _mean_psd(epochs: Sequence[Epoch], channel: Channel) -> tuple[np.ndarray, np.ndarray]:
    data = np.stack([epoch.data[CHANNEL_ROWS[channel]] for epoch in epochs])
    freqs, power = welch_psd(data)
    return freqs, power.mean(axis=0)


def _write_rows(path: Path, header: Sequence[str], rows: Sequence[Sequence]) -> Path:
    with open(path, "w", newline="", encoding="utf-8") as file:
        writer = csv.writer(file)
        writer.writerow(header)
        writer.writerows(rows)
    return path


# pylint: disable=too-many-locals
def write_quality_report(
    sessions: Mapping[str, SessionsByCondition],
    directory: Path,
    accuracy_by_subject: Optional[Mapping[str, float]] = None,
    seed: int = 0,
    channel: Channel = Channel.PZ,
    rejection: Optional[PreprocessOptions] = None,
) -> QualityReport:
    """
    Writes quality.json and the plot data rms.csv, psd.csv, grand_average.csv and, with accuracies, correlation.csv.
    With `rejection` the checks of the trial rejection are listed in rejection_checks.csv.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    subjects = sorted(sessions)
    conditions = [condition for condition in Condition if any(condition in sessions[s] for s in subjects)]
    qualities: list[SubjectQuality] = []
    psd_rows: list[list] = []
    psds: dict[Condition, list[np.ndarray]] = {condition: [] for condition in conditions}
    freqs = np.empty(0)
    waveforms: dict[Condition, dict[str, list[np.ndarray]]] = {
        condition: {"target": [], "non_target": []} for condition in conditions
    }
    for subject_id in subjects:
        for condition in conditions:
            kept = kept_epochs(sessions[subject_id].get(condition, ()))
            if not kept:
                continue
            qualities.append(subject_quality(subject_id, condition, kept, rng))
            freqs, power = _mean_psd(kept, channel)
            psds[condition].append(power)
            psd_rows.extend([subject_id, str(condition), float(f), float(p)] for f, p in zip(freqs, power))
            for kind, selected in (
                ("target", [epoch for epoch in kept if epoch.is_target]),
                ("non_target", [epoch for epoch in kept if not epoch.is_target]),
            ):
                if selected:
                    waveforms[condition][kind].append(subject_median_waveform(selected)[CHANNEL_ROWS[channel]])
    _write_rows(
        directory / "rms.csv",
        ("subject", "condition", "baseline_uV", "whole_uV"),
        [(q.subject_id, str(q.condition), q.rms_baseline_uV, q.rms_whole_uV) for q in qualities],
    )
    _write_rows(directory / "psd.csv", ("subject", "condition", "frequency_hz", "power_uV2_per_hz"), psd_rows)
    columns: list[tuple[str, np.ndarray]] = []
    for condition, by_kind in waveforms.items():
        for kind, per_subject in by_kind.items():
            if per_subject:
                columns.append((f"{condition}_{kind}", median_grand_average(per_subject)))
    times = epoch_times_ms()
    _write_rows(
        directory / "grand_average.csv",
        ("time_ms", *(name for name, _ in columns)),
        [(float(time), *(float(values[index]) for _, values in columns)) for index, time in enumerate(times)],
    )
    significant: tuple[float, ...] = ()
    if Condition.IN_LAB in psds and Condition.IN_CAR in psds:
        try:
            bins = psd_condition_comparison(
                np.array(psds[Condition.IN_LAB]), np.array(psds[Condition.IN_CAR]), freqs
            )
            significant = tuple(item.start for item in bins if item.result.p_value < 0.05)
        except (InvalidArgumentError, DegenerateInputError) as error:
            _logger.warning("No PSD comparison: %s", error)
    correlations: dict[str, float] = {}
    if accuracy_by_subject:
        summaries = {
            q.subject_id: q for q in qualities if q.condition == Condition.IN_LAB and q.p2p_uV is not None
        }
        _write_rows(
            directory / "correlation.csv",
            ("subject", "p2p_uV", "peak_amp_uV", "peak_latency_ms", "run_accuracy"),
            [
                (s, q.p2p_uV, q.peak_amp_uV, q.peak_latency_ms, accuracy_by_subject[s])
                for s, q in summaries.items()
                if s in accuracy_by_subject
            ],
        )
        try:
            correlations = amplitude_accuracy_correlation(
                {s: summarize_erp(kept_epochs(sessions[s][Condition.IN_LAB])) for s in summaries},
                {s: a for s, a in accuracy_by_subject.items() if math.isfinite(a)},
            )
        except (InvalidArgumentError, DegenerateInputError) as error:
            _logger.warning("No correlation with the accuracy: %s", error)
    if rejection is not None:
        overview = rejection_overview(
            rejection.step2_channels, rejection.max_gap_samples, rejection.amplitude_threshold_uv
        )
        (directory / "rejection_checks.csv").write_text(overview, encoding="utf-8")
    report = QualityReport(subjects=tuple(qualities), psd_significant_hz=significant, correlations=correlations)
    (directory / "quality.json").write_text(report.model_dump_json(indent=2), encoding="utf-8")
    return report


def read_sessions(paths: Sequence[Path]) -> dict[str, dict[Condition, list[Epoch]]]:
    """Reads epochs files and groups their epochs by subject and condition, in the order of `paths`"""
    sessions: dict[str, dict[Condition, list[Epoch]]] = {}
    for path in paths:
        header, epochs = read_epochs(path)
        sessions.setdefault(header.subject_id, {}).setdefault(header.condition, []).extend(epochs)
    return sessions
