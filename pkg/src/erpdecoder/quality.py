"""
Contains the signal quality analyses (trial RMS, Welch PSD, ERP peak statistics, grand averages) and the statistical
tests used to compare conditions, trial classes and model families.
"""

import itertools
import logging
from dataclasses import dataclass
from enum import StrEnum
from typing import Mapping, Optional, Sequence

import numpy as np
from scipy import signal as sp_signal
from scipy import stats

from .core import (
    BASELINE_SAMPLES,
    CHANNEL_ROWS,
    MODEL_CHANNELS,
    SAMPLE_PERIOD_MS,
    SAMPLING_RATE_HZ,
    Channel,
    Epoch,
    ms_to_epoch_index,
)
from .errors import DegenerateInputError, InvalidArgumentError
from .types import FloatArray

_logger = logging.getLogger("erpdecoder.quality")

ERP_WINDOW_MS: tuple[float, float] = (250.0, 530.0)
PSD_SEGMENT = 256
PSD_OVERLAP = 200
PSD_NFFT = 1024


@dataclass(frozen=True)
class StatResult:
    """
    The outcome of a statistical test. `dof` is only set for t-tests (Welch–Satterthwaite) and ANOVA (between groups).
    """

    statistic: float
    p_value: float
    dof: Optional[float] = None
    corrected: bool = False

    def with_correction(self, p_value: float) -> "StatResult":
        """A copy carrying a corrected p-value"""
        return StatResult(self.statistic, p_value, self.dof, corrected=True)


def _samples(values: Sequence[float] | np.ndarray, name: str) -> FloatArray:
    array = np.asarray(values, dtype=np.float64).ravel()
    if array.size < 2:
        raise InvalidArgumentError(f"{name} needs at least 2 samples, got {array.size}")
    if not np.all(np.isfinite(array)):
        raise DegenerateInputError(f"{name} contains non finite values")
    return array


def welch_ttest(a: Sequence[float] | np.ndarray, b: Sequence[float] | np.ndarray) -> StatResult:
    """
    Two sided t-test without assuming equal variances.
    """
    sample_a, sample_b = _samples(a, "a"), _samples(b, "b")
    var_a = sample_a.var(ddof=1) / sample_a.size
    var_b = sample_b.var(ddof=1) / sample_b.size
    if var_a == 0 and var_b == 0:
        raise DegenerateInputError("Both samples have zero variance")
    dof = (var_a + var_b) ** 2 / (var_a**2 / (sample_a.size - 1) + var_b**2 / (sample_b.size - 1))
    result = stats.ttest_ind(sample_a, sample_b, equal_var=False)
    return StatResult(statistic=float(result.statistic), p_value=float(result.pvalue), dof=float(dof))


def bonferroni(p_values: Sequence[float] | np.ndarray, m: Optional[int] = None) -> FloatArray:
    """Multiplies the p-values by the number of tests `m` (default: their count) and clamps them to 1"""
    p = np.asarray(p_values, dtype=np.float64)
    m = p.size if m is None else m
    if m < 1:
        raise InvalidArgumentError(f"The number of tests must be positive, got {m}")
    return np.minimum(p * m, 1.0)


def _corrected(results: Sequence[StatResult]) -> list[StatResult]:
    corrected = bonferroni([result.p_value for result in results])
    return [result.with_correction(float(p)) for result, p in zip(results, corrected)]


def anova_oneway(groups: Sequence[Sequence[float] | np.ndarray]) -> StatResult:
    """One-way ANOVA over at least two groups"""
    if len(groups) < 2:
        raise InvalidArgumentError(f"ANOVA needs at least 2 groups, got {len(groups)}")
    samples = [_samples(group, f"group {index}") for index, group in enumerate(groups)]
    if all(sample.var() == 0 for sample in samples):
        raise DegenerateInputError("All groups have zero variance")
    result = stats.f_oneway(*samples)
    return StatResult(statistic=float(result.statistic), p_value=float(result.pvalue), dof=float(len(samples) - 1))


def pearson(x: Sequence[float] | np.ndarray, y: Sequence[float] | np.ndarray) -> float:
    """The Pearson correlation coefficient"""
    sample_x, sample_y = _samples(x, "x"), _samples(y, "y")
    if sample_x.size != sample_y.size:
        raise InvalidArgumentError(f"x and y differ in length: {sample_x.size} != {sample_y.size}")
    if sample_x.std() == 0 or sample_y.std() == 0:
        raise DegenerateInputError("The correlation of a constant is undefined")
    return float(stats.pearsonr(sample_x, sample_y).statistic)


def pairwise_welch(groups: Mapping[str, Sequence[float] | np.ndarray]) -> dict[tuple[str, str], StatResult]:
    """
    Welch's t-test for every pair of groups, Bonferroni corrected over the number of pairs.
    """
    pairs = list(itertools.combinations(groups, 2))
    results = [welch_ttest(groups[first], groups[second]) for first, second in pairs]
    return dict(zip(pairs, _corrected(results)))


class RmsSegment(StrEnum):
    """
    The part of the epoch the RMS is computed on
    """

    BASELINE = "Baseline"
    WHOLE = "Whole"


@dataclass(frozen=True)
class RmsResult:
    """
    The average trial RMS of a subject. `with_replacement` is set if fewer epochs than draws were available.
    """

    rms_uV: float
    n_epochs: int
    with_replacement: bool


# pylint: disable=too-many-arguments
def trial_rms(
    epochs: Sequence[Epoch],
    segment: RmsSegment = RmsSegment.WHOLE,
    n_draws: int = 200,
    n_perm: int = 1000,
    rng: Optional[np.random.Generator] = None,
    channels: Sequence[Channel] = MODEL_CHANNELS,
) -> RmsResult:
    """
    The RMS per trial, averaged over the channels, then over `n_draws` randomly drawn trials, then over `n_perm`
    draws.
    """
    if not epochs:
        raise InvalidArgumentError("trial_rms needs at least one epoch")
    rng = rng if rng is not None else np.random.default_rng(0)
    rows = [CHANNEL_ROWS[channel] for channel in channels]
    stop = BASELINE_SAMPLES if segment == RmsSegment.BASELINE else None
    data = np.stack([epoch.data[rows, :stop] for epoch in epochs])
    per_trial = np.sqrt(np.mean(data**2, axis=-1)).mean(axis=-1)
    with_replacement = len(epochs) < n_draws
    if with_replacement:
        _logger.warning("Only %i epochs for %i draws, drawing with replacement", len(epochs), n_draws)
    draw_means = [
        per_trial[rng.choice(per_trial.size, size=n_draws, replace=with_replacement)].mean() for _ in range(n_perm)
    ]
    return RmsResult(rms_uV=float(np.mean(draw_means)), n_epochs=len(epochs), with_replacement=with_replacement)


def welch_psd(
    signal: np.ndarray,
    fs: float = SAMPLING_RATE_HZ,
    seg: int = PSD_SEGMENT,
    overlap: int = PSD_OVERLAP,
    nfft: int = PSD_NFFT,
) -> tuple[FloatArray, FloatArray]:
    """
    Hann windowed averaged periodogram along the last axis, one sided power density in µV²/Hz.
    """
    signal = np.asarray(signal, dtype=np.float64)
    if signal.shape[-1] < seg:
        raise InvalidArgumentError(f"welch_psd needs at least {seg} samples, got {signal.shape[-1]}")
    freqs, power = sp_signal.welch(
        signal,
        fs=fs,
        window="hann",
        nperseg=seg,
        noverlap=overlap,
        nfft=nfft,
        detrend="constant",
        scaling="density",
        average="mean",
        axis=-1,
    )
    return freqs, np.maximum(power, 0.0)


@dataclass(frozen=True)
class ErpStats:
    """
    Peak statistics of one trial on one channel within the ERP window.
    """

    peak_amp_uV: float
    p2p_uV: float
    peak_latency_ms: float


def erp_window_indices(window_ms: tuple[float, float] = ERP_WINDOW_MS) -> tuple[int, int]:
    """The epoch indices [first, last + 1) of the ERP window, both ends included"""
    return ms_to_epoch_index(window_ms[0]), ms_to_epoch_index(window_ms[1]) + 1


def erp_stats(epochs: Sequence[Epoch], channel: Channel = Channel.PZ) -> list[ErpStats]:
    """Per trial peak amplitude, peak-to-peak amplitude and peak latency"""
    lo, hi = erp_window_indices()
    results = []
    for epoch in epochs:
        window = epoch.data[CHANNEL_ROWS[channel], lo:hi]
        i_max = int(np.argmax(window))
        results.append(
            ErpStats(
                peak_amp_uV=float(window[i_max]),
                p2p_uV=float(window.max() - window.min()),
                peak_latency_ms=ERP_WINDOW_MS[0] + SAMPLE_PERIOD_MS * i_max,
            )
        )
    return results


@dataclass(frozen=True)
class ErpSummary:
    """
    Median ERP statistics of the target trials of a subject
    """

    peak_amp_uV: float
    p2p_uV: float
    peak_latency_ms: float
    n_trials: int


def summarize_erp(epochs: Sequence[Epoch], channel: Channel = Channel.PZ) -> ErpSummary:
    """Medians of the per trial statistics of the target epochs"""
    targets = erp_stats([epoch for epoch in epochs if epoch.is_target], channel)
    if not targets:
        raise InvalidArgumentError("No target epochs to summarize")
    return ErpSummary(
        peak_amp_uV=float(np.median([item.peak_amp_uV for item in targets])),
        p2p_uV=float(np.median([item.p2p_uV for item in targets])),
        peak_latency_ms=float(np.median([item.peak_latency_ms for item in targets])),
        n_trials=len(targets),
    )


def subject_median_waveform(epochs: Sequence[Epoch]) -> FloatArray:
    """The median over the trials of a subject, shape (channels, samples)"""
    if not epochs:
        raise InvalidArgumentError("No epochs to average")
    return np.median(np.stack([epoch.data for epoch in epochs]), axis=0)


def median_grand_average(per_subject: Sequence[np.ndarray]) -> FloatArray:
    """The median across the subjects' median waveforms"""
    if len(per_subject) == 0:
        raise InvalidArgumentError("No subjects to average")
    return np.median(np.stack([np.asarray(waveform, dtype=np.float64) for waveform in per_subject]), axis=0)


def compare_target_nontarget(epochs: Sequence[Epoch], channel: Channel = Channel.PZ) -> dict[str, StatResult]:
    """
    Welch's t-tests of the peak and peak-to-peak amplitudes between target and non-target trials.
    """
    targets = erp_stats([epoch for epoch in epochs if epoch.is_target], channel)
    non_targets = erp_stats([epoch for epoch in epochs if not epoch.is_target], channel)
    return {
        "peak": welch_ttest([item.peak_amp_uV for item in targets], [item.peak_amp_uV for item in non_targets]),
        "p2p": welch_ttest([item.p2p_uV for item in targets], [item.p2p_uV for item in non_targets]),
    }


@dataclass(frozen=True)
class BinResult:
    """
    The test of one bin, a time range in ms or a frequency in Hz.
    """

    start: float
    stop: float
    result: StatResult


def waveform_significance(
    a: np.ndarray,
    b: np.ndarray,
    bin_ms: float = 10.0,
    span_ms: tuple[float, float] = (0.0, 700.0),
) -> list[BinResult]:
    """
    Compares two sets of single channel epochs (n, 400) bin by bin: the mean amplitude of each bin is tested with
    Welch's t-test, Bonferroni corrected over the bins.
    """
    a, b = np.atleast_2d(a), np.atleast_2d(b)
    bin_samples = int(round(bin_ms / SAMPLE_PERIOD_MS))
    lo, hi = ms_to_epoch_index(span_ms[0]), ms_to_epoch_index(span_ms[1])
    if bin_samples < 1 or (hi - lo) % bin_samples != 0:
        raise InvalidArgumentError(f"{span_ms} ms can't be split into {bin_ms} ms bins")
    bins: list[tuple[float, float]] = []
    results: list[StatResult] = []
    for start in range(lo, hi, bin_samples):
        bin_start = span_ms[0] + (start - lo) * SAMPLE_PERIOD_MS
        bins.append((bin_start, bin_start + bin_samples * SAMPLE_PERIOD_MS))
        results.append(
            welch_ttest(a[:, start : start + bin_samples].mean(axis=1), b[:, start : start + bin_samples].mean(axis=1))
        )
    return [BinResult(start, stop, result) for (start, stop), result in zip(bins, _corrected(results))]


def psd_condition_comparison(
    psd_a: np.ndarray, psd_b: np.ndarray, freqs: np.ndarray, fmax: float = 20.0
) -> list[BinResult]:
    """
    Compares two sets of power spectra (n, n_freqs) per frequency bin up to `fmax`, Bonferroni corrected over the
    tested bins.
    """
    psd_a, psd_b = np.atleast_2d(psd_a), np.atleast_2d(psd_b)
    selected = np.flatnonzero(np.asarray(freqs) <= fmax)
    resolution = float(freqs[1] - freqs[0]) if len(freqs) > 1 else 0.0
    results = [welch_ttest(psd_a[:, index], psd_b[:, index]) for index in selected]
    return [
        BinResult(float(freqs[index]), float(freqs[index]) + resolution, result)
        for index, result in zip(selected, _corrected(results))
    ]


def amplitude_accuracy_correlation(
    summaries: Mapping[str, ErpSummary], accuracy_by_subject: Mapping[str, float]
) -> dict[str, float]:
    """
    Pearson correlation between the subjects' run accuracy and their peak-to-peak amplitude, peak amplitude and peak
    latency.
    """
    subjects = sorted(set(summaries) & set(accuracy_by_subject))
    accuracy = [accuracy_by_subject[subject] for subject in subjects]
    return {
        "p2p": pearson([summaries[subject].p2p_uV for subject in subjects], accuracy),
        "peak": pearson([summaries[subject].peak_amp_uV for subject in subjects], accuracy),
        "latency": pearson([summaries[subject].peak_latency_ms for subject in subjects], accuracy),
    }
