import csv
import json
from pathlib import Path

import numpy as np
import pytest
from scipy import stats

from erpdecoder.core import EPOCH_SAMPLES, Channel, Condition, QualityFlag, SessionSpec, kept_epochs, ms_to_epoch_index
from erpdecoder.errors import DegenerateInputError, InvalidArgumentError
from erpdecoder.preprocess import preprocess_recording
from erpdecoder.quality import (
    ErpSummary,
    RmsSegment,
    amplitude_accuracy_correlation,
    anova_oneway,
    bonferroni,
    compare_target_nontarget,
    erp_stats,
    erp_window_indices,
    median_grand_average,
    pairwise_welch,
    pearson,
    psd_condition_comparison,
    subject_median_waveform,
    summarize_erp,
    trial_rms,
    waveform_significance,
    welch_psd,
    welch_ttest,
)
from erpdecoder.report import subject_quality, write_quality_report
from erpdecoder.stream import IN_LAB_LOSS
from erpdecoder.synthgen import SubjectGroup, SubjectModel, default_roster, synthesize_recording
from unittests.helpers import make_epoch, make_run


def _peaked_epoch(peak_ms: float, peak: float, trough_ms: float, trough: float, target: bool = True):
    data = np.zeros((3, EPOCH_SAMPLES))
    data[1, ms_to_epoch_index(peak_ms)] = peak
    data[1, ms_to_epoch_index(trough_ms)] = trough
    return make_epoch(icon=1, target=target, data=data)


def _permutation_p_value(groups: np.ndarray, n_draws: int = 1_000_000, chunk: int = 20_000) -> float:
    """
    The share of random relabelings of the pooled values whose between group sum of squares reaches the observed one.
    With groups of equal size both |t| and F grow with that sum.
    """
    n_groups, size = groups.shape
    pooled = groups.ravel()

    def between(values: np.ndarray) -> np.ndarray:
        means = values.reshape(values.shape[0], n_groups, size).mean(axis=2)
        return ((means - pooled.mean()) ** 2).sum(axis=1)

    observed = between(pooled[None, :])[0]
    rng = np.random.default_rng(0)
    n_extreme = 0
    for _ in range(n_draws // chunk):
        relabeled = rng.permuted(np.tile(pooled, (chunk, 1)), axis=1)
        n_extreme += int(np.count_nonzero(between(relabeled) >= observed * (1 - 1e-12)))
    return n_extreme / n_draws


class TestTests:
    def test_welch_matches_scipy(self):
        a, b = [1.0, 2.0, 3.0, 4.0], [2.0, 4.0, 6.0, 8.0, 10.0]
        result = welch_ttest(a, b)
        reference = stats.ttest_ind(a, b, equal_var=False)
        assert result.statistic == pytest.approx(reference.statistic)
        assert result.p_value == pytest.approx(reference.pvalue)
        var_a, var_b = np.var(a, ddof=1) / 4, np.var(b, ddof=1) / 5
        expected_dof = (var_a + var_b) ** 2 / (var_a**2 / 3 + var_b**2 / 4)
        assert result.dof == pytest.approx(expected_dof)
        assert not result.corrected

    @pytest.mark.parametrize(
        ["a", "b", "error"],
        [
            pytest.param([1.0, 1.0], [2.0, 2.0], DegenerateInputError, id="zero variance"),
            pytest.param([1.0], [2.0, 3.0], InvalidArgumentError, id="single sample"),
            pytest.param([1.0, np.nan], [2.0, 3.0], DegenerateInputError, id="nan"),
        ],
    )
    def test_welch_invalid(self, a: list, b: list, error: type):
        with pytest.raises(error):
            welch_ttest(a, b)

    def test_bonferroni(self):
        assert bonferroni([0.01, 0.3, 0.6]).tolist() == pytest.approx([0.03, 0.9, 1.0])
        assert bonferroni([0.01], m=10).tolist() == pytest.approx([0.1])
        with pytest.raises(InvalidArgumentError):
            bonferroni([0.5], m=0)

    def test_anova(self):
        groups = [[1.0, 2.0, 3.0], [2.0, 3.0, 4.5], [6.0, 7.0, 9.0]]
        result = anova_oneway(groups)
        reference = stats.f_oneway(*groups)
        assert result.statistic == pytest.approx(reference.statistic)
        assert result.p_value == pytest.approx(reference.pvalue)
        assert result.dof == 2
        with pytest.raises(InvalidArgumentError):
            anova_oneway(groups[:1])

    def test_pearson(self):
        assert pearson([1, 2, 3, 4], [2, 4, 6, 8]) == pytest.approx(1.0)
        assert pearson([1, 2, 3, 4], [4, 3, 2, 1]) == pytest.approx(-1.0)
        with pytest.raises(DegenerateInputError):
            pearson([1, 2, 3], [5, 5, 5])
        with pytest.raises(InvalidArgumentError):
            pearson([1, 2, 3], [1, 2])

    def test_pairwise(self):
        groups = {"Forest": [0.5, 0.6, 0.7], "Cnn": [0.8, 0.9, 0.85], "Other": [0.1, 0.3, 0.2]}
        results = pairwise_welch(groups)
        assert list(results) == [("Forest", "Cnn"), ("Forest", "Other"), ("Cnn", "Other")]
        uncorrected = welch_ttest(groups["Forest"], groups["Cnn"]).p_value
        assert results[("Forest", "Cnn")].p_value == pytest.approx(min(1.0, 3 * uncorrected))
        assert all(result.corrected for result in results.values())


@pytest.mark.slow
class TestPermutationOracle:
    @pytest.mark.parametrize(
        ["seed", "shift"],
        [pytest.param(11, 0.0, id="no effect"), pytest.param(12, 0.3, id="small"), pytest.param(13, 0.6, id="medium")],
    )
    def test_welch(self, seed: int, shift: float):
        groups = np.random.default_rng(seed).normal(size=(2, 50)) + np.array([[0.0], [shift]])
        assert welch_ttest(groups[0], groups[1]).p_value == pytest.approx(_permutation_p_value(groups), abs=0.01)

    @pytest.mark.parametrize(
        ["seed", "shifts"],
        [
            pytest.param(21, (0.0, 0.0, 0.0), id="no effect"),
            pytest.param(22, (0.0, 0.2, 0.4), id="graded"),
            pytest.param(23, (0.0, 0.0, 0.6), id="one apart"),
        ],
    )
    def test_anova(self, seed: int, shifts: tuple[float, float, float]):
        groups = np.random.default_rng(seed).normal(size=(3, 40)) + np.array(shifts)[:, None]
        assert anova_oneway(list(groups)).p_value == pytest.approx(_permutation_p_value(groups), abs=0.01)


class TestSignalQuality:
    def test_rms_of_a_constant(self):
        data = np.full((3, EPOCH_SAMPLES), 2.0)
        data[2] = 100.0
        epochs = [make_epoch(index, data=data) for index in range(4)]
        result = trial_rms(epochs, n_draws=2, n_perm=5)
        assert result.rms_uV == pytest.approx(2.0)
        assert not result.with_replacement
        assert trial_rms(epochs, n_draws=10, n_perm=5).with_replacement

    def test_rms_segments(self):
        data = np.zeros((3, EPOCH_SAMPLES))
        data[:2, 50:] = 3.0
        epochs = [make_epoch(data=data)]
        assert trial_rms(epochs, RmsSegment.BASELINE, n_draws=1, n_perm=2).rms_uV == 0.0
        whole = trial_rms(epochs, RmsSegment.WHOLE, n_draws=1, n_perm=2)
        assert whole.rms_uV == pytest.approx(3.0 * np.sqrt(350 / 400))
        with pytest.raises(InvalidArgumentError):
            trial_rms([])

    def test_psd_of_a_sine(self):
        times = np.arange(4000) / 500
        freqs, power = welch_psd(3.0 * np.sin(2 * np.pi * 10.0 * times))
        assert freqs.size == 513
        assert freqs[np.argmax(power)] == pytest.approx(10.0, abs=0.5)
        assert np.sum(power) * (freqs[1] - freqs[0]) == pytest.approx(4.5, rel=0.05)

    def test_psd_too_short(self):
        with pytest.raises(InvalidArgumentError):
            welch_psd(np.zeros(255))

    def test_psd_of_white_noise(self):
        noise = np.random.default_rng(0).normal(0.0, 2.0, size=(100, 4000))
        freqs, power = welch_psd(noise)
        mean_power = power.mean(axis=0)
        band = (freqs >= 1.0) & (freqs <= 30.0)
        assert mean_power[band].max() / mean_power[band].min() < 3
        resolution = freqs[1] - freqs[0]
        assert np.sum(mean_power) * resolution == pytest.approx(noise.var(axis=1).mean(), rel=0.05)


class TestErp:
    def test_window(self):
        assert erp_window_indices() == (175, 316)

    def test_stats(self):
        (result,) = erp_stats([_peaked_epoch(400, 10.0, 300, -5.0)])
        assert result.peak_amp_uV == 10.0
        assert result.p2p_uV == 15.0
        assert result.peak_latency_ms == 400.0

    def test_outside_the_window(self):
        (result,) = erp_stats([_peaked_epoch(150, 40.0, 600, -40.0)])
        assert result.peak_amp_uV == 0.0
        assert result.p2p_uV == 0.0

    def test_summary(self):
        epochs = [
            _peaked_epoch(300, 4.0, 450, -1.0),
            _peaked_epoch(400, 10.0, 450, -1.0),
            _peaked_epoch(500, 6.0, 450, -1.0),
            _peaked_epoch(400, 99.0, 450, -1.0, target=False),
        ]
        summary = summarize_erp(epochs)
        assert summary == ErpSummary(peak_amp_uV=6.0, p2p_uV=7.0, peak_latency_ms=400.0, n_trials=3)
        with pytest.raises(InvalidArgumentError):
            summarize_erp(epochs[3:])

    def test_target_vs_non_target(self):
        epochs = [epoch for run in range(4) for epoch in make_run(run, run, np.random.default_rng(run))]
        comparison = compare_target_nontarget(epochs)
        assert comparison["peak"].statistic > 0
        assert comparison["peak"].p_value < 0.01

    def test_medians(self):
        epochs = [make_epoch(data=np.full((3, EPOCH_SAMPLES), value)) for value in (1.0, 2.0, 10.0)]
        waveform = subject_median_waveform(epochs)
        assert waveform.shape == (3, EPOCH_SAMPLES)
        assert np.all(waveform == 2.0)
        assert median_grand_average([np.zeros(4), np.ones(4), np.full(4, 5.0)]).tolist() == [1.0] * 4
        with pytest.raises(InvalidArgumentError):
            median_grand_average([])

    def test_waveform_significance(self):
        rng = np.random.default_rng(0)
        a = rng.normal(0.0, 1.0, size=(30, EPOCH_SAMPLES))
        b = rng.normal(0.0, 1.0, size=(30, EPOCH_SAMPLES))
        a[:, ms_to_epoch_index(400) : ms_to_epoch_index(420)] += 5.0
        bins = waveform_significance(a, b)
        assert len(bins) == 70
        significant = [item.start for item in bins if item.result.p_value < 0.05]
        assert {400.0, 410.0} <= set(significant)
        with pytest.raises(InvalidArgumentError):
            waveform_significance(a, b, bin_ms=6.0)

    def test_psd_comparison(self):
        rng = np.random.default_rng(1)
        freqs = np.arange(0, 250.5, 0.5)
        bins = psd_condition_comparison(rng.random((5, freqs.size)), rng.random((5, freqs.size)), freqs)
        assert len(bins) == 41
        assert bins[-1].start == 20.0
        assert bins[-1].stop == 20.5
        assert all(item.result.corrected for item in bins)

    def test_correlation(self):
        summaries = {
            "s001": ErpSummary(peak_amp_uV=4.0, p2p_uV=6.0, peak_latency_ms=500.0, n_trials=30),
            "s002": ErpSummary(peak_amp_uV=8.0, p2p_uV=10.0, peak_latency_ms=450.0, n_trials=30),
            "s003": ErpSummary(peak_amp_uV=12.0, p2p_uV=14.0, peak_latency_ms=400.0, n_trials=30),
        }
        correlations = amplitude_accuracy_correlation(summaries, {"s001": 0.4, "s002": 0.6, "s003": 0.8, "s004": 1})
        assert correlations["p2p"] == pytest.approx(1.0)
        assert correlations["peak"] == pytest.approx(1.0)
        assert correlations["latency"] == pytest.approx(-1.0)


@pytest.mark.slow
class TestCanonicalSubjects:
    @pytest.mark.parametrize(
        "subject",
        [
            pytest.param(subject, id=subject.subject_id)
            for subject in default_roster()
            if subject.group == SubjectGroup.CANONICAL_ERP
        ],
    )
    def test_targets_stand_out(self, subject: SubjectModel):
        recording = synthesize_recording(
            SessionSpec.in_lab(seed=41), subject, IN_LAB_LOSS, np.random.default_rng(41), "lab1"
        )
        comparison = compare_target_nontarget(kept_epochs(preprocess_recording(recording).epochs))
        assert comparison["peak"].p_value < 0.05
        assert comparison["p2p"].p_value < 0.05


class TestReport:
    def test_subject_quality(self):
        epochs = make_run(0, 2, np.random.default_rng(3), target_amplitude=20.0)
        epochs[0] = epochs[0].with_quality(QualityFlag.REJECTED_AMPLITUDE)
        quality = subject_quality("s001", Condition.IN_CAR, epochs, np.random.default_rng(0))
        assert quality.n_epochs == 17
        assert quality.rms_with_replacement
        assert quality.peak_latency_ms is not None
        assert 250.0 <= quality.peak_latency_ms <= 530.0

    def test_without_targets(self):
        epochs = [epoch for epoch in make_run(0, 2, np.random.default_rng(3)) if not epoch.is_target]
        quality = subject_quality("s001", Condition.IN_LAB, epochs, np.random.default_rng(0))
        assert quality.p2p_uV is None
        assert quality.target_vs_non_target_p_peak is None

    def test_write(self, tmp_path: Path):
        rng = np.random.default_rng(4)
        sessions = {
            subject: {
                Condition.IN_LAB: make_run(0, 1, rng, subject=subject, session="lab1", target_amplitude=amplitude),
                Condition.IN_CAR: make_run(0, 3, rng, subject=subject, session="car1"),
            }
            for subject, amplitude in (("s001", 6.0), ("s002", 12.0))
        }
        report = write_quality_report(sessions, tmp_path / "quality", {"s001": 0.5, "s002": 0.9})
        directory = tmp_path / "quality"
        assert len(report.subjects) == 4
        assert [(q.subject_id, q.condition) for q in report.subjects] == [
            ("s001", Condition.IN_LAB),
            ("s001", Condition.IN_CAR),
            ("s002", Condition.IN_LAB),
            ("s002", Condition.IN_CAR),
        ]
        with open(directory / "rms.csv", newline="", encoding="utf-8") as csv_file:
            assert len(list(csv.reader(csv_file))) == 5
        with open(directory / "grand_average.csv", newline="", encoding="utf-8") as csv_file:
            rows = list(csv.reader(csv_file))
        assert rows[0] == ["time_ms", "InLab_target", "InLab_non_target", "InCar_target", "InCar_non_target"]
        assert len(rows) == EPOCH_SAMPLES + 1
        assert float(rows[1][0]) == -100.0
        assert (directory / "psd.csv").is_file()
        assert len((directory / "correlation.csv").read_text(encoding="utf-8").splitlines()) == 3
        document = json.loads((directory / "quality.json").read_text(encoding="utf-8"))
        assert len(document["subjects"]) == 4

    def test_single_channel(self, tmp_path: Path):
        sessions = {"s001": {Condition.IN_LAB: make_run(0, 1, np.random.default_rng(5))}}
        report = write_quality_report(sessions, tmp_path, channel=Channel.CZ)
        assert report.psd_significant_hz == ()
        assert report.correlations == {}
        assert not (tmp_path / "correlation.csv").exists()
