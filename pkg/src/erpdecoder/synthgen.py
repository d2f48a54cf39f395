"""
Contains the generator of synthetic oddball sessions: coloured background noise with condition dependent spectra,
ERP responses parameterized per synthetic subject and ocular artifacts.
"""

import logging
from enum import StrEnum
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, TypeAdapter, computed_field, model_validator

from .core import (
    BASELINE_SAMPLES,
    CHANNEL_ROWS,
    EPOCH_SAMPLES,
    N_ICONS,
    SAMPLING_RATE_HZ,
    Channel,
    Condition,
    SessionSpec,
    TrialKind,
    TrialLabel,
    block_randomized_order,
    epoch_times_ms,
)
from .errors import InvalidArgumentError
from .stream.acquisition import LossModel, MarkerEvent, draw_presentation_delays, transmit
from .stream.container import Recording, RecordingHeader
from .types import FloatArray

_logger = logging.getLogger("erpdecoder.synthgen")

PZ_GAIN = 1.0
CZ_GAIN = 0.9
N1_OFFSET_MS = 150.0
LEAD_IN_SAMPLES = 3 * SAMPLING_RATE_HZ
TAIL_SAMPLES = 3 * SAMPLING_RATE_HZ
MIN_NOISE_SAMPLES = 256
BLINK_AMPLITUDE_RANGE_UV = (150.0, 400.0)
BLINK_SCALP_SCALE = 0.1
OCULAR_LATENCY_MS = 500.0
OCULAR_WIDTH_MS = 120.0
OCULAR_SCALP_SCALE = 0.3


class SubjectGroup(StrEnum):
    """
    The archetypes of the synthetic subjects
    """

    OCULAR_CONTAMINATED = "OcularContaminated"
    CANONICAL_ERP = "CanonicalERP"
    AMBIGUOUS = "Ambiguous"


class NoiseProfile(BaseModel):
    """
    The spectral shape of the background EEG: 1/f^pink_exponent with a Gaussian alpha peak and a raised theta band.
    Gains are multipliers of the power spectral density. The noise is scaled to `broadband_rms_uV` exactly.
    """

    model_config = ConfigDict(frozen=True)

    condition: Condition
    pink_exponent: float = Field(default=1.0, ge=0)
    floor_hz: float = Field(default=0.5, gt=0)
    alpha_center_hz: float = 10.0
    alpha_width_hz: float = Field(default=1.5, gt=0)
    alpha_gain: float = Field(default=5.0, ge=0)
    theta_band_hz: tuple[float, float] = (3.0, 6.3)
    theta_gain: float = Field(default=1.0, ge=0)
    broadband_rms_uV: float = Field(default=10.0, gt=0)

    @model_validator(mode="after")
    def _check_condition(self) -> "NoiseProfile":
        if self.condition == Condition.IN_LAB and self.alpha_gain <= 1:
            raise ValueError("The in-lab profile needs an alpha peak (alpha_gain > 1)")
        return self

    def power_shape(self, freqs: FloatArray) -> FloatArray:
        """The unnormalized power spectral density at the given frequencies"""
        shape = 1.0 / np.maximum(freqs, self.floor_hz) ** self.pink_exponent
        alpha = np.exp(-((freqs - self.alpha_center_hz) ** 2) / (2 * self.alpha_width_hz**2))
        shape *= 1.0 + (self.alpha_gain - 1.0) * alpha
        in_theta = (freqs >= self.theta_band_hz[0]) & (freqs <= self.theta_band_hz[1])
        shape *= np.where(in_theta, self.theta_gain, 1.0)
        return shape


# pylint: disable=too-many-instance-attributes
class SubjectModel(BaseModel):
    """
    The generative parameters of a synthetic subject. Amplitudes in µV, times in ms.
    """

    model_config = ConfigDict(frozen=True)

    subject_id: str
    group: SubjectGroup
    p300_peak_uV: float = Field(ge=0)
    p300_latency_ms: float
    p300_width_ms: float = Field(default=60.0, gt=0)
    n1_dip_uV: float = Field(ge=0)
    noise_rms_uV: float = Field(default=10.0, gt=0)
    alpha_power_gain: float = Field(default=5.0, ge=0)
    theta_gain_in_car: float = Field(default=3.0, ge=0)
    in_car_noise_factor: float = Field(default=1.15, ge=0)
    blink_rate_hz: float = Field(default=0.07, ge=0)
    latency_jitter_ms_sd: float = Field(default=25.0, ge=0)
    amplitude_jitter_frac: float = Field(default=0.2, ge=0)
    non_target_gain: float = Field(default=0.15, ge=0)
    ocular_deflection_uV: float = Field(default=0.0, ge=0)
    """Amplitude on Fp1 of the slow eye movement following targets (ocular subjects only)"""

    @computed_field  # type: ignore[prop-decorator]
    @property
    def peak_to_peak_uV(self) -> float:
        """Nominal distance between the N1 dip and the P300 peak"""
        return self.p300_peak_uV + self.n1_dip_uV

    @model_validator(mode="after")
    def _check_group(self) -> "SubjectModel":
        if self.group == SubjectGroup.CANONICAL_ERP and not 250 <= self.p300_latency_ms <= 530:
            raise ValueError(f"A canonical subject peaks within [250, 530] ms, got {self.p300_latency_ms}")
        return self

    def noise_profile(self, condition: Condition) -> NoiseProfile:
        """The background noise of this subject in the given condition"""
        if condition == Condition.IN_LAB:
            return NoiseProfile(
                condition=condition, alpha_gain=self.alpha_power_gain, broadband_rms_uV=self.noise_rms_uV
            )
        return NoiseProfile(
            condition=condition,
            alpha_gain=1.0 + (self.alpha_power_gain - 1.0) / 2,
            theta_gain=self.theta_gain_in_car,
            broadband_rms_uV=self.noise_rms_uV * self.in_car_noise_factor,
        )

    def without_jitter(self) -> "SubjectModel":
        """A copy with deterministic ERP shape"""
        return self.model_copy(update={"latency_jitter_ms_sd": 0.0, "amplitude_jitter_frac": 0.0})


def _canonical(subject_id: str, peak: float, latency: float) -> SubjectModel:
    return SubjectModel(
        subject_id=subject_id,
        group=SubjectGroup.CANONICAL_ERP,
        p300_peak_uV=peak,
        p300_latency_ms=latency,
        n1_dip_uV=0.3 * peak,
    )


def _ocular(subject_id: str) -> SubjectModel:
    return SubjectModel(
        subject_id=subject_id,
        group=SubjectGroup.OCULAR_CONTAMINATED,
        p300_peak_uV=9.0,
        p300_latency_ms=450.0,
        n1_dip_uV=2.7,
        blink_rate_hz=0.09,
        ocular_deflection_uV=45.0,
    )


def _ambiguous(subject_id: str, peak: float, latency: float) -> SubjectModel:
    return SubjectModel(
        subject_id=subject_id,
        group=SubjectGroup.AMBIGUOUS,
        p300_peak_uV=peak,
        p300_latency_ms=latency,
        p300_width_ms=90.0,
        n1_dip_uV=0.3 * peak,
        latency_jitter_ms_sd=45.0,
        amplitude_jitter_frac=0.35,
    )


def default_roster() -> tuple[SubjectModel, ...]:
    """
    Ten synthetic subjects: two with ocular contamination, five with canonical ERPs of graded amplitude (larger peaks
    come earlier) and three with weak, smeared responses.
    """
    return (
        _ocular("s001"),
        _ambiguous("s002", 4.5, 470.0),
        _canonical("s003", 8.0, 450.0),
        _canonical("s004", 5.0, 500.0),
        _ambiguous("s005", 5.0, 430.0),
        _canonical("s006", 10.5, 420.0),
        _canonical("s007", 12.0, 400.0),
        _canonical("s008", 6.5, 480.0),
        _ambiguous("s009", 4.0, 500.0),
        _ocular("s010"),
    )


_ROSTER_ADAPTER = TypeAdapter(list[SubjectModel])


def write_roster(path: Path, roster: Sequence[SubjectModel]) -> Path:
    """Writes the roster as JSON array"""
    path = Path(path)
    path.write_bytes(_ROSTER_ADAPTER.dump_json(list(roster), indent=2))
    return path


def read_roster(path: Path) -> tuple[SubjectModel, ...]:
    """Reads a JSON array of subject models"""
    return tuple(_ROSTER_ADAPTER.validate_json(Path(path).read_bytes()))


def _gaussian(times_ms: FloatArray, center_ms: float, width_ms: float) -> FloatArray:
    return np.exp(-((times_ms - center_ms) ** 2) / (2 * width_ms**2))


def erp_template(subject: SubjectModel, label: TrialLabel, rng: np.random.Generator) -> FloatArray:
    """
    Returns the evoked response of one trial on [-100, 700) ms as (2, 400) array with the rows Cz and Pz:
    a positive Gaussian at the (jittered) P300 latency preceded by a negative dip 150 ms earlier. Non-targets get an
    attenuated copy.
    """
    latency_jitter = rng.normal(0.0, 1.0) * subject.latency_jitter_ms_sd
    amplitude_factor = 1.0 + rng.normal(0.0, 1.0) * subject.amplitude_jitter_frac
    gain = 1.0 if label.kind == TrialKind.TARGET else subject.non_target_gain
    latency = subject.p300_latency_ms + latency_jitter
    times = epoch_times_ms()
    waveform = gain * amplitude_factor * (
        subject.p300_peak_uV * _gaussian(times, latency, subject.p300_width_ms)
        - subject.n1_dip_uV * _gaussian(times, latency - N1_OFFSET_MS, subject.p300_width_ms / 2)
    )
    return np.stack((CZ_GAIN * waveform, PZ_GAIN * waveform))


def background_noise(profile: NoiseProfile, n_samples: int, rng: np.random.Generator) -> FloatArray:
    """
    Returns (3, n_samples) independent noise channels shaped in the frequency domain by the profile. Every channel
    has exactly the broadband RMS of the profile.
    """
    if n_samples < MIN_NOISE_SAMPLES:
        raise InvalidArgumentError(f"Need at least {MIN_NOISE_SAMPLES} samples, got {n_samples}")
    freqs = np.fft.rfftfreq(n_samples, d=1 / SAMPLING_RATE_HZ)
    amplitude = np.sqrt(profile.power_shape(freqs))
    amplitude[0] = 0.0
    n_channels = len(CHANNEL_ROWS)
    spectrum = amplitude * (
        rng.standard_normal((n_channels, freqs.size)) + 1j * rng.standard_normal((n_channels, freqs.size))
    )
    noise = np.fft.irfft(spectrum, n=n_samples, axis=-1)
    noise -= noise.mean(axis=1, keepdims=True)
    noise *= profile.broadband_rms_uV / np.sqrt(np.mean(noise**2, axis=1, keepdims=True))
    return noise


def _add_transient(stream: FloatArray, center: float, width_samples: float, amplitudes: FloatArray):
    """Adds amplitudes[c] * shape to channel c, shape is a Gaussian cut at ±4 widths"""
    lo = max(0, int(np.floor(center - 4 * width_samples)))
    hi = min(stream.shape[1], int(np.ceil(center + 4 * width_samples)) + 1)
    if lo >= hi:
        return
    shape = np.exp(-((np.arange(lo, hi) - center) ** 2) / (2 * width_samples**2))
    stream[:, lo:hi] += amplitudes[:, None] * shape


def inject_artifacts(
    stream: FloatArray, subject: SubjectModel, markers: Sequence[MarkerEvent], rng: np.random.Generator
) -> FloatArray:
    """
    Returns a copy of the stream with blinks at Poisson times (biphasic, 150-400 µV on Fp1, a tenth of it on Cz and
    Pz). For ocular subjects a slow eye movement follows every target appearance. Without blinks and without ocular
    contamination the copy equals the input.
    """
    output = stream.copy()
    fp1 = CHANNEL_ROWS[Channel.FP1]
    scalp_scale = np.full(len(CHANNEL_ROWS), BLINK_SCALP_SCALE)
    scalp_scale[fp1] = 1.0
    if subject.blink_rate_hz > 0:
        duration_s = stream.shape[1] / SAMPLING_RATE_HZ
        n_blinks = rng.poisson(subject.blink_rate_hz * duration_s)
        centers = rng.uniform(0, stream.shape[1], n_blinks)
        amplitudes = rng.uniform(*BLINK_AMPLITUDE_RANGE_UV, n_blinks)
        for center, amplitude in zip(centers, amplitudes):
            _add_transient(output, center, 25.0, amplitude * scalp_scale)
            _add_transient(output, center + 90.0, 40.0, -0.25 * amplitude * scalp_scale)
    if subject.group == SubjectGroup.OCULAR_CONTAMINATED and subject.ocular_deflection_uV > 0:
        ocular_scale = np.full(len(CHANNEL_ROWS), OCULAR_SCALP_SCALE)
        ocular_scale[fp1] = 1.0
        for marker in markers:
            if not marker.is_target:
                continue
            amplitude = subject.ocular_deflection_uV * (1.0 + 0.2 * rng.normal())
            center = (marker.appearance_s + OCULAR_LATENCY_MS / 1000) * SAMPLING_RATE_HZ
            _add_transient(output, center, OCULAR_WIDTH_MS * SAMPLING_RATE_HZ / 1000, amplitude * ocular_scale)
    return output


def _session_layout(spec: SessionSpec, rng: np.random.Generator) -> tuple[list[tuple[int, int, int, int, bool]], int]:
    """
    Returns the trials as (onset index, run, trial index, icon, is target) and the total stream length.
    """
    trials: list[tuple[int, int, int, int, bool]] = []
    cursor = LEAD_IN_SAMPLES
    soa = spec.soa_samples
    for run in range(spec.n_runs):
        target = int(rng.integers(N_ICONS))
        order = block_randomized_order(spec.reps_per_icon, int(rng.integers(2**63)))
        for trial_index, icon in enumerate(order):
            trials.append((cursor + trial_index * soa, run, trial_index, icon.index, icon.index == target))
        cursor += len(order) * soa
        if spec.condition == Condition.IN_CAR:
            idle_s = rng.uniform(*spec.idle_s_range)
        else:
            idle_s = spec.rest_s
        if run < spec.n_runs - 1:
            cursor += int(round(idle_s * SAMPLING_RATE_HZ))
    return trials, cursor + TAIL_SAMPLES


def generate_session(
    spec: SessionSpec, subject: SubjectModel, rng: np.random.Generator
) -> tuple[FloatArray, list[MarkerEvent]]:
    """
    Generates the continuous (3, n) stream of a session and its markers. Onsets within a run are 800 ms apart,
    runs are separated by the rest (in-lab) or a self-initiation pause (in-car). The ERP of each trial is added to Cz
    and Pz at the moment the stimulus actually appeared, i.e. after the presentation delay.
    """
    trials, n_samples = _session_layout(spec, rng)
    delays = draw_presentation_delays(len(trials), rng)
    markers = [
        MarkerEvent(
            nominal_onset_s=onset / SAMPLING_RATE_HZ,
            icon=spec.icon(icon),
            is_target=is_target,
            run=run,
            trial_index=trial_index,
            repetition=trial_index // N_ICONS,
            display_delay_s=float(delay),
        )
        for (onset, run, trial_index, icon, is_target), delay in zip(trials, delays)
    ]
    stream = background_noise(subject.noise_profile(spec.condition), n_samples, rng)
    scalp_rows = [CHANNEL_ROWS[Channel.CZ], CHANNEL_ROWS[Channel.PZ]]
    for marker in markers:
        kind = TrialKind.TARGET if marker.is_target else TrialKind.NON_TARGET
        template = erp_template(subject, TrialLabel(kind, marker.icon), rng)
        start = int(round(marker.appearance_s * SAMPLING_RATE_HZ)) - BASELINE_SAMPLES
        lo, hi = max(0, start), min(n_samples, start + EPOCH_SAMPLES)
        if lo < hi:
            stream[scalp_rows, lo:hi] += template[:, lo - start : hi - start]
    stream = inject_artifacts(stream, subject, markers, rng)
    _logger.debug(
        "Generated %s session for %s: %i samples, %i markers",
        spec.condition,
        subject.subject_id,
        n_samples,
        len(markers),
    )
    return stream, markers


# pylint: disable=too-many-arguments
def synthesize_recording(
    spec: SessionSpec,
    subject: SubjectModel,
    loss_model: LossModel,
    rng: np.random.Generator,
    session_id: str,
    seed: Optional[int] = None,
) -> Recording:
    """
    Generates a session and sends it through the simulated wireless link.
    """
    stream, markers = generate_session(spec, subject, rng)
    packets, gaps = transmit(stream, loss_model, rng)
    header = RecordingHeader(
        subject_id=subject.subject_id,
        session_id=session_id,
        condition=spec.condition,
        n_samples=stream.shape[1],
        packet_size=loss_model.packet_size,
        seed=spec.seed if seed is None else seed,
        spec=spec,
    )
    return Recording(header=header, packets=tuple(packets), markers=tuple(markers), gaps=tuple(gaps))
