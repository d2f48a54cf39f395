"""
Contains the simulated acquisition chain: the wireless sample stream split into packets, the loss model producing
gap events and the presentation delay of the stimulus markers.
"""

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import truncnorm

from ..core import SAMPLING_RATE_HZ, IconId
from ..errors import InvalidArgumentError
from ..types import Float32Array, FloatArray

_logger = logging.getLogger("erpdecoder.stream")

DEFAULT_PACKET_SIZE = 25
PRESENTATION_DELAY_MEAN_S = 0.030
PRESENTATION_DELAY_SD_S = 0.0027
PRESENTATION_DELAY_TRUNCATION = 3.0


@dataclass(frozen=True, eq=False)
class StreamPacket:
    """
    A block of consecutive samples, shape (N, 3) in acquisition channel order, µV as float32.
    """

    first_sample_index: int
    samples: Float32Array

    @property
    def n_samples(self) -> int:
        """Number of samples in the packet"""
        return int(self.samples.shape[0])

    @property
    def stop_index(self) -> int:
        """Index after the last sample of the packet"""
        return self.first_sample_index + self.n_samples

    @property
    def timestamp(self) -> float:
        """Time the packet is complete, i.e. the time of its last sample"""
        return (self.stop_index - 1) / SAMPLING_RATE_HZ

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, StreamPacket)
            and self.first_sample_index == other.first_sample_index
            and self.samples.dtype == other.samples.dtype
            and np.array_equal(self.samples, other.samples)
        )

    def __hash__(self) -> int:
        return hash((self.first_sample_index, self.n_samples))


# pylint: disable=too-many-instance-attributes
@dataclass(frozen=True)
class MarkerEvent:
    """
    A stimulus marker. `nominal_onset_s` is the time the stimulus was requested, the icon appears on screen after
    `display_delay_s`. The delay is only known to the generator, the analysis corrects it by a constant.
    """

    nominal_onset_s: float
    icon: IconId
    is_target: bool
    run: int
    trial_index: int = 0
    repetition: int = 0
    display_delay_s: float = 0.0

    @property
    def timestamp(self) -> float:
        """The time the marker is emitted"""
        return self.nominal_onset_s

    @property
    def appearance_s(self) -> float:
        """The time the stimulus actually appeared"""
        return self.nominal_onset_s + self.display_delay_s

    @property
    def onset_index(self) -> int:
        """The sample index of the nominal onset"""
        return int(round(self.nominal_onset_s * SAMPLING_RATE_HZ))


@dataclass(frozen=True)
class GapEvent:
    """
    A range of samples which never arrived. Gap samples are absent from the sample stream.
    """

    start_index: int
    length_samples: int

    @property
    def stop_index(self) -> int:
        """Index after the last missing sample"""
        return self.start_index + self.length_samples

    @property
    def timestamp(self) -> float:
        """The time of the first missing sample"""
        return self.start_index / SAMPLING_RATE_HZ

    def overlaps(self, start: int, stop: int) -> bool:
        """True if the gap intersects the half open range [start, stop)"""
        return self.start_index < stop and start < self.stop_index


@dataclass(frozen=True)
class LossModel:
    """
    Packet loss of the wireless link. A loss burst starts at a packet with probability `packet_loss_prob`, each
    following packet is lost as well with probability `burst_continuation_prob` (geometric burst length).
    """

    packet_loss_prob: float = 0.0
    burst_continuation_prob: float = 0.5
    packet_size: int = field(default=DEFAULT_PACKET_SIZE)

    def __post_init__(self):
        if not 0 <= self.packet_loss_prob < 1:
            raise InvalidArgumentError(f"packet_loss_prob must be in [0, 1), got {self.packet_loss_prob}")
        if not 0 <= self.burst_continuation_prob < 1:
            raise InvalidArgumentError(f"burst_continuation_prob must be in [0, 1), got {self.burst_continuation_prob}")
        if self.packet_size < 1:
            raise InvalidArgumentError(f"packet_size must be positive, got {self.packet_size}")

    @property
    def mean_burst_packets(self) -> float:
        """Expected number of packets per loss burst"""
        return 1 / (1 - self.burst_continuation_prob)


# An epoch touches 17 packets, a burst reaching into it may start up to mean_burst - 1 packets earlier. The start
# probabilities below yield the trial rejection rates caused by data loss in the lab (4.2 %) and in the car (0.81 %).
IN_LAB_LOSS = LossModel(packet_loss_prob=0.042 / 18)
IN_CAR_LOSS = LossModel(packet_loss_prob=0.0081 / 18)
NO_LOSS = LossModel()


def transmit(
    stream: FloatArray, loss_model: LossModel, rng: np.random.Generator
) -> tuple[list[StreamPacket], list[GapEvent]]:
    """
    Splits the (3, n) stream into packets and drops packets according to the loss model. Consecutive dropped packets
    form a single gap. Delivered packets and gaps exactly cover the index range [0, n).
    """
    n_samples = stream.shape[1]
    size = loss_model.packet_size
    samples32 = np.ascontiguousarray(stream.T, dtype=np.float32)
    packets: list[StreamPacket] = []
    gaps: list[GapEvent] = []
    gap_start: int | None = None
    in_burst = False
    for first in range(0, n_samples, size):
        if in_burst:
            lost = rng.random() < loss_model.burst_continuation_prob
        else:
            lost = loss_model.packet_loss_prob > 0 and rng.random() < loss_model.packet_loss_prob
        in_burst = lost
        if lost:
            if gap_start is None:
                gap_start = first
            continue
        if gap_start is not None:
            gaps.append(GapEvent(gap_start, first - gap_start))
            gap_start = None
        packets.append(StreamPacket(first, samples32[first : first + size].copy()))
    if gap_start is not None:
        gaps.append(GapEvent(gap_start, n_samples - gap_start))
    _logger.debug("Transmitted %i packets, %i gaps", len(packets), len(gaps))
    return packets, gaps


def draw_presentation_delays(n: int, rng: np.random.Generator) -> FloatArray:
    """
    Draws the delays between the stimulus request and its appearance on screen in seconds:
    N(30 ms, 2.7 ms) truncated at ±3 sd.
    """
    bound = PRESENTATION_DELAY_TRUNCATION
    return truncnorm.rvs(
        -bound, bound, loc=PRESENTATION_DELAY_MEAN_S, scale=PRESENTATION_DELAY_SD_S, size=n, random_state=rng
    ).astype(np.float64)
