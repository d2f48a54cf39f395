"""
Contains the zero phase band-pass filter.
"""

from dataclasses import dataclass

import numpy as np
from scipy.signal import butter, sosfiltfilt

from ..core import SAMPLING_RATE_HZ
from ..errors import InvalidArgumentError
from ..types import FloatArray


@dataclass(frozen=True)
class FilterSpec:
    """
    A Butterworth band-pass as cascaded second order sections, applied forward and backward (zero phase).
    """

    band_hz: tuple[float, float] = (0.1, 30.0)
    order: int = 4
    sampling_rate_hz: float = SAMPLING_RATE_HZ

    def __post_init__(self):
        low, high = self.band_hz
        if not 0 < low < high < self.sampling_rate_hz / 2:
            raise InvalidArgumentError(f"Invalid pass band {self.band_hz} Hz")
        if self.order < 1:
            raise InvalidArgumentError(f"The filter order must be positive, got {self.order}")

    def sos(self) -> FloatArray:
        """The second order sections of one pass"""
        return butter(self.order, self.band_hz, btype="bandpass", output="sos", fs=self.sampling_rate_hz)

    @property
    def min_samples(self) -> int:
        """The shortest input the filter accepts: one second"""
        return int(self.sampling_rate_hz)


def bandpass(stream: FloatArray, spec: FilterSpec = FilterSpec()) -> FloatArray:
    """
    Filters the stream along the last axis. Needs at least one second of data.
    """
    stream = np.asarray(stream, dtype=np.float64)
    if stream.shape[-1] < spec.min_samples:
        raise InvalidArgumentError(f"Need at least {spec.min_samples} samples to filter, got {stream.shape[-1]}")
    return sosfiltfilt(spec.sos(), stream, axis=-1)
