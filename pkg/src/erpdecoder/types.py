"""
Contains the types shared across erpdecoder
"""

from typing import Any, Callable, Protocol, TypeAlias, TypeVar

import numpy as np
import numpy.typing as npt


class Hashable(Protocol):
    """
    A protocol that defines the __hash__ method.
    """

    def __hash__(self) -> int: ...


FloatArray: TypeAlias = npt.NDArray[np.float64]
Float32Array: TypeAlias = npt.NDArray[np.float32]
IntArray: TypeAlias = npt.NDArray[np.int64]
BoolArray: TypeAlias = npt.NDArray[np.bool_]

ItemT = TypeVar("ItemT", bound=Hashable)
CheckFunction: TypeAlias = Callable[..., None]
JsonDict: TypeAlias = dict[str, Any]
