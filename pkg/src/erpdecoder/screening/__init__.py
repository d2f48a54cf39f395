"""
A small framework to screen items (e.g. epochs) with typed check functions. Checks take their parameters from
attribute paths of the item and from bound constants, can depend on each other and collect their rejections per item.
"""

from .check import EpochCheck, MappedCheck
from .handler import ScreeningMode, TrialRejection
from .manager import ScreeningManager
from .path_map import PathMappedCheck
from .query import required_field
from .result import ScreeningResult
