"""
Contains functionality to analyze the result of a screening run
"""

import itertools
from typing import TYPE_CHECKING, Generic, Optional

from ..types import ItemT
from .handler import RejectionHandler, TrialRejection

if TYPE_CHECKING:
    from .manager import ScreeningManager


class ScreeningResult(Generic[ItemT]):
    """
    `ScreeningManager.screen` returns an instance of this class. The properties are computed on first access only.
    Items keep their input order in every list and dict.
    """

    def __init__(self, manager: "ScreeningManager[ItemT]", handlers: dict[ItemT, RejectionHandler[ItemT]]):
        self._manager = manager
        self._handlers = handlers

        self._kept: Optional[list[ItemT]] = None
        self._rejections: Optional[dict[ItemT, list[TrialRejection]]] = None
        self._warnings: Optional[dict[ItemT, list[TrialRejection]]] = None
        self._num_rejections_per_check: Optional[dict[str, int]] = None

    def _determine_kept(self):
        """Splits the items into kept and rejected ones"""
        self._kept = []
        self._rejections = {}
        self._warnings = {}
        for item, handler in self._handlers.items():
            if len(handler.warnings) > 0:
                self._warnings[item] = list(itertools.chain.from_iterable(handler.warnings.values()))
            if len(handler.rejections) > 0:
                self._rejections[item] = list(itertools.chain.from_iterable(handler.rejections.values()))
            else:
                self._kept.append(item)

    @property
    def kept(self) -> list[ItemT]:
        """Items which passed every check"""
        if self._kept is None:
            self._determine_kept()
            assert self._kept is not None
        return self._kept

    @property
    def rejections(self) -> dict[ItemT, list[TrialRejection]]:
        """Maps rejected items to their rejections"""
        if self._rejections is None:
            self._determine_kept()
            assert self._rejections is not None
        return self._rejections

    @property
    def warnings(self) -> dict[ItemT, list[TrialRejection]]:
        """Maps items to the rejections raised by checks in warn mode"""
        if self._warnings is None:
            self._determine_kept()
            assert self._warnings is not None
        return self._warnings

    @property
    def total(self) -> int:
        """Number of screened items"""
        return len(self._handlers)

    @property
    def num_kept(self) -> int:
        """Number of items which passed every check"""
        return len(self.kept)

    @property
    def num_rejected(self) -> int:
        """Number of rejected items"""
        return len(self.rejections)

    def first_rejecting_check(self, item: ItemT) -> Optional[str]:
        """The name of the first check (in execution order) which rejected the item, None if it was kept"""
        handler = self._handlers[item]
        for mapped_check in self._manager.execution_order:
            if handler.rejected_by(mapped_check):
                return mapped_check.name
        return None

    @property
    def num_rejections_per_check(self) -> dict[str, int]:
        """Maps the check names to the number of items they rejected"""
        if self._num_rejections_per_check is None:
            counts = {mapped_check.name: 0 for mapped_check in self._manager.execution_order}
            for handler in self._handlers.values():
                for mapped_check in handler.rejections:
                    counts[mapped_check.name] += 1
            self._num_rejections_per_check = counts
        return self._num_rejections_per_check
