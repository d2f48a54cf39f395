"""
Here is the main stuff of the screening. The ScreeningManager bundles several mapped checks and screens items with
them, respecting the declared dependencies between the checks.
"""

import csv
import logging
import re
from dataclasses import dataclass
from enum import IntEnum
from io import StringIO
from typing import Generic, Iterable, Optional

import networkx as nx
from typeguard import TypeCheckError, check_type

from ..types import ItemT
from .check import CheckParameters, MappedCheck
from .handler import RejectionHandler, ScreeningMode
from .result import ScreeningResult


class _CustomRejectionIDs(IntEnum):
    PARAM_TYPE_MISMATCH = 5
    PARAM_PROVIDER_ERRORED = 1


@dataclass(frozen=True)
class _ExecutionInfo:
    """
    Contains the registration arguments of a mapped check.
    """

    depends_on: frozenset[MappedCheck]
    mode: ScreeningMode


class DependencyGraph(nx.DiGraph):
    """
    A directed graph of the check dependencies, edges point from a check to its dependencies. The registration
    only accepts already registered dependencies, so the graph has no cycles.
    """


class ScreeningManager(Generic[ItemT]):
    """
    The ScreeningManager bundles several mapped checks and screens items with them. Checks run in the order of their
    dependencies. A check is skipped for an item if one of its dependencies rejected the item, i.e. a check only sees
    the items that survived all of its dependencies.
    The ScreeningManager logs to "erpdecoder.ScreeningManager" by default, a different logger can be passed to the
    constructor.
    """

    def __init__(self, logger: Optional[logging.Logger] = None, manager_id: Optional[str] = None):
        self.manager_id = manager_id if manager_id is not None else self.__class__.__name__
        self.dependency_graph: DependencyGraph = DependencyGraph()
        self.checks: dict[MappedCheck, _ExecutionInfo] = {}
        self._logger = logger if logger is not None else logging.getLogger("erpdecoder.ScreeningManager")

    def get_csv_formatted_check_infos(
        self,
        headings: Optional[Iterable[str]] = (
            "Manager ID",
            "Check function signature",
            "Mapped fields",
            "Check doc string",
            "Mode",
        ),
    ) -> str:
        """
        Returns a csv formatted overview of the registered checks. The headings can be omitted by passing None.
        """
        output = StringIO()
        csv_writer = csv.writer(output)
        if headings is not None:
            csv_writer.writerow(headings)
        for mapped_check, execution_info in self.checks.items():
            formatted_doc_string = mapped_check.check.func.__doc__
            if formatted_doc_string:
                formatted_doc_string = re.sub(r"\n[ \t\r]*", "\\\\n", formatted_doc_string.strip())
            csv_writer.writerow(
                (
                    self.manager_id,
                    f"{mapped_check.name}{mapped_check.check.signature}",
                    str(mapped_check.provision_indicator()),
                    formatted_doc_string,
                    execution_info.mode.value,
                )
            )
        return output.getvalue()

    def register(
        self,
        mapped_check: MappedCheck,
        depends_on: Optional[set[MappedCheck]] = None,
        mode: ScreeningMode = ScreeningMode.REJECT,
    ):
        """
        Registers a mapped check. Checks listed in `depends_on` must be registered already, they will run first and
        the new check only sees the items they didn't reject.
        """
        depends_on = depends_on if depends_on is not None else set()
        for dependency in depends_on:
            if dependency not in self.checks:
                raise ValueError(f"The specified dependency is not registered: {dependency.name}")
        self.checks[mapped_check] = _ExecutionInfo(depends_on=frozenset(depends_on), mode=mode)
        self.dependency_graph.add_node(mapped_check)
        self.dependency_graph.add_edges_from((mapped_check, dependency) for dependency in depends_on)
        self._logger.debug("Registered check: %s", str(mapped_check))

    @property
    def execution_order(self) -> list[MappedCheck]:
        """The registered checks, every check after its dependencies"""
        registration_index = {mapped_check: index for index, mapped_check in enumerate(self.checks)}
        return list(
            reversed(
                list(
                    nx.lexicographical_topological_sort(
                        self.dependency_graph, key=lambda check: -registration_index[check]
                    )
                )
            )
        )

    def _params_ok(
        self,
        handler: RejectionHandler[ItemT],
        mapped_check: MappedCheck,
        params_or_exc: CheckParameters | Exception,
    ) -> bool:
        handler.current_params = params_or_exc if not isinstance(params_or_exc, Exception) else None
        mode = self.checks[mapped_check].mode
        if isinstance(params_or_exc, Exception):
            handler.catch(
                str(params_or_exc),
                params_or_exc,
                mapped_check,
                custom_rejection_id=_CustomRejectionIDs.PARAM_PROVIDER_ERRORED,
                mode=mode,
            )
            return False
        for param_name, param in params_or_exc.items():
            try:
                check_type(param.value, mapped_check.check.signature.parameters[param_name].annotation)
            except TypeCheckError as error:
                handler.catch(
                    f"{param.param_id}: {error}",
                    error,
                    mapped_check,
                    custom_rejection_id=_CustomRejectionIDs.PARAM_TYPE_MISMATCH,
                    mode=mode,
                )
                return False
        return True

    def _screen_item(self, item: ItemT, execution_order: list[MappedCheck]) -> RejectionHandler[ItemT]:
        handler: RejectionHandler[ItemT] = RejectionHandler(item, self._logger)
        for mapped_check in execution_order:
            execution_info = self.checks[mapped_check]
            if any(handler.rejected_by(dependency) for dependency in execution_info.depends_on):
                continue
            for params_or_exc in mapped_check.provide(item):
                if not self._params_ok(handler, mapped_check, params_or_exc):
                    continue
                assert isinstance(params_or_exc, CheckParameters)
                with handler.catcher(mapped_check, mode=execution_info.mode):
                    mapped_check.check.func(**params_or_exc.param_dict)
        return handler

    def screen(self, *items: ItemT, log_summary: bool = False) -> ScreeningResult[ItemT]:
        """
        Screens each item with the registered checks. Rejections are collected, the screening is never cancelled.
        The items must be hashable and unique.
        """
        execution_order = self.execution_order
        handlers: dict[ItemT, RejectionHandler[ItemT]] = {}
        for item in items:
            try:
                hash(item)
            except TypeError as error:
                raise TypeError(f"The item {item} is not hashable, the rejection handler needs this.") from error
            if item in handlers:
                raise ValueError(f"The item {item} was passed twice")
            handlers[item] = self._screen_item(item, execution_order)

        result = ScreeningResult(self, handlers)
        if log_summary:
            self._logger.info(
                "Screening summary: %i kept, %i rejected, rejections per check: %s",
                result.num_kept,
                result.num_rejected,
                str(result.num_rejections_per_check),
            )
        return result
