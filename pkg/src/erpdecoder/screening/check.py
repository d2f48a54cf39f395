"""
Contains functionality to wrap a check function into a box of information before registering it to a
ScreeningManager. This keeps the ScreeningManager itself small.
"""

import inspect
import logging
import types
from abc import ABC, abstractmethod
from typing import Any, Generator, Generic, Optional, Union

from frozendict import frozendict

from ..types import CheckFunction, ItemT


class EpochCheck:
    """
    Holds a check function:
        - The parameter list must contain at least one element
        - The parameter list must be fully type hinted (the hints are used for an explicit type check)
        - The parameter list must not contain POSITIONAL_ONLY parameters
        - A check rejects an item by raising an exception, the return value is ignored
    """

    def __init__(self, check_func: CheckFunction, logger: Optional[logging.Logger] = None):
        self._logger = logger if logger is not None else logging.getLogger("erpdecoder.EpochCheck")
        check_signature = inspect.signature(check_func)
        if len(check_signature.parameters) == 0:
            raise ValueError("The check function must take at least one argument")
        if any(param.kind == param.POSITIONAL_ONLY for param in check_signature.parameters.values()):
            raise ValueError("The function parameters must not contain positional only parameters")
        if check_signature.return_annotation not in (None, check_signature.empty):
            self._logger.warning(
                "Annotated return type is not None (the return value will be ignored): %s(...) -> %s",
                check_func.__name__,
                check_signature.return_annotation,
            )
        param: inspect.Parameter
        for param in check_signature.parameters.values():
            if param.annotation == param.empty:
                raise ValueError(f"The parameter {param.name} has no annotated type.")
            if isinstance(param.annotation, types.UnionType):
                # typeguard's check_type handles Union but not the '|' notation
                param._annotation = Union[*param.annotation.__args__]  # type: ignore[attr-defined]

        self.func: CheckFunction = check_func
        self.signature = check_signature
        self.param_names = set(check_signature.parameters.keys())
        self.required_param_names = {
            param_name
            for param_name in self.param_names
            if check_signature.parameters[param_name].default == check_signature.parameters[param_name].empty
        }
        self.optional_param_names = self.param_names - self.required_param_names
        self.name = check_func.__name__
        self._logger.debug("Created check: %s", self.name)

    def __hash__(self):
        return hash(self.func)

    def __eq__(self, other):
        return isinstance(other, EpochCheck) and self.func == other.func

    def __str__(self) -> str:
        return f"EpochCheck({self.name})"


class CheckParameter:
    """
    A single provided parameter. `param_id` describes where the value came from, e.g. an attribute path.
    """

    # pylint: disable=too-many-arguments
    def __init__(self, mapped_check: "MappedCheck", name: str, value: Any, param_id: str, provided: bool):
        self.mapped_check = mapped_check
        self.name = name
        self.value = value
        self.param_id = param_id
        self.provided = provided

    def __str__(self) -> str:
        return f"CheckParameter({self.param_id} -> {self.name}: {self.value})"


class CheckParameters(frozendict[str, CheckParameter]):
    """
    The parameter list of one check call. Each parameter must refer to the same mapped check.
    """

    mapped_check: "MappedCheck"
    param_dict: dict[str, Any]

    def __new__(cls, mapped_check: "MappedCheck", /, *args, **kwargs):
        return super().__new__(cls, *args, **kwargs)

    def __init__(self, mapped_check: "MappedCheck", /, **kwargs):
        super().__init__(**kwargs)
        mapped_checks = set(param.mapped_check for param in self.values())
        if len(mapped_checks) > 1 or len(mapped_checks) == 1 and mapped_checks.pop() != mapped_check:
            raise ValueError("You cannot add parameters with different providers")

        param_dict: dict[str, Any] = {param.name: param.value for param in self.values() if param.provided}

        # frozendict forbids attribute assignment, dict.__setattr__ bypasses it
        dict.__setattr__(self, "mapped_check", mapped_check)
        dict.__setattr__(self, "param_dict", param_dict)


class MappedCheck(ABC, Generic[ItemT]):
    """
    A check which fills its parameter list from the item it screens.
    """

    def __init__(self, check: EpochCheck, logger: Optional[logging.Logger] = None):
        self.check = check
        self.name = check.name
        self._logger = logger if logger is not None else logging.getLogger("erpdecoder.MappedCheck")
        self._logger.debug("Created parameter provider: %s, %s", self.__class__.__name__, self.check.name)

    @abstractmethod
    def provide(self, item: ItemT) -> Generator[CheckParameters | Exception, None, None]:
        """
        Yields the parameter lists to call the check function with. If a parameter list can't be built, an exception
        is yielded instead of raised, raising would destroy the generator.
        """

    @abstractmethod
    def provision_indicator(self) -> dict[str, str]:
        """
        Returns a dict of parameter name => a string describing the source of the parameter, e.g.
        {"onset_index": ".onset_index", "gaps": "<bound>"}
        """

    def __str__(self) -> str:
        return f"MappedCheck({self.name})"
