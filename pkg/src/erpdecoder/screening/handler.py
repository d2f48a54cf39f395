"""
Contains functionality to collect the rejections raised while screening and to create stable rejection IDs.
"""

import hashlib
import logging
import random
from contextlib import contextmanager
from enum import StrEnum
from pathlib import Path
from typing import TYPE_CHECKING, Any, Generator, Generic, Optional, TypeAlias

from bidict import bidict

from ..types import ItemT
from .check import CheckParameters, EpochCheck, MappedCheck

if TYPE_CHECKING:
    from .manager import ScreeningManager


class ScreeningMode(StrEnum):
    """
    With `ScreeningMode.REJECT` an item is rejected if the check raises.
    With `ScreeningMode.WARN` the item is kept but the exception is collected and logged as warning.
    """

    REJECT = "reject"
    WARN = "warn"


def _format_value(value: Any) -> str:
    if isinstance(value, str):
        return f"'{value}'"
    if hasattr(value, "shape"):
        return f"<array {getattr(value, 'shape')}>"
    text = str(value)
    return text if len(text) <= 60 else text[:57] + "..."


def format_parameter_infos(
    check: EpochCheck,
    provided_params: CheckParameters,
    start_indent: str = "",
    indent_step_size: str = "\t",
) -> str:
    """
    Formats the parameter information of a check call for the rejection message.
    """
    output = start_indent + "{"
    for param_name, param in check.signature.parameters.items():
        is_provided = param_name in provided_params and provided_params[param_name].provided
        is_required = param.default == param.empty
        param_value = provided_params[param_name].value if is_provided else param.default
        param_description = (
            f"value={_format_value(param_value)}, "
            f"id={provided_params[param_name].param_id if param_name in provided_params else 'unprovided'}, "
            f"{'required' if is_required else 'optional'}, "
            f"{'provided' if is_provided else 'unprovided'}"
        )
        output += f"\n{start_indent}{indent_step_size}{param_name}: {param_description}"
    return f"{output}\n{start_indent}" + "}"


_IdentifierType: TypeAlias = tuple[str, str, int]
_IDType: TypeAlias = int
_REJECTION_ID_MAP: bidict[_IdentifierType, _IDType] = bidict()
_ID_RANGE = (1_000_000, 9_999_999)


def _get_identifier(exc: Exception) -> _IdentifierType:
    """
    Returns the module file name, the function name and the line offset inside the function where the exception was
    originally raised.
    """
    current_traceback = exc.__traceback__
    assert current_traceback is not None
    while current_traceback.tb_next is not None:
        current_traceback = current_traceback.tb_next
    code = current_traceback.tb_frame.f_code
    return Path(code.co_filename).name, code.co_name, current_traceback.tb_lineno - code.co_firstlineno


def _generate_new_id(identifier: _IdentifierType, attempt: int) -> _IDType:
    """
    Derives an ID from module and function name. The line offset is added last, so the leading digits stay stable
    if a raise statement moves inside its function.
    """
    seed = int(hashlib.blake2s((identifier[0] + identifier[1]).encode(), digest_size=4).hexdigest(), 16)
    base = random.Random(seed + attempt).randint(*_ID_RANGE)
    return (base + identifier[2] - _ID_RANGE[0]) % (_ID_RANGE[1] - _ID_RANGE[0] + 1) + _ID_RANGE[0]


def get_rejection_id(exc: Exception) -> _IDType:
    """
    Returns the unique ID of the place the exception was raised at.
    """
    identifier = _get_identifier(exc)
    if identifier not in _REJECTION_ID_MAP:
        attempt = 0
        new_id = _generate_new_id(identifier, attempt)
        # pylint: disable=unsupported-membership-test
        while new_id in _REJECTION_ID_MAP.inverse:
            attempt += 1
            new_id = _generate_new_id(identifier, attempt)
        _REJECTION_ID_MAP[identifier] = new_id
    return _REJECTION_ID_MAP[identifier]


class TrialRejection(RuntimeError):
    """
    A unified message for a failed check on a single item.
    """

    # pylint: disable=too-many-arguments
    def __init__(
        self,
        message_detail: str,
        cause: Exception,
        item: Any,
        mapped_check: MappedCheck,
        rejection_id: _IDType,
        provided_params: Optional[CheckParameters],
    ):
        message = (
            f"{rejection_id}, {type(cause).__name__}: {message_detail}\n"
            f"\tItem: {item}\n"
            f"\tRejection ID: {rejection_id}\n"
            f"\tCheck function: {mapped_check.name}"
        )
        if provided_params is not None:
            formatted_param_infos = format_parameter_infos(mapped_check.check, provided_params, start_indent="\t\t")
            message += f"\n\tParameter information: \n{formatted_param_infos}"
        else:
            message += "\n\tParameter information: No info"
        super().__init__(message)
        self.cause = cause
        self.item = item
        self.mapped_check = mapped_check
        self.rejection_id = rejection_id
        self.message_detail = message_detail
        self.provided_params = provided_params


class RejectionHandler(Generic[ItemT]):
    """
    Collects the rejections and warnings of a single item, grouped by check.
    """

    def __init__(self, item: ItemT, logger: logging.Logger):
        self.item = item
        self.rejections: dict[MappedCheck, list[TrialRejection]] = {}
        self.warnings: dict[MappedCheck, list[TrialRejection]] = {}
        self.current_params: Optional[CheckParameters] = None
        self._logger = logger

    # pylint: disable=too-many-arguments
    def catch(
        self,
        msg: str,
        error: Exception,
        mapped_check: MappedCheck,
        custom_rejection_id: Optional[int] = None,
        mode: ScreeningMode = ScreeningMode.REJECT,
    ):
        """
        Records a rejection with the given message. `error` becomes the cause of the rejection.
        """
        rejection_id = get_rejection_id(error) if custom_rejection_id is None else custom_rejection_id
        rejection = TrialRejection(msg, error, self.item, mapped_check, rejection_id, self.current_params)
        if mode == ScreeningMode.REJECT:
            self._logger.debug("%s", rejection)
            collected = self.rejections
        elif mode == ScreeningMode.WARN:
            self._logger.warning("%s", rejection)
            collected = self.warnings
        else:
            raise ValueError(f"Unknown screening mode: {mode}")
        collected.setdefault(mapped_check, []).append(rejection)

    @contextmanager
    def catcher(
        self,
        mapped_check: MappedCheck,
        custom_rejection_id: Optional[int] = None,
        mode: ScreeningMode = ScreeningMode.REJECT,
    ) -> Generator[None, None, None]:
        """
        Catches any exception raised inside the body and records it as rejection of the current item.
        """
        try:
            yield None
        except Exception as error:  # pylint: disable=broad-exception-caught
            self.catch(str(error), error, mapped_check, custom_rejection_id, mode)

    def rejected_by(self, mapped_check: MappedCheck) -> bool:
        """True if the given check rejected the item"""
        return mapped_check in self.rejections
