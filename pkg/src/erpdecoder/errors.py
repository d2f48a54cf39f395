"""
Contains the exception hierarchy of erpdecoder and the mapping of exceptions onto process exit codes.
"""

from enum import IntEnum
from typing import Optional


class ExitCode(IntEnum):
    """
    Exit codes of the command line interface.
    """

    SUCCESS = 0
    FAILURE = 1
    CONFIG_ERROR = 2
    FORMAT_ERROR = 3
    TRAINING_DIVERGENCE = 4


class ErpDecoderError(RuntimeError):
    """
    Base class of all errors raised on purpose by this package.
    """

    exit_code: ExitCode = ExitCode.FAILURE


class InvalidArgumentError(ErpDecoderError, ValueError):
    """
    Raised if an operation is called with arguments outside of its domain, e.g. too short signals or empty grids.
    """

    exit_code = ExitCode.CONFIG_ERROR


class ConfigError(ErpDecoderError):
    """
    Raised if an experiment configuration is invalid or refers to files which don't exist.
    """

    exit_code = ExitCode.CONFIG_ERROR


class FormatError(ErpDecoderError):
    """
    Raised by the container reader if a file is malformed. The byte offset points to the start of the offending
    structure, `block` names the block (index and type) if the error is located inside a block.
    """

    exit_code = ExitCode.FORMAT_ERROR

    def __init__(self, message: str, offset: int, block: Optional[str] = None):
        detail = f"{message} (byte offset {offset}"
        if block is not None:
            detail += f", {block}"
        super().__init__(detail + ")")
        self.message = message
        self.offset = offset
        self.block = block

    def __reduce__(self):
        return type(self), (self.message, self.offset, self.block)


class TrainingDivergenceError(ErpDecoderError):
    """
    Raised if the training loss of a network becomes non-finite.
    """

    exit_code = ExitCode.TRAINING_DIVERGENCE

    def __init__(self, epoch: int, batch: int, loss: float):
        super().__init__(f"Training diverged in epoch {epoch}, batch {batch}: loss is {loss}")
        self.epoch = epoch
        self.batch = batch
        self.loss = loss

    def __reduce__(self):
        return type(self), (self.epoch, self.batch, self.loss)


class RunUndecidableError(ErpDecoderError):
    """
    Raised if no trial of a run survived the rejection, so no icon can be predicted.
    """

    def __init__(self, run: int, n_trials: int):
        super().__init__(f"Run {run} is undecidable: all {n_trials} trials were rejected")
        self.run = run
        self.n_trials = n_trials

    def __reduce__(self):
        return type(self), (self.run, self.n_trials)


class DegenerateInputError(ErpDecoderError):
    """
    Raised by statistical routines if the input carries no information, e.g. zero variance in all groups.
    """


class StageFailedError(ErpDecoderError):
    """
    Raised by the pipeline if a stage failed. The original exception is chained as `__cause__`.
    """

    def __init__(self, stage: str, subject: Optional[str] = None):
        where = f"stage '{stage}'" if subject is None else f"stage '{stage}' of subject {subject}"
        super().__init__(f"Pipeline aborted in {where}")
        self.stage = stage
        self.subject = subject

    def __reduce__(self):
        return type(self), (self.stage, self.subject)


def exit_code_for(error: BaseException) -> ExitCode:
    """
    Maps an exception onto the exit code of the command line interface. Errors raised by a pipeline stage are
    mapped by their cause.
    """
    if isinstance(error, StageFailedError) and isinstance(error.__cause__, ErpDecoderError):
        return error.__cause__.exit_code
    if isinstance(error, ErpDecoderError):
        return error.exit_code
    return ExitCode.FAILURE
