import logging
from typing import Any

import numpy as np
import pytest

from erpdecoder.core import Epoch
from erpdecoder.screening import (
    EpochCheck,
    PathMappedCheck,
    ScreeningManager,
    ScreeningMode,
    required_field,
)
from erpdecoder.screening.handler import TrialRejection, get_rejection_id
from unittests.helpers import make_epoch

# pylint: disable=unused-argument, global-statement

calls: list[str] = []


def check_onset_positive(onset_index: int) -> None:
    calls.append("check_onset_positive")
    if onset_index < 0:
        raise ValueError("negative onset")


def check_small_amplitude(data: np.ndarray, threshold: float) -> None:
    """
    Rejects epochs exceeding the threshold.
    This docstring is used to test the output of the csv renderer.
    """
    calls.append("check_small_amplitude")
    if np.max(np.abs(data)) > threshold:
        raise ValueError("amplitude too large")


def check_subject_prefix(subject: str, prefix: str = "s") -> None:
    if not subject.startswith(prefix):
        raise ValueError(f"{subject} does not start with {prefix}")


def check_fail(run: int) -> None:
    raise ValueError("I failed on purpose")


def check_different_fails(run: int):
    if run == 0:
        raise ValueError("Error 1")
    raise ValueError("Error 2")


def check_wrong_type(subject: int) -> None:
    pass


def no_params():
    pass


def missing_annotation(onset_index: int, data) -> None:
    pass


def unmapped_param(onset_index: int, rofl: str) -> None:
    pass


onset_check = PathMappedCheck(EpochCheck(check_onset_positive), {"onset_index": "onset_index"})
amplitude_check = PathMappedCheck(EpochCheck(check_small_amplitude), {"data": "data"}, bound={"threshold": 100.0})


def _epochs() -> list[Epoch]:
    loud = np.zeros((3, 400))
    loud[2, 10] = 150.0
    return [
        make_epoch(0, onset_index=100),
        make_epoch(1, onset_index=-5),
        make_epoch(2, onset_index=300, data=loud),
        make_epoch(3, onset_index=-7, data=loud),
    ]


class TestScreening:
    def test_kept_and_rejected(self):
        manager = ScreeningManager[Epoch]()
        manager.register(onset_check)
        manager.register(amplitude_check, depends_on={onset_check})
        epochs = _epochs()
        result = manager.screen(*epochs)
        assert result.total == 4
        assert result.kept == [epochs[0]]
        assert list(result.rejections) == epochs[1:]
        assert result.num_rejections_per_check == {"check_onset_positive": 2, "check_small_amplitude": 1}
        assert result.first_rejecting_check(epochs[3]) == "check_onset_positive"
        assert result.first_rejecting_check(epochs[2]) == "check_small_amplitude"
        assert result.first_rejecting_check(epochs[0]) is None

    def test_dependent_check_sees_only_survivors(self):
        global calls
        calls = []
        manager = ScreeningManager[Epoch]()
        manager.register(onset_check)
        manager.register(amplitude_check, depends_on={onset_check})
        manager.screen(make_epoch(0, onset_index=-1))
        assert calls == ["check_onset_positive"]

    def test_execution_order_follows_dependencies(self):
        manager = ScreeningManager[Epoch]()
        manager.register(onset_check)
        manager.register(amplitude_check, depends_on={onset_check})
        subject_check = PathMappedCheck(EpochCheck(check_subject_prefix), {"subject": "subject"})
        manager.register(subject_check)
        order = manager.execution_order
        assert order.index(onset_check) < order.index(amplitude_check)
        assert [check.name for check in order] == [
            "check_onset_positive",
            "check_small_amplitude",
            "check_subject_prefix",
        ]

    def test_warn_mode_keeps_item(self, caplog):
        manager = ScreeningManager[Epoch]()
        manager.register(PathMappedCheck(EpochCheck(check_fail), {"run": "run"}), mode=ScreeningMode.WARN)
        epoch = make_epoch(0)
        with caplog.at_level(logging.WARNING, logger="erpdecoder.ScreeningManager"):
            result = manager.screen(epoch)
        assert result.kept == [epoch]
        assert len(result.warnings[epoch]) == 1
        assert "I failed on purpose" in caplog.text

    @pytest.mark.parametrize(
        ["check_func", "param_map", "expected_error"],
        [
            pytest.param(
                missing_annotation,
                {"onset_index": "onset_index", "data": "data"},
                "The parameter data has no annotated type.",
                id="Missing parameter type annotation",
            ),
            pytest.param(
                unmapped_param,
                {"onset_index": "onset_index"},
                "unmapped_param misses parameter(s) {'rofl'}",
                id="Unmapped parameter",
            ),
            pytest.param(no_params, {}, "The check function must take at least one argument", id="No params"),
        ],
    )
    def test_illegal_check_functions(self, check_func: Any, param_map: dict[str, str], expected_error: str):
        manager = ScreeningManager[Epoch]()
        with pytest.raises(ValueError) as error:
            manager.register(PathMappedCheck(EpochCheck(check_func), param_map))
        assert str(error.value) == expected_error

    def test_bound_and_mapped_overlap(self):
        with pytest.raises(ValueError) as error:
            PathMappedCheck(EpochCheck(check_small_amplitude), {"data": "data", "threshold": "t0"}, {"threshold": 1.0})
        assert "both mapped and bound" in str(error.value)

    def test_illegal_dependency_registration(self):
        manager = ScreeningManager[Epoch]()
        with pytest.raises(ValueError) as error:
            manager.register(amplitude_check, depends_on={onset_check})
        assert str(error.value) == "The specified dependency is not registered: check_onset_positive"

    def test_type_error(self):
        manager = ScreeningManager[Epoch]()
        manager.register(PathMappedCheck(EpochCheck(check_wrong_type), {"subject": "subject"}))
        result = manager.screen(make_epoch(0))
        assert result.num_rejected == 1
        rejection = next(iter(result.rejections.values()))[0]
        assert isinstance(rejection, TrialRejection)
        assert "str is not an instance of int" in str(rejection)
        assert "Check function: check_wrong_type" in str(rejection)

    def test_missing_attribute_rejects(self):
        manager = ScreeningManager[Epoch]()
        manager.register(PathMappedCheck(EpochCheck(check_onset_positive), {"onset_index": "label.onset"}))
        result = manager.screen(make_epoch(0))
        assert result.num_rejected == 1
        assert "label.onset: value not provided" in str(next(iter(result.rejections.values()))[0])

    def test_optional_parameter_default(self):
        manager = ScreeningManager[Epoch]()
        manager.register(PathMappedCheck(EpochCheck(check_subject_prefix), {"subject": "subject", "prefix": "nope"}))
        result = manager.screen(make_epoch(0, subject="s007"))
        assert result.num_kept == 1

    def test_duplicate_items(self):
        manager = ScreeningManager[Epoch]()
        manager.register(onset_check)
        epoch = make_epoch(0)
        with pytest.raises(ValueError):
            manager.screen(epoch, make_epoch(0))

    def test_rejection_ids(self):
        manager = ScreeningManager[Epoch]()
        first = PathMappedCheck(EpochCheck(check_different_fails), {"run": "run"})
        manager.register(first)
        result = manager.screen(make_epoch(0, run=0), make_epoch(1, run=1))
        second_result = manager.screen(make_epoch(0, run=0), make_epoch(1, run=1))
        ids = [rejections[0].rejection_id for rejections in result.rejections.values()]
        second_ids = [rejections[0].rejection_id for rejections in second_result.rejections.values()]
        assert ids == second_ids
        assert ids[0] != ids[1]
        assert all(1_000_000 <= rejection_id <= 9_999_999 for rejection_id in ids)

    def test_rejection_id_is_stable_per_raise_site(self):
        errors = []
        for run in (0, 0):
            try:
                check_different_fails(run)
            except ValueError as error:
                errors.append(error)
        assert get_rejection_id(errors[0]) == get_rejection_id(errors[1])

    def test_csv_overview(self):
        manager = ScreeningManager[Epoch](manager_id="epochs")
        manager.register(amplitude_check)
        overview = manager.get_csv_formatted_check_infos()
        lines = overview.strip().splitlines()
        assert lines[0] == "Manager ID,Check function signature,Mapped fields,Check doc string,Mode"
        assert lines[1].startswith('epochs,"check_small_amplitude(data: numpy.ndarray, threshold: float) -> None"')
        assert "<bound>" in lines[1]
        assert "This docstring is used to test the output of the csv renderer." in lines[1]
        assert lines[1].endswith(",reject")


class TestQuery:
    def test_required_field(self):
        epoch = make_epoch(3, icon=4)
        assert required_field(epoch, "label.icon.index", int) == 4

    def test_required_field_missing(self):
        with pytest.raises(AttributeError) as error:
            required_field(make_epoch(0), "label.colour", str)
        assert str(error.value) == "label.colour: Not found"
