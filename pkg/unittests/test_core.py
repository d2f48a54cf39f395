import numpy as np
import pytest
from pydantic import ValidationError

from erpdecoder.core import (
    CHANNEL_ROWS,
    EPOCH_SAMPLES,
    Channel,
    ChannelSet,
    Condition,
    IconColor,
    IconId,
    QualityFlag,
    SessionSpec,
    block_randomized_order,
    channel_rows,
    epoch_times_ms,
    kept_epochs,
    labels_of,
    ms_to_epoch_index,
    parse_channels,
    run_segment_bounds,
)
from erpdecoder.errors import InvalidArgumentError
from unittests.helpers import make_epoch


class TestTiming:
    @pytest.mark.parametrize(
        ["time_ms", "expected"],
        [
            pytest.param(-100, 0, id="window start"),
            pytest.param(0, 50, id="onset"),
            pytest.param(250, 175, id="erp window start"),
            pytest.param(530, 315, id="erp window end"),
            pytest.param(700, 400, id="window end"),
        ],
    )
    def test_ms_to_epoch_index(self, time_ms: float, expected: int):
        assert ms_to_epoch_index(time_ms) == expected

    def test_epoch_times(self):
        times = epoch_times_ms()
        assert times.shape == (EPOCH_SAMPLES,)
        assert times[0] == -100
        assert times[-1] == 698
        assert np.allclose(np.diff(times), 2.0)


class TestChannels:
    def test_rows(self):
        assert CHANNEL_ROWS[Channel.PZ] == 1
        assert CHANNEL_ROWS.inverse[2] == Channel.FP1
        assert channel_rows([Channel.FP1, Channel.CZ]) == (0, 2)

    def test_parse(self):
        assert parse_channels("Cz, Pz") == (Channel.CZ, Channel.PZ)

    def test_parse_unknown(self):
        with pytest.raises(InvalidArgumentError):
            parse_channels("Cz,Oz")

    def test_montage_is_fixed(self):
        assert ChannelSet().model_channels == (Channel.CZ, Channel.PZ)
        with pytest.raises(InvalidArgumentError):
            ChannelSet(channels=(Channel.CZ, Channel.PZ))


class TestIcons:
    def test_equality_ignores_color(self):
        assert IconId(3, IconColor.RED) == IconId(3)
        assert IconId(2) < IconId(4)

    @pytest.mark.parametrize("index", [pytest.param(-1, id="negative"), pytest.param(6, id="too large")])
    def test_out_of_range(self, index: int):
        with pytest.raises(InvalidArgumentError):
            IconId(index)

    @pytest.mark.parametrize("seed", [0, 1, 42])
    def test_block_randomization(self, seed: int):
        order = block_randomized_order(10, seed)
        assert len(order) == 60
        for block in range(10):
            assert sorted(icon.index for icon in order[6 * block : 6 * block + 6]) == list(range(6))

    def test_block_randomization_is_deterministic(self):
        assert block_randomized_order(3, 7) == block_randomized_order(3, 7)

    def test_block_randomization_needs_a_block(self):
        with pytest.raises(InvalidArgumentError):
            block_randomized_order(0, 0)


class TestSessionSpec:
    def test_in_lab_layout(self):
        spec = SessionSpec.in_lab(seed=5)
        assert spec.condition == Condition.IN_LAB
        assert spec.trials_per_run == 60
        assert spec.n_trials == 360
        assert spec.soa_samples == 400
        assert sorted(spec.icon_colors) == sorted(IconColor)
        assert spec.color_map.inverse[spec.icon_colors[2]] == 2

    def test_in_car_layout(self):
        spec = SessionSpec.in_car(seed=5)
        assert spec.trials_per_run == 18
        assert spec.n_trials == 900

    def test_json_round_trip(self):
        spec = SessionSpec.in_car(seed=11, n_runs=4)
        assert SessionSpec.from_json(spec.to_json()) == spec

    @pytest.mark.parametrize(
        "document",
        [
            pytest.param({"condition": "InLab", "n_runs": 5, "reps_per_icon": 10}, id="in-lab with 5 runs"),
            pytest.param({"condition": "InCar", "n_runs": 5, "reps_per_icon": 4}, id="in-car with 4 reps"),
            pytest.param({"condition": "InCar", "n_runs": 5, "reps_per_icon": 3, "isi_ms": 200}, id="wrong ISI"),
        ],
    )
    def test_invalid_layouts(self, document: dict):
        with pytest.raises(ValidationError):
            SessionSpec.model_validate({**document, "seed": 1, "icon_colors": [str(color) for color in IconColor]})

    def test_colors_must_be_a_permutation(self):
        with pytest.raises(ValidationError):
            SessionSpec(
                condition=Condition.IN_CAR,
                n_runs=1,
                reps_per_icon=3,
                seed=0,
                icon_colors=(IconColor.RED,) * 6,
            )


class TestRunSegment:
    def test_padding(self):
        assert run_segment_bounds([5000, 5400, 11800], 100_000) == (4000, 12800)

    def test_clipped_to_stream(self):
        assert run_segment_bounds([300, 700], 1500) == (0, 1500)

    def test_empty_run(self):
        with pytest.raises(InvalidArgumentError):
            run_segment_bounds([], 1000)


class TestEpoch:
    def test_identity(self):
        epoch = make_epoch(7, icon=1, target=True, run=2)
        assert epoch.trial_id == "s001/lab1/2/7"
        assert epoch.repetition == 1
        assert epoch.is_target
        assert epoch == make_epoch(7, icon=1, target=True, run=2, data=np.ones((3, EPOCH_SAMPLES)))
        assert len({epoch, epoch.with_quality(QualityFlag.REJECTED_GAP)}) == 1

    def test_model_input(self):
        data = np.arange(3 * EPOCH_SAMPLES, dtype=np.float64).reshape(3, EPOCH_SAMPLES)
        model_input = make_epoch(data=data).model_input
        assert model_input.shape == (2, 350)
        assert model_input[0, 0] == 50
        assert model_input[1, -1] == 2 * EPOCH_SAMPLES - 1

    def test_wrong_shape(self):
        with pytest.raises(InvalidArgumentError):
            make_epoch(data=np.zeros((2, EPOCH_SAMPLES)))

    def test_kept_and_labels(self):
        epochs = [
            make_epoch(0, target=True),
            make_epoch(1, quality=QualityFlag.REJECTED_AMPLITUDE),
            make_epoch(2),
        ]
        assert [epoch.trial_index for epoch in kept_epochs(epochs)] == [0, 2]
        assert labels_of(epochs).tolist() == [1, 0, 0]
