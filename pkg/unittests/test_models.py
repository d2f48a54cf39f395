import json
from pathlib import Path

import numpy as np
import pytest
import torch
from frozendict import frozendict

from erpdecoder.core import TrainingTag, labels_of
from erpdecoder.errors import FormatError, InvalidArgumentError, TrainingDivergenceError
from erpdecoder.features import feature_matrix
from erpdecoder.models import (
    CnnConfig,
    ForestConfig,
    IntermediateCnn,
    ModelKind,
    OptimizerConfig,
    TrainedModel,
    build_module,
    feature_importances,
    fit_cnn,
    fit_forest,
    load_model,
    model_inputs,
    predict_epochs,
    predict_proba,
    predict_proba_batch,
    save_model,
)
from erpdecoder.models.forest import _round_down_float32
from unittests.helpers import make_run

# pylint: disable=protected-access

SMALL_FOREST = ForestConfig(n_trees=40, max_depth=5, seed=3)
TINY_CNN = CnnConfig(n_channels=2, n_samples=50, n_filters=8, dropout=0.0)
FAST_SGD = OptimizerConfig(learning_rate=1e-3, batch_size=8, n_epochs=4, seed=11)


def _separable_trials(n: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng(seed)
    labels = np.tile([1, 0, 0, 0], n // 4)
    trials = rng.normal(0.0, 1.0, size=(n, 2, 50))
    trials[labels == 1, :, 20:30] += 4.0
    return trials, labels


@pytest.fixture(scope="module")
def forest_data() -> tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng(5)
    epochs = [epoch for run in range(6) for epoch in make_run(run, run % 6, rng)]
    return feature_matrix(epochs), labels_of(epochs)


class TestForest:
    def test_features_per_split(self):
        assert ForestConfig().resolved_features_per_split(44) == 6
        assert ForestConfig(features_per_split=100).resolved_features_per_split(44) == 44

    def test_fit_and_predict(self, forest_data):
        features, labels = forest_data
        model = fit_forest(features, labels, SMALL_FOREST, subject_id="s001", training_set_tag=TrainingTag.IN_CAR)
        assert model.kind == ModelKind.FOREST
        assert model.training_set_tag == TrainingTag.IN_CAR
        assert all(values.dtype == np.float32 for values in model.parameters.values())
        probabilities = predict_proba_batch(model, features)
        assert probabilities.shape == (labels.size,)
        assert np.all((probabilities >= 0) & (probabilities <= 1))
        assert model.metrics["train_balanced_accuracy"] > 0.9
        assert probabilities[labels == 1].mean() > probabilities[labels == 0].mean()
        assert predict_proba(model, features[0]) == probabilities[0]

    def test_generalizes_to_a_new_run(self, forest_data):
        features, labels = forest_data
        model = fit_forest(features, labels, SMALL_FOREST)
        held_out = make_run(9, 2, np.random.default_rng(99))
        probabilities = predict_epochs(model, held_out)
        assert probabilities[labels_of(held_out) == 1].mean() > probabilities[labels_of(held_out) == 0].mean()

    def test_deterministic(self, forest_data):
        features, labels = forest_data
        first = fit_forest(features, labels, SMALL_FOREST)
        second = fit_forest(features, labels, SMALL_FOREST)
        assert first.parameters.keys() == second.parameters.keys()
        assert all(np.array_equal(first.parameters[name], second.parameters[name]) for name in first.parameters)

    def test_importances(self, forest_data):
        model = fit_forest(*forest_data, SMALL_FOREST)
        importances = feature_importances(model)
        assert importances.shape == (44,)
        assert importances.sum() == pytest.approx(1.0, abs=1e-5)

    @pytest.mark.parametrize(
        ["features", "labels"],
        [
            pytest.param(np.zeros((4, 44)), np.zeros(4), id="single class"),
            pytest.param(np.zeros((4, 44)), np.array([0, 1, 0]), id="length mismatch"),
        ],
    )
    def test_invalid_training_set(self, features: np.ndarray, labels: np.ndarray):
        with pytest.raises(InvalidArgumentError):
            fit_forest(features, labels, SMALL_FOREST)

    def test_wrong_feature_count(self, forest_data):
        model = fit_forest(*forest_data, SMALL_FOREST)
        with pytest.raises(InvalidArgumentError):
            predict_proba_batch(model, np.zeros((2, 10)))

    @pytest.mark.parametrize("threshold", [0.1, -1e-8, 1 / 3, 12345.678901, 2.0**-30])
    def test_float32_thresholds_preserve_splits(self, threshold: float):
        rounded = _round_down_float32(np.array([threshold]))[0]
        below, above = np.nextafter(rounded, np.float32(-1e9)), np.nextafter(rounded, np.float32(1e9))
        for value in (below, rounded, above):
            assert (float(value) <= threshold) == (value <= rounded)


class TestCnn:
    def test_pooled_length(self):
        assert CnnConfig().pooled_length == 113
        assert TINY_CNN.pooled_length == 13
        with pytest.raises(InvalidArgumentError):
            _ = CnnConfig(n_samples=11).pooled_length

    def test_forward_shape(self):
        module = IntermediateCnn(TINY_CNN).double().eval()
        logits = module(torch.zeros((4, 1, 2, 50), dtype=torch.float64))
        assert logits.shape == (4, 2)

    def test_gradients_match_finite_differences(self):
        torch.manual_seed(0)
        module = IntermediateCnn(TINY_CNN).double()
        module.train()
        inputs = torch.randn((6, 1, 2, 50), dtype=torch.float64, requires_grad=True)
        assert torch.autograd.gradcheck(module, (inputs,), eps=1e-6, atol=1e-5)

    def test_parameter_gradient(self):
        torch.manual_seed(1)
        module = IntermediateCnn(TINY_CNN).double().eval()
        inputs = torch.randn((4, 1, 2, 50), dtype=torch.float64)
        targets = torch.tensor([1, 0, 0, 1])
        criterion = torch.nn.CrossEntropyLoss(weight=torch.tensor([1.0, 5.0], dtype=torch.float64))
        loss = criterion(module(inputs), targets)
        loss.backward()
        analytic = module.dense.weight.grad[1, 7].item()
        with torch.no_grad():
            step = 1e-6
            module.dense.weight[1, 7] += step
            upper = criterion(module(inputs), targets).item()
            module.dense.weight[1, 7] -= 2 * step
            lower = criterion(module(inputs), targets).item()
        assert analytic == pytest.approx((upper - lower) / (2 * step), rel=1e-4, abs=1e-8)

    def test_fit(self):
        trials, labels = _separable_trials(48, seed=0)
        losses: list[tuple[int, float]] = []
        model = fit_cnn(
            trials,
            labels,
            TINY_CNN,
            FAST_SGD,
            subject_id="s002",
            on_epoch=lambda epoch, loss: losses.append((epoch, loss)),
        )
        assert [epoch for epoch, _ in losses] == [0, 1, 2, 3]
        assert all(np.isfinite(loss) for _, loss in losses)
        assert model.kind == ModelKind.CNN
        assert model.seed == 11
        assert model.metrics["initial_loss"] == losses[0][1]
        assert all(values.dtype == np.float32 for values in model.parameters.values())
        probabilities = predict_proba_batch(model, trials)
        assert np.all((probabilities >= 0) & (probabilities <= 1))

    def test_deterministic(self):
        trials, labels = _separable_trials(32, seed=1)
        first = fit_cnn(trials, labels, TINY_CNN, FAST_SGD)
        second = fit_cnn(trials, labels, TINY_CNN, FAST_SGD)
        assert all(np.array_equal(first.parameters[name], second.parameters[name]) for name in first.parameters)

    def test_checkpoint_equals_shorter_training(self):
        trials, labels = _separable_trials(32, seed=2)
        snapshots: dict[int, TrainedModel] = {}
        fit_cnn(
            trials,
            labels,
            TINY_CNN,
            FAST_SGD,
            checkpoints=(2,),
            on_checkpoint=lambda n_epochs, model: snapshots.update({n_epochs: model}),
        )
        shorter = fit_cnn(trials, labels, TINY_CNN, FAST_SGD.model_copy(update={"n_epochs": 2}))
        assert list(snapshots) == [2]
        assert snapshots[2].config["optimizer"]["n_epochs"] == 2
        for name, values in shorter.parameters.items():
            assert np.array_equal(snapshots[2].parameters[name], values)

    def test_divergence(self):
        trials, labels = _separable_trials(16, seed=3)
        trials[0, 0, 0] = np.nan
        with pytest.raises(TrainingDivergenceError) as error:
            fit_cnn(trials, labels, TINY_CNN, FAST_SGD)
        assert error.value.epoch == 0

    def test_wrong_input_shape(self):
        trials, labels = _separable_trials(16, seed=4)
        with pytest.raises(InvalidArgumentError):
            fit_cnn(trials[:, :1], labels, TINY_CNN, FAST_SGD)

    def test_rebuilt_module_is_float32(self):
        trials, labels = _separable_trials(16, seed=5)
        module = build_module(fit_cnn(trials, labels, TINY_CNN, FAST_SGD.model_copy(update={"n_epochs": 1})))
        assert not module.training
        assert module.dense.weight.dtype == torch.float32


class TestPersistence:
    def test_forest_round_trip(self, tmp_path: Path, forest_data):
        features, labels = forest_data
        model = fit_forest(features, labels, SMALL_FOREST, subject_id="s004")
        loaded = load_model(save_model(model, tmp_path / "forest.json"))
        assert loaded.subject_id == "s004"
        assert loaded.metrics == model.metrics
        assert np.array_equal(predict_proba_batch(loaded, features), predict_proba_batch(model, features))

    def test_cnn_round_trip(self, tmp_path: Path):
        trials, labels = _separable_trials(16, seed=6)
        model = fit_cnn(trials, labels, TINY_CNN, FAST_SGD.model_copy(update={"n_epochs": 1}))
        loaded = load_model(save_model(model, tmp_path / "cnn.json"))
        assert loaded.config == model.config
        assert np.array_equal(predict_proba_batch(loaded, trials), predict_proba_batch(model, trials))

    def test_sorted_keys(self, tmp_path: Path):
        model = TrainedModel.create(ModelKind.FOREST, {"b": np.zeros(2), "a": np.ones(1)}, {"n_features": 1})
        document = json.loads(save_model(model, tmp_path / "m.json").read_text(encoding="utf-8"))
        assert list(document) == sorted(document)
        assert list(document["parameters"]) == ["a", "b"]

    def test_parameters_must_be_float32(self):
        with pytest.raises(TypeError):
            TrainedModel(
                kind=ModelKind.FOREST,
                parameters=frozendict({"a": np.zeros(2)}),
                config=frozendict(),
                subject_id="",
                training_set_tag=TrainingTag.IN_LAB,
                seed=0,
            )

    @pytest.mark.parametrize(
        "content",
        [
            pytest.param("{not json", id="no json"),
            pytest.param('{"format_version": 99}', id="unknown version"),
            pytest.param('{"format_version": 1, "kind": "Forest"}', id="incomplete"),
        ],
    )
    def test_invalid_files(self, tmp_path: Path, content: str):
        path = tmp_path / "model.json"
        path.write_text(content, encoding="utf-8")
        with pytest.raises(FormatError):
            load_model(path)


class TestInputs:
    def test_shapes(self):
        epochs = make_run(0, 1, np.random.default_rng(0))
        assert model_inputs(ModelKind.FOREST, epochs).shape == (18, 44)
        assert model_inputs(ModelKind.CNN, epochs).shape == (18, 2, 350)
        assert model_inputs(ModelKind.CNN, []).shape == (0, 2, 350)

    def test_no_epochs(self, forest_data):
        model = fit_forest(*forest_data, SMALL_FOREST)
        assert predict_epochs(model, []).shape == (0,)
