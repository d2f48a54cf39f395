"""
Contains the assembly of the training sets, the stratified cross validation with simulated runs, the held-out
evaluation and the report of all subjects.
"""

import hashlib
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Optional, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict
from sklearn.metrics import balanced_accuracy_score, confusion_matrix
from sklearn.model_selection import StratifiedKFold

from .config import ExperimentConfig, derive_seed
from .core import N_ICONS, Epoch, IconId, TrainingTag, kept_epochs, labels_of
from .decode import aggregate_run, repetition_sweep
from .errors import DegenerateInputError, InvalidArgumentError, RunUndecidableError
from .models import (
    CnnConfig,
    ForestConfig,
    ModelKind,
    OptimizerConfig,
    TrainedModel,
    fit_cnn,
    fit_forest,
    model_inputs,
    predict_epochs,
    predict_proba_batch,
)
from .quality import anova_oneway, pairwise_welch
from .types import FloatArray, IntArray

_logger = logging.getLogger("erpdecoder.evaluation")

TARGETS_PER_BLOCK = 3
NON_TARGETS_PER_BLOCK = 15


@dataclass(frozen=True)
class SubjectCorpus:
    """
    The preprocessed sessions of a subject, rejected epochs included. The last in-car session is the test session.
    """

    subject_id: str
    in_lab: tuple[tuple[Epoch, ...], ...]
    in_car: tuple[tuple[Epoch, ...], ...]

    def check_complete(self, n_in_lab: int = 6, n_in_car: int = 3):
        """Raises if sessions are missing"""
        absent = []
        if len(self.in_lab) < n_in_lab:
            absent.append(f"{n_in_lab - len(self.in_lab)} of {n_in_lab} in-lab sessions")
        if len(self.in_car) < n_in_car:
            absent.append(f"{n_in_car - len(self.in_car)} of {n_in_car} in-car sessions")
        if absent:
            raise InvalidArgumentError(f"Subject {self.subject_id} misses {', '.join(absent)}")

    @property
    def test_session(self) -> tuple[Epoch, ...]:
        """The held-out last in-car session"""
        return self.in_car[-1]


def stratified_half(epochs: Sequence[Epoch], rng: np.random.Generator) -> list[Epoch]:
    """
    Draws half of the epochs of each class. The result keeps the input order.
    """
    labels = labels_of(epochs)
    chosen: list[int] = []
    for label in (0, 1):
        indices = np.flatnonzero(labels == label)
        chosen.extend(rng.permutation(indices)[: indices.size // 2].tolist())
    return [epochs[index] for index in sorted(chosen)]


def assemble_training_set(
    corpus: SubjectCorpus,
    tag: TrainingTag,
    seed: int = 0,
    n_hybrid: int = 5,
    n_in_lab: int = 6,
    n_in_car: int = 3,
) -> list[list[Epoch]]:
    """
    Returns the training sets of a tag with the epochs before rejection: one set for InLab (all in-lab sessions) and
    InCar (all but the last in-car session), `n_hybrid` stratified halves of their union for Hybrid.
    """
    corpus.check_complete(n_in_lab, n_in_car)
    in_lab = [epoch for session in corpus.in_lab for epoch in session]
    in_car = [epoch for session in corpus.in_car[:-1] for epoch in session]
    match tag:
        case TrainingTag.IN_LAB:
            return [in_lab]
        case TrainingTag.IN_CAR:
            return [in_car]
        case TrainingTag.HYBRID:
            rng = np.random.default_rng(seed)
            union = in_lab + in_car
            return [stratified_half(union, rng) for _ in range(n_hybrid)]
    raise InvalidArgumentError(f"Unknown training tag {tag}")


def _trial_hash(epoch: Epoch) -> bytes:
    return hashlib.blake2b(epoch.trial_id.encode("utf-8"), digest_size=16).digest()


@dataclass(frozen=True)
class SplitPlan:
    """
    A training set, its cross validation folds (indices into `train`) and the held-out test epochs.
    """

    train_tag: TrainingTag
    train: tuple[Epoch, ...]
    test: tuple[Epoch, ...]
    folds: tuple[tuple[IntArray, IntArray], ...]
    seed: int


def assert_no_leakage(plan: SplitPlan):
    """Raises if a test trial occurs in the training set or in a fold"""
    test_hashes = {_trial_hash(epoch) for epoch in plan.test}
    train_hashes = [_trial_hash(epoch) for epoch in plan.train]
    if leaked := test_hashes.intersection(train_hashes):
        raise AssertionError(f"{len(leaked)} test trials leaked into the training set")
    for fold_index, (fold_train, fold_validation) in enumerate(plan.folds):
        for index in np.concatenate([fold_train, fold_validation]):
            if train_hashes[int(index)] in test_hashes:
                raise AssertionError(f"A test trial leaked into fold {fold_index}")


def stratified_folds(labels: np.ndarray, k: int = 5, seed: int = 0) -> tuple[tuple[IntArray, IntArray], ...]:
    """Shuffled stratified k-fold split as (train indices, validation indices) per fold"""
    splitter = StratifiedKFold(n_splits=k, shuffle=True, random_state=seed % 2**32)
    labels = np.asarray(labels)
    return tuple(
        (train.astype(np.int64), validation.astype(np.int64))
        for train, validation in splitter.split(np.zeros(labels.size), labels)
    )


def make_split_plan(
    corpus: SubjectCorpus, train: Sequence[Epoch], tag: TrainingTag, n_folds: int = 5, seed: int = 0
) -> SplitPlan:
    """Builds the folds on the kept training epochs and checks the plan for leakage"""
    kept = tuple(kept_epochs(train))
    plan = SplitPlan(
        train_tag=tag,
        train=kept,
        test=tuple(corpus.test_session),
        folds=stratified_folds(labels_of(kept), n_folds, seed),
        seed=seed,
    )
    assert_no_leakage(plan)
    return plan


def run_blocks(labels: np.ndarray, rng: np.random.Generator) -> list[tuple[IntArray, IntArray]]:
    """
    Arranges validation trials into simulated runs of 3 target and 15 non-target trials. Returns (target indices,
    non-target indices) per block, the trials are drawn in a random order.
    """
    labels = np.asarray(labels)
    targets = rng.permutation(np.flatnonzero(labels == 1))
    non_targets = rng.permutation(np.flatnonzero(labels == 0))
    n_blocks = min(targets.size // TARGETS_PER_BLOCK, non_targets.size // NON_TARGETS_PER_BLOCK)
    if n_blocks == 0:
        raise InvalidArgumentError(
            f"{targets.size} targets and {non_targets.size} non-targets can't form a single run of "
            f"{TARGETS_PER_BLOCK + NON_TARGETS_PER_BLOCK} trials"
        )
    return [
        (
            targets[block * TARGETS_PER_BLOCK : (block + 1) * TARGETS_PER_BLOCK],
            non_targets[block * NON_TARGETS_PER_BLOCK : (block + 1) * NON_TARGETS_PER_BLOCK],
        )
        for block in range(n_blocks)
    ]


def simulated_run_accuracy(
    probabilities: np.ndarray, labels: np.ndarray, n_permutations: int = 100, seed: int = 0
) -> float:
    """
    Mean run accuracy over `n_permutations` arrangements of the validation trials into simulated runs. Every run
    gets a random target icon, the non-targets are spread over the other five icons.
    """
    rng = np.random.default_rng(seed)
    probabilities = np.asarray(probabilities, dtype=np.float64)
    outcomes: list[bool] = []
    for _ in range(n_permutations):
        for target_indices, non_target_indices in run_blocks(labels, rng):
            target_icon = int(rng.integers(N_ICONS))
            others = [icon for icon in range(N_ICONS) if icon != target_icon]
            trial_probs = [(target_icon, probabilities[index]) for index in target_indices]
            trial_probs.extend(
                (others[position % len(others)], probabilities[index])
                for position, index in enumerate(non_target_indices)
            )
            outcomes.append(aggregate_run(trial_probs, true_target=target_icon).correct)
    return float(np.mean(outcomes))


@dataclass(frozen=True)
class FamilyConfigs:
    """
    The model configurations and selection grids of both families
    """

    forest: ForestConfig = ForestConfig()
    forest_depth_grid: tuple[int, ...] = (12,)
    cnn: CnnConfig = CnnConfig()
    optimizer: OptimizerConfig = OptimizerConfig()
    cnn_epoch_grid: tuple[int, ...] = tuple(range(20, 201, 20))
    n_permutations: int = 100

    def with_selection(self, family: ModelKind, selected: int) -> "FamilyConfigs":
        """A copy with the selected epoch count (CNN) or tree depth (forest)"""
        if family == ModelKind.CNN:
            return replace(self, optimizer=self.optimizer.model_copy(update={"n_epochs": selected}))
        return replace(self, forest=self.forest.model_copy(update={"max_depth": selected}))

    @classmethod
    def from_experiment(cls, config: ExperimentConfig) -> "FamilyConfigs":
        """Takes the configurations of an experiment"""
        return cls(
            forest=config.forest,
            forest_depth_grid=config.forest_depth_grid,
            cnn=config.cnn,
            optimizer=config.optimizer,
            cnn_epoch_grid=config.cnn_epoch_grid,
            n_permutations=config.n_permutations,
        )


def _fit(
    family: ModelKind,
    inputs: np.ndarray,
    labels: np.ndarray,
    configs: FamilyConfigs,
    seed: int,
    **kwargs,
) -> TrainedModel:
    if family == ModelKind.FOREST:
        return fit_forest(inputs, labels, configs.forest.model_copy(update={"seed": seed}), **kwargs)
    return fit_cnn(inputs, labels, configs.cnn, configs.optimizer.model_copy(update={"seed": seed}), **kwargs)


def cv_select_epochs(
    plan: SplitPlan, family: ModelKind, configs: FamilyConfigs = FamilyConfigs(), seed: int = 0
) -> int:
    """
    Selects the number of training epochs (CNN) or the tree depth (forest) by cross validation on the training set.
    CNN candidates are scored by the simulated run accuracy of the validation folds, forest candidates by the single
    trial balanced accuracy. A single candidate is returned without training.
    """
    grid = configs.cnn_epoch_grid if family == ModelKind.CNN else configs.forest_depth_grid
    if len(grid) == 0:
        raise InvalidArgumentError("The selection grid is empty")
    if len(grid) == 1:
        return grid[0]
    inputs = model_inputs(family, plan.train)
    labels = labels_of(plan.train)
    scores: dict[int, list[float]] = {candidate: [] for candidate in grid}
    for fold_index, (train_index, validation_index) in enumerate(plan.folds):
        fold_seed = derive_seed(seed, f"fold-{fold_index}")
        validation_labels = labels[validation_index]
        # fails early if the fold is too small for a single simulated run
        run_blocks(validation_labels, np.random.default_rng(0))
        if family == ModelKind.CNN:

            def score_checkpoint(n_epochs: int, model: TrainedModel, fold_seed=fold_seed, index=validation_index):
                probabilities = predict_proba_batch(model, inputs[index])
                scores[n_epochs].append(
                    simulated_run_accuracy(probabilities, labels[index], configs.n_permutations, fold_seed)
                )

            optimizer = configs.optimizer.model_copy(update={"n_epochs": max(grid), "seed": fold_seed})
            fit_cnn(
                inputs[train_index],
                labels[train_index],
                configs.cnn,
                optimizer,
                checkpoints=grid,
                on_checkpoint=score_checkpoint,
            )
        else:
            for depth in grid:
                forest = configs.forest.model_copy(update={"max_depth": depth, "seed": fold_seed})
                model = fit_forest(inputs[train_index], labels[train_index], forest)
                predicted = predict_proba_batch(model, inputs[validation_index]) > 0.5
                scores[depth].append(float(balanced_accuracy_score(validation_labels, predicted)))
    mean_scores = {candidate: float(np.mean(values)) for candidate, values in scores.items()}
    best = max(grid, key=lambda candidate: (mean_scores[candidate], -candidate))
    _logger.info("%s selection %s -> %i", family, mean_scores, best)
    return best


class EvalEntry(BaseModel):
    """
    The held-out scores of one (subject, family, tag) combination. For Hybrid the scores are averaged over the
    repetitions and the confusion matrices summed.
    """

    model_config = ConfigDict(frozen=True, ser_json_inf_nan="constants")

    subject_id: str
    family: ModelKind
    tag: TrainingTag
    balanced_accuracy: float
    run_accuracy: float
    n_runs: int
    n_undecidable: int = 0
    confusion: tuple[tuple[int, ...], ...]
    repetition_curve: dict[int, float] = {}
    n_train: int = 0
    selected: Optional[int] = None


def _run_targets(epochs: Iterable[Epoch]) -> dict[int, IconId]:
    return {epoch.run: epoch.label.icon for epoch in epochs if epoch.is_target}


# pylint: disable=too-many-arguments, too-many-locals
def evaluate(
    model: TrainedModel,
    test_epochs: Sequence[Epoch],
    *,
    subject_id: Optional[str] = None,
    family: Optional[ModelKind] = None,
    tag: Optional[TrainingTag] = None,
    n_train: int = 0,
    selected: Optional[int] = None,
) -> EvalEntry:
    """
    Scores the model on the held-out session: balanced accuracy of the kept single trials, accuracy and confusion
    matrix of the runs (undecidable runs are counted, not scored) and the repetition curve.
    """
    kept = kept_epochs(test_epochs)
    probabilities = predict_epochs(model, kept)
    labels = labels_of(kept)
    balanced = float(balanced_accuracy_score(labels, probabilities > 0.5)) if kept else math.nan
    targets = _run_targets(test_epochs)
    by_run: dict[int, list[tuple[IconId, float]]] = {run: [] for run in sorted(targets)}
    for epoch, prob in zip(kept, probabilities):
        if epoch.run in by_run:
            by_run[epoch.run].append((epoch.label.icon, float(prob)))
    true_icons: list[int] = []
    predicted_icons: list[int] = []
    n_undecidable = 0
    for run, trial_probs in by_run.items():
        try:
            prediction = aggregate_run(trial_probs, run=run, true_target=targets[run])
        except RunUndecidableError:
            n_undecidable += 1
            continue
        true_icons.append(prediction.true_target.index)
        predicted_icons.append(prediction.predicted.index)
    if n_undecidable:
        _logger.warning("%i undecidable runs in the test session of %s", n_undecidable, model.subject_id)
    confusion = confusion_matrix(true_icons, predicted_icons, labels=list(range(N_ICONS)))
    max_reps = max((epoch.repetition for epoch in test_epochs), default=-1) + 1
    curve = repetition_sweep(kept, probabilities, max_reps) if kept and max_reps > 0 else {}
    return EvalEntry(
        subject_id=subject_id if subject_id is not None else model.subject_id,
        family=family if family is not None else model.kind,
        tag=tag if tag is not None else model.training_set_tag,
        balanced_accuracy=balanced,
        run_accuracy=float(np.mean(np.equal(true_icons, predicted_icons))) if true_icons else math.nan,
        n_runs=len(true_icons),
        n_undecidable=n_undecidable,
        confusion=tuple(tuple(int(value) for value in row) for row in confusion),
        repetition_curve=curve,
        n_train=n_train,
        selected=selected,
    )


def _average_entries(entries: Sequence[EvalEntry]) -> EvalEntry:
    first = entries[0]
    curve_keys = sorted(set.intersection(*(set(entry.repetition_curve) for entry in entries)))
    confusion = np.sum([np.asarray(entry.confusion) for entry in entries], axis=0)
    return first.model_copy(
        update={
            "balanced_accuracy": float(np.mean([entry.balanced_accuracy for entry in entries])),
            "run_accuracy": float(np.mean([entry.run_accuracy for entry in entries])),
            "n_runs": sum(entry.n_runs for entry in entries),
            "n_undecidable": sum(entry.n_undecidable for entry in entries),
            "confusion": tuple(tuple(int(value) for value in row) for row in confusion),
            "repetition_curve": {
                key: float(np.mean([entry.repetition_curve[key] for entry in entries])) for key in curve_keys
            },
            "n_train": int(round(np.mean([entry.n_train for entry in entries]))),
            "selected": None,
        }
    )


@dataclass
class TrainedEntry:
    """
    An evaluation entry together with the models it was computed from
    """

    entry: EvalEntry
    models: list[TrainedModel] = field(default_factory=list)


# pylint: disable=too-many-arguments
def evaluate_subject(
    corpus: SubjectCorpus,
    tags: Sequence[TrainingTag] = tuple(TrainingTag),
    families: Sequence[ModelKind] = tuple(ModelKind),
    configs: FamilyConfigs = FamilyConfigs(),
    seed: int = 0,
    n_folds: int = 5,
    n_hybrid: int = 5,
    n_in_lab: int = 6,
    n_in_car: int = 3,
) -> list[TrainedEntry]:
    """
    Trains and evaluates every (tag, family) combination of a subject, ordered by tag and family. The corpus must hold
    `n_in_lab` in-lab and `n_in_car` in-car sessions.
    """
    results: list[TrainedEntry] = []
    for tag in tags:
        training_sets = assemble_training_set(
            corpus, tag, derive_seed(seed, f"{corpus.subject_id}/{tag}/assemble"), n_hybrid, n_in_lab, n_in_car
        )
        for family in families:
            entries: list[EvalEntry] = []
            models: list[TrainedModel] = []
            for repetition, training_set in enumerate(training_sets):
                stage_seed = derive_seed(seed, f"{corpus.subject_id}/{tag}/{family}/{repetition}")
                plan = make_split_plan(corpus, training_set, tag, n_folds, stage_seed)
                selected = cv_select_epochs(plan, family, configs, stage_seed)
                tuned = configs.with_selection(family, selected)
                model = _fit(
                    family,
                    model_inputs(family, plan.train),
                    labels_of(plan.train),
                    tuned,
                    stage_seed,
                    subject_id=corpus.subject_id,
                    training_set_tag=tag,
                )
                models.append(model)
                entries.append(evaluate(model, plan.test, n_train=len(plan.train), selected=selected))
            entry = entries[0] if len(entries) == 1 else _average_entries(entries)
            _logger.info(
                "%s %s %s: run accuracy %.3f, balanced accuracy %.3f",
                corpus.subject_id,
                tag,
                family,
                entry.run_accuracy,
                entry.balanced_accuracy,
            )
            results.append(TrainedEntry(entry=entry, models=models))
    return results


class EvalReport(BaseModel):
    """
    The evaluation entries of all subjects, ordered by (subject, tag, family).
    """

    model_config = ConfigDict(frozen=True, ser_json_inf_nan="constants")

    entries: tuple[EvalEntry, ...]

    def sorted(self) -> "EvalReport":
        """A copy with the entries in canonical order"""
        tag_rank = {tag: index for index, tag in enumerate(TrainingTag)}
        family_rank = {family: index for index, family in enumerate(ModelKind)}
        return EvalReport(
            entries=tuple(
                sorted(
                    self.entries,
                    key=lambda entry: (entry.subject_id, tag_rank[entry.tag], family_rank[entry.family]),
                )
            )
        )

    def accuracies(self, family: ModelKind, tag: TrainingTag) -> dict[str, float]:
        """The run accuracy per subject of one column"""
        return {
            entry.subject_id: entry.run_accuracy
            for entry in self.entries
            if entry.family == family and entry.tag == tag
        }

    def render_table(self) -> str:
        """
        A text table of the run accuracies (subjects x family/tag), the column means and the across tag and across
        family comparisons.
        """
        families = [family for family in ModelKind if any(entry.family == family for entry in self.entries)]
        tags = [tag for tag in TrainingTag if any(entry.tag == tag for entry in self.entries)]
        columns = [(family, tag) for family in families for tag in tags]
        subjects = sorted({entry.subject_id for entry in self.entries})
        lookup = {(entry.subject_id, entry.family, entry.tag): entry for entry in self.entries}
        header = ["Subject"] + [f"{family}/{tag}" for family, tag in columns]
        rows = [header]
        for subject in subjects:
            row = [subject]
            for family, tag in columns:
                entry = lookup.get((subject, family, tag))
                row.append(f"{100 * entry.run_accuracy:.1f}" if entry is not None else "-")
            rows.append(row)
        mean_row = ["Mean"]
        for family, tag in columns:
            values = [value for value in self.accuracies(family, tag).values() if math.isfinite(value)]
            mean_row.append(f"{100 * np.mean(values):.1f}±{100 * np.std(values):.1f}" if values else "-")
        rows.append(mean_row)
        widths = [max(len(row[index]) for row in rows) for index in range(len(header))]
        lines = ["  ".join(cell.ljust(width) for cell, width in zip(row, widths)) for row in rows]
        lines.append("")
        for family in families:
            groups = [list(self.accuracies(family, tag).values()) for tag in tags]
            lines.append(f"{family} across tags: {_describe(lambda groups=groups: anova_oneway(groups))}")
        for tag in tags:
            groups_by_family = {str(family): list(self.accuracies(family, tag).values()) for family in families}
            if len(groups_by_family) < 2:
                continue
            for (first, second), result in _pairwise(groups_by_family).items():
                lines.append(f"{tag} {first} vs {second}: t={result.statistic:.2f}, p={result.p_value:.3f} (corrected)")
        return "\n".join(lines)


def _describe(test) -> str:
    try:
        result = test()
    except (InvalidArgumentError, DegenerateInputError) as error:
        return f"n/a ({error})"
    return f"F={result.statistic:.2f}, p={result.p_value:.3f}"


def _pairwise(groups: dict[str, list[float]]) -> dict:
    try:
        return pairwise_welch(groups)
    except (InvalidArgumentError, DegenerateInputError) as error:
        _logger.info("No pairwise comparison: %s", error)
        return {}


def probabilities_for(model: TrainedModel, epochs: Sequence[Epoch]) -> FloatArray:
    """Target probabilities of the kept epochs"""
    return predict_epochs(model, kept_epochs(epochs))
