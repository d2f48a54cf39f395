"""
Contains the orchestration of a whole experiment: a stage graph per subject (synthesis, preprocessing, features,
training and evaluation), the parallel execution over all subjects, the evaluation and quality reports over all
subjects and the manifest of the written artifacts.
"""

import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import networkx as nx
import numpy as np
from joblib import Parallel, delayed
from pydantic import BaseModel, ConfigDict

from .config import ExperimentConfig
from .core import Condition, Epoch, SessionSpec, TrainingTag
from .errors import StageFailedError
from .evaluation import EvalEntry, EvalReport, FamilyConfigs, SubjectCorpus, evaluate_subject
from .features import extract_features, write_features_csv
from .models import ModelKind, save_model
from .preprocess import preprocess_recording
from .report import QUALITY_FILES, read_sessions, write_quality_report
from .stream import IN_CAR_LOSS, IN_LAB_LOSS, read_recording, write_epochs, write_recording
from .synthgen import SubjectModel, default_roster, read_roster, synthesize_recording

_logger = logging.getLogger("erpdecoder.pipeline")

MANIFEST_NAME = "manifest.json"
REPORT_NAME = "eval_report.json"
TABLE_NAME = "eval_table.txt"
QUALITY_DIR = "quality"
EPOCHS_SUFFIX = ".erpe"
EVALUATE_STAGE = "evaluate"
REPORT_STAGE = "report"


@dataclass(frozen=True)
class SessionPlan:
    """
    Where and how a session of a subject is synthesized. The seed is derived from the master seed and `stage`.
    """

    subject_id: str
    session_id: str
    condition: Condition
    stage: str
    seed: int

    def spec(self, config: ExperimentConfig) -> SessionSpec:
        """The session layout"""
        if self.condition == Condition.IN_LAB:
            return SessionSpec.in_lab(self.seed)
        return SessionSpec.in_car(self.seed, config.in_car_runs, config.idle_s_range)


def session_plans(config: ExperimentConfig, subject_id: str) -> list[SessionPlan]:
    """The in-lab sessions lab1..labN followed by the in-car sessions car1..carM of a subject"""
    plans = []
    for condition, prefix, count in (
        (Condition.IN_LAB, "lab", config.n_in_lab_sessions),
        (Condition.IN_CAR, "car", config.n_in_car_sessions),
    ):
        for number in range(1, count + 1):
            stage = f"{subject_id}/synth/{prefix}{number}"
            plans.append(SessionPlan(subject_id, f"{prefix}{number}", condition, stage, config.seed_for(stage)))
    return plans


def load_roster(config: ExperimentConfig) -> tuple[SubjectModel, ...]:
    """The roster file of the config or the built-in roster"""
    config.validate_paths()
    return read_roster(config.roster_path) if config.roster_path is not None else default_roster()


def sha256_of(path: Path) -> str:
    """The hex digest of a file"""
    digest = hashlib.sha256()
    with open(path, "rb") as file:
        for chunk in iter(lambda: file.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


class ModelEntry(BaseModel):
    """
    A model file of the manifest
    """

    model_config = ConfigDict(frozen=True)

    subject_id: str
    tag: TrainingTag
    family: ModelKind
    repetition: int
    path: str
    sha256: str


class Manifest(BaseModel):
    """
    All artifacts of a pipeline run with their content hashes. Paths are relative to the output directory.
    """

    master_seed: int
    complete: bool = False
    failed_stage: Optional[str] = None
    failed_subject: Optional[str] = None
    artifacts: dict[str, str] = {}
    models: list[ModelEntry] = []

    def add(self, output_dir: Path, path: Path):
        """Hashes an artifact and adds it"""
        self.artifacts[path.relative_to(output_dir).as_posix()] = sha256_of(path)

    def sort(self):
        """Orders the model entries by (subject, tag, family, repetition)"""
        tag_rank = {tag: index for index, tag in enumerate(TrainingTag)}
        family_rank = {family: index for index, family in enumerate(ModelKind)}
        self.models.sort(
            key=lambda entry: (entry.subject_id, tag_rank[entry.tag], family_rank[entry.family], entry.repetition)
        )

    def write(self, path: Path) -> Path:
        """Writes the manifest as JSON with sorted keys"""
        self.sort()
        document = self.model_dump(mode="json")
        Path(path).write_text(json.dumps(document, sort_keys=True, indent=2) + "\n", encoding="utf-8")
        return Path(path)

    @classmethod
    def read(cls, path: Path) -> "Manifest":
        """Reads a manifest"""
        return cls.model_validate_json(Path(path).read_text(encoding="utf-8"))


Stage = Callable[[], None]


class StageGraph(nx.DiGraph):
    """
    The stages of a pipeline, edges point from a stage to its dependencies. Stages run in topological order, ties are
    broken by registration order. The first failing stage aborts the run.
    The StageGraph logs to "erpdecoder.pipeline" by default.
    """

    def __init__(self, subject: Optional[str] = None, logger: Optional[logging.Logger] = None):
        super().__init__()
        self.subject = subject
        self.completed: list[str] = []
        self._logger = logger if logger is not None else _logger

    def register(self, name: str, stage: Stage, depends_on: Optional[set[str]] = None):
        """Registers a stage. Its dependencies must be registered already."""
        depends_on = depends_on if depends_on is not None else set()
        for dependency in depends_on:
            if dependency not in self:
                raise ValueError(f"The specified dependency is not registered: {dependency}")
        if name in self:
            raise ValueError(f"The stage {name} is registered already")
        self.add_node(name, stage=stage, index=self.number_of_nodes())
        self.add_edges_from((name, dependency) for dependency in depends_on)

    @property
    def execution_order(self) -> list[str]:
        """The stage names, every stage after its dependencies"""
        return list(
            reversed(list(nx.lexicographical_topological_sort(self, key=lambda name: -self.nodes[name]["index"])))
        )

    def run(self):
        """Runs all stages, raising StageFailedError with the original exception as cause"""
        for name in self.execution_order:
            self._logger.debug("Running stage %s of %s", name, self.subject)
            try:
                self.nodes[name]["stage"]()
            except Exception as error:  # pylint: disable=broad-exception-caught
                self._logger.exception("Stage %s of %s failed", name, self.subject)
                raise StageFailedError(name, self.subject) from error
            self.completed.append(name)


@dataclass
class SubjectOutcome:
    """
    What a subject's stage graph produced. `error` is the original exception of the failed stage.
    """

    subject_id: str
    artifacts: list[Path] = field(default_factory=list)
    models: list[ModelEntry] = field(default_factory=list)
    entries: list[EvalEntry] = field(default_factory=list)
    failed_stage: Optional[str] = None
    error: Optional[BaseException] = None


@dataclass
class _SubjectWorkspace:
    config: ExperimentConfig
    subject: SubjectModel
    outcome: SubjectOutcome
    recordings: dict[str, Path] = field(default_factory=dict)
    sessions: dict[str, tuple[Epoch, ...]] = field(default_factory=dict)

    @property
    def directory(self) -> Path:
        return self.config.output_dir / self.subject.subject_id

    def synth(self):
        directory = self.directory / "recordings"
        directory.mkdir(parents=True, exist_ok=True)
        for plan in session_plans(self.config, self.subject.subject_id):
            loss_model = IN_LAB_LOSS if plan.condition == Condition.IN_LAB else IN_CAR_LOSS
            recording = synthesize_recording(
                plan.spec(self.config), self.subject, loss_model, np.random.default_rng(plan.seed), plan.session_id
            )
            path = write_recording(
                directory / f"{plan.session_id}.erpb",
                recording.header,
                recording.packets,
                recording.markers,
                recording.gaps,
            )
            self.recordings[plan.session_id] = path
            self.outcome.artifacts.append(path)

    def preprocess(self):
        directory = self.directory / "epochs"
        directory.mkdir(parents=True, exist_ok=True)
        for session_id, path in self.recordings.items():
            recording = read_recording(path)
            session = preprocess_recording(recording, self.config.preprocess)
            self.sessions[session_id] = session.epochs
            epochs_path = write_epochs(directory / f"{session_id}{EPOCHS_SUFFIX}", recording.header, session.epochs)
            report_path = directory / f"{session_id}_rejection.json"
            report_path.write_text(session.report.model_dump_json(indent=2), encoding="utf-8")
            self.outcome.artifacts.extend((epochs_path, report_path))

    def features(self):
        directory = self.directory / "features"
        directory.mkdir(parents=True, exist_ok=True)
        for session_id, epochs in self.sessions.items():
            vectors = [extract_features(epoch) for epoch in epochs if epoch.kept]
            self.outcome.artifacts.append(write_features_csv(directory / f"{session_id}.csv", vectors))

    def evaluate(self):
        directory = self.directory / "models"
        directory.mkdir(parents=True, exist_ok=True)
        corpus = SubjectCorpus(
            subject_id=self.subject.subject_id,
            in_lab=tuple(epochs for session_id, epochs in self.sessions.items() if session_id.startswith("lab")),
            in_car=tuple(epochs for session_id, epochs in self.sessions.items() if session_id.startswith("car")),
        )
        results = evaluate_subject(
            corpus,
            self.config.tags,
            self.config.families,
            FamilyConfigs.from_experiment(self.config),
            seed=self.config.seed_for(f"{self.subject.subject_id}/evaluate"),
            n_folds=self.config.n_folds,
            n_hybrid=self.config.hybrid_repetitions,
            n_in_lab=self.config.n_in_lab_sessions,
            n_in_car=self.config.n_in_car_sessions,
        )
        for result in results:
            entry = result.entry
            self.outcome.entries.append(entry)
            for repetition, model in enumerate(result.models):
                path = save_model(model, directory / f"{entry.tag}_{entry.family}_{repetition}.json")
                self.outcome.models.append(
                    ModelEntry(
                        subject_id=entry.subject_id,
                        tag=entry.tag,
                        family=entry.family,
                        repetition=repetition,
                        path=path.relative_to(self.config.output_dir).as_posix(),
                        sha256=sha256_of(path),
                    )
                )


def run_subject(config: ExperimentConfig, subject: SubjectModel) -> SubjectOutcome:
    """
    Runs the stage graph of one subject. A failure does not raise, it is reported in the outcome together with the
    artifacts written before.
    """
    outcome = SubjectOutcome(subject_id=subject.subject_id)
    workspace = _SubjectWorkspace(config, subject, outcome)
    graph = StageGraph(subject.subject_id)
    graph.register("synth", workspace.synth)
    graph.register("preprocess", workspace.preprocess, {"synth"})
    graph.register("features", workspace.features, {"preprocess"})
    graph.register("evaluate", workspace.evaluate, {"preprocess"})
    try:
        graph.run()
    except StageFailedError as error:
        outcome.failed_stage = error.stage
        outcome.error = error.__cause__
    return outcome


def _run_subject_job(config: ExperimentConfig, subject: SubjectModel, level: int) -> SubjectOutcome:
    logging.getLogger("erpdecoder").setLevel(level)
    return run_subject(config, subject)


@dataclass
class _ExperimentWorkspace:
    config: ExperimentConfig
    outcomes: Sequence[SubjectOutcome]
    manifest: Manifest
    report: EvalReport = field(default_factory=lambda: EvalReport(entries=()))

    def evaluate(self):
        entries = tuple(entry for outcome in self.outcomes for entry in outcome.entries)
        self.report = EvalReport(entries=entries).sorted()
        report_path = self.config.output_dir / REPORT_NAME
        report_path.write_text(self.report.model_dump_json(indent=2), encoding="utf-8")
        table_path = self.config.output_dir / TABLE_NAME
        table_path.write_text(self.report.render_table() + "\n", encoding="utf-8")
        self.manifest.add(self.config.output_dir, report_path)
        self.manifest.add(self.config.output_dir, table_path)

    def quality(self):
        directory = self.config.output_dir / QUALITY_DIR
        epochs_paths = [path for outcome in self.outcomes for path in outcome.artifacts if path.suffix == EPOCHS_SUFFIX]
        write_quality_report(
            read_sessions(epochs_paths),
            directory,
            self.report.accuracies(self.config.families[0], self.config.tags[0]),
            seed=self.config.seed_for(REPORT_STAGE),
            rejection=self.config.preprocess,
        )
        for name in QUALITY_FILES:
            if (directory / name).exists():
                self.manifest.add(self.config.output_dir, directory / name)


def run_pipeline(config: ExperimentConfig, subjects: Optional[Sequence[SubjectModel]] = None) -> EvalReport:
    """
    Runs the whole experiment and writes the artifacts, the evaluation report, the quality report and the manifest
    into the output directory. Subjects run in parallel with `config.jobs` workers, the evaluation report and the
    quality report follow once all subjects are done. The accuracies correlated in the quality report are those of
    the first family and the first tag of the config. If a stage fails, the manifest is written with
    `complete=false` and StageFailedError is raised.
    """
    roster = tuple(subjects) if subjects is not None else load_roster(config)
    config.output_dir.mkdir(parents=True, exist_ok=True)
    _logger.info("Running the pipeline for %i subjects with %i jobs", len(roster), config.jobs)
    level = logging.getLogger("erpdecoder").getEffectiveLevel()
    outcomes: list[SubjectOutcome] = Parallel(n_jobs=config.jobs)(
        delayed(_run_subject_job)(config, subject, level) for subject in roster
    )
    outcomes.sort(key=lambda item: item.subject_id)
    manifest = Manifest(master_seed=config.master_seed)
    config_path = config.write(config.output_dir / "config.json")
    manifest.add(config.output_dir, config_path)
    for outcome in outcomes:
        for path in outcome.artifacts:
            manifest.add(config.output_dir, path)
        manifest.models.extend(outcome.models)
    failed = [outcome for outcome in outcomes if outcome.failed_stage is not None]
    if failed:
        first = failed[0]
        manifest.failed_stage = first.failed_stage
        manifest.failed_subject = first.subject_id
        manifest.write(config.output_dir / MANIFEST_NAME)
        error = StageFailedError(first.failed_stage, first.subject_id)
        if isinstance(first.error, BaseException):
            raise error from first.error
        raise error
    workspace = _ExperimentWorkspace(config, outcomes, manifest)
    graph = StageGraph()
    graph.register(EVALUATE_STAGE, workspace.evaluate)
    graph.register(REPORT_STAGE, workspace.quality, {EVALUATE_STAGE})
    try:
        graph.run()
    except StageFailedError as error:
        manifest.failed_stage = error.stage
        manifest.write(config.output_dir / MANIFEST_NAME)
        raise
    manifest.complete = True
    manifest.write(config.output_dir / MANIFEST_NAME)
    _logger.info("Pipeline complete, %i artifacts", len(manifest.artifacts))
    return workspace.report
