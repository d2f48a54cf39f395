"""
Contains the command line interface. Every stage of the pipeline is a subcommand, seeds of single stages are derived
from `--seed` the same way `run_pipeline` derives them from the master seed.
"""

import argparse
import asyncio
import json
import logging
import math
import sys
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .config import ExperimentConfig, configure_logging, derive_seed
from .core import Condition, Epoch, TrainingTag, kept_epochs, labels_of, parse_channels
from .decode import FeedbackWriter, decode_recording, online_session
from .errors import ExitCode, InvalidArgumentError, exit_code_for
from .evaluation import EvalReport, FamilyConfigs, SplitPlan, cv_select_epochs, evaluate, stratified_folds
from .features import extract_features, write_features_csv
from .models import ModelKind, TrainedModel, fit_cnn, fit_forest, load_model, model_inputs, save_model
from .pipeline import REPORT_STAGE, SessionPlan, load_roster, run_pipeline
from .preprocess import PreprocessOptions, preprocess_recording
from .report import read_sessions, write_quality_report
from .stream import (
    IN_CAR_LOSS,
    IN_LAB_LOSS,
    NO_LOSS,
    export_csv,
    read_epochs,
    read_recording,
    replay,
    write_epochs,
    write_recording,
)
from .synthgen import synthesize_recording, write_roster

_logger = logging.getLogger("erpdecoder.cli")

Command = Callable[[argparse.Namespace], None]


def _write_json(path: Optional[Path], document: dict | list):
    text = json.dumps(document, sort_keys=True, indent=2)
    if path is None:
        print(text)
    else:
        Path(path).write_text(text + "\n", encoding="utf-8")


def _load_config(args: argparse.Namespace) -> ExperimentConfig:
    config = ExperimentConfig.from_file(args.config) if args.config is not None else ExperimentConfig()
    updates: dict = {}
    if getattr(args, "seed", None) is not None:
        updates["master_seed"] = args.seed
    if getattr(args, "jobs", None) is not None:
        updates["jobs"] = args.jobs
    if getattr(args, "roster", None) is not None:
        updates["roster_path"] = args.roster
    if getattr(args, "output_dir", None) is not None:
        updates["output_dir"] = args.output_dir
    return ExperimentConfig.model_validate({**config.model_dump(), **updates}) if updates else config


def _session_plan(args: argparse.Namespace) -> SessionPlan:
    condition = Condition(args.condition)
    stage = f"{args.subject}/synth/{args.session_id}"
    return SessionPlan(args.subject, args.session_id, condition, stage, derive_seed(args.seed, stage))


def _write_session(args: argparse.Namespace, with_loss: bool):
    config = _load_config(args)
    roster = {subject.subject_id: subject for subject in load_roster(config)}
    if args.subject not in roster:
        raise InvalidArgumentError(f"Unknown subject {args.subject}, the roster contains {', '.join(sorted(roster))}")
    plan = _session_plan(args)
    loss_model = NO_LOSS
    if with_loss:
        loss_model = IN_LAB_LOSS if plan.condition == Condition.IN_LAB else IN_CAR_LOSS
    recording = synthesize_recording(
        plan.spec(config), roster[args.subject], loss_model, np.random.default_rng(plan.seed), plan.session_id
    )
    write_recording(args.output, recording.header, recording.packets, recording.markers, recording.gaps)
    _logger.info("Wrote %s with %i markers and %i gaps", args.output, len(recording.markers), len(recording.gaps))


def _synth(args: argparse.Namespace):
    if args.write_roster is not None:
        write_roster(args.write_roster, load_roster(_load_config(args)))
    if args.output is not None:
        _write_session(args, with_loss=False)


def _record(args: argparse.Namespace):
    _write_session(args, with_loss=True)


def _export_csv(args: argparse.Namespace):
    for path in export_csv(read_recording(args.recording), args.output_dir):
        print(path)


def _preprocess_options(args: argparse.Namespace) -> PreprocessOptions:
    updates: dict = {}
    if args.channels is not None:
        updates["step2_channels"] = parse_channels(args.channels)
    if args.delay_correction_ms is not None:
        updates["delay_correction_ms"] = args.delay_correction_ms
    if args.threshold_uv is not None:
        updates["amplitude_threshold_uv"] = args.threshold_uv
    return PreprocessOptions.model_validate({**PreprocessOptions().model_dump(), **updates})


def _preprocess(args: argparse.Namespace):
    recording = read_recording(args.recording)
    session = preprocess_recording(recording, _preprocess_options(args))
    write_epochs(args.output, recording.header, session.epochs)
    _write_json(args.report, session.report.model_dump(mode="json"))


def _features(args: argparse.Namespace):
    _, epochs = read_epochs(args.epochs)
    write_features_csv(args.output, [extract_features(epoch) for epoch in kept_epochs(epochs)])


def _read_all_epochs(paths: Sequence[Path]) -> list[Epoch]:
    epochs: list[Epoch] = []
    for path in paths:
        epochs.extend(read_epochs(path)[1])
    return epochs


def _train(args: argparse.Namespace):
    config = _load_config(args)
    family = ModelKind(args.family)
    tag = TrainingTag(args.tag)
    train = tuple(kept_epochs(_read_all_epochs(args.epochs)))
    subject_id = args.subject if args.subject is not None else (train[0].subject if train else "")
    configs = FamilyConfigs.from_experiment(config)
    if args.select:
        plan = SplitPlan(
            train_tag=tag,
            train=train,
            test=(),
            folds=stratified_folds(labels_of(train), config.n_folds, args.seed),
            seed=args.seed,
        )
        configs = configs.with_selection(family, cv_select_epochs(plan, family, configs, args.seed))
    inputs, labels = model_inputs(family, train), labels_of(train)
    model: TrainedModel
    if family == ModelKind.FOREST:
        forest = configs.forest.model_copy(update={"seed": args.seed})
        model = fit_forest(inputs, labels, forest, subject_id=subject_id, training_set_tag=tag)
    else:
        optimizer = configs.optimizer.model_copy(update={"seed": args.seed})
        model = fit_cnn(inputs, labels, configs.cnn, optimizer, subject_id=subject_id, training_set_tag=tag)
    save_model(model, args.output)


def _evaluate(args: argparse.Namespace):
    test = _read_all_epochs(args.test_epochs)
    report = EvalReport(entries=tuple(evaluate(load_model(path), test) for path in args.model)).sorted()
    if args.output is not None:
        Path(args.output).write_text(report.model_dump_json(indent=2), encoding="utf-8")
    table = report.render_table()
    if args.table is not None:
        Path(args.table).write_text(table + "\n", encoding="utf-8")
    else:
        print(table)


def _online_sim(args: argparse.Namespace):
    model = load_model(args.model)
    recording = read_recording(args.recording)
    options = _preprocess_options(args)
    writer = FeedbackWriter.open(args.feedback) if args.feedback is not None else None
    try:
        result = asyncio.run(
            online_session(
                model,
                replay(recording, args.rate, options.pad_samples),
                options,
                writer,
                subject=recording.header.subject_id,
                session=recording.header.session_id,
            )
        )
    finally:
        if writer is not None:
            writer.close()
    document: dict = {
        "predictions": [prediction.to_json_dict() for prediction in result.predictions],
        "n_undecidable": result.n_undecidable,
        "latency": dict(result.latency_stats),
    }
    if args.compare_offline:
        offline = decode_recording(model, recording, options)
        document["matches_offline"] = offline == result.predictions
    _write_json(args.output, document)


def _report(args: argparse.Namespace):
    sessions = read_sessions(args.epochs)
    accuracies = None
    if args.eval_report is not None:
        report = EvalReport.model_validate_json(Path(args.eval_report).read_text(encoding="utf-8"))
        accuracies = report.accuracies(ModelKind(args.family), TrainingTag(args.tag))
    quality = write_quality_report(
        sessions,
        args.output_dir,
        accuracies,
        seed=derive_seed(args.seed, REPORT_STAGE),
        rejection=_preprocess_options(args),
    )
    _write_json(None, quality.model_dump(mode="json"))


def _pipeline(args: argparse.Namespace):
    report = run_pipeline(_load_config(args))
    print(report.render_table())


def _add_session_arguments(parser: argparse.ArgumentParser):
    parser.add_argument("--subject", required=True, help="Subject ID of the roster, e.g. s003")
    parser.add_argument("--session-id", required=True, help="e.g. lab1 or car3")
    parser.add_argument("--condition", required=True, choices=[str(condition) for condition in Condition])
    parser.add_argument("--roster", type=Path, help="Roster JSON, the built-in roster if omitted")
    parser.add_argument("--config", type=Path, help="Experiment config JSON (in-car runs and idle intervals)")


def _add_preprocess_arguments(parser: argparse.ArgumentParser):
    parser.add_argument("--channels", help="Channels of the amplitude rejection, e.g. Cz,Pz (default: Cz,Pz,Fp1)")
    parser.add_argument("--delay-correction-ms", type=float, help="Display delay compensation, 0 disables it")
    parser.add_argument("--threshold-uv", type=float, help="Amplitude rejection threshold in µV")


def build_parser() -> argparse.ArgumentParser:
    """The argument parser with all subcommands"""
    parser = argparse.ArgumentParser(prog="erpdecoder", description="Synthetic in-car ERP decoding experiments")
    parser.add_argument("--verbose", action="count", default=0, help="Once for info, twice for debug")
    subparsers = parser.add_subparsers(dest="command", required=True)

    def add(name: str, command: Command, help_text: str) -> argparse.ArgumentParser:
        subparser = subparsers.add_parser(name, help=help_text)
        subparser.add_argument("--seed", type=int, default=0, help="Master seed")
        subparser.set_defaults(func=command)
        return subparser

    synth = add("synth", _synth, "Write the roster or a loss free synthetic session")
    _add_session_arguments(synth)
    synth.add_argument("--output", type=Path, help="Recording file")
    synth.add_argument("--write-roster", type=Path, help="Write the roster as JSON")

    record = add("record", _record, "Synthesize a session and send it through the simulated wireless link")
    _add_session_arguments(record)
    record.add_argument("--output", type=Path, required=True, help="Recording file")

    csv_export = add("export-csv", _export_csv, "Export a recording as CSV files")
    csv_export.add_argument("--recording", type=Path, required=True)
    csv_export.add_argument("--output-dir", type=Path, required=True)

    preprocess = add("preprocess", _preprocess, "Filter, epoch and screen a recording")
    preprocess.add_argument("--recording", type=Path, required=True)
    preprocess.add_argument("--output", type=Path, required=True, help="Epochs file")
    preprocess.add_argument("--report", type=Path, help="Rejection report JSON, stdout if omitted")
    _add_preprocess_arguments(preprocess)

    features = add("features", _features, "Write the feature vectors of the kept epochs as CSV")
    features.add_argument("--epochs", type=Path, required=True)
    features.add_argument("--output", type=Path, required=True)

    train = add("train", _train, "Train a model on epochs files")
    train.add_argument("--epochs", type=Path, nargs="+", required=True)
    train.add_argument("--family", choices=[str(kind) for kind in ModelKind], required=True)
    train.add_argument("--tag", choices=[str(tag) for tag in TrainingTag], default=str(TrainingTag.IN_LAB))
    train.add_argument("--subject", help="Subject ID stored in the model, taken from the epochs if omitted")
    train.add_argument("--select", action="store_true", help="Select epochs or depth by cross validation")
    train.add_argument("--config", type=Path, help="Experiment config JSON with the model configs")
    train.add_argument("--output", type=Path, required=True, help="Model file")

    evaluation = add("evaluate", _evaluate, "Evaluate models on held-out epochs")
    evaluation.add_argument("--model", type=Path, nargs="+", required=True)
    evaluation.add_argument("--test-epochs", type=Path, nargs="+", required=True)
    evaluation.add_argument("--output", type=Path, help="EvalReport JSON")
    evaluation.add_argument("--table", type=Path, help="Rendered table, stdout if omitted")

    online = add("online-sim", _online_sim, "Replay a recording into the online decoder")
    online.add_argument("--model", type=Path, required=True)
    online.add_argument("--recording", type=Path, required=True)
    online.add_argument("--rate", type=float, default=math.inf, help="Replay speed, real time is 1")
    online.add_argument("--feedback", type=Path, help="Feedback events as JSON lines")
    online.add_argument("--compare-offline", action="store_true", help="Also decode offline and compare")
    online.add_argument("--output", type=Path, help="Predictions JSON, stdout if omitted")
    _add_preprocess_arguments(online)

    report = add("report", _report, "Signal quality report and plot data")
    report.add_argument("--epochs", type=Path, nargs="+", required=True)
    report.add_argument("--output-dir", type=Path, required=True)
    report.add_argument("--eval-report", type=Path, help="EvalReport JSON for the accuracy correlations")
    report.add_argument("--family", choices=[str(kind) for kind in ModelKind], default=str(ModelKind.FOREST))
    report.add_argument("--tag", choices=[str(tag) for tag in TrainingTag], default=str(TrainingTag.IN_LAB))
    _add_preprocess_arguments(report)

    pipeline = add("pipeline", _pipeline, "Run the whole experiment")
    pipeline.add_argument("--config", type=Path, help="Experiment config JSON")
    pipeline.add_argument("--roster", type=Path)
    pipeline.add_argument("--output-dir", type=Path)
    pipeline.add_argument("--jobs", type=int, help="Subjects processed in parallel")
    pipeline.set_defaults(seed=None)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Runs a subcommand and returns the exit code"""
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        level = {0: None, 1: "INFO"}.get(args.verbose, "DEBUG")
        configure_logging(level)
        args.func(args)
    except Exception as error:  # pylint: disable=broad-exception-caught
        _logger.debug("Command failed", exc_info=error)
        print(f"erpdecoder {args.command}: {error}", file=sys.stderr)
        return int(exit_code_for(error))
    return int(ExitCode.SUCCESS)


if __name__ == "__main__":
    sys.exit(main())
