import json
from pathlib import Path

import pytest

from erpdecoder.cli import main
from erpdecoder.config import ExperimentConfig
from erpdecoder.errors import ExitCode
from erpdecoder.models import ForestConfig, ModelKind, load_model
from erpdecoder.stream import read_epochs, read_recording, write_recording


@pytest.fixture(scope="module")
def workspace(tmp_path_factory: pytest.TempPathFactory) -> Path:
    directory = tmp_path_factory.mktemp("cli")
    ExperimentConfig(in_car_runs=2, forest=ForestConfig(n_trees=10, max_depth=6)).write(directory / "config.json")
    for session_id in ("car1", "car2"):
        arguments = ["--subject", "s003", "--session-id", session_id, "--condition", "InCar"]
        exit_code = main(
            ["record", *arguments, "--config", str(directory / "config.json"), "--output", str(directory / session_id)]
        )
        assert exit_code == ExitCode.SUCCESS
    return directory


def _run(*argv: str | Path) -> int:
    return main([str(argument) for argument in argv])


class TestCommands:
    def test_record(self, workspace: Path):
        recording = read_recording(workspace / "car1")
        assert recording.header.subject_id == "s003"
        assert len(recording.markers) == 36
        assert read_recording(workspace / "car2").markers != recording.markers

    def test_preprocess_and_features(self, workspace: Path, tmp_path: Path):
        exit_code = _run(
            "preprocess",
            "--recording",
            workspace / "car1",
            "--output",
            tmp_path / "car1.erpe",
            "--report",
            tmp_path / "report.json",
        )
        assert exit_code == ExitCode.SUCCESS
        header, epochs = read_epochs(tmp_path / "car1.erpe")
        assert header.session_id == "car1"
        report = json.loads((tmp_path / "report.json").read_text(encoding="utf-8"))
        assert report["n_total"] == len(epochs) == 36
        assert _run("features", "--epochs", tmp_path / "car1.erpe", "--output", tmp_path / "f.csv") == ExitCode.SUCCESS
        n_kept = sum(epoch.kept for epoch in epochs)
        assert len((tmp_path / "f.csv").read_text(encoding="utf-8").splitlines()) == n_kept + 1

    def test_empty_session(self, workspace: Path, tmp_path: Path):
        recording = read_recording(workspace / "car1")
        write_recording(tmp_path / "empty.erpb", recording.header, recording.packets, [], recording.gaps)
        exit_code = _run(
            "preprocess",
            "--recording",
            tmp_path / "empty.erpb",
            "--output",
            tmp_path / "empty.erpe",
            "--report",
            tmp_path / "report.json",
        )
        assert exit_code == ExitCode.SUCCESS
        assert read_epochs(tmp_path / "empty.erpe")[1] == []
        assert json.loads((tmp_path / "report.json").read_text(encoding="utf-8"))["n_total"] == 0
        assert _run("features", "--epochs", tmp_path / "empty.erpe", "--output", tmp_path / "f.csv") == ExitCode.SUCCESS
        assert len((tmp_path / "f.csv").read_text(encoding="utf-8").splitlines()) == 1

    def test_channel_selection(self, workspace: Path, tmp_path: Path, capsys: pytest.CaptureFixture):
        exit_code = _run(
            "preprocess", "--recording", workspace / "car1", "--output", tmp_path / "e", "--channels", "Cz,Pz"
        )
        assert exit_code == ExitCode.SUCCESS
        assert json.loads(capsys.readouterr().out)["channels_used"] == ["Cz", "Pz"]

    def test_export_csv(self, workspace: Path, tmp_path: Path, capsys: pytest.CaptureFixture):
        assert _run("export-csv", "--recording", workspace / "car1", "--output-dir", tmp_path) == ExitCode.SUCCESS
        printed = capsys.readouterr().out.splitlines()
        assert [Path(line).name for line in printed] == ["samples.csv", "markers.csv", "gaps.csv"]

    def test_train_evaluate_online(self, workspace: Path, tmp_path: Path):
        for session_id in ("car1", "car2"):
            _run("preprocess", "--recording", workspace / session_id, "--output", tmp_path / f"{session_id}.erpe")
        config = workspace / "config.json"
        model_path = tmp_path / "forest.json"
        exit_code = _run(
            "train",
            "--epochs",
            tmp_path / "car1.erpe",
            "--family",
            "Forest",
            "--tag",
            "InCar",
            "--config",
            config,
            "--seed",
            "4",
            "--output",
            model_path,
        )
        assert exit_code == ExitCode.SUCCESS
        model = load_model(model_path)
        assert model.kind == ModelKind.FOREST
        assert model.subject_id == "s003"
        assert model.seed == 4
        exit_code = _run(
            "evaluate",
            "--model",
            model_path,
            "--test-epochs",
            tmp_path / "car2.erpe",
            "--output",
            tmp_path / "eval.json",
            "--table",
            tmp_path / "table.txt",
        )
        assert exit_code == ExitCode.SUCCESS
        (entry,) = json.loads((tmp_path / "eval.json").read_text(encoding="utf-8"))["entries"]
        assert entry["n_runs"] + entry["n_undecidable"] == 2
        assert (tmp_path / "table.txt").read_text(encoding="utf-8").startswith("Subject")
        exit_code = _run(
            "online-sim",
            "--model",
            model_path,
            "--recording",
            workspace / "car2",
            "--compare-offline",
            "--feedback",
            tmp_path / "feedback.jsonl",
            "--output",
            tmp_path / "online.json",
        )
        assert exit_code == ExitCode.SUCCESS
        online = json.loads((tmp_path / "online.json").read_text(encoding="utf-8"))
        assert online["matches_offline"] is True
        n_feedback = len((tmp_path / "feedback.jsonl").read_text(encoding="utf-8").splitlines())
        assert n_feedback == len(online["predictions"])


class TestExitCodes:
    def test_unknown_subject(self, tmp_path: Path):
        exit_code = _run(
            "record", "--subject", "s999", "--session-id", "car1", "--condition", "InCar", "--output", tmp_path / "x"
        )
        assert exit_code == ExitCode.CONFIG_ERROR

    def test_missing_config(self, tmp_path: Path):
        exit_code = _run("pipeline", "--config", tmp_path / "absent.json")
        assert exit_code == ExitCode.CONFIG_ERROR

    def test_malformed_recording(self, tmp_path: Path, capsys: pytest.CaptureFixture):
        (tmp_path / "broken").write_bytes(b"RIFF\x00\x00\x00\x00")
        exit_code = _run("preprocess", "--recording", tmp_path / "broken", "--output", tmp_path / "e")
        assert exit_code == ExitCode.FORMAT_ERROR
        assert "byte offset 0" in capsys.readouterr().err

    def test_usage_error(self):
        with pytest.raises(SystemExit) as error:
            main(["train", "--family", "Svm"])
        assert error.value.code == 2
