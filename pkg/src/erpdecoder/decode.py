"""
Contains the aggregation of single trial probabilities into one icon prediction per run, the offline decoding of a
recording and its online twin consuming a replayed event feed.
"""

import asyncio
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import AsyncIterable, Callable, Iterable, Mapping, Optional, Sequence, TextIO

import numpy as np

from .core import N_ICONS, RUN_PAD_SAMPLES, SAMPLING_RATE_HZ, Epoch, IconId, run_segment_bounds
from .errors import InvalidArgumentError, RunUndecidableError
from .models import TrainedModel, predict_epochs
from .preprocess import PreprocessOptions, preprocess_run
from .stream import Event, GapEvent, MarkerEvent, Recording, RunEnd, StreamPacket, assemble_segment
from .types import FloatArray

_logger = logging.getLogger("erpdecoder.decode")

# markers may arrive slightly before the packet holding their onset
_TRIM_MARGIN_SAMPLES = SAMPLING_RATE_HZ


@dataclass(frozen=True)
class RunPrediction:
    """
    The icon chosen for one run. Icons without surviving trials have the mean probability -inf.
    """

    run: int
    per_icon_mean_prob: tuple[float, ...]
    predicted: IconId
    true_target: IconId
    n_trials_used: int

    @property
    def correct(self) -> bool:
        """True if the predicted icon is the target"""
        return self.predicted == self.true_target

    def to_json_dict(self) -> dict:
        """A JSON compatible representation, -inf becomes None"""
        return {
            "run": self.run,
            "per_icon_mean_prob": [prob if math.isfinite(prob) else None for prob in self.per_icon_mean_prob],
            "predicted": self.predicted.index,
            "true_target": self.true_target.index,
            "n_trials_used": self.n_trials_used,
            "correct": self.correct,
        }


def aggregate_run(
    trial_probs: Sequence[tuple[IconId | int, float]],
    rejected: Iterable[int] = frozenset(),
    *,
    run: int = 0,
    true_target: IconId | int = 0,
) -> RunPrediction:
    """
    Averages the target probabilities per icon over the surviving trials and predicts the icon with the highest mean.
    `rejected` holds positions in `trial_probs`. Ties go to the lowest icon index.
    """
    rejected = frozenset(rejected)
    groups: list[list[float]] = [[] for _ in range(N_ICONS)]
    for position, (icon, prob) in enumerate(trial_probs):
        if position not in rejected:
            groups[int(icon)].append(float(prob))
    n_used = sum(len(group) for group in groups)
    if n_used == 0:
        raise RunUndecidableError(run, len(trial_probs))
    means = tuple(sum(group) / len(group) if group else -math.inf for group in groups)
    best = max(range(N_ICONS), key=lambda index: (means[index], -index))
    return RunPrediction(
        run=run,
        per_icon_mean_prob=means,
        predicted=IconId(best),
        true_target=true_target if isinstance(true_target, IconId) else IconId(true_target),
        n_trials_used=n_used,
    )


def true_target_of(markers: Sequence[MarkerEvent]) -> IconId:
    """The target icon of a run"""
    for marker in markers:
        if marker.is_target:
            return marker.icon
    raise InvalidArgumentError(f"The run {markers[0].run if markers else '?'} has no target marker")


def predict_run(model: TrainedModel, epochs: Sequence[Epoch], run: int, true_target: IconId) -> RunPrediction:
    """Predicts the kept epochs of a run and aggregates them"""
    kept = [epoch for epoch in epochs if epoch.kept]
    probabilities = predict_epochs(model, kept)
    return aggregate_run(
        [(epoch.label.icon, prob) for epoch, prob in zip(kept, probabilities)], run=run, true_target=true_target
    )


def decode_recording(
    model: TrainedModel, recording: Recording, options: PreprocessOptions = PreprocessOptions()
) -> list[RunPrediction]:
    """
    The offline decoding: preprocesses every run on its segment and predicts it. Undecidable runs are skipped.
    """
    predictions: list[RunPrediction] = []
    for run, markers in recording.runs.items():
        start, stop = run_segment_bounds(
            [marker.onset_index for marker in markers], recording.n_samples, options.pad_samples
        )
        session = preprocess_run(
            recording.segment(start, stop),
            start,
            markers,
            recording.gaps,
            options,
            subject=recording.header.subject_id,
            session=recording.header.session_id,
        )
        try:
            predictions.append(predict_run(model, session.epochs, run, true_target_of(markers)))
        except RunUndecidableError as error:
            _logger.warning(str(error))
    return predictions


def repetition_sweep(
    epochs: Sequence[Epoch], probabilities: Sequence[float], max_reps: int
) -> dict[int, float]:
    """
    The run accuracy when only the first k repetition blocks of every run are aggregated, for k = 1..max_reps.
    `probabilities` are aligned with `epochs`, rejected epochs are ignored.
    """
    if len(epochs) != len(probabilities):
        raise InvalidArgumentError(f"{len(epochs)} epochs but {len(probabilities)} probabilities")
    if max_reps < 1:
        raise InvalidArgumentError(f"max_reps must be positive, got {max_reps}")
    runs: dict[tuple[str, str, int], list[tuple[Epoch, float]]] = {}
    targets: dict[tuple[str, str, int], IconId] = {}
    for epoch, prob in zip(epochs, probabilities):
        run_key = (epoch.subject, epoch.session, epoch.run)
        if epoch.is_target:
            targets[run_key] = epoch.label.icon
        if epoch.kept:
            runs.setdefault(run_key, []).append((epoch, float(prob)))
    curve: dict[int, float] = {}
    for k in range(1, max_reps + 1):
        outcomes: list[bool] = []
        for run_key, trials in runs.items():
            if run_key not in targets:
                continue
            selected = [(epoch.label.icon, prob) for epoch, prob in trials if epoch.repetition < k]
            if not selected:
                continue
            outcomes.append(aggregate_run(selected, run=run_key[2], true_target=targets[run_key]).correct)
        curve[k] = float(np.mean(outcomes)) if outcomes else math.nan
    return curve


@dataclass(frozen=True)
class FeedbackEvent:
    """
    The feedback shown to the driver after a run.
    """

    run: int
    predicted: int
    probabilities: tuple[float, ...]
    timestamp: float

    @classmethod
    def from_prediction(cls, prediction: RunPrediction, timestamp: float) -> "FeedbackEvent":
        """Creates the event of a run prediction"""
        return cls(
            run=prediction.run,
            predicted=prediction.predicted.index,
            probabilities=prediction.per_icon_mean_prob,
            timestamp=timestamp,
        )


class FeedbackWriter:
    """
    Writes feedback events as JSON lines. Can be used as `on_feedback` callback of `online_session`.
    """

    def __init__(self, stream: TextIO):
        self._stream = stream
        self.n_written = 0

    @classmethod
    def open(cls, path: Path) -> "FeedbackWriter":
        """Creates a writer on a new file, close it with `close`"""
        return cls(open(path, "w", encoding="utf-8"))  # pylint: disable=consider-using-with

    def __call__(self, event: FeedbackEvent):
        document = {
            "run": event.run,
            "predicted": event.predicted,
            "probabilities": [prob if math.isfinite(prob) else None for prob in event.probabilities],
            "timestamp": event.timestamp,
        }
        self._stream.write(json.dumps(document, sort_keys=True) + "\n")
        self._stream.flush()
        self.n_written += 1

    def close(self):
        """Closes the underlying stream"""
        self._stream.close()


class SampleBuffer:
    """
    Holds the packets, gaps and markers the online session still needs. Without pending markers only the last
    `pad_samples` samples are kept, which is the lead-in of the next run segment.
    """

    def __init__(self, pad_samples: int = RUN_PAD_SAMPLES):
        self.pad_samples = pad_samples
        self.packets: list[StreamPacket] = []
        self.gaps: list[GapEvent] = []
        self.markers: list[MarkerEvent] = []
        self._head = 0

    def add(self, event: StreamPacket | GapEvent | MarkerEvent):
        """Stores a feed event"""
        match event:
            case StreamPacket():
                self.packets.append(event)
                self._head = max(self._head, event.stop_index)
            case GapEvent():
                self.gaps.append(event)
                self._head = max(self._head, event.stop_index)
            case MarkerEvent():
                self.markers.append(event)

    def pop_run(self, run_end: RunEnd) -> tuple[FloatArray, list[MarkerEvent], list[GapEvent]]:
        """Returns the segment, the markers and the gaps of the finished run and releases its markers"""
        markers = [marker for marker in self.markers if marker.run == run_end.run]
        self.markers = [marker for marker in self.markers if marker.run != run_end.run]
        segment = assemble_segment(self.packets, run_end.start_index, run_end.stop_index)
        gaps = [gap for gap in self.gaps if gap.overlaps(run_end.start_index, run_end.stop_index)]
        self.trim()
        return segment, markers, gaps

    def trim(self):
        """Drops the data no pending or future run segment can reach"""
        keep_from = self._head - self.pad_samples - _TRIM_MARGIN_SAMPLES
        if self.markers:
            keep_from = min(keep_from, min(marker.onset_index for marker in self.markers) - self.pad_samples)
        self.packets = [packet for packet in self.packets if packet.stop_index > keep_from]
        self.gaps = [gap for gap in self.gaps if gap.stop_index > keep_from]


@dataclass
class OnlineResult:
    """
    The predictions of an online session and the latency from run end to feedback in seconds.
    """

    predictions: list[RunPrediction] = field(default_factory=list)
    latencies_s: list[float] = field(default_factory=list)
    n_undecidable: int = 0

    @property
    def latency_stats(self) -> Mapping[str, float]:
        """Mean and maximum latency"""
        if not self.latencies_s:
            return {"mean_s": 0.0, "max_s": 0.0}
        return {"mean_s": float(np.mean(self.latencies_s)), "max_s": float(np.max(self.latencies_s))}


FeedbackCallback = Callable[[FeedbackEvent], None]


# pylint: disable=too-many-arguments
async def online_session(
    model: TrainedModel,
    feed: AsyncIterable[Event],
    options: PreprocessOptions = PreprocessOptions(),
    on_feedback: Optional[FeedbackCallback] = None,
    *,
    subject: str = "",
    session: str = "",
) -> OnlineResult:
    """
    Buffers the feed and decodes every run as soon as its RunEnd arrives, with the same preprocessing as
    `decode_recording`. Runs whose trials are all rejected produce no prediction. The feed must be replayed with the
    `pad_samples` of `options`, otherwise InvalidArgumentError is raised.
    """
    loop = asyncio.get_running_loop()
    buffer = SampleBuffer(options.pad_samples)
    result = OnlineResult()
    async for event in feed:
        if not isinstance(event, RunEnd):
            buffer.add(event)
            if isinstance(event, StreamPacket) and not buffer.markers:
                buffer.trim()
            continue
        received = loop.time()
        segment, markers, gaps = buffer.pop_run(event)
        if not markers:
            _logger.warning("Run %i ended without markers", event.run)
            continue
        expected_start = max(0, min(marker.onset_index for marker in markers) - options.pad_samples)
        if event.start_index != expected_start:
            raise InvalidArgumentError(
                f"Run {event.run} of the feed starts at sample {event.start_index} but the options pad it to "
                f"{expected_start}, replay the recording with pad_samples={options.pad_samples}"
            )
        epochs = preprocess_run(segment, event.start_index, markers, gaps, options, subject=subject, session=session)
        try:
            prediction = predict_run(model, epochs.epochs, event.run, true_target_of(markers))
        except RunUndecidableError as error:
            _logger.warning(str(error))
            result.n_undecidable += 1
            continue
        if prediction.n_trials_used < len(markers):
            _logger.info("Run %i decided on %i of %i trials", event.run, prediction.n_trials_used, len(markers))
        result.predictions.append(prediction)
        if on_feedback is not None:
            on_feedback(FeedbackEvent.from_prediction(prediction, event.timestamp))
        result.latencies_s.append(loop.time() - received)
    return result
