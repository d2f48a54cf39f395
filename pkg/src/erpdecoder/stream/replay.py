"""
Contains the replay of recordings as timed event feed. Events are emitted in timestamp order, optionally paced against
the wall clock. Every run additionally gets a RunEnd event once its analysis segment is complete.
"""

import asyncio
import logging
import math
from typing import AsyncIterator, Optional

from ..core import RUN_PAD_SAMPLES, SAMPLING_RATE_HZ, run_segment_bounds
from ..errors import InvalidArgumentError
from .container import Event, Recording, RunEnd, canonical_order

_YIELD_EVERY = 256


def run_end_events(recording: Recording, pad_samples: int = RUN_PAD_SAMPLES) -> list[RunEnd]:
    """
    Creates the RunEnd events of a recording. A run ends with the packet carrying the last sample of its segment,
    the segment is padded by `pad_samples` like in `preprocess_recording`.
    """
    packet_size = recording.header.packet_size
    ends = []
    for run, markers in recording.runs.items():
        start, stop = run_segment_bounds([marker.onset_index for marker in markers], recording.n_samples, pad_samples)
        last_index = min(recording.n_samples, ((stop - 1) // packet_size + 1) * packet_size) - 1
        ends.append(RunEnd(run=run, start_index=start, stop_index=stop, timestamp=last_index / SAMPLING_RATE_HZ))
    return ends


def replay_order(recording: Recording, pad_samples: int = RUN_PAD_SAMPLES) -> list[Event]:
    """All events of the replay feed in emission order"""
    return canonical_order([*recording.events(), *run_end_events(recording, pad_samples)])


async def replay(
    recording: Recording, rate_multiplier: float = math.inf, pad_samples: int = RUN_PAD_SAMPLES
) -> AsyncIterator[Event]:
    """
    Yields the events of the recording in timestamp order. With a finite `rate_multiplier` the feed is paced against
    an absolute clock, so a 10 s recording takes 10 s at rate 1.0. `math.inf` replays as fast as possible.
    `pad_samples` must match the `PreprocessOptions` of the consumer.
    """
    if not rate_multiplier > 0:
        raise InvalidArgumentError(f"rate_multiplier must be positive, got {rate_multiplier}")
    loop = asyncio.get_running_loop()
    start_time = loop.time()
    for count, event in enumerate(replay_order(recording, pad_samples)):
        if math.isfinite(rate_multiplier):
            delay = start_time + event.timestamp / rate_multiplier - loop.time()
            if delay > 0:
                await asyncio.sleep(delay)
        elif count % _YIELD_EVERY == 0:
            await asyncio.sleep(0)
        yield event


class Replayer:
    """
    A single producer feeding any number of subscribers. Every subscriber gets its own queue with the complete,
    ordered feed, terminated by None.
    """

    def __init__(
        self,
        recording: Recording,
        rate_multiplier: float = math.inf,
        logger: Optional[logging.Logger] = None,
        pad_samples: int = RUN_PAD_SAMPLES,
    ):
        self.recording = recording
        self.rate_multiplier = rate_multiplier
        self.pad_samples = pad_samples
        self._queues: list[asyncio.Queue[Optional[Event]]] = []
        self._logger = logger if logger is not None else logging.getLogger("erpdecoder.Replayer")

    def subscribe(self) -> asyncio.Queue[Optional[Event]]:
        """Returns a new queue receiving the feed. Subscribe before calling `run`."""
        queue: asyncio.Queue[Optional[Event]] = asyncio.Queue()
        self._queues.append(queue)
        return queue

    async def run(self) -> int:
        """Feeds all subscribers and returns the number of emitted events"""
        count = 0
        async for event in replay(self.recording, self.rate_multiplier, self.pad_samples):
            for queue in self._queues:
                queue.put_nowait(event)
            count += 1
        for queue in self._queues:
            queue.put_nowait(None)
        self._logger.info(
            "Replayed %i events of %s to %i subscribers", count, self.recording.header.session_id, len(self._queues)
        )
        return count


async def iterate_queue(queue: asyncio.Queue[Optional[Event]]) -> AsyncIterator[Event]:
    """Turns a subscriber queue into an async iterator"""
    while (event := await queue.get()) is not None:
        yield event
