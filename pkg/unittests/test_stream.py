import asyncio
import pickle
import struct
import zlib
from pathlib import Path

import numpy as np
import pytest

from erpdecoder.core import QualityFlag, SessionSpec
from erpdecoder.errors import FormatError, InvalidArgumentError
from erpdecoder.stream import (
    IN_CAR_LOSS,
    NO_LOSS,
    GapEvent,
    LossModel,
    MarkerEvent,
    Recording,
    Replayer,
    RunEnd,
    StreamPacket,
    draw_presentation_delays,
    export_csv,
    iter_blocks,
    iterate_queue,
    read_epochs,
    read_recording,
    replay,
    replay_order,
    transmit,
    write_epochs,
    write_recording,
)
from erpdecoder.synthgen import default_roster, synthesize_recording
from unittests.helpers import make_epoch


@pytest.fixture(scope="module")
def recording() -> Recording:
    spec = SessionSpec.in_car(seed=3, n_runs=2)
    lossy = LossModel(packet_loss_prob=0.03, burst_continuation_prob=0.5)
    return synthesize_recording(spec, default_roster()[2], lossy, np.random.default_rng(3), "car1")


def _write(path: Path, recording: Recording) -> Path:
    return write_recording(path, recording.header, recording.packets, recording.markers, recording.gaps)


def _raw_block(block_type: int, payload: bytes) -> bytes:
    crc = zlib.crc32(payload, zlib.crc32(bytes((block_type,))))
    return struct.pack("<BI", block_type, len(payload)) + payload + struct.pack("<I", crc)


class TestTransmit:
    def test_without_loss(self):
        stream = np.random.default_rng(0).normal(size=(3, 110))
        packets, gaps = transmit(stream, NO_LOSS, np.random.default_rng(0))
        assert gaps == []
        assert [packet.first_sample_index for packet in packets] == [0, 25, 50, 75, 100]
        assert packets[-1].n_samples == 10
        assert packets[0].samples.dtype == np.float32
        assert np.allclose(packets[1].samples, stream[:, 25:50].T.astype(np.float32))

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_packets_and_gaps_cover_the_stream(self, seed: int):
        stream = np.zeros((3, 5000))
        packets, gaps = transmit(stream, LossModel(packet_loss_prob=0.2), np.random.default_rng(seed))
        covered = np.zeros(5000, dtype=int)
        for packet in packets:
            covered[packet.first_sample_index : packet.stop_index] += 1
        for gap in gaps:
            covered[gap.start_index : gap.stop_index] += 1
        assert np.all(covered == 1)
        assert gaps
        for first, second in zip(gaps, gaps[1:]):
            assert second.start_index > first.stop_index

    @pytest.mark.parametrize(
        "arguments",
        [
            pytest.param({"packet_loss_prob": 1.0}, id="certain loss"),
            pytest.param({"burst_continuation_prob": -0.1}, id="negative continuation"),
            pytest.param({"packet_size": 0}, id="empty packets"),
        ],
    )
    def test_invalid_loss_model(self, arguments: dict):
        with pytest.raises(InvalidArgumentError):
            LossModel(**arguments)

    def test_mean_burst(self):
        assert LossModel(burst_continuation_prob=0.5).mean_burst_packets == 2
        assert IN_CAR_LOSS.packet_loss_prob < LossModel(packet_loss_prob=0.042 / 18).packet_loss_prob

    def test_presentation_delays(self):
        delays = draw_presentation_delays(20_000, np.random.default_rng(1))
        assert delays.min() >= 0.030 - 3 * 0.0027
        assert delays.max() <= 0.030 + 3 * 0.0027
        assert delays.mean() == pytest.approx(0.030, abs=2e-4)


class TestGapEvent:
    @pytest.mark.parametrize(
        ["start", "stop", "expected"],
        [
            pytest.param(0, 100, False, id="before"),
            pytest.param(0, 101, True, id="touching first sample"),
            pytest.param(149, 300, True, id="touching last sample"),
            pytest.param(150, 300, False, id="after"),
        ],
    )
    def test_overlaps(self, start: int, stop: int, expected: bool):
        assert GapEvent(100, 50).overlaps(start, stop) is expected


class TestContainer:
    def test_recording_round_trip(self, tmp_path: Path, recording: Recording):
        restored = read_recording(_write(tmp_path / "car1.erpb", recording))
        assert restored.header == recording.header
        assert restored.packets == recording.packets
        assert restored.markers == recording.markers
        assert restored.gaps == recording.gaps
        assert restored.markers[0].icon.color == recording.header.spec.icon_colors[restored.markers[0].icon.index]

    def test_missing_samples_are_nan(self, recording: Recording):
        assert recording.gaps
        gap = recording.gaps[0]
        assert np.isnan(recording.samples[:, gap.start_index : gap.stop_index]).all()
        delivered = recording.packets[0]
        assert not np.isnan(recording.segment(delivered.first_sample_index, delivered.stop_index)).any()

    def test_segment_out_of_range(self, recording: Recording):
        with pytest.raises(InvalidArgumentError):
            recording.segment(0, recording.n_samples + 1)

    def test_runs(self, recording: Recording):
        assert list(recording.runs) == [0, 1]
        assert all(len(markers) == 18 for markers in recording.runs.values())

    def test_checksum_mismatch(self, tmp_path: Path, recording: Recording):
        path = _write(tmp_path / "car1.erpb", recording)
        data = bytearray(path.read_bytes())
        data[-10] ^= 0xFF
        path.write_bytes(bytes(data))
        with pytest.raises(FormatError) as error:
            read_recording(path)
        assert error.value.message == "Checksum mismatch"
        assert error.value.block is not None

    def test_bad_magic(self, tmp_path: Path):
        path = tmp_path / "bad.erpb"
        path.write_bytes(b"RIFF\x00\x01")
        with pytest.raises(FormatError) as error:
            read_recording(path)
        assert error.value.offset == 0

    def test_unsupported_major_version(self, tmp_path: Path, recording: Recording):
        path = _write(tmp_path / "car1.erpb", recording)
        data = bytearray(path.read_bytes())
        data[4:6] = struct.pack("<H", 2 << 8)
        path.write_bytes(bytes(data))
        with pytest.raises(FormatError) as error:
            read_recording(path)
        assert error.value.offset == 4

    def test_truncated(self, tmp_path: Path, recording: Recording):
        path = _write(tmp_path / "car1.erpb", recording)
        path.write_bytes(path.read_bytes()[:-3])
        with pytest.raises(FormatError) as error:
            read_recording(path)
        assert error.value.message == "Truncated block"

    def test_blocks_follow_the_event_order(self, tmp_path: Path, recording: Recording):
        blocks = list(iter_blocks(_write(tmp_path / "car1.erpb", recording).read_bytes()))
        assert blocks[0].block_type == 0
        assert [block.index for block in blocks] == list(range(len(blocks)))
        kinds = {StreamPacket: 1, MarkerEvent: 2, GapEvent: 3}
        assert [block.block_type for block in blocks[1:]] == [kinds[type(event)] for event in recording.events()]
        assert blocks[0].offset == 6
        timestamps = [event.timestamp for event in recording.events()]
        assert timestamps == sorted(timestamps)

    def test_unknown_blocks_are_skipped(self, tmp_path: Path, recording: Recording):
        path = _write(tmp_path / "car1.erpb", recording)
        path.write_bytes(path.read_bytes() + _raw_block(42, b"from a newer minor version"))
        assert read_recording(path).markers == recording.markers

    def test_format_error_is_picklable(self):
        error = pickle.loads(pickle.dumps(FormatError("Checksum mismatch", offset=17, block="block 3 (marker)")))
        assert (error.message, error.offset, error.block) == ("Checksum mismatch", 17, "block 3 (marker)")
        assert str(error) == "Checksum mismatch (byte offset 17, block 3 (marker))"

    def test_epochs_round_trip(self, tmp_path: Path, recording: Recording):
        rng = np.random.default_rng(0)
        epochs = [
            make_epoch(0, icon=2, target=True, data=rng.normal(size=(3, 400))),
            make_epoch(1, icon=3, data=rng.normal(size=(3, 400)), quality=QualityFlag.REJECTED_GAP),
        ]
        header, restored = read_epochs(write_epochs(tmp_path / "lab1.erpe", recording.header, epochs))
        assert header.content == "epochs"
        assert restored == epochs
        assert [epoch.quality for epoch in restored] == [QualityFlag.KEPT, QualityFlag.REJECTED_GAP]
        assert all(np.array_equal(a.data, b.data) for a, b in zip(restored, epochs))
        assert restored[0].label == epochs[0].label

    def test_recording_header_content(self, tmp_path: Path, recording: Recording):
        header = recording.header.model_copy(update={"content": "epochs"})
        with pytest.raises(InvalidArgumentError):
            write_recording(tmp_path / "x.erpb", header, [], [], [])

    def test_export_csv(self, tmp_path: Path, recording: Recording):
        samples, markers, gaps = export_csv(recording, tmp_path / "csv")
        delivered = sum(packet.n_samples for packet in recording.packets)
        assert len(samples.read_text(encoding="utf-8").splitlines()) == delivered + 1
        assert markers.read_text(encoding="utf-8").splitlines()[0].startswith("nominal_onset_s,icon,is_target,run")
        assert len(markers.read_text(encoding="utf-8").splitlines()) == len(recording.markers) + 1
        assert len(gaps.read_text(encoding="utf-8").splitlines()) == len(recording.gaps) + 1


class TestReplay:
    async def test_feed_is_ordered(self, recording: Recording):
        events = [event async for event in replay(recording)]
        assert events == replay_order(recording)
        timestamps = [event.timestamp for event in events]
        assert timestamps == sorted(timestamps)
        assert sum(isinstance(event, MarkerEvent) for event in events) == len(recording.markers)

    async def test_run_end_follows_its_segment(self, recording: Recording):
        events = [event async for event in replay(recording)]
        run_ends = [(position, event) for position, event in enumerate(events) if isinstance(event, RunEnd)]
        assert [run_end.run for _, run_end in run_ends] == [0, 1]
        for position, run_end in run_ends:
            later = events[position + 1 :]
            assert not any(
                isinstance(event, StreamPacket) and event.first_sample_index < run_end.stop_index for event in later
            )
            assert not any(isinstance(event, MarkerEvent) and event.run == run_end.run for event in later)

    def test_run_end_follows_the_pad(self, recording: Recording):
        default = [event for event in replay_order(recording) if isinstance(event, RunEnd)]
        narrow = [event for event in replay_order(recording, pad_samples=600) if isinstance(event, RunEnd)]
        for wide_end, narrow_end in zip(default, narrow):
            first_onset = min(marker.onset_index for marker in recording.runs[wide_end.run])
            assert narrow_end.start_index == max(0, first_onset - 600)
            assert narrow_end.start_index >= wide_end.start_index
            assert narrow_end.stop_index <= wide_end.stop_index
            assert narrow_end.timestamp <= wide_end.timestamp

    async def test_paced_replay(self, recording: Recording):
        loop = asyncio.get_running_loop()
        start = loop.time()
        count = 0
        duration_s = recording.n_samples / 500
        async for _ in replay(recording, rate_multiplier=duration_s / 0.2):
            count += 1
        assert loop.time() - start >= 0.15
        assert count == len(replay_order(recording))

    async def test_invalid_rate(self, recording: Recording):
        with pytest.raises(InvalidArgumentError):
            async for _ in replay(recording, rate_multiplier=0):
                pass

    async def test_subscribers_see_the_same_feed(self, recording: Recording):
        replayer = Replayer(recording)
        queues = [replayer.subscribe(), replayer.subscribe()]

        async def collect(queue) -> list:
            return [event async for event in iterate_queue(queue)]

        count, first, second = await asyncio.gather(replayer.run(), collect(queues[0]), collect(queues[1]))
        assert first == second
        assert len(first) == count
