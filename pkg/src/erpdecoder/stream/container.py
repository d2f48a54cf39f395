"""
Contains the recording container: a little endian, length prefixed block format.

    file   := magic "ERPB" | u16 version (major << 8 | minor) | block*
    block  := u8 type | u32 payload length | payload | u32 CRC32(type byte + payload)

Block types: 0 JSON header (first block), 1 samples (u64 start index, u32 n, float32 channel-major), 2 marker,
3 gap, 4 epoch (u32 JSON length, JSON metadata, float64 data). Readers skip unknown block types of the same major
version. Events are written in timestamp order, ties are broken by kind (gap, packet, marker) and input order.
"""

import csv
import dataclasses
import json
import logging
import struct
import zlib
from dataclasses import dataclass
from enum import IntEnum
from functools import cached_property
from pathlib import Path
from typing import Iterable, Iterator, Literal, Optional, Sequence, TypeAlias

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from ..core import (
    CHANNEL_ROWS,
    EPOCH_SAMPLES,
    SAMPLING_RATE_HZ,
    Condition,
    Epoch,
    IconId,
    QualityFlag,
    SessionSpec,
    TrialKind,
    TrialLabel,
)
from ..errors import FormatError, InvalidArgumentError
from ..types import FloatArray
from .acquisition import DEFAULT_PACKET_SIZE, GapEvent, MarkerEvent, StreamPacket

_logger = logging.getLogger("erpdecoder.container")

MAGIC = b"ERPB"
FORMAT_MAJOR = 1
FORMAT_MINOR = 0

_VERSION = struct.Struct("<H")
_BLOCK_HEAD = struct.Struct("<BI")
_CRC = struct.Struct("<I")
_SAMPLES_HEAD = struct.Struct("<QI")
_MARKER = struct.Struct("<ddBBIII")
_GAP = struct.Struct("<QI")
_EPOCH_HEAD = struct.Struct("<I")


class BlockType(IntEnum):
    """
    The block types known to this version of the reader
    """

    HEADER = 0
    SAMPLES = 1
    MARKER = 2
    GAP = 3
    EPOCH = 4


class RecordingHeader(BaseModel):
    """
    The header block of a container file
    """

    model_config = ConfigDict(frozen=True)

    schema_version: Literal[1] = 1
    content: Literal["recording", "epochs"] = "recording"
    subject_id: str
    session_id: str
    condition: Condition
    sampling_rate_hz: Literal[500] = SAMPLING_RATE_HZ
    channel_names: tuple[str, ...] = tuple(str(channel) for channel in CHANNEL_ROWS)
    n_samples: int = Field(ge=0)
    packet_size: int = Field(default=DEFAULT_PACKET_SIZE, ge=1)
    seed: int = Field(ge=0, lt=2**64)
    spec: Optional[SessionSpec] = None


@dataclass(frozen=True)
class RunEnd:
    """
    Emitted by the replay once every sample of a run's analysis segment was delivered (or reported missing).
    """

    run: int
    start_index: int
    stop_index: int
    timestamp: float


Event: TypeAlias = StreamPacket | MarkerEvent | GapEvent | RunEnd
_KIND_RANK: dict[type, int] = {GapEvent: 0, StreamPacket: 1, MarkerEvent: 2, RunEnd: 3}


def canonical_order(events: Iterable[Event]) -> list[Event]:
    """
    Sorts events by timestamp. Ties are broken by kind and, within a kind, by input order.
    """
    indexed = list(enumerate(events))
    indexed.sort(key=lambda pair: (pair[1].timestamp, _KIND_RANK[type(pair[1])], pair[0]))
    return [event for _, event in indexed]


def assemble_segment(packets: Iterable[StreamPacket], start: int, stop: int, n_channels: int = 3) -> FloatArray:
    """
    Returns the samples [start, stop) as (channels, stop - start) float64 array, missing samples are NaN.
    """
    segment = np.full((n_channels, max(0, stop - start)), np.nan, dtype=np.float64)
    for packet in packets:
        lo, hi = max(start, packet.first_sample_index), min(stop, packet.stop_index)
        if lo < hi:
            segment[:, lo - start : hi - start] = packet.samples[
                lo - packet.first_sample_index : hi - packet.first_sample_index
            ].T
    return segment


@dataclass(frozen=True, eq=False)
class Recording:
    """
    A recorded session: the delivered packets, the stimulus markers and the gaps of the sample stream.
    """

    header: RecordingHeader
    packets: tuple[StreamPacket, ...]
    markers: tuple[MarkerEvent, ...]
    gaps: tuple[GapEvent, ...]

    @property
    def n_samples(self) -> int:
        """Length of the stream in samples, including missing ones"""
        return self.header.n_samples

    @cached_property
    def samples(self) -> FloatArray:
        """The whole stream as (3, n) float64 array, missing samples are NaN"""
        return assemble_segment(self.packets, 0, self.n_samples, len(self.header.channel_names))

    def segment(self, start: int, stop: int) -> FloatArray:
        """The samples [start, stop), missing samples are NaN"""
        if not 0 <= start <= stop <= self.n_samples:
            raise InvalidArgumentError(f"Segment [{start}, {stop}) is outside of [0, {self.n_samples})")
        return self.samples[:, start:stop].copy()

    @cached_property
    def runs(self) -> dict[int, tuple[MarkerEvent, ...]]:
        """The markers grouped by run, runs in ascending order"""
        grouped: dict[int, list[MarkerEvent]] = {}
        for marker in self.markers:
            grouped.setdefault(marker.run, []).append(marker)
        return {run: tuple(grouped[run]) for run in sorted(grouped)}

    def events(self) -> list[Event]:
        """All events in file order"""
        return canonical_order([*self.packets, *self.markers, *self.gaps])


def _block(block_type: int, payload: bytes) -> bytes:
    head = _BLOCK_HEAD.pack(block_type, len(payload))
    crc = zlib.crc32(payload, zlib.crc32(bytes((block_type,))))
    return head + payload + _CRC.pack(crc)


def _file_head() -> bytes:
    return MAGIC + _VERSION.pack(FORMAT_MAJOR << 8 | FORMAT_MINOR)


def _header_payload(header: RecordingHeader) -> bytes:
    return json.dumps(header.model_dump(mode="json"), sort_keys=True, separators=(",", ":")).encode()


def _encode_event(event: Event) -> bytes:
    match event:
        case StreamPacket():
            channel_major = np.ascontiguousarray(event.samples.T, dtype="<f4")
            payload = _SAMPLES_HEAD.pack(event.first_sample_index, event.n_samples) + channel_major.tobytes()
            return _block(BlockType.SAMPLES, payload)
        case MarkerEvent():
            payload = _MARKER.pack(
                event.nominal_onset_s,
                event.display_delay_s,
                event.icon.index,
                int(event.is_target),
                event.run,
                event.trial_index,
                event.repetition,
            )
            return _block(BlockType.MARKER, payload)
        case GapEvent():
            return _block(BlockType.GAP, _GAP.pack(event.start_index, event.length_samples))
    raise TypeError(f"Events of type {type(event).__name__} are not stored in recordings")


def encode_recording(
    header: RecordingHeader,
    packets: Sequence[StreamPacket],
    markers: Sequence[MarkerEvent],
    gaps: Sequence[GapEvent],
) -> bytes:
    """
    Encodes a recording into the container format
    """
    chunks = [_file_head(), _block(BlockType.HEADER, _header_payload(header))]
    chunks.extend(_encode_event(event) for event in canonical_order([*packets, *markers, *gaps]))
    return b"".join(chunks)


def write_recording(
    path: Path,
    header: RecordingHeader,
    packets: Sequence[StreamPacket],
    markers: Sequence[MarkerEvent],
    gaps: Sequence[GapEvent],
) -> Path:
    """
    Writes a recording file. Packets must be sorted by index.
    """
    if header.content != "recording":
        raise InvalidArgumentError("The header of a recording file must have content='recording'")
    path = Path(path)
    path.write_bytes(encode_recording(header, packets, markers, gaps))
    _logger.debug("Wrote %s: %i packets, %i markers, %i gaps", path, len(packets), len(markers), len(gaps))
    return path


@dataclass(frozen=True)
class RawBlock:
    """
    A block as found in the file
    """

    index: int
    offset: int
    block_type: int
    payload: bytes

    @property
    def description(self) -> str:
        """Names the block for error messages"""
        try:
            type_name = BlockType(self.block_type).name.lower()
        except ValueError:
            type_name = f"unknown type {self.block_type}"
        return f"block {self.index} ({type_name})"


def iter_blocks(data: bytes) -> Iterator[RawBlock]:
    """
    Iterates over the blocks of a container in file order and verifies their checksums.
    """
    head_size = len(MAGIC) + _VERSION.size
    if len(data) < head_size or data[: len(MAGIC)] != MAGIC:
        raise FormatError("Bad magic, this is not an ERPB file", offset=0)
    (version,) = _VERSION.unpack_from(data, len(MAGIC))
    if version >> 8 != FORMAT_MAJOR:
        raise FormatError(f"Unsupported major version {version >> 8}", offset=len(MAGIC))
    offset = head_size
    index = 0
    while offset < len(data):
        if offset + _BLOCK_HEAD.size > len(data):
            raise FormatError("Truncated block head", offset=offset, block=f"block {index}")
        block_type, length = _BLOCK_HEAD.unpack_from(data, offset)
        payload_start = offset + _BLOCK_HEAD.size
        payload_stop = payload_start + length
        if payload_stop + _CRC.size > len(data):
            raise FormatError("Truncated block", offset=offset, block=f"block {index}")
        payload = data[payload_start:payload_stop]
        block = RawBlock(index=index, offset=offset, block_type=block_type, payload=payload)
        (stored_crc,) = _CRC.unpack_from(data, payload_stop)
        if zlib.crc32(payload, zlib.crc32(bytes((block_type,)))) != stored_crc:
            raise FormatError("Checksum mismatch", offset=offset, block=block.description)
        yield block
        offset = payload_stop + _CRC.size
        index += 1


def _decode_header(block: RawBlock) -> RecordingHeader:
    if block.block_type != BlockType.HEADER:
        raise FormatError("The first block must be the header", offset=block.offset, block=block.description)
    try:
        return RecordingHeader.model_validate_json(block.payload)
    except ValueError as error:
        raise FormatError(f"Invalid header: {error}", offset=block.offset, block=block.description) from error


def _icon(index: int, spec: Optional[SessionSpec]) -> IconId:
    return spec.icon(index) if spec is not None else IconId(index)


def _decode_packet(block: RawBlock, n_channels: int) -> StreamPacket:
    first, n_samples = _SAMPLES_HEAD.unpack_from(block.payload)
    expected = _SAMPLES_HEAD.size + 4 * n_channels * n_samples
    if len(block.payload) != expected:
        raise FormatError("Sample block has an inconsistent length", offset=block.offset, block=block.description)
    channel_major = np.frombuffer(block.payload, dtype="<f4", offset=_SAMPLES_HEAD.size).reshape(n_channels, n_samples)
    return StreamPacket(first, np.ascontiguousarray(channel_major.T, dtype=np.float32))


def _decode_marker(block: RawBlock, spec: Optional[SessionSpec]) -> MarkerEvent:
    if len(block.payload) != _MARKER.size:
        raise FormatError("Marker block has an inconsistent length", offset=block.offset, block=block.description)
    onset, delay, icon, is_target, run, trial_index, repetition = _MARKER.unpack(block.payload)
    return MarkerEvent(
        nominal_onset_s=onset,
        icon=_icon(icon, spec),
        is_target=bool(is_target),
        run=run,
        trial_index=trial_index,
        repetition=repetition,
        display_delay_s=delay,
    )


def decode_recording(data: bytes) -> Recording:
    """
    Decodes a recording from the container format
    """
    blocks = iter_blocks(data)
    first = next(blocks, None)
    if first is None:
        raise FormatError("The file contains no header", offset=len(MAGIC) + _VERSION.size)
    header = _decode_header(first)
    n_channels = len(header.channel_names)
    packets: list[StreamPacket] = []
    markers: list[MarkerEvent] = []
    gaps: list[GapEvent] = []
    for block in blocks:
        match block.block_type:
            case BlockType.SAMPLES:
                packets.append(_decode_packet(block, n_channels))
            case BlockType.MARKER:
                markers.append(_decode_marker(block, header.spec))
            case BlockType.GAP:
                if len(block.payload) != _GAP.size:
                    raise FormatError("Inconsistent gap block", offset=block.offset, block=block.description)
                gaps.append(GapEvent(*_GAP.unpack(block.payload)))
            case _:
                _logger.debug("Skipping %s at offset %i", block.description, block.offset)
    return Recording(header=header, packets=tuple(packets), markers=tuple(markers), gaps=tuple(gaps))


def read_recording(path: Path) -> Recording:
    """
    Reads a recording file
    """
    return decode_recording(Path(path).read_bytes())


def _epoch_payload(epoch: Epoch) -> bytes:
    metadata = {
        "subject": epoch.subject,
        "session": epoch.session,
        "run": epoch.run,
        "trial_index": epoch.trial_index,
        "repetition": epoch.repetition,
        "kind": str(epoch.label.kind),
        "icon": epoch.icon,
        "onset_index": epoch.onset_index,
        "t0": epoch.t0,
        "quality": str(epoch.quality),
    }
    encoded = json.dumps(metadata, sort_keys=True, separators=(",", ":")).encode()
    data = np.ascontiguousarray(epoch.data, dtype="<f8").tobytes()
    return _EPOCH_HEAD.pack(len(encoded)) + encoded + data


def _decode_epoch(block: RawBlock, spec: Optional[SessionSpec]) -> Epoch:
    (json_length,) = _EPOCH_HEAD.unpack_from(block.payload)
    data_start = _EPOCH_HEAD.size + json_length
    n_channels = len(CHANNEL_ROWS)
    if len(block.payload) != data_start + 8 * n_channels * EPOCH_SAMPLES:
        raise FormatError("Epoch block has an inconsistent length", offset=block.offset, block=block.description)
    metadata = json.loads(block.payload[_EPOCH_HEAD.size : data_start])
    data = np.frombuffer(block.payload, dtype="<f8", offset=data_start).reshape(n_channels, EPOCH_SAMPLES)
    return Epoch(
        subject=metadata["subject"],
        session=metadata["session"],
        run=metadata["run"],
        trial_index=metadata["trial_index"],
        repetition=metadata["repetition"],
        label=TrialLabel(TrialKind(metadata["kind"]), _icon(metadata["icon"], spec)),
        onset_index=metadata["onset_index"],
        t0=metadata["t0"],
        data=data.astype(np.float64),
        quality=QualityFlag(metadata["quality"]),
    )


def write_epochs(path: Path, header: RecordingHeader, epochs: Iterable[Epoch]) -> Path:
    """
    Writes an epochs file: the container with a header block and one epoch block per epoch.
    """
    header = header.model_copy(update={"content": "epochs"})
    chunks = [_file_head(), _block(BlockType.HEADER, _header_payload(header))]
    chunks.extend(_block(BlockType.EPOCH, _epoch_payload(epoch)) for epoch in epochs)
    path = Path(path)
    path.write_bytes(b"".join(chunks))
    return path


def read_epochs(path: Path) -> tuple[RecordingHeader, list[Epoch]]:
    """
    Reads an epochs file
    """
    blocks = iter_blocks(Path(path).read_bytes())
    first = next(blocks, None)
    if first is None:
        raise FormatError("The file contains no header", offset=len(MAGIC) + _VERSION.size)
    header = _decode_header(first)
    epochs = [_decode_epoch(block, header.spec) for block in blocks if block.block_type == BlockType.EPOCH]
    return header, epochs


def export_csv(recording: Recording, directory: Path) -> list[Path]:
    """
    Writes the recording as samples.csv (index, timestamp, channels), markers.csv and gaps.csv for debugging.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    samples_path, markers_path, gaps_path = (directory / name for name in ("samples.csv", "markers.csv", "gaps.csv"))
    with samples_path.open("w", newline="", encoding="utf-8") as file:
        writer = csv.writer(file)
        writer.writerow(("index", "timestamp", *recording.header.channel_names))
        for packet in recording.packets:
            for offset, row in enumerate(packet.samples):
                index = packet.first_sample_index + offset
                writer.writerow((index, repr(index / SAMPLING_RATE_HZ), *(repr(float(value)) for value in row)))
    with markers_path.open("w", newline="", encoding="utf-8") as file:
        writer = csv.writer(file)
        fields = [field.name for field in dataclasses.fields(MarkerEvent)]
        writer.writerow(fields)
        for marker in recording.markers:
            writer.writerow(
                [marker.icon.index if name == "icon" else getattr(marker, name) for name in fields]
            )
    with gaps_path.open("w", newline="", encoding="utf-8") as file:
        writer = csv.writer(file)
        writer.writerow(("start_index", "length_samples"))
        writer.writerows((gap.start_index, gap.length_samples) for gap in recording.gaps)
    return [samples_path, markers_path, gaps_path]
