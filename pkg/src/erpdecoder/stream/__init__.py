"""
The simulated acquisition chain, the recording container and the replay of recordings.
"""

from .acquisition import (
    DEFAULT_PACKET_SIZE,
    IN_CAR_LOSS,
    IN_LAB_LOSS,
    NO_LOSS,
    GapEvent,
    LossModel,
    MarkerEvent,
    StreamPacket,
    draw_presentation_delays,
    transmit,
)
from .container import (
    Event,
    Recording,
    RecordingHeader,
    RunEnd,
    assemble_segment,
    export_csv,
    iter_blocks,
    read_epochs,
    read_recording,
    write_epochs,
    write_recording,
)
from .replay import Replayer, iterate_queue, replay, replay_order
