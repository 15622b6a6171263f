"""Record serialization and the framed source/wing/merger session."""

from .formats import (
    FORMATS,
    DecodeError,
    decode_record,
    decode_stream,
    encode_record,
    encode_stream,
    frame_byte,
    read_stream,
    write_stream,
)
from .protocol import Frame, MsgType, ProtocolError, decode_frames, encode_frame
from .session import SequenceGapError, SessionAborted, SessionConfig, SessionResult, run_session

__all__ = [
    "FORMATS",
    "DecodeError",
    "Frame",
    "MsgType",
    "ProtocolError",
    "SequenceGapError",
    "SessionAborted",
    "SessionConfig",
    "SessionResult",
    "decode_frames",
    "decode_record",
    "decode_stream",
    "encode_frame",
    "encode_record",
    "encode_stream",
    "frame_byte",
    "read_stream",
    "run_session",
    "write_stream",
]
