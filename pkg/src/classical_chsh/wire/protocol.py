"""Length-prefixed frames and the byte-stream transports that carry them.

Frame layout (all integers little-endian)::

    u32 length   number of bytes that follow the length field (9 + payload)
    u8  type     DATA_LEFT=1, DATA_RIGHT=2, END=3, ABORT=4
    u64 seq      DATA: event index, END: number of DATA frames sent,
                 ABORT: number of contiguous DATA frames delivered
    payload      DATA: one byte, bit0 = outcome (+1 -> 1), bit1 = setting - 1
                 ABORT: UTF-8 reason; END: empty
"""

from __future__ import annotations

import enum
import socket
import struct
import threading
from dataclasses import dataclass
from typing import Iterator, Protocol

HEADER = struct.Struct("<IBQ")
PREFIX = struct.Struct("<I")
MIN_LENGTH = HEADER.size - PREFIX.size
MAX_PAYLOAD = 1 << 16


class MsgType(enum.IntEnum):
    DATA_LEFT = 1
    DATA_RIGHT = 2
    END = 3
    ABORT = 4


class ProtocolError(Exception):
    pass


class TransportClosed(ConnectionError):
    pass


@dataclass(frozen=True)
class Frame:
    type: MsgType
    seq: int
    payload: bytes = b""

    def encode(self) -> bytes:
        return encode_frame(self.type, self.seq, self.payload)


def encode_frame(msg_type: int, seq: int, payload: bytes = b"") -> bytes:
    if len(payload) > MAX_PAYLOAD:
        raise ProtocolError(f"payload of {len(payload)} bytes exceeds {MAX_PAYLOAD}")
    return HEADER.pack(MIN_LENGTH + len(payload), msg_type, seq) + payload


def data_payload(setting: int, outcome: int) -> bytes:
    return bytes([(outcome > 0) | (setting - 1) << 1])


def decode_data_payload(payload: bytes) -> tuple[int, int]:
    """``(setting, outcome)`` from a one-byte DATA payload."""
    if len(payload) != 1 or payload[0] > 3:
        raise ProtocolError(f"malformed DATA payload {payload!r}")
    return 1 + (payload[0] >> 1), 1 if payload[0] & 1 else -1


def parse_frames(buf: bytearray) -> tuple[list[Frame], int]:
    """Decode every complete frame at the start of ``buf``.

    Returns the frames and the number of bytes consumed.
    """
    frames = []
    pos = 0
    end = len(buf)
    while end - pos >= PREFIX.size:
        (length,) = PREFIX.unpack_from(buf, pos)
        if length < MIN_LENGTH or length > MIN_LENGTH + MAX_PAYLOAD:
            raise ProtocolError(f"bad frame length {length} at offset {pos}")
        if end - pos < PREFIX.size + length:
            break
        _, raw_type, seq = HEADER.unpack_from(buf, pos)
        try:
            msg_type = MsgType(raw_type)
        except ValueError:
            raise ProtocolError(f"unknown message type {raw_type} at offset {pos}") from None
        payload = bytes(buf[pos + HEADER.size : pos + PREFIX.size + length])
        frames.append(Frame(msg_type, seq, payload))
        pos += PREFIX.size + length
    return frames, pos


def decode_frames(data: bytes) -> list[Frame]:
    frames, used = parse_frames(bytearray(data))
    if used != len(data):
        raise ProtocolError(f"{len(data) - used} trailing bytes do not form a complete frame")
    return frames


class Transport(Protocol):
    def send(self, data: bytes) -> None: ...

    def recv(self, max_bytes: int) -> bytes: ...

    def close(self) -> None: ...


class FrameReader:
    """Buffered frame iterator over a transport; stops cleanly at EOF."""

    def __init__(self, transport: Transport, chunk: int = 1 << 16):
        self.transport = transport
        self.chunk = chunk
        self._buf = bytearray()
        self.eof = False

    def batches(self) -> Iterator[list[Frame]]:
        while True:
            data = self.transport.recv(self.chunk)
            if not data:
                self.eof = True
                if self._buf:
                    raise TransportClosed(f"connection closed inside a frame ({len(self._buf)} bytes pending)")
                return
            self._buf += data
            frames, used = parse_frames(self._buf)
            del self._buf[:used]
            if frames:
                yield frames

    def __iter__(self) -> Iterator[Frame]:
        for batch in self.batches():
            yield from batch


class _Pipe:
    def __init__(self):
        self.buf = bytearray()
        self.cond = threading.Condition()
        self.writer_closed = False
        self.reader_closed = False


class LoopbackWriter:
    def __init__(self, pipe: _Pipe, capture: bytearray | None = None):
        self._pipe = pipe
        self.capture = capture

    def send(self, data: bytes) -> None:
        with self._pipe.cond:
            if self._pipe.reader_closed or self._pipe.writer_closed:
                raise TransportClosed("loopback peer closed")
            self._pipe.buf += data
            self._pipe.cond.notify_all()
        if self.capture is not None:
            self.capture += data

    def recv(self, max_bytes: int) -> bytes:
        raise TransportClosed("write-only loopback end")

    def close(self) -> None:
        with self._pipe.cond:
            self._pipe.writer_closed = True
            self._pipe.cond.notify_all()


class LoopbackReader:
    def __init__(self, pipe: _Pipe):
        self._pipe = pipe

    def send(self, data: bytes) -> None:
        raise TransportClosed("read-only loopback end")

    def recv(self, max_bytes: int) -> bytes:
        with self._pipe.cond:
            while not self._pipe.buf and not self._pipe.writer_closed and not self._pipe.reader_closed:
                self._pipe.cond.wait()
            if self._pipe.reader_closed:
                return b""
            data = bytes(self._pipe.buf[:max_bytes])
            del self._pipe.buf[:max_bytes]
            return data

    def close(self) -> None:
        with self._pipe.cond:
            self._pipe.reader_closed = True
            self._pipe.buf.clear()
            self._pipe.cond.notify_all()


def loopback_channel(capture: bytearray | None = None) -> tuple[LoopbackWriter, LoopbackReader]:
    """One-directional in-process byte stream; ``capture`` records every byte sent."""
    pipe = _Pipe()
    return LoopbackWriter(pipe, capture), LoopbackReader(pipe)


class SocketTransport:
    def __init__(self, sock: socket.socket, capture: bytearray | None = None):
        self.sock = sock
        self.capture = capture

    def send(self, data: bytes) -> None:
        try:
            self.sock.sendall(data)
        except OSError as exc:
            raise TransportClosed(str(exc)) from exc
        if self.capture is not None:
            self.capture += data

    def recv(self, max_bytes: int) -> bytes:
        try:
            return self.sock.recv(max_bytes)
        except OSError:
            return b""

    def close(self) -> None:
        try:
            self.sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self.sock.close()


def parse_address(addr: str) -> tuple[str, int]:
    host, sep, port = addr.rpartition(":")
    if not sep or not port.isdigit():
        raise ValueError(f"address must look like HOST:PORT, got {addr!r}")
    return host or "127.0.0.1", int(port)


def listen(addr: str | tuple[str, int]) -> socket.socket:
    host, port = parse_address(addr) if isinstance(addr, str) else addr
    server = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    server.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
    server.bind((host, port))
    server.listen(1)
    return server


def accept(server: socket.socket, timeout: float | None = None, capture: bytearray | None = None) -> SocketTransport:
    server.settimeout(timeout)
    conn, _ = server.accept()
    conn.settimeout(None)
    conn.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
    return SocketTransport(conn, capture)


def connect(addr: str | tuple[str, int], timeout: float = 10.0, capture: bytearray | None = None) -> SocketTransport:
    host, port = parse_address(addr) if isinstance(addr, str) else addr
    sock = socket.create_connection((host, port), timeout=timeout)
    sock.settimeout(None)
    sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
    return SocketTransport(sock, capture)
