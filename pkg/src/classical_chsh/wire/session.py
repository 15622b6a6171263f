"""Source / wing / merger session over framed byte streams.

The source samples events with the sampler's generator contract and sends
each wing only its own half of every event: the left wing receives
``(eta_L, a)`` and the right wing ``(eta_R, b)``, both tagged with the event
index. Wings forward their halves to the merger, which joins them strictly by
sequence number, so wing scheduling cannot change the merged stream.
"""

from __future__ import annotations

import logging
import queue
import socket
import threading
import time
from dataclasses import dataclass, field

import numpy as np

from ..model import DEFAULT_ANGLES, AngleConfig
from ..sampler import RecordStream, SeedSpec, generate_atoms
from .protocol import (
    MIN_LENGTH,
    Frame,
    FrameReader,
    MsgType,
    ProtocolError,
    Transport,
    TransportClosed,
    accept,
    connect,
    encode_frame,
    listen,
    loopback_channel,
)

log = logging.getLogger(__name__)

SIDES = ("left", "right")
DATA_TYPE = {"left": MsgType.DATA_LEFT, "right": MsgType.DATA_RIGHT}
SOURCE_CHUNK = 4096

# atom index -> one-byte DATA payload for each side
_LEFT_PAYLOAD = np.array([(k >> 1 & 1 ^ 1) | (k >> 3 & 1) << 1 for k in range(16)], dtype=np.uint8)
_RIGHT_PAYLOAD = np.array([(k & 1 ^ 1) | (k >> 2 & 1) << 1 for k in range(16)], dtype=np.uint8)

_FRAME_DTYPE = np.dtype([("length", "<u4"), ("type", "u1"), ("seq", "<u8"), ("payload", "u1")])


class SequenceGapError(ProtocolError):
    def __init__(self, side: str, missing: int):
        self.side = side
        self.missing = missing
        super().__init__(f"{side} channel is missing sequence number {missing}")


class SessionAborted(Exception):
    """The session stopped early; ``records`` holds the contiguous merged prefix."""

    def __init__(self, reason: str, records: RecordStream):
        self.reason = reason
        self.records = records
        super().__init__(f"session aborted after {self.contiguous} contiguous records: {reason}")

    @property
    def contiguous(self) -> int:
        return len(self.records)

    @property
    def last_sequence(self) -> int:
        """Index of the last merged event, -1 when nothing was merged."""
        return self.contiguous - 1


def data_frames(side: str, atoms: np.ndarray, first_seq: int = 0) -> bytes:
    """Encode DATA frames for consecutive events in one vectorized pass."""
    frames = np.empty(atoms.size, dtype=_FRAME_DTYPE)
    frames["length"] = MIN_LENGTH + 1
    frames["type"] = DATA_TYPE[side]
    frames["seq"] = np.arange(first_seq, first_seq + atoms.size, dtype=np.uint64)
    frames["payload"] = (_LEFT_PAYLOAD if side == "left" else _RIGHT_PAYLOAD)[atoms]
    return frames.tobytes()


def run_source(
    seeds: SeedSpec,
    n: int,
    angles: AngleConfig,
    left: Transport,
    right: Transport,
    chunk: int = SOURCE_CHUNK,
) -> int:
    """Stream ``n`` events to both wings; returns the number sent to each."""
    atoms = generate_atoms(seeds, n, angles)
    channels = {"left": left, "right": right}
    sent = 0
    try:
        for start in range(0, n, chunk):
            block = atoms[start : start + chunk]
            for side in SIDES:
                channels[side].send(data_frames(side, block, start))
            sent = start + block.size
        for side in SIDES:
            channels[side].send(encode_frame(MsgType.END, n))
    except TransportClosed as exc:
        reason = f"source lost a wing after {sent} events: {exc}".encode()
        for side in SIDES:
            try:
                channels[side].send(encode_frame(MsgType.ABORT, sent, reason))
            except TransportClosed:
                pass
        log.warning("source aborted after %d events: %s", sent, exc)
    finally:
        left.close()
        right.close()
    return sent


@dataclass
class WingOutput:
    side: str
    settings: list[int] = field(default_factory=list)
    outcomes: list[int] = field(default_factory=list)
    status: str = "running"


def run_wing(side: str, rx: Transport, tx: Transport, drop_after: int | None = None) -> WingOutput:
    """Receive this side's halves, record them locally and forward them to the merger.

    ``drop_after`` simulates a crash: after forwarding that many DATA frames
    the wing closes both connections without sending anything else.
    """
    expected = DATA_TYPE[side]
    out = WingOutput(side)
    forwarded = 0
    try:
        for batch in FrameReader(rx).batches():
            outgoing = []
            for frame in batch:
                if frame.type is expected:
                    if frame.seq != forwarded:
                        raise SequenceGapError(side, forwarded)
                    if drop_after is not None and forwarded >= drop_after:
                        tx.send(b"".join(outgoing))
                        out.status = "dropped"
                        return out
                    setting, outcome = 1 + (frame.payload[0] >> 1), 1 if frame.payload[0] & 1 else -1
                    out.settings.append(setting)
                    out.outcomes.append(outcome)
                    forwarded += 1
                elif frame.type in (MsgType.END, MsgType.ABORT):
                    outgoing.append(frame.encode())
                    tx.send(b"".join(outgoing))
                    out.status = "ended" if frame.type is MsgType.END else "aborted"
                    return out
                else:
                    raise ProtocolError(f"{side} wing received a {frame.type.name} frame")
                outgoing.append(frame.encode())
            tx.send(b"".join(outgoing))
        reason = b"source closed without END"
        tx.send(encode_frame(MsgType.ABORT, forwarded, reason))
        out.status = "aborted"
    except TransportClosed:
        out.status = "aborted"
    except ProtocolError as exc:
        try:
            tx.send(encode_frame(MsgType.ABORT, forwarded, str(exc).encode()))
        except TransportClosed:
            pass
        out.status = "aborted"
        raise
    finally:
        rx.close()
        tx.close()
    return out


def _pump(side: str, rx: Transport, q: queue.Queue) -> None:
    reader = FrameReader(rx)
    try:
        for batch in reader.batches():
            q.put((side, "frames", batch))
        q.put((side, "eof", None))
    except (TransportClosed, ProtocolError) as exc:
        q.put((side, "error", exc))


def run_merger(left: Transport, right: Transport) -> RecordStream:
    """Join the two half-streams by sequence number.

    Raises ``SequenceGapError`` when a channel skips an index and
    ``SessionAborted`` when a channel aborts or closes before END.
    """
    q: queue.Queue = queue.Queue()
    rx = {"left": left, "right": right}
    threads = [threading.Thread(target=_pump, args=(side, rx[side], q), daemon=True) for side in SIDES]
    for t in threads:
        t.start()
    halves: dict[str, list[int]] = {"left": [], "right": []}
    ended: dict[str, int | None] = {"left": None, "right": None}

    def merged() -> RecordStream:
        k = min(len(halves["left"]), len(halves["right"]))
        lp = np.array(halves["left"][:k], dtype=np.uint8)
        rp = np.array(halves["right"][:k], dtype=np.uint8)
        return RecordStream((lp >> 1) * 8 + (rp >> 1) * 4 + (1 - (lp & 1)) * 2 + (1 - (rp & 1)))

    # a side is finished once it ENDs, ABORTs or drops; an abort on one side
    # still drains the other so the reported prefix is as long as possible
    stopped: dict[str, str | None] = {"left": None, "right": None}

    def finished(side: str) -> bool:
        return ended[side] is not None or stopped[side] is not None

    try:
        while not (finished("left") and finished("right")):
            side, kind, item = q.get()
            if kind == "error":
                stopped[side] = f"{side} channel failed: {item}"
                continue
            if kind == "eof":
                if not finished(side):
                    stopped[side] = f"{side} channel closed before END"
                continue
            for frame in item:
                if finished(side):
                    raise ProtocolError(f"{side} channel sent {frame.type.name} after END or ABORT")
                if frame.type is DATA_TYPE[side]:
                    if frame.seq != len(halves[side]):
                        raise SequenceGapError(side, len(halves[side]))
                    if len(frame.payload) != 1 or frame.payload[0] > 3:
                        raise ProtocolError(f"malformed DATA payload at {side} seq {frame.seq}")
                    halves[side].append(frame.payload[0])
                elif frame.type is MsgType.END:
                    if frame.seq > len(halves[side]):
                        raise SequenceGapError(side, len(halves[side]))
                    if frame.seq < len(halves[side]):
                        raise ProtocolError(f"{side} END count {frame.seq} below received {len(halves[side])}")
                    ended[side] = frame.seq
                elif frame.type is MsgType.ABORT:
                    reason = frame.payload.decode(errors="replace")
                    stopped[side] = f"{side} channel aborted: {reason}"
                else:
                    raise ProtocolError(f"{side} channel carried a {frame.type.name} frame")
            other = "right" if side == "left" else "left"
            if stopped[side] is not None and not finished(other):
                # nothing more can merge once the live side has caught up
                if len(halves[other]) >= len(halves[side]):
                    break
            if stopped[other] is not None and len(halves[side]) >= len(halves[other]):
                break
        reasons = [r for r in stopped.values() if r is not None]
        if reasons:
            raise SessionAborted("; ".join(reasons), merged())
        if ended["left"] != ended["right"]:
            short = "left" if ended["left"] < ended["right"] else "right"
            raise SequenceGapError(short, ended[short])
        return merged()
    finally:
        left.close()
        right.close()


@dataclass
class SessionConfig:
    seeds: SeedSpec = field(default_factory=SeedSpec)
    n: int = 0
    angles: AngleConfig = DEFAULT_ANGLES
    transport: str = "loopback"
    host: str = "127.0.0.1"
    drop_left_after: int | None = None
    drop_right_after: int | None = None
    timeout: float = 120.0

    def __post_init__(self):
        if self.n < 0:
            raise ValueError(f"n must be >= 0, got {self.n}")
        if self.transport not in ("loopback", "tcp"):
            raise ValueError(f"transport must be loopback or tcp, got {self.transport!r}")


@dataclass
class SessionResult:
    records: RecordStream
    left_traffic: bytes
    right_traffic: bytes
    left: WingOutput
    right: WingOutput


class _Role(threading.Thread):
    def __init__(self, name, fn, *args, **kwargs):
        super().__init__(name=name, daemon=True)
        self.fn, self.args, self.kwargs = fn, args, kwargs
        self.result = None
        self.error: BaseException | None = None

    def run(self):
        try:
            self.result = self.fn(*self.args, **self.kwargs)
        except BaseException as exc:  # reported by run_session
            self.error = exc


def _loopback_wiring(captures):
    src_tx, wing_rx, wing_tx, merge_rx = {}, {}, {}, {}
    for side in SIDES:
        src_tx[side], wing_rx[side] = loopback_channel(capture=captures[side])
        wing_tx[side], merge_rx[side] = loopback_channel()
    return src_tx, wing_rx, wing_tx, merge_rx


def _tcp_wiring(host, captures, timeout):
    wing_servers = {side: listen((host, 0)) for side in SIDES}
    merge_servers = {side: listen((host, 0)) for side in SIDES}
    try:
        src_tx = {s: connect(wing_servers[s].getsockname(), capture=captures[s]) for s in SIDES}
        wing_rx = {s: accept(wing_servers[s], timeout) for s in SIDES}
        wing_tx = {s: connect(merge_servers[s].getsockname()) for s in SIDES}
        merge_rx = {s: accept(merge_servers[s], timeout) for s in SIDES}
    finally:
        for server in (*wing_servers.values(), *merge_servers.values()):
            server.close()
    return src_tx, wing_rx, wing_tx, merge_rx


def run_session(cfg: SessionConfig) -> SessionResult:
    """Run source, both wings and the merger in-process; return the merged stream.

    Left and right source->wing traffic is captured byte for byte.
    """
    captures = {side: bytearray() for side in SIDES}
    if cfg.transport == "loopback":
        src_tx, wing_rx, wing_tx, merge_rx = _loopback_wiring(captures)
    else:
        src_tx, wing_rx, wing_tx, merge_rx = _tcp_wiring(cfg.host, captures, cfg.timeout)
    drops = {"left": cfg.drop_left_after, "right": cfg.drop_right_after}
    roles = [
        _Role("source", run_source, cfg.seeds, cfg.n, cfg.angles, src_tx["left"], src_tx["right"]),
        *(_Role(f"{s}-wing", run_wing, s, wing_rx[s], wing_tx[s], drops[s]) for s in SIDES),
    ]
    for role in roles:
        role.start()
    try:
        records = run_merger(merge_rx["left"], merge_rx["right"])
    finally:
        for side in SIDES:
            wing_rx[side].close()
            src_tx[side].close()
        deadline = time.monotonic() + cfg.timeout
        for role in roles:
            role.join(max(0.0, deadline - time.monotonic()))
    for role in roles:
        if role.error is not None:
            raise role.error
    return SessionResult(
        records=records,
        left_traffic=bytes(captures["left"]),
        right_traffic=bytes(captures["right"]),
        left=roles[1].result,
        right=roles[2].result,
    )


# Multi-process roles: start the merger first, then the wings, then the source.

def _connect_retry(addr: str, timeout: float, capture=None):
    deadline = time.monotonic() + timeout
    while True:
        try:
            return connect(addr, capture=capture)
        except OSError:
            if time.monotonic() > deadline:
                raise
            time.sleep(0.05)


def serve_source(seeds: SeedSpec, n: int, angles: AngleConfig, left_addr: str, right_addr: str,
                 timeout: float = 30.0) -> int:
    left = _connect_retry(left_addr, timeout)
    right = _connect_retry(right_addr, timeout)
    return run_source(seeds, n, angles, left, right)


def serve_wing(side: str, listen_addr: str, merge_addr: str, timeout: float = 30.0) -> WingOutput:
    server = listen(listen_addr)
    try:
        tx = _connect_retry(merge_addr, timeout)
        rx = accept(server, timeout)
    finally:
        server.close()
    return run_wing(side, rx, tx)


def serve_merge(left_addr: str, right_addr: str, timeout: float = 30.0) -> RecordStream:
    servers = {"left": listen(left_addr), "right": listen(right_addr)}
    try:
        rx = {side: accept(servers[side], timeout) for side in SIDES}
    except socket.timeout:
        raise SessionAborted("timed out waiting for wings", RecordStream(np.empty(0, np.uint8))) from None
    finally:
        for server in servers.values():
            server.close()
    return run_merger(rx["left"], rx["right"])

