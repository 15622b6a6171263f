"""CSV, JSONL and one-byte binary encodings of records.

Frame byte layout: bit0 = a (+1 -> 1), bit1 = b (+1 -> 1), bit2 = i - 1,
bit3 = j - 1, high nibble zero.

CSV files start with the header line ``a,b,i,j``; readers accept files with
or without it. JSONL objects are written compactly with keys in ``a,b,i,j``
order.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ..model import ATOMS
from ..sampler import Record, RecordStream, record_atom_index

FORMATS = ("csv", "jsonl", "bin")
CSV_HEADER = b"a,b,i,j\n"


class DecodeError(ValueError):
    pass


def frame_byte(r: Record) -> int:
    return (r.a > 0) | (r.b > 0) << 1 | (r.i - 1) << 2 | (r.j - 1) << 3


def decode_frame_byte(byte: int) -> Record:
    if not 0 <= byte <= 0x0F:
        raise DecodeError(f"frame byte 0x{byte:02x} has a nonzero high nibble")
    return Record(
        a=1 if byte & 1 else -1,
        b=1 if byte & 2 else -1,
        i=1 + (byte >> 2 & 1),
        j=1 + (byte >> 3 & 1),
    )


def _atom_record(k: int) -> Record:
    omega = ATOMS[k]
    a, b = omega.outcomes
    return Record(a, b, omega.eta_left, omega.eta_right)


def _csv_row(r: Record) -> bytes:
    return f"{r.a},{r.b},{r.i},{r.j}\n".encode()


def _jsonl_row(r: Record) -> bytes:
    return (json.dumps({"a": r.a, "b": r.b, "i": r.i, "j": r.j}, separators=(",", ":")) + "\n").encode()


_ENCODERS = {"csv": _csv_row, "jsonl": _jsonl_row, "bin": lambda r: bytes([frame_byte(r)])}

# atom index -> encoded bytes / frame byte, and back
_ATOM_ROWS = {fmt: [enc(_atom_record(k)) for k in range(16)] for fmt, enc in _ENCODERS.items()}
ATOM_TO_FRAME = np.array([frame_byte(_atom_record(k)) for k in range(16)], dtype=np.uint8)
FRAME_TO_ATOM = np.full(256, 255, dtype=np.uint8)
FRAME_TO_ATOM[ATOM_TO_FRAME] = np.arange(16, dtype=np.uint8)


def _check_format(fmt: str) -> str:
    if fmt not in FORMATS:
        raise ValueError(f"unknown format {fmt!r}; expected one of {', '.join(FORMATS)}")
    return fmt


def encode_record(r: Record, fmt: str) -> bytes:
    return _ENCODERS[_check_format(fmt)](r)


def decode_record(data: bytes, fmt: str) -> Record:
    _check_format(fmt)
    if fmt == "bin":
        if len(data) != 1:
            raise DecodeError(f"binary record must be one byte, got {len(data)}")
        return decode_frame_byte(data[0])
    text = data.decode().strip()
    try:
        if fmt == "csv":
            fields = text.split(",")
            if len(fields) != 4:
                raise DecodeError(f"expected 4 CSV fields, got {text!r}")
            return Record(*(int(f) for f in fields))
        obj = json.loads(text)
        if not isinstance(obj, dict) or set(obj) != {"a", "b", "i", "j"}:
            raise DecodeError(f"JSONL record must have exactly keys a,b,i,j: {text!r}")
        if not all(type(obj[k]) is int for k in "abij"):
            raise DecodeError(f"JSONL record values must be integers: {text!r}")
        return Record(obj["a"], obj["b"], obj["i"], obj["j"])
    except DecodeError:
        raise
    except ValueError as exc:
        raise DecodeError(f"bad {fmt} record {text!r}: {exc}") from None


def encode_stream(stream: RecordStream, fmt: str) -> bytes:
    _check_format(fmt)
    if fmt == "bin":
        return ATOM_TO_FRAME[stream.atoms].tobytes()
    rows = _ATOM_ROWS[fmt]
    body = b"".join([rows[k] for k in stream.atoms.tolist()])
    return CSV_HEADER + body if fmt == "csv" else body


def decode_stream(data: bytes, fmt: str) -> RecordStream:
    _check_format(fmt)
    if fmt == "bin":
        frames = np.frombuffer(data, dtype=np.uint8)
        atoms = FRAME_TO_ATOM[frames]
        bad = np.flatnonzero(atoms == 255)
        if bad.size:
            raise DecodeError(f"invalid frame byte 0x{frames[bad[0]]:02x} at record {bad[0]}")
        return RecordStream(atoms)
    lookup = {row.rstrip(b"\n"): k for k, row in enumerate(_ATOM_ROWS[fmt])}
    lines = data.split(b"\n")
    if lines and lines[-1] == b"":
        lines.pop()
    if fmt == "csv" and lines and lines[0] == CSV_HEADER.rstrip(b"\n"):
        lines = lines[1:]
    atoms = np.empty(len(lines), dtype=np.uint8)
    for n, line in enumerate(lines):
        k = lookup.get(line)
        if k is None:
            # non-canonical spelling (spaces, key order, "+1"); parse it properly
            try:
                k = record_atom_index(decode_record(line, fmt))
            except (DecodeError, ValueError) as exc:
                raise DecodeError(f"line {n + 1}: {exc}") from None
        atoms[n] = k
    return RecordStream(atoms)


def write_stream(path: str | Path, stream: RecordStream, fmt: str) -> None:
    Path(path).write_bytes(encode_stream(stream, fmt))


def read_stream(path: str | Path, fmt: str) -> RecordStream:
    return decode_stream(Path(path).read_bytes(), fmt)


def guess_format(path: str | Path) -> str:
    suffix = Path(path).suffix.lstrip(".").lower()
    return {"csv": "csv", "jsonl": "jsonl", "json": "jsonl", "bin": "bin"}.get(suffix, "csv")
