"""Bit extraction from record streams and a frequency/runs randomness battery."""

from __future__ import annotations

import enum
import math
import struct
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable

import numpy as np

from .sampler import Record, RecordStream
from .special import erfc, igamc

DEFAULT_ALPHA = 0.01
MIN_BITS = 100
DEFAULT_BLOCK_LENGTH = 128


class BitPolicy(str, enum.Enum):
    LEFT = "left"
    RIGHT = "right"
    INTERLEAVED = "interleaved"
    XOR = "xor"


class TooFewBitsError(ValueError):
    pass


def _as_stream(records) -> RecordStream:
    if isinstance(records, RecordStream):
        return records
    return RecordStream.from_records(records)


def extract_bits(records: Iterable[Record] | RecordStream, policy: BitPolicy | str) -> np.ndarray:
    """Map outcomes to bits, +1 -> 1 and -1 -> 0.

    ``xor`` emits 1 exactly when the two outcomes differ (product -1).
    """
    policy = BitPolicy(policy)
    stream = _as_stream(records)
    a = (stream.a > 0).astype(np.uint8)
    b = (stream.b > 0).astype(np.uint8)
    if policy is BitPolicy.LEFT:
        return a
    if policy is BitPolicy.RIGHT:
        return b
    if policy is BitPolicy.XOR:
        return a ^ b
    out = np.empty(2 * a.size, dtype=np.uint8)
    out[0::2] = a
    out[1::2] = b
    return out


def as_bits(bits) -> np.ndarray:
    if isinstance(bits, str):
        bits = [int(c) for c in bits]
    arr = np.asarray(bits, dtype=np.uint8).reshape(-1)
    if arr.size and arr.max() > 1:
        raise ValueError("bits must be 0 or 1")
    return arr


def bits_to_str(bits) -> str:
    return "".join("1" if x else "0" for x in as_bits(bits).tolist())


# Bitfile: 8-byte little-endian bit count, then the bits packed MSB first,
# trailing partial byte zero-padded.

def encode_bitfile(bits) -> bytes:
    bits = as_bits(bits)
    return struct.pack("<Q", bits.size) + np.packbits(bits, bitorder="big").tobytes()


def decode_bitfile(data: bytes) -> np.ndarray:
    if len(data) < 8:
        raise ValueError("bitfile shorter than its 8-byte header")
    (count,) = struct.unpack_from("<Q", data)
    body = np.frombuffer(data, dtype=np.uint8, offset=8)
    if body.size != (count + 7) // 8:
        raise ValueError(f"bitfile declares {count} bits but carries {body.size} payload bytes")
    return np.unpackbits(body, count=count, bitorder="big")


def write_bitfile(path: str | Path, bits) -> None:
    Path(path).write_bytes(encode_bitfile(bits))


def read_bitfile(path: str | Path) -> np.ndarray:
    return decode_bitfile(Path(path).read_bytes())


class Status(str, enum.Enum):
    PASS = "pass"
    FAIL = "fail"
    NOT_APPLICABLE = "not_applicable"
    ERROR = "error"


@dataclass
class TestReport:
    name: str
    n_bits: int
    statistic: float | None
    p_value: float | None
    passed: bool
    status: Status
    detail: str = ""

    __test__ = False  # not a pytest class

    @property
    def applicable(self) -> bool:
        return self.status in (Status.PASS, Status.FAIL)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["status"] = self.status.value
        return d


def _report(name: str, n: int, statistic: float, p: float, alpha: float, detail: str = "") -> TestReport:
    p = min(1.0, max(0.0, p))
    passed = p >= alpha
    return TestReport(name, n, statistic, p, passed, Status.PASS if passed else Status.FAIL, detail)


def _require(n: int, min_bits: int) -> None:
    if n < min_bits:
        raise TooFewBitsError(f"need at least {min_bits} bits, got {n}")


def monobit(bits, alpha: float = DEFAULT_ALPHA, min_bits: int = MIN_BITS) -> TestReport:
    bits = as_bits(bits)
    n = bits.size
    _require(n, min_bits)
    s = 2 * int(bits.sum()) - n
    s_obs = abs(s) / math.sqrt(n)
    return _report("monobit", n, s_obs, erfc(s_obs / math.sqrt(2.0)), alpha)


def block_frequency(
    bits, M: int = DEFAULT_BLOCK_LENGTH, alpha: float = DEFAULT_ALPHA, min_bits: int = MIN_BITS
) -> TestReport:
    bits = as_bits(bits)
    n = bits.size
    _require(n, min_bits)
    if M < 20:
        raise ValueError(f"block length M must be >= 20, got {M}")
    n_blocks = n // M
    if n_blocks < 1:
        raise ValueError(f"block length M={M} exceeds the {n} available bits")
    ones = bits[: n_blocks * M].reshape(n_blocks, M).sum(axis=1, dtype=np.int64)
    # 4M sum (ones/M - 1/2)^2 rearranged to integers: sum (2 ones - M)^2 / M
    chi2 = float(((2 * ones - M) ** 2).sum()) / M
    return _report(
        "block_frequency", n, chi2, igamc(n_blocks / 2.0, chi2 / 2.0), alpha, f"M={M}, blocks={n_blocks}"
    )


def runs_test(bits, alpha: float = DEFAULT_ALPHA, min_bits: int = MIN_BITS) -> TestReport:
    bits = as_bits(bits)
    n = bits.size
    _require(n, min_bits)
    pi = float(bits.sum()) / n
    if abs(pi - 0.5) >= 2.0 / math.sqrt(n):
        return TestReport(
            "runs", n, None, 0.0, False, Status.NOT_APPLICABLE,
            f"frequency prerequisite failed: |pi - 1/2| = {abs(pi - 0.5):.6g}",
        )
    v = 1 + int(np.count_nonzero(bits[1:] != bits[:-1]))
    q = pi * (1.0 - pi)
    p = erfc(abs(v - 2.0 * n * q) / (2.0 * math.sqrt(2.0 * n) * q))
    return _report("runs", n, float(v), p, alpha)


def run_battery(bits, alpha: float = DEFAULT_ALPHA) -> list[TestReport]:
    """Run every test with default parameters; parameter errors become ERROR reports."""
    if not 0.0 < alpha < 0.5:
        raise ValueError(f"alpha must lie in (0, 0.5), got {alpha}")
    bits = as_bits(bits)
    reports = []
    for name, test in (("monobit", monobit), ("block_frequency", block_frequency), ("runs", runs_test)):
        try:
            reports.append(test(bits, alpha=alpha))
        except ValueError as exc:
            reports.append(TestReport(name, int(bits.size), None, None, False, Status.ERROR, str(exc)))
    return reports


def battery_passed(reports: list[TestReport]) -> bool:
    """True when every applicable test passes and none errored."""
    if any(r.status is Status.ERROR for r in reports):
        return False
    applicable = [r for r in reports if r.applicable]
    return bool(applicable) and all(r.passed for r in applicable)
