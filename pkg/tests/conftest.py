import pytest

from classical_chsh.wire.protocol import MsgType, decode_frames, encode_frame

from classical_chsh.model import DEFAULT_ANGLES
from classical_chsh.sampler import SeedSpec, generate_stream

DEFAULT_SEED = 42
MILLION = 1_000_000


@pytest.fixture(scope="session")
def million_stream():
    """Default-seed, default-angle 10^6-record stream."""
    return generate_stream(SeedSpec(DEFAULT_SEED), MILLION, DEFAULT_ANGLES)


def _check_locality(traffic: bytes, side: str, stream):
    """The wing channel carries only this side's (setting, outcome) per event."""
    frames = decode_frames(traffic)
    data_type = MsgType.DATA_LEFT if side == "left" else MsgType.DATA_RIGHT
    assert [f.type for f in frames[:-1]] == [data_type] * len(stream)
    assert frames[-1].type is MsgType.END and frames[-1].seq == len(stream)
    assert all(len(f.payload) == 1 and f.payload[0] <= 3 for f in frames[:-1])
    setting, outcome = (stream.i, stream.a) if side == "left" else (stream.j, stream.b)
    expected = b"".join(
        encode_frame(data_type, k, bytes([(o > 0) | (s - 1) << 1]))
        for k, (s, o) in enumerate(zip(setting.tolist(), outcome.tolist()))
    )
    assert traffic == expected + encode_frame(MsgType.END, len(stream))


@pytest.fixture
def check_locality():
    return _check_locality


_acceptance = []


def pytest_runtest_logreport(report):
    if report.when == "call" and "test_acceptance.py" in report.nodeid:
        _acceptance.append((report.nodeid.split("::")[-1], report.outcome))


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for name, outcome in _acceptance:
        terminalreporter.write_line(f"{'PASS' if outcome == 'passed' else 'FAIL'}  {name}")
