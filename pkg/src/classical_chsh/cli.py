"""Command-line entry point: exact, sample, estimate, bits, test, pair-run.

Exit status: 0 on success, 1 on usage errors, 2 on data, file or protocol
errors. With ``--json`` the JSON document is the only thing written to stdout.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from pathlib import Path

from . import __version__
from .model import (
    ANGLE_KEYS,
    DEFAULT_ANGLES,
    DEFAULT_PATTERN,
    SETTING_PAIRS,
    SIGNS,
    AngleConfig,
    build_pair_table,
    chsh_value,
    exact_report,
    load_angles,
    parse_pattern,
)
from .randtests import DEFAULT_ALPHA, BitPolicy, battery_passed, extract_bits, read_bitfile, run_battery, write_bitfile
from .sampler import DEFAULT_SHARD_SIZE, SeedSpec, generate_stream
from .stats import VIOLATION_SIGMAS, Counts, InsufficientDataError, estimate_report
from .wire import formats
from .wire.protocol import ProtocolError
from .wire.session import (
    SessionAborted,
    SessionConfig,
    run_session,
    serve_merge,
    serve_source,
    serve_wing,
)

log = logging.getLogger("classical_chsh")

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _pattern_arg(text: str) -> tuple[int, int]:
    try:
        return parse_pattern(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _seed_arg(text: str) -> int:
    value = int(text, 0)
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return value


def _nonneg_int(text: str) -> int:
    value = int(text)
    if value < 0:
        raise argparse.ArgumentTypeError("must be >= 0")
    return value


def _pos_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return value


def _alpha_arg(text: str) -> float:
    value = float(text)
    if not 0.0 < value < 0.5:
        raise argparse.ArgumentTypeError("alpha must lie in (0, 0.5)")
    return value


def _add_angles(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("angles (default: theta1=0, theta2=pi/2, theta1p=pi/4, theta2p=-pi/4)")
    g.add_argument("--angles", metavar="FILE", help="key=value file with theta1, theta2, theta1p, theta2p")
    for key in ANGLE_KEYS:
        g.add_argument(f"--{key}", type=float, help=f"override {key}")
    g.add_argument("--degrees", action="store_true", help="read angle values as degrees (default radians)")


def _add_pattern(p: argparse.ArgumentParser) -> None:
    p.add_argument(
        "--pattern", type=_pattern_arg, default=DEFAULT_PATTERN,
        help="CHSH term carrying the minus sign: 11, 12, 21 or 22 (default: 22)",
    )


def _add_seed(p: argparse.ArgumentParser, required: bool = False) -> None:
    p.add_argument("--seed", type=_seed_arg, default=42, help="64-bit generator seed (default: 42)")
    p.add_argument("--n", type=_nonneg_int, required=required, default=None if required else 0,
                   help="number of records")
    p.add_argument("--shard-size", type=_pos_int, default=DEFAULT_SHARD_SIZE,
                   help=f"records per generator shard (default: {DEFAULT_SHARD_SIZE})")


def _add_format(p: argparse.ArgumentParser, default: str | None = "csv") -> None:
    p.add_argument("--format", choices=formats.FORMATS, default=default,
                   help="record format (default: csv, or guessed from the file suffix)" if default is None
                   else f"record format (default: {default})")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="classical-chsh", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("exact", help="exact pair table, measure, correlations and CHSH value")
    _add_angles(p)
    _add_pattern(p)
    p.add_argument("--json", action="store_true", help="emit the JSON document only")

    p = sub.add_parser("sample", help="generate filtered records")
    _add_angles(p)
    _add_seed(p, required=True)
    _add_format(p)
    p.add_argument("--workers", type=_pos_int, default=1, help="parallel shard workers (default: 1)")
    p.add_argument("--out", metavar="PATH", help="output file (default: stdout)")

    p = sub.add_parser("estimate", help="empirical conditionals and CHSH estimate from a record file")
    _add_angles(p)
    _add_pattern(p)
    p.add_argument("--in", dest="input", required=True, metavar="PATH")
    _add_format(p, default=None)
    p.add_argument("--threshold", type=float, default=VIOLATION_SIGMAS,
                   help=f"violation / flagging threshold in standard errors (default: {VIOLATION_SIGMAS:g})")
    p.add_argument("--json", action="store_true", help="emit the JSON report only")

    p = sub.add_parser("bits", help="extract a bitfile from a record file")
    p.add_argument("--in", dest="input", required=True, metavar="PATH")
    _add_format(p, default=None)
    p.add_argument("--policy", choices=[x.value for x in BitPolicy], default="left",
                   help="which outcomes become bits (default: left)")
    p.add_argument("--out", required=True, metavar="PATH", help="bitfile to write")

    p = sub.add_parser("test", help="run the randomness battery on a bitfile")
    p.add_argument("--in", dest="input", required=True, metavar="BITFILE")
    p.add_argument("--alpha", type=_alpha_arg, default=DEFAULT_ALPHA,
                   help=f"significance level (default: {DEFAULT_ALPHA})")
    p.add_argument("--json", action="store_true", help="emit the JSON report only")

    p = sub.add_parser(
        "pair-run",
        help="source/wing/merger session",
        description="Run the two-wing session. With --role all (default) every role runs in this "
        "process over --transport. Separate processes: start merge (--listen LEFT --listen RIGHT), "
        "then each wing (--listen FROM_SOURCE --connect TO_MERGE), then source "
        "(--connect LEFT_WING --connect RIGHT_WING).",
    )
    _add_angles(p)
    _add_seed(p)
    p.add_argument("--role", choices=["all", "source", "left", "right", "merge"], default="all")
    p.add_argument("--listen", action="append", default=[], metavar="ADDR")
    p.add_argument("--connect", action="append", default=[], metavar="ADDR")
    p.add_argument("--transport", choices=["loopback", "tcp"], default="loopback",
                   help="in-process transport for --role all (default: loopback)")
    _add_format(p)
    p.add_argument("--out", metavar="PATH", help="merged stream output (all/merge roles; default: stdout)")
    p.add_argument("--capture-dir", metavar="DIR", help="write raw left.bin/right.bin source->wing traffic")
    p.add_argument("--timeout", type=float, default=30.0, help="connect/accept timeout in seconds")
    return parser


def resolve_angles(args) -> AngleConfig:
    if args.angles:
        try:
            base = load_angles(args.angles, degrees=args.degrees)
        except OSError as exc:
            raise DataError(f"cannot read angles file: {exc}") from None
        except ValueError as exc:
            raise DataError(f"{args.angles}: {exc}") from None
    else:
        base = DEFAULT_ANGLES
    overrides = {k: getattr(args, k) for k in ANGLE_KEYS if getattr(args, k) is not None}
    if args.degrees:
        overrides = {k: math.radians(v) for k, v in overrides.items()}
    values = {**base.as_dict(), **overrides}
    try:
        return AngleConfig(**values)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _header(command: str, **extra) -> dict:
    return {"tool": "classical-chsh", "version": __version__, "command": command, **extra}


def _print_header(header: dict) -> None:
    for key, value in header.items():
        print(f"# {key}: {json.dumps(value)}")


def _emit_json(doc: dict) -> None:
    sys.stdout.write(json.dumps(doc, indent=2, sort_keys=False) + "\n")


def _write_output(path: str | None, data: bytes) -> None:
    if path is None:
        sys.stdout.buffer.write(data)
        sys.stdout.flush()
    else:
        try:
            Path(path).write_bytes(data)
        except OSError as exc:
            raise DataError(f"cannot write {path}: {exc}") from None


def _read_records(path: str, fmt: str | None):
    fmt = fmt or formats.guess_format(path)
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror or exc}") from None
    try:
        return formats.decode_stream(data, fmt)
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from None


def _sign(eps: int) -> str:
    return "+" if eps == 1 else "-"


def cmd_exact(args) -> int:
    angles = resolve_angles(args)
    report = exact_report(angles, args.pattern)
    header = _header("exact", angles=angles.as_dict(), pattern="%d%d" % args.pattern)
    if args.json:
        _emit_json({"header": header, **report})
        return EXIT_OK
    _print_header(header)
    table = build_pair_table(angles)
    chsh = chsh_value(angles, args.pattern)
    print("\npair probabilities p_ij(a, b)")
    print(f"{'ij':>4}" + "".join(f"{_sign(a) + _sign(b):>16}" for a in SIGNS for b in SIGNS))
    for i, j in SETTING_PAIRS:
        print(f"{i}{j:<3}" + "".join(f"{table(i, j, a, b):16.12f}" for a in SIGNS for b in SIGNS))
    print("\nmeasure")
    for atom, w in report["measure"].items():
        print(f"  {atom:<14}{w:16.12f}")
    print(f"  {'total':<14}{report['measure_total']:16.12f}")
    print("\ncorrelations E_ij")
    for i in (1, 2):
        print("  " + "".join(f"E{i}{j} = {chsh.E[i - 1, j - 1]:+.12f}   " for j in (1, 2)).rstrip())
    print(f"\nS (minus on {chsh.sign_pattern[0]}{chsh.sign_pattern[1]}) = {chsh.S:.12f}")
    print(f"S_max (minus on {chsh.max_pattern[0]}{chsh.max_pattern[1]}) = {chsh.S_max:.12f}")
    print(f"classical bound 2, Tsirelson bound {2 * math.sqrt(2):.12f}")
    return EXIT_OK


def cmd_sample(args) -> int:
    angles = resolve_angles(args)
    seeds = SeedSpec(args.seed, args.shard_size)
    stream = generate_stream(seeds, args.n, angles, workers=args.workers)
    log.info("sampled %d records (seed %d, shard size %d)", args.n, args.seed, args.shard_size)
    _write_output(args.out, formats.encode_stream(stream, args.format))
    return EXIT_OK


def cmd_estimate(args) -> int:
    angles = resolve_angles(args)
    stream = _read_records(args.input, args.format)
    counts = Counts.from_stream(stream)
    try:
        report = estimate_report(counts, chsh_value(angles, args.pattern), build_pair_table(angles),
                                 args.pattern, args.threshold)
    except InsufficientDataError as exc:
        raise DataError(str(exc)) from None
    header = _header("estimate", input=str(args.input), angles=angles.as_dict(), pattern="%d%d" % args.pattern)
    if args.json:
        _emit_json({"header": header, **report})
        return EXIT_OK
    _print_header(header)
    print(f"\nrecords: {report['n']}")
    print("\nconditionals p_ij(a, b)        estimate            se         exact        z")
    for key, block in report["conditionals"].items():
        for label, cell in block["cells"].items():
            print(f"  {key} {label}  (n={block['n']:>9})  {cell['p']:12.8f}  {cell['se']:12.8f}"
                  f"  {cell['exact']:12.8f}  {_fmt_z(cell['z'])}")
    print("\ncorrelations")
    for key, c in report["correlations"].items():
        print(f"  E{key} = {c['E']:+.6f} +- {c['se']:.6f}   exact {c['exact']:+.6f}   z {_fmt_z(c['z'])}")
    ch = report["chsh"]
    print(f"\nS_hat (minus on {ch['pattern']}) = {ch['S']:.6f} +- {ch['se']:.6f}   exact {ch['exact']:.6f}")
    if report["flagged_cells"]:
        print("flagged cells: " + ", ".join(report["flagged_cells"]))
    print(f"verdict: {report['verdict']}")
    return EXIT_OK


def _fmt_z(z) -> str:
    return f"{z:+8.3f}" if isinstance(z, float) else f"{z:>8}"


def cmd_bits(args) -> int:
    stream = _read_records(args.input, args.format)
    bits = extract_bits(stream, args.policy)
    try:
        write_bitfile(args.out, bits)
    except OSError as exc:
        raise DataError(f"cannot write {args.out}: {exc}") from None
    log.info("wrote %d bits to %s", bits.size, args.out)
    return EXIT_OK


def cmd_test(args) -> int:
    try:
        bits = read_bitfile(args.input)
    except OSError as exc:
        raise DataError(f"cannot read {args.input}: {exc.strerror or exc}") from None
    except ValueError as exc:
        raise DataError(f"{args.input}: {exc}") from None
    reports = run_battery(bits, args.alpha)
    passed = battery_passed(reports)
    header = _header("test", input=str(args.input), alpha=args.alpha)
    if args.json:
        _emit_json({"header": header, "n_bits": int(bits.size), "tests": [r.to_dict() for r in reports],
                    "passed": passed})
        return EXIT_OK
    _print_header(header)
    print(f"\nbits: {bits.size}")
    for r in reports:
        stat = "-" if r.statistic is None else f"{r.statistic:.6g}"
        p = "-" if r.p_value is None else f"{r.p_value:.6g}"
        print(f"  {r.name:<16} statistic {stat:>12}  p {p:>12}  {r.status.value}"
              + (f"  ({r.detail})" if r.detail else ""))
    print(f"battery: {'PASS' if passed else 'FAIL'}")
    return EXIT_OK


def cmd_pair_run(args) -> int:
    angles = resolve_angles(args)
    seeds = SeedSpec(args.seed, args.shard_size)
    role = args.role
    need = {"all": (0, 0), "source": (0, 2), "left": (1, 1), "right": (1, 1), "merge": (2, 0)}[role]
    if (len(args.listen), len(args.connect)) != need:
        raise UsageError(f"role {role} needs {need[0]} --listen and {need[1]} --connect address(es)")
    try:
        if role == "source":
            sent = serve_source(seeds, args.n, angles, args.connect[0], args.connect[1], args.timeout)
            log.info("source sent %d events", sent)
            if sent != args.n:
                raise DataError(f"source aborted after {sent} of {args.n} events")
            return EXIT_OK
        if role in ("left", "right"):
            out = serve_wing(role, args.listen[0], args.connect[0], args.timeout)
            if out.status != "ended":
                raise DataError(f"{role} wing stopped with status {out.status}")
            return EXIT_OK
        if role == "merge":
            records = serve_merge(args.listen[0], args.listen[1], args.timeout)
        else:
            result = run_session(SessionConfig(seeds=seeds, n=args.n, angles=angles,
                                               transport=args.transport, timeout=args.timeout))
            records = result.records
            if args.capture_dir:
                cap = Path(args.capture_dir)
                cap.mkdir(parents=True, exist_ok=True)
                (cap / "left.bin").write_bytes(result.left_traffic)
                (cap / "right.bin").write_bytes(result.right_traffic)
    except SessionAborted as exc:
        raise DataError(f"{exc} (last contiguous sequence number {exc.last_sequence})") from None
    except (ProtocolError, OSError) as exc:
        raise DataError(f"session failed: {exc}") from None
    _write_output(args.out, formats.encode_stream(records, args.format))
    return EXIT_OK


COMMANDS = {
    "exact": cmd_exact,
    "sample": cmd_sample,
    "estimate": cmd_estimate,
    "bits": cmd_bits,
    "test": cmd_test,
    "pair-run": cmd_pair_run,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"classical-chsh {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"classical-chsh {args.command}: {exc}", file=sys.stderr)
        return EXIT_DATA
    except BrokenPipeError:
        # reader went away (e.g. `| head`); silence the flush at interpreter exit
        devnull = os.open(os.devnull, os.O_WRONLY)
        os.dup2(devnull, sys.stdout.fileno())
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
