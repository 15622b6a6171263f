"""Empirical conditionals, correlations and CHSH estimates from record streams."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .model import (
    DEFAULT_PATTERN,
    SETTING_PAIRS,
    SIGNS,
    ExactChsh,
    PairProbTable,
    parse_pattern,
    sign_index,
    signed_sum,
)
from .sampler import Record, RecordStream, record_atom_index
from .special import igamc

VIOLATION_SIGMAS = 4.0


class InsufficientDataError(ValueError):
    def __init__(self, blocks):
        self.blocks = list(blocks)
        names = ", ".join(f"({i},{j})" for i, j in self.blocks)
        super().__init__(f"no records for setting pair(s) {names}")


@dataclass(frozen=True)
class Counts:
    """Cell counts ``n[i-1, j-1, sign_index(a), sign_index(b)]``.

    Counts form a commutative monoid under ``+``.
    """

    n: np.ndarray = field(default_factory=lambda: np.zeros((2, 2, 2, 2), dtype=np.int64), repr=False)

    def __post_init__(self):
        n = np.array(self.n, dtype=np.int64)
        if n.shape != (2, 2, 2, 2) or np.any(n < 0):
            raise ValueError("counts must be a nonnegative (2, 2, 2, 2) integer array")
        n.setflags(write=False)
        object.__setattr__(self, "n", n)

    def __add__(self, other: "Counts") -> "Counts":
        if not isinstance(other, Counts):
            return NotImplemented
        return Counts(self.n + other.n)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Counts):
            return NotImplemented
        return np.array_equal(self.n, other.n)

    def __getitem__(self, key) -> int:
        i, j, a, b = key
        return int(self.n[i - 1, j - 1, sign_index(a), sign_index(b)])

    @property
    def total(self) -> int:
        return int(self.n.sum())

    def block_totals(self) -> np.ndarray:
        return self.n.sum(axis=(2, 3))

    @classmethod
    def from_stream(cls, stream: RecordStream) -> "Counts":
        return cls(np.bincount(stream.atoms, minlength=16).reshape(2, 2, 2, 2))

    @classmethod
    def from_records(cls, records: Iterable[Record]) -> "Counts":
        if isinstance(records, RecordStream):
            return cls.from_stream(records)
        counts = cls()
        for r in records:
            counts = accumulate(counts, r)
        return counts


def accumulate(counts: Counts, r: Record) -> Counts:
    flat = counts.n.reshape(-1).copy()
    flat[record_atom_index(r)] += 1
    return Counts(flat.reshape(2, 2, 2, 2))


def merge(*parts: Counts) -> Counts:
    out = Counts()
    for c in parts:
        out = out + c
    return out


def _require_blocks(counts: Counts) -> np.ndarray:
    totals = counts.block_totals()
    empty = [(i, j) for i, j in SETTING_PAIRS if totals[i - 1, j - 1] == 0]
    if empty:
        raise InsufficientDataError(empty)
    return totals


@dataclass(frozen=True)
class Conditionals:
    estimate: np.ndarray = field(repr=False)
    se: np.ndarray = field(repr=False)
    n_blocks: np.ndarray = field(repr=False)

    def to_nested(self) -> dict:
        out = {}
        for i, j in SETTING_PAIRS:
            cells = {}
            for a in SIGNS:
                for b in SIGNS:
                    key = ("+" if a == 1 else "-") + ("+" if b == 1 else "-")
                    idx = (i - 1, j - 1, sign_index(a), sign_index(b))
                    cells[key] = {"p": float(self.estimate[idx]), "se": float(self.se[idx])}
            out[f"{i}{j}"] = {"n": int(self.n_blocks[i - 1, j - 1]), "cells": cells}
        return out


def empirical_conditionals(counts: Counts) -> Conditionals:
    totals = _require_blocks(counts)
    nij = totals[:, :, None, None].astype(np.float64)
    p = counts.n / nij
    se = np.sqrt(p * (1.0 - p) / nij)
    return Conditionals(p, se, totals)


@dataclass(frozen=True)
class ChshEstimate:
    Ehat: np.ndarray = field(repr=False)
    se_E: np.ndarray = field(repr=False)
    Shat: float
    se_S: float
    n_cells: np.ndarray = field(repr=False)
    sign_pattern: tuple[int, int] = DEFAULT_PATTERN


def empirical_chsh(counts: Counts, sign_pattern=DEFAULT_PATTERN) -> ChshEstimate:
    totals = _require_blocks(counts)
    n = counts.n
    agree = n[:, :, 0, 0] + n[:, :, 1, 1]
    disagree = n[:, :, 0, 1] + n[:, :, 1, 0]
    E = (agree - disagree) / totals
    se_E = np.sqrt(np.clip(1.0 - E**2, 0.0, None) / totals)
    pattern = parse_pattern(sign_pattern)
    return ChshEstimate(
        Ehat=E,
        se_E=se_E,
        Shat=signed_sum(E, pattern),
        se_S=float(math.sqrt(float((se_E**2).sum()))),
        n_cells=totals,
        sign_pattern=pattern,
    )


VIOLATES_CLASSICAL = "VIOLATES_CLASSICAL"
CONSISTENT_WITH_CLASSICAL = "CONSISTENT_WITH_CLASSICAL"


@dataclass
class Comparison:
    z_cells: np.ndarray = field(repr=False)
    flagged_cells: list[tuple[int, int, int, int]]
    z_E: np.ndarray = field(repr=False)
    flagged_correlations: list[tuple[int, int]]
    z_S: float
    verdict: str
    threshold: float


def _zscores(diff: np.ndarray, se: np.ndarray) -> np.ndarray:
    diff = np.asarray(diff, dtype=np.float64)
    se = np.asarray(se, dtype=np.float64)
    z = np.zeros_like(diff)
    nz = se > 0
    z[nz] = diff[nz] / se[nz]
    # a nonzero deviation with zero standard error is infinitely significant
    z[~nz & (diff != 0)] = np.copysign(np.inf, diff[~nz & (diff != 0)])
    return z


def compare(
    exact: ExactChsh,
    table: PairProbTable,
    est: ChshEstimate,
    cond: Conditionals,
    threshold: float = VIOLATION_SIGMAS,
) -> Comparison:
    """z-scores of every estimate against its exact value, plus a CHSH verdict.

    Zero-se cells use the sign of the deviation: ``z = 0`` when equal, else
    ``+-inf``.
    """
    z_cells = _zscores(cond.estimate - table.p, cond.se)
    flagged = [
        (i, j, a, b)
        for i, j in SETTING_PAIRS
        for a in SIGNS
        for b in SIGNS
        if abs(z_cells[i - 1, j - 1, sign_index(a), sign_index(b)]) > threshold
    ]
    z_E = _zscores(est.Ehat - exact.E, est.se_E)
    flagged_E = [(i, j) for i, j in SETTING_PAIRS if abs(z_E[i - 1, j - 1]) > threshold]
    exact_S = signed_sum(exact.E, est.sign_pattern)
    z_S = float(_zscores(np.array([est.Shat - exact_S]), np.array([est.se_S]))[0])
    violates = est.Shat - 2.0 > threshold * est.se_S
    return Comparison(
        z_cells=z_cells,
        flagged_cells=flagged,
        z_E=z_E,
        flagged_correlations=flagged_E,
        z_S=z_S,
        verdict=VIOLATES_CLASSICAL if violates else CONSISTENT_WITH_CLASSICAL,
        threshold=threshold,
    )


def chi_square_gof(observed, expected_probs) -> tuple[float, int, float]:
    """Pearson chi-square over cells with positive expected mass.

    Returns ``(statistic, degrees_of_freedom, p_value)``.
    """
    observed = np.asarray(observed, dtype=np.float64).reshape(-1)
    probs = np.asarray(expected_probs, dtype=np.float64).reshape(-1)
    keep = probs > 0
    if np.any(observed[~keep] > 0):
        return math.inf, int(keep.sum()) - 1, 0.0
    expected = observed.sum() * probs[keep] / probs[keep].sum()
    stat = float(((observed[keep] - expected) ** 2 / expected).sum())
    dof = int(keep.sum()) - 1
    return stat, dof, igamc(dof / 2.0, stat / 2.0)


def _json_z(z) -> float | str:
    z = float(z)
    return z if math.isfinite(z) else ("inf" if z > 0 else "-inf")


def estimate_report(counts: Counts, exact: ExactChsh, table: PairProbTable, sign_pattern=DEFAULT_PATTERN,
                    threshold: float = VIOLATION_SIGMAS) -> dict:
    cond = empirical_conditionals(counts)
    est = empirical_chsh(counts, sign_pattern)
    cmp = compare(exact, table, est, cond, threshold)
    correlations = {}
    for i, j in SETTING_PAIRS:
        k = (i - 1, j - 1)
        correlations[f"{i}{j}"] = {
            "E": float(est.Ehat[k]),
            "se": float(est.se_E[k]),
            "exact": float(exact.E[k]),
            "z": _json_z(cmp.z_E[k]),
        }
    cond_nested = cond.to_nested()
    for i, j in SETTING_PAIRS:
        for label, cell in cond_nested[f"{i}{j}"]["cells"].items():
            a = 1 if label[0] == "+" else -1
            b = 1 if label[1] == "+" else -1
            idx = (i - 1, j - 1, sign_index(a), sign_index(b))
            cell["exact"] = float(table.p[idx])
            cell["z"] = _json_z(cmp.z_cells[idx])
    return {
        "n": counts.total,
        "conditionals": cond_nested,
        "correlations": correlations,
        "chsh": {
            "pattern": "%d%d" % est.sign_pattern,
            "S": est.Shat,
            "se": est.se_S,
            "exact": signed_sum(exact.E, est.sign_pattern),
            "z": _json_z(cmp.z_S),
        },
        "flagged_cells": ["%d%d%s%s" % (i, j, "+" if a == 1 else "-", "+" if b == 1 else "-")
                          for i, j, a, b in cmp.flagged_cells],
        "threshold_sigmas": threshold,
        "verdict": cmp.verdict,
    }
