"""Exact 16-atom probability space reproducing the CHSH pair statistics.

Quantum pair probabilities enter only through the closed form

    p_ij(e, e)  = 1/2 cos^2((theta_i - theta'_j) / 2)
    p_ij(e, -e) = 1/2 sin^2((theta_i - theta'_j) / 2)

Every elementary event is a 4-tuple ``(x1, x2, x3, x4)`` over {-1, 0, +1} in
which exactly one of ``(x1, x2)`` and one of ``(x3, x4)`` is nonzero; the zero
pattern encodes the setting pair. Each setting pair carries mass 1/4 and the
outcome pair inside it is distributed by ``p_ij / 4``.

Tables are numpy arrays of shape ``(2, 2, 2, 2)`` indexed
``[i - 1, j - 1, sign_index(eps), sign_index(eps')]`` where ``sign_index(+1)
== 0`` and ``sign_index(-1) == 1``. Flattening that array in C order gives the
canonical atom order used by the sampler.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

SIGNS = (1, -1)
SETTINGS = (1, 2)
SETTING_PAIRS = ((1, 1), (1, 2), (2, 1), (2, 2))

IDENTITY_TOL = 1e-12
BOUND_TOL = 1e-9
TSIRELSON = 2.0 * math.sqrt(2.0)

ANGLE_KEYS = ("theta1", "theta2", "theta1p", "theta2p")


class DegenerateConditioningError(ValueError):
    """A setting pair does not carry the 1/4 mass the construction requires."""


def sign_index(eps: int) -> int:
    if eps == 1:
        return 0
    if eps == -1:
        return 1
    raise ValueError(f"sign must be +1 or -1, got {eps!r}")


def check_setting(i: int) -> int:
    if i not in SETTINGS:
        raise ValueError(f"setting index must be 1 or 2, got {i!r}")
    return i


@dataclass(frozen=True)
class AngleConfig:
    """Analyzer orientations in radians, kept exactly as given."""

    theta1: float
    theta2: float
    theta1p: float
    theta2p: float

    def __post_init__(self):
        for key in ANGLE_KEYS:
            value = float(getattr(self, key))
            if not math.isfinite(value):
                raise ValueError(f"{key} must be finite, got {value!r}")
            object.__setattr__(self, key, value)

    def left(self, i: int) -> float:
        return self.theta1 if check_setting(i) == 1 else self.theta2

    def right(self, j: int) -> float:
        return self.theta1p if check_setting(j) == 1 else self.theta2p

    def as_dict(self) -> dict[str, float]:
        return {key: getattr(self, key) for key in ANGLE_KEYS}

    @classmethod
    def from_degrees(cls, theta1, theta2, theta1p, theta2p) -> "AngleConfig":
        return cls(*(math.radians(float(t)) for t in (theta1, theta2, theta1p, theta2p)))


DEFAULT_ANGLES = AngleConfig(0.0, math.pi / 2, math.pi / 4, -math.pi / 4)


def parse_angles(text: str, degrees: bool = False) -> AngleConfig:
    """Parse ``key=value`` lines (``#`` comments and blank lines allowed)."""
    values: dict[str, float] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep or key not in ANGLE_KEYS:
            raise ValueError(f"line {lineno}: expected one of {', '.join(ANGLE_KEYS)} as key=value")
        if key in values:
            raise ValueError(f"line {lineno}: duplicate key {key}")
        values[key] = float(value)
    missing = [k for k in ANGLE_KEYS if k not in values]
    if missing:
        raise ValueError(f"missing angle keys: {', '.join(missing)}")
    ordered = [values[k] for k in ANGLE_KEYS]
    return AngleConfig.from_degrees(*ordered) if degrees else AngleConfig(*ordered)


def load_angles(path: str | Path, degrees: bool = False) -> AngleConfig:
    return parse_angles(Path(path).read_text(), degrees=degrees)


def format_angles(angles: AngleConfig) -> str:
    return "".join(f"{key}={getattr(angles, key)!r}\n" for key in ANGLE_KEYS)


@dataclass(frozen=True)
class OmegaPoint:
    """Elementary event; the setting indices are derived from the zero pattern."""

    x1: int
    x2: int
    x3: int
    x4: int

    def __post_init__(self):
        coords = (self.x1, self.x2, self.x3, self.x4)
        if any(x not in (-1, 0, 1) for x in coords):
            raise ValueError(f"coordinates must lie in {{-1, 0, 1}}: {coords}")
        if (self.x1 == 0) == (self.x2 == 0) or (self.x3 == 0) == (self.x4 == 0):
            raise ValueError(f"exactly one of (x1, x2) and one of (x3, x4) must be nonzero: {coords}")

    @property
    def eta_left(self) -> int:
        return 1 if self.x1 != 0 else 2

    @property
    def eta_right(self) -> int:
        return 1 if self.x3 != 0 else 2

    @property
    def outcomes(self) -> tuple[int, int]:
        """The nonzero left and right coordinates."""
        return self.x1 or self.x2, self.x3 or self.x4

    def as_tuple(self) -> tuple[int, int, int, int]:
        return (self.x1, self.x2, self.x3, self.x4)

    @classmethod
    def from_parts(cls, i: int, j: int, eps: int, epsp: int) -> "OmegaPoint":
        sign_index(eps), sign_index(epsp)
        left = (eps, 0) if check_setting(i) == 1 else (0, eps)
        right = (epsp, 0) if check_setting(j) == 1 else (0, epsp)
        return cls(*left, *right)


def canonical_atoms() -> tuple[OmegaPoint, ...]:
    """All 16 atoms: setting pairs (1,1),(1,2),(2,1),(2,2); outcomes ++, +-, -+, --."""
    return tuple(
        OmegaPoint.from_parts(i, j, eps, epsp)
        for i, j in SETTING_PAIRS
        for eps in SIGNS
        for epsp in SIGNS
    )


ATOMS = canonical_atoms()


def atom_index(omega: OmegaPoint) -> int:
    a, b = omega.outcomes
    return (
        8 * (omega.eta_left - 1)
        + 4 * (omega.eta_right - 1)
        + 2 * sign_index(a)
        + sign_index(b)
    )


def pair_prob(angles: AngleConfig, i: int, j: int, eps: int, epsp: int) -> float:
    half = (angles.left(i) - angles.right(j)) / 2.0
    if sign_index(eps) == sign_index(epsp):
        return 0.5 * math.cos(half) ** 2
    return 0.5 * math.sin(half) ** 2


@dataclass(frozen=True)
class PairProbTable:
    p: np.ndarray = field(repr=False)

    def __post_init__(self):
        p = np.array(self.p, dtype=np.float64)
        if p.shape != (2, 2, 2, 2):
            raise ValueError(f"pair table must have shape (2, 2, 2, 2), got {p.shape}")
        p.setflags(write=False)
        object.__setattr__(self, "p", p)

    def __call__(self, i: int, j: int, eps: int, epsp: int) -> float:
        return float(self.p[check_setting(i) - 1, check_setting(j) - 1, sign_index(eps), sign_index(epsp)])

    def block_sums(self) -> np.ndarray:
        return self.p.sum(axis=(2, 3))

    def to_nested(self) -> dict[str, dict[str, float]]:
        """``{"ij": {"++": p, "+-": p, ...}}`` for reports."""
        return {
            f"{i}{j}": {
                _sign_label(eps) + _sign_label(epsp): self(i, j, eps, epsp)
                for eps in SIGNS
                for epsp in SIGNS
            }
            for i, j in SETTING_PAIRS
        }


def _sign_label(eps: int) -> str:
    return "+" if eps == 1 else "-"


def build_pair_table(angles: AngleConfig) -> PairProbTable:
    p = np.empty((2, 2, 2, 2))
    for i, j in SETTING_PAIRS:
        for eps in SIGNS:
            for epsp in SIGNS:
                p[i - 1, j - 1, sign_index(eps), sign_index(epsp)] = pair_prob(angles, i, j, eps, epsp)
    return PairProbTable(p)


@dataclass(frozen=True)
class Measure:
    """Probability weights over the 16 atoms, stored in canonical atom order."""

    weights: np.ndarray = field(repr=False)

    def __post_init__(self):
        w = np.array(self.weights, dtype=np.float64).reshape(-1)
        if w.shape != (16,):
            raise ValueError(f"measure needs 16 weights, got {w.size}")
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise ValueError("measure weights must be finite and nonnegative")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    def __getitem__(self, omega: OmegaPoint) -> float:
        return float(self.weights[atom_index(omega)])

    def items(self) -> Iterator[tuple[OmegaPoint, float]]:
        return zip(ATOMS, (float(w) for w in self.weights))

    def total(self) -> float:
        return float(self.weights.sum())

    def setting_masses(self) -> np.ndarray:
        """P(eta_L = i, eta_R = j) as a 2x2 array."""
        return self.weights.reshape(2, 2, 4).sum(axis=2)

    def to_nested(self) -> dict[str, float]:
        return {_atom_label(omega): w for omega, w in self.items()}


def _atom_label(omega: OmegaPoint) -> str:
    return "(" + ",".join(f"{x:+d}" if x else "0" for x in omega.as_tuple()) + ")"


def build_measure(angles: AngleConfig) -> Measure:
    return Measure(0.25 * build_pair_table(angles).p.reshape(-1))


def evaluate_variables(omega: OmegaPoint) -> tuple[int, int, int, int, int, int]:
    """Return ``(A1, A2, B1, B2, eta_L, eta_R)`` at ``omega``.

    Each outcome variable equals the matching coordinate on its support and 0
    elsewhere, which is the coordinate itself.
    """
    return omega.x1, omega.x2, omega.x3, omega.x4, omega.eta_left, omega.eta_right


def conditional_table(measure: Measure) -> PairProbTable:
    """Outcome distribution conditioned on each setting pair."""
    blocks = measure.weights.reshape(2, 2, 2, 2)
    masses = blocks.sum(axis=(2, 3))
    for i, j in SETTING_PAIRS:
        mass = masses[i - 1, j - 1]
        if abs(mass - 0.25) > BOUND_TOL:
            raise DegenerateConditioningError(
                f"setting pair ({i},{j}) has mass {mass!r}, expected 0.25"
            )
    return PairProbTable(blocks / masses[:, :, None, None])


def correlation(angles: AngleConfig, i: int, j: int) -> float:
    """E[A_i B_j | settings (i, j)] as the explicit four-term sum."""
    return sum(
        eps * epsp * pair_prob(angles, i, j, eps, epsp) for eps in SIGNS for epsp in SIGNS
    )


def parse_pattern(pattern) -> tuple[int, int]:
    """Accept ``"22"``, ``(2, 2)`` or ``22`` for the negated CHSH term."""
    if isinstance(pattern, (tuple, list)):
        i, j = pattern
    else:
        text = str(pattern)
        if len(text) != 2:
            raise ValueError(f"sign pattern must name one term like '22', got {pattern!r}")
        i, j = int(text[0]), int(text[1])
    if i not in SETTINGS or j not in SETTINGS:
        raise ValueError(f"sign pattern must be one of 11, 12, 21, 22, got {pattern!r}")
    return i, j


DEFAULT_PATTERN = (2, 2)


def signed_sum(E, pattern) -> float:
    """CHSH combination of a 2x2 correlation array with one term negated."""
    ni, nj = parse_pattern(pattern)
    return float(
        sum((-1.0 if (i, j) == (ni, nj) else 1.0) * E[i - 1][j - 1] for i, j in SETTING_PAIRS)
    )


@dataclass(frozen=True)
class ExactChsh:
    E: np.ndarray = field(repr=False)
    S: float
    sign_pattern: tuple[int, int]
    S_max: float
    max_pattern: tuple[int, int]


def chsh_value(angles: AngleConfig, sign_pattern=DEFAULT_PATTERN) -> ExactChsh:
    E = np.array([[correlation(angles, i, j) for j in SETTINGS] for i in SETTINGS])
    E.setflags(write=False)
    pattern = parse_pattern(sign_pattern)
    by_pattern = {p: signed_sum(E, p) for p in SETTING_PAIRS}
    max_pattern = max(SETTING_PAIRS, key=lambda p: by_pattern[p])
    return ExactChsh(
        E=E,
        S=by_pattern[pattern],
        sign_pattern=pattern,
        S_max=by_pattern[max_pattern],
        max_pattern=max_pattern,
    )


def exact_report(angles: AngleConfig = DEFAULT_ANGLES, sign_pattern=DEFAULT_PATTERN) -> dict:
    """JSON-ready analytics: pair_table, measure, correlations, chsh, chsh_max."""
    chsh = chsh_value(angles, sign_pattern)
    measure = build_measure(angles)
    return {
        "angles": angles.as_dict(),
        "pair_table": build_pair_table(angles).to_nested(),
        "measure": measure.to_nested(),
        "measure_total": measure.total(),
        "correlations": {f"{i}{j}": float(chsh.E[i - 1, j - 1]) for i, j in SETTING_PAIRS},
        "chsh": {"pattern": "%d%d" % chsh.sign_pattern, "S": chsh.S},
        "chsh_max": {"pattern": "%d%d" % chsh.max_pattern, "S": chsh.S_max},
    }
