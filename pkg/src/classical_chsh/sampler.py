"""Seeded generation of elementary events, six-vectors and filtered records.

Generator contract
------------------
* Bit generator: PCG64 (numpy's implementation; its 64-bit output stream is
  fixed by the PCG64 definition and is identical on every platform).
* Seeding: shard ``k`` of a run seeded with ``seed`` uses
  ``numpy.random.SeedSequence(entropy=seed, spawn_key=(k,))``.
* Uniform deviate: ``(next_uint64() >> 11) * 2**-53``, one per event.
* Event: inverse CDF over the 16 atoms in canonical order; the atom chosen is
  the first whose cumulative weight exceeds ``u * total``.
* Shard ``k`` produces records ``[k * shard_size, (k + 1) * shard_size)``;
  shards are concatenated in index order, so the number of workers never
  changes the output.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Iterable, Iterator, Sequence

import numpy as np

from .model import (
    ATOMS,
    DEFAULT_ANGLES,
    AngleConfig,
    Measure,
    OmegaPoint,
    atom_index,
    build_measure,
    check_setting,
    sign_index,
)

DEFAULT_SHARD_SIZE = 1 << 16
_U53 = 2.0**-53
_U64_MASK = (1 << 64) - 1


class MalformedVectorError(ValueError):
    pass


@dataclass(frozen=True)
class SeedSpec:
    seed: int = 42
    shard_size: int = DEFAULT_SHARD_SIZE

    def __post_init__(self):
        if not 0 <= int(self.seed) <= _U64_MASK:
            raise ValueError(f"seed must be an unsigned 64-bit integer, got {self.seed!r}")
        if int(self.shard_size) < 1:
            raise ValueError(f"shard_size must be >= 1, got {self.shard_size!r}")

    def shard_bit_generator(self, k: int) -> np.random.PCG64:
        return np.random.PCG64(np.random.SeedSequence(entropy=int(self.seed), spawn_key=(int(k),)))


class UniformSource:
    """Single-threaded stream of 53-bit uniforms on [0, 1)."""

    def __init__(self, bit_generator: np.random.PCG64):
        self._bits = bit_generator

    @classmethod
    def for_shard(cls, seeds: SeedSpec, k: int = 0) -> "UniformSource":
        return cls(seeds.shard_bit_generator(k))

    def draw(self, size: int) -> np.ndarray:
        raw = self._bits.random_raw(size)
        return (raw >> np.uint64(11)).astype(np.float64) * _U53

    def next(self) -> float:
        return float(self.draw(1)[0])


def inverse_cdf(weights: np.ndarray, uniforms: np.ndarray) -> np.ndarray:
    """Map uniforms to atom indices. Zero-weight atoms are never returned."""
    cdf = np.cumsum(weights)
    total = cdf[-1]
    idx = np.searchsorted(cdf, np.asarray(uniforms) * total, side="right")
    # guard against u * total rounding up to total
    last = int(np.flatnonzero(weights > 0)[-1])
    return np.minimum(idx, last).astype(np.uint8)


def sample_omega(source: UniformSource, measure: Measure) -> OmegaPoint:
    return ATOMS[int(inverse_cdf(measure.weights, np.array([source.next()]))[0])]


# Atom index -> (a, b, i, j), canonical order from the model.
_ATOM_A = np.array([omega.outcomes[0] for omega in ATOMS], dtype=np.int8)
_ATOM_B = np.array([omega.outcomes[1] for omega in ATOMS], dtype=np.int8)
_ATOM_I = np.array([omega.eta_left for omega in ATOMS], dtype=np.int8)
_ATOM_J = np.array([omega.eta_right for omega in ATOMS], dtype=np.int8)


@dataclass(frozen=True, slots=True)
class SixVector:
    A1: int
    A2: int
    B1: int
    B2: int
    etaL: int
    etaR: int

    def __post_init__(self):
        left = (self.A1, self.A2)
        right = (self.B1, self.B2)
        try:
            check_setting(self.etaL)
            check_setting(self.etaR)
        except ValueError as exc:
            raise MalformedVectorError(str(exc)) from None
        if not _selected_ok(left, self.etaL) or not _selected_ok(right, self.etaR):
            raise MalformedVectorError(f"zero pattern contradicts settings: {self}")


def _selected_ok(pair: tuple[int, int], eta: int) -> bool:
    chosen, other = pair[eta - 1], pair[2 - eta]
    return chosen in (-1, 1) and other == 0


@dataclass(frozen=True, slots=True)
class Record:
    a: int
    b: int
    i: int
    j: int

    def __post_init__(self):
        sign_index(self.a), sign_index(self.b)
        check_setting(self.i), check_setting(self.j)


def to_six_vector(omega: OmegaPoint) -> SixVector:
    return SixVector(omega.x1, omega.x2, omega.x3, omega.x4, omega.eta_left, omega.eta_right)


def filter_record(v: SixVector) -> Record:
    """Drop the zero coordinates of a six-vector."""
    if not (_selected_ok((v.A1, v.A2), v.etaL) and _selected_ok((v.B1, v.B2), v.etaR)):
        raise MalformedVectorError(f"zero pattern contradicts settings: {v}")
    return Record(a=(v.A1, v.A2)[v.etaL - 1], b=(v.B1, v.B2)[v.etaR - 1], i=v.etaL, j=v.etaR)


def restore_six_vector(r: Record) -> SixVector:
    left = (r.a, 0) if r.i == 1 else (0, r.a)
    right = (r.b, 0) if r.j == 1 else (0, r.b)
    return SixVector(*left, *right, r.i, r.j)


def record_atom_index(r: Record) -> int:
    return atom_index(OmegaPoint.from_parts(r.i, r.j, r.a, r.b))


class RecordStream(Sequence):
    """Columnar record sequence backed by canonical atom indices (uint8)."""

    def __init__(self, atoms: np.ndarray):
        atoms = np.asarray(atoms, dtype=np.uint8).reshape(-1)
        if atoms.size and atoms.max() > 15:
            raise ValueError("atom indices must lie in 0..15")
        self.atoms = atoms

    @classmethod
    def from_records(cls, records: Iterable[Record]) -> "RecordStream":
        return cls(np.fromiter((record_atom_index(r) for r in records), dtype=np.uint8))

    @classmethod
    def concat(cls, streams: Iterable["RecordStream"]) -> "RecordStream":
        parts = [s.atoms for s in streams]
        return cls(np.concatenate(parts) if parts else np.empty(0, dtype=np.uint8))

    def __len__(self) -> int:
        return int(self.atoms.size)

    def __getitem__(self, k):
        if isinstance(k, slice):
            return RecordStream(self.atoms[k])
        return _ATOM_RECORDS[int(self.atoms[k])]

    def __iter__(self) -> Iterator[Record]:
        return (_ATOM_RECORDS[k] for k in self.atoms.tolist())

    def __eq__(self, other) -> bool:
        if not isinstance(other, RecordStream):
            return NotImplemented
        return np.array_equal(self.atoms, other.atoms)

    def __repr__(self) -> str:
        return f"RecordStream(n={len(self)})"

    @property
    def a(self) -> np.ndarray:
        return _ATOM_A[self.atoms]

    @property
    def b(self) -> np.ndarray:
        return _ATOM_B[self.atoms]

    @property
    def i(self) -> np.ndarray:
        return _ATOM_I[self.atoms]

    @property
    def j(self) -> np.ndarray:
        return _ATOM_J[self.atoms]


_ATOM_RECORDS = tuple(filter_record(to_six_vector(omega)) for omega in ATOMS)


def shard_bounds(n: int, shard_size: int) -> list[tuple[int, int, int]]:
    """``(k, start, stop)`` for every shard covering ``n`` records."""
    return [(k, start, min(start + shard_size, n)) for k, start in enumerate(range(0, n, shard_size))]


def sample_shard(seeds: SeedSpec, k: int, count: int, measure: Measure) -> np.ndarray:
    uniforms = UniformSource.for_shard(seeds, k).draw(count)
    return inverse_cdf(measure.weights, uniforms)


def generate_atoms(
    seeds: SeedSpec, n: int, angles: AngleConfig = DEFAULT_ANGLES, workers: int = 1, measure: Measure | None = None
) -> np.ndarray:
    if n < 0:
        raise ValueError(f"n must be >= 0, got {n}")
    measure = build_measure(angles) if measure is None else measure
    bounds = shard_bounds(n, seeds.shard_size)
    if not bounds:
        return np.empty(0, dtype=np.uint8)
    job = lambda b: sample_shard(seeds, b[0], b[2] - b[1], measure)  # noqa: E731
    if workers <= 1 or len(bounds) == 1:
        parts = [job(b) for b in bounds]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(job, bounds))
    return np.concatenate(parts)


def generate_stream(
    seeds: SeedSpec, n: int, angles: AngleConfig = DEFAULT_ANGLES, workers: int = 1
) -> RecordStream:
    """Exactly ``n`` records; a pure function of ``(seed, shard_size, n, angles)``."""
    return RecordStream(generate_atoms(seeds, n, angles, workers))


def iter_omegas(seeds: SeedSpec, n: int, angles: AngleConfig = DEFAULT_ANGLES) -> Iterator[OmegaPoint]:
    """Sequential event-by-event view of the same stream ``generate_stream`` returns."""
    measure = build_measure(angles)
    for k, start, stop in shard_bounds(n, seeds.shard_size):
        for idx in sample_shard(seeds, k, stop - start, measure).tolist():
            yield ATOMS[idx]


def iter_six_vectors(seeds: SeedSpec, n: int, angles: AngleConfig = DEFAULT_ANGLES) -> Iterator[SixVector]:
    return map(to_six_vector, iter_omegas(seeds, n, angles))
