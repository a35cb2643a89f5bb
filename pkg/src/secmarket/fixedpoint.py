"""Fixed-point encoding of reals into the ring Z/2^64.

Reals are scaled by 10^8, rounded half away from zero, and stored as
two's-complement residues. Addition wraps, so pairwise masks cancel
exactly whatever the sign of the underlying values.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .errors import DimensionError, RangeError

SCALE = 10**8
MODULUS = 2**64
HALF = 2**63
#: encode() accepts |x| strictly below this; leaves 8 bits of headroom for sums.
MAX_ABS = 2**55 / SCALE


def _check_range(x: float) -> None:
    if not math.isfinite(x) or abs(x) >= MAX_ABS:
        raise RangeError(f"value {x!r} outside fixed-point range |x| < {MAX_ABS:.6g}")


def _round_half_away(scaled: float) -> int:
    a = abs(scaled)
    whole = math.floor(a)
    mag = whole + (1 if a - whole >= 0.5 else 0)  # a - floor(a) is exact
    return -mag if scaled < 0 else mag


def encode(x: float) -> int:
    """Encode one real as a residue in ``[0, 2**64)``.

    The product ``x * 10**8`` is taken in double precision and then rounded
    half away from zero; negatives land in the upper half of the ring.
    """
    x = float(x)
    _check_range(x)
    return _round_half_away(x * SCALE) % MODULUS


def decode(e: int, divisor: int = 1) -> float:
    """Centered decode of a residue, divided by ``SCALE * divisor``."""
    if divisor < 1:
        raise RangeError(f"divisor must be >= 1, got {divisor}")
    e = int(e) % MODULUS
    signed = e - MODULUS if e >= HALF else e
    return signed / (SCALE * divisor)


def quantize(x: float) -> float:
    """Nearest point of the 10^-8 grid, as decode(encode(x)) would return it."""
    return decode(encode(x))


@dataclass(frozen=True, eq=False)
class RingVector:
    """Fixed-length vector of ring elements backed by a ``uint64`` array."""

    elems: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.elems)
        if arr.ndim != 1:
            raise DimensionError("RingVector must be one-dimensional")
        if arr.dtype != np.uint64:
            arr = arr.astype(np.uint64)
        arr = arr.copy()
        arr.setflags(write=False)
        object.__setattr__(self, "elems", arr)

    @property
    def dim(self) -> int:
        return int(self.elems.shape[0])

    @classmethod
    def zeros(cls, dim: int) -> "RingVector":
        return cls(np.zeros(dim, dtype=np.uint64))

    @classmethod
    def from_ints(cls, values: Iterable[int]) -> "RingVector":
        return cls(np.array([int(v) % MODULUS for v in values], dtype=np.uint64))

    def to_ints(self) -> list[int]:
        return [int(v) for v in self.elems]

    def __len__(self) -> int:
        return self.dim

    def __getitem__(self, i: int) -> int:
        return int(self.elems[i])

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, RingVector):
            return NotImplemented
        return self.dim == other.dim and bool(np.array_equal(self.elems, other.elems))

    def __hash__(self) -> int:
        return hash(self.elems.tobytes())

    def __add__(self, other: "RingVector") -> "RingVector":
        return ring_add(self, other)

    def __sub__(self, other: "RingVector") -> "RingVector":
        return ring_add(self, ring_neg(other))

    def __neg__(self) -> "RingVector":
        return ring_neg(self)

    def __repr__(self) -> str:
        head = ", ".join(str(int(v)) for v in self.elems[:4])
        more = ", ..." if self.dim > 4 else ""
        return f"RingVector(dim={self.dim}, [{head}{more}])"


def ring_add(a: RingVector, b: RingVector) -> RingVector:
    if a.dim != b.dim:
        raise DimensionError(f"dimension mismatch: {a.dim} != {b.dim}")
    return RingVector(a.elems + b.elems)  # uint64 arithmetic wraps mod 2^64


def ring_neg(a: RingVector) -> RingVector:
    return RingVector(np.uint64(0) - a.elems)


def ring_sum(vectors: Iterable[RingVector], dim: int | None = None) -> RingVector:
    vectors = list(vectors)
    if not vectors:
        if dim is None:
            raise DimensionError("cannot infer dimension of an empty sum")
        return RingVector.zeros(dim)
    acc = np.zeros(vectors[0].dim, dtype=np.uint64)
    for v in vectors:
        if v.dim != acc.shape[0]:
            raise DimensionError(f"dimension mismatch: {v.dim} != {acc.shape[0]}")
        acc += v.elems
    return RingVector(acc)


def encode_vector(xs) -> RingVector:
    """Vectorised :func:`encode`."""
    x = np.asarray(xs, dtype=np.float64).ravel()
    if x.size and (not np.all(np.isfinite(x)) or np.max(np.abs(x)) >= MAX_ABS):
        bad = x[~np.isfinite(x) | (np.abs(x) >= MAX_ABS)][0]
        raise RangeError(f"value {bad!r} outside fixed-point range |x| < {MAX_ABS:.6g}")
    a = np.abs(x) * SCALE
    whole = np.floor(a)
    mag = (whole + (a - whole >= 0.5)).astype(np.int64)
    signed = np.where(x < 0, -mag, mag)
    return RingVector(signed.view(np.uint64))


def decode_vector(v: RingVector, divisor: int = 1) -> np.ndarray:
    """Vectorised :func:`decode`; returns a float64 array."""
    if divisor < 1:
        raise RangeError(f"divisor must be >= 1, got {divisor}")
    return v.elems.view(np.int64).astype(np.float64) / (SCALE * divisor)
