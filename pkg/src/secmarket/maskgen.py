"""Pairwise additive masks for secure aggregation within one round.

Key agreement is simulated: each pair of data owners derives a shared
64-bit seed from both identities (BLAKE2b over the sorted pair). The mask
stream for a seed is SplitMix64 over a counter, see :mod:`secmarket.kernels`.
For owner k, every pair (k, j) contributes +PRG(seed) when k sorts before j
and -PRG(seed) otherwise, so the masks of a full roster sum to zero.
"""
from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from . import kernels
from .errors import DimensionError, ProtocolError, RosterError
from .fixedpoint import RingVector, ring_add


@dataclass(frozen=True)
class DoIdentity:
    address: str
    keypair_seed: int


@dataclass(frozen=True)
class PairwiseSeed:
    pair: frozenset
    seed: int


@dataclass(frozen=True)
class MaskVector:
    owner: str
    round: int
    z: RingVector


SeedTable = Mapping[frozenset, int]


def derive_seed(a: DoIdentity, b: DoIdentity, salt: int = 0) -> int:
    """Symmetric 64-bit seed shared by ``a`` and ``b``."""
    lo, hi = sorted((a, b), key=lambda d: d.address)
    h = hashlib.blake2b(digest_size=8, person=b"secmkt-pairseed")
    for ident in (lo, hi):
        addr = ident.address.encode()
        h.update(struct.pack("<I", len(addr)))
        h.update(addr)
        h.update(struct.pack("<Q", ident.keypair_seed % 2**64))
    h.update(struct.pack("<q", salt))
    return int.from_bytes(h.digest(), "little")


def key_exchange(
    roster: Sequence[DoIdentity],
    salt: int = 0,
    charge: Callable[[int], None] | None = None,
) -> dict[frozenset, int]:
    """All N(N-1)/2 pairwise seeds of a roster, keyed by address pair.

    ``salt`` separates rounds; ``charge`` is called with the number of
    public keys posted (one per roster member).
    """
    if len(roster) < 2:
        raise RosterError(f"key exchange needs at least 2 members, got {len(roster)}")
    addrs = [d.address for d in roster]
    if len(set(addrs)) != len(addrs):
        raise RosterError("duplicate address in roster")
    if charge is not None:
        charge(len(roster))
    seeds = {}
    for i, a in enumerate(roster):
        for b in roster[i + 1:]:
            seeds[frozenset((a.address, b.address))] = derive_seed(a, b, salt)
    return seeds


def pairwise_seeds(seeds: SeedTable) -> list[PairwiseSeed]:
    return [PairwiseSeed(pair, seed) for pair, seed in seeds.items()]


def expand_mask(
    owner: str,
    roster: Iterable[str | DoIdentity],
    seeds: SeedTable,
    dim: int,
    round: int = 0,
) -> MaskVector:
    addrs = [r.address if isinstance(r, DoIdentity) else r for r in roster]
    if owner not in addrs:
        raise ProtocolError(f"{owner!r} is not in the roster")
    peer_seeds, signs = [], []
    for other in addrs:
        if other == owner:
            continue
        key = frozenset((owner, other))
        if key not in seeds:
            raise ProtocolError(f"missing pairwise seed for {owner!r}/{other!r}")
        peer_seeds.append(seeds[key])
        signs.append(1 if owner < other else -1)
    z = kernels.expand_mask(
        np.array(peer_seeds, dtype=np.uint64), np.array(signs, dtype=np.int8), dim
    )
    return MaskVector(owner, round, RingVector(z))


def mask_model(w: RingVector, z: MaskVector) -> RingVector:
    if w.dim != z.z.dim:
        raise DimensionError(f"model dim {w.dim} != mask dim {z.z.dim}")
    return ring_add(w, z.z)
