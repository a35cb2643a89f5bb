"""Byzantine data-owner behaviours.

Adversaries follow the masking protocol; only their payload is wrong.
``RandomUpdate`` uploads uniform noise in [-1, 1] of the model's
dimension, ``DropOut`` registers and then never submits.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ConfigError
from .fixedpoint import RingVector, encode_vector

RANDOM_RANGE = 1.0


class Behavior(str, enum.Enum):
    HONEST = "honest"
    RANDOM_UPDATE = "random_update"
    DROP_OUT = "drop_out"


@dataclass(frozen=True)
class AdversaryProfile:
    kind: Behavior = Behavior.RANDOM_UPDATE
    rate: float = 0.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "kind", Behavior(self.kind))
        if self.kind is Behavior.HONEST:
            raise ConfigError("adversary kind must be random_update or drop_out")
        if not 0.0 <= self.rate <= 1.0:
            raise ConfigError(f"attack rate must be in [0, 1], got {self.rate}")


def random_update(dim: int, seed: int) -> RingVector:
    if dim < 1:
        raise ConfigError(f"dim must be >= 1, got {dim}")
    rng = np.random.default_rng(seed)
    return encode_vector(rng.uniform(-RANDOM_RANGE, RANDOM_RANGE, size=dim))


def adversary_count(population: int, rate: float) -> int:
    # rate * population can land a hair below an integer (0.16 * 100 = 15.999...)
    return int(np.floor(rate * population + 1e-9))


def assign_adversaries(population: Sequence[str], profile: AdversaryProfile) -> dict[str, Behavior]:
    """Flag ``floor(rate * |population|)`` members, drawn without replacement."""
    population = list(population)
    k = adversary_count(len(population), profile.rate)
    rng = np.random.default_rng(profile.seed)
    flagged = set(rng.choice(len(population), size=k, replace=False).tolist()) if k else set()
    return {
        addr: (profile.kind if i in flagged else Behavior.HONEST)
        for i, addr in enumerate(population)
    }
