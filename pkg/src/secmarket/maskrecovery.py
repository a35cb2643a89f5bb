"""Encrypted-gradient masks and exact recovery of the weighted aggregate.

Client k sends, for every layer l,

    enc_k = (1 / R_l) * grad_k + sum_i r_i * st_k[i] - v * beta_k

where ``R_l`` is a strictly positive elementwise mask, ``st_k`` stacks
``n_L`` arrays shaped like the layer, ``r`` and ``beta_k`` are shared
mask vectors and ``v`` a scalar.  With client weights ``w_k = M_k / M`` and
``r_i = gamma_i * r_a[i]``, the aggregator recovers

    G_l = R_l * (sum_k w_k enc_k - sum_i gamma_i sigma_i + v * beta)

which equals ``sum_k w_k grad_k``.  Here ``sigma_i = sum_k w_k r_a[i] st_k[i]``
and ``beta = sum_k w_k beta_k``.  All arithmetic is float64.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ConsistencyError, DimensionError

Shape = tuple[int, ...]


@dataclass
class MaskBundle:
    R: list[np.ndarray]                 # per layer, elementwise positive
    r: np.ndarray                       # (n_L,)
    gamma: np.ndarray                   # (n_L,)
    r_a: np.ndarray                     # (n_L,), r = gamma * r_a
    sigma_tilde: list[list[np.ndarray]] # [client][layer] -> (n_L, *shape)
    beta_k: list[list[np.ndarray]]      # [client][layer] -> shape
    v: float
    weights: np.ndarray                 # (n_clients,), sums to 1

    @property
    def n_clients(self) -> int:
        return len(self.weights)

    @property
    def n_layers(self) -> int:
        return len(self.R)

    @property
    def n_L(self) -> int:
        return len(self.r)

    def sigma(self, l: int) -> np.ndarray:
        """sigma_i^(l) = sum_k w_k * r_a[i] * st_k[i], stacked over i."""
        ra = self.r_a.reshape((-1,) + (1,) * self.R[l].ndim)
        return sum(w * ra * st[l] for w, st in zip(self.weights, self.sigma_tilde))

    def beta(self, l: int) -> np.ndarray:
        return sum(w * b[l] for w, b in zip(self.weights, self.beta_k))

    def check(self) -> None:
        if any(np.any(R <= 0) for R in self.R):
            raise ConsistencyError("multiplicative mask must be strictly positive")
        if not np.isclose(self.weights.sum(), 1.0, rtol=0, atol=1e-12) or np.any(self.weights <= 0):
            raise ConsistencyError("client weights must be positive and sum to 1")
        if not np.allclose(self.r, self.gamma * self.r_a, rtol=1e-12, atol=0):
            raise ConsistencyError("r must equal gamma * r_a elementwise")
        if len(self.sigma_tilde) != self.n_clients or len(self.beta_k) != self.n_clients:
            raise ConsistencyError("per-client masks do not match the number of clients")
        for st, b in zip(self.sigma_tilde, self.beta_k):
            for l, R in enumerate(self.R):
                if st[l].shape != (self.n_L,) + R.shape or b[l].shape != R.shape:
                    raise ConsistencyError(f"layer {l}: mask shapes inconsistent")


def gen_bundle(n_clients: int, n_L: int, layer_shapes: Sequence[Shape], seed: int) -> MaskBundle:
    if n_clients < 1 or n_L < 1:
        raise ValueError("need at least one client and n_L >= 1")
    rng = np.random.default_rng(seed)
    shapes = [tuple(s) for s in layer_shapes]
    R = [rng.uniform(0.5, 2.0, size=s) for s in shapes]
    gamma = rng.uniform(-1.0, 1.0, size=n_L)
    r_a = rng.uniform(-1.0, 1.0, size=n_L)
    sigma_tilde = [[rng.uniform(-1.0, 1.0, size=(n_L,) + s) for s in shapes] for _ in range(n_clients)]
    beta_k = [[rng.uniform(-1.0, 1.0, size=s) for s in shapes] for _ in range(n_clients)]
    v = float(rng.uniform(-1.0, 1.0))
    raw = rng.uniform(0.1, 1.0, size=n_clients)
    weights = raw / raw.sum()
    return MaskBundle(R, gamma * r_a, gamma, r_a, sigma_tilde, beta_k, v, weights)


def _mask_term(r: np.ndarray, st: np.ndarray) -> np.ndarray:
    """r^T st: contract the leading n_L axis."""
    return np.tensordot(r, st, axes=(0, 0))


def encrypt_gradient(grad_k: Sequence[np.ndarray], bundle: MaskBundle, k: int) -> list[np.ndarray]:
    if len(grad_k) != bundle.n_layers:
        raise DimensionError(f"expected {bundle.n_layers} layers, got {len(grad_k)}")
    out = []
    for l, g in enumerate(grad_k):
        g = np.asarray(g, dtype=np.float64)
        if g.shape != bundle.R[l].shape:
            raise DimensionError(f"layer {l}: gradient shape {g.shape} != mask shape {bundle.R[l].shape}")
        out.append(g / bundle.R[l] + _mask_term(bundle.r, bundle.sigma_tilde[k][l]) - bundle.v * bundle.beta_k[k][l])
    return out


def weighted_sum(per_client: Sequence[Sequence[np.ndarray]], weights) -> list[np.ndarray]:
    n_layers = len(per_client[0])
    return [sum(w * c[l] for w, c in zip(weights, per_client)) for l in range(n_layers)]


def mask_identity(bundle: MaskBundle, l: int) -> tuple[np.ndarray, np.ndarray]:
    """Both sides of sum_i gamma_i sigma_i = sum_k w_k r^T st_k for layer l."""
    lhs = _mask_term(bundle.gamma, bundle.sigma(l))
    rhs = sum(w * _mask_term(bundle.r, st[l]) for w, st in zip(bundle.weights, bundle.sigma_tilde))
    return lhs, rhs


def recover(encrypted_aggregate: Sequence[np.ndarray], bundle: MaskBundle) -> list[np.ndarray]:
    """Unmask the weighted sum of encrypted gradients, layer by layer."""
    bundle.check()
    if len(encrypted_aggregate) != bundle.n_layers:
        raise DimensionError(f"expected {bundle.n_layers} layers, got {len(encrypted_aggregate)}")
    out = []
    for l, agg in enumerate(encrypted_aggregate):
        agg = np.asarray(agg, dtype=np.float64)
        if agg.shape != bundle.R[l].shape:
            raise DimensionError(f"layer {l}: aggregate shape {agg.shape} != {bundle.R[l].shape}")
        mask = _mask_term(bundle.gamma, bundle.sigma(l))
        out.append(bundle.R[l] * (agg - mask + bundle.v * bundle.beta(l)))
    return out


def verify(n_clients: int, n_L: int, layer_shapes: Sequence[Shape], seed: int) -> float:
    """Max relative error of recover() against the directly weighted gradient sum."""
    bundle = gen_bundle(n_clients, n_L, layer_shapes, seed)
    rng = np.random.default_rng(seed + 1)
    grads = [[rng.normal(size=s) for s in layer_shapes] for _ in range(n_clients)]
    enc = [encrypt_gradient(g, bundle, k) for k, g in enumerate(grads)]
    got = recover(weighted_sum(enc, bundle.weights), bundle)
    want = weighted_sum(grads, bundle.weights)
    err = 0.0
    for a, b in zip(got, want):
        scale = max(float(np.max(np.abs(b))), 1e-300)
        err = max(err, float(np.max(np.abs(a - b))) / scale)
    return err
