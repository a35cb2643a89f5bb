"""Acceptance gate: one recorded pass/fail line per criterion.

Long-running criteria (accuracy trend, Byzantine trend) are marked ``slow``.
"""
import subprocess
import sys
import time

import numpy as np
import pytest

from secmarket import contract as contract_mod
from secmarket import fl
from secmarket.data import load_digits
from secmarket.errors import StateError
from secmarket.fixedpoint import RingVector, encode_vector, ring_sum
from secmarket.harness import gas_profile, load_config, run_session
from secmarket.krum import byzantine_count, m_krum, max_admissible_m
from secmarket.maskgen import DoIdentity, expand_mask, key_exchange, mask_model
from secmarket.maskrecovery import verify

from oracles import naive_m_krum
from test_contract import BUILDERS, CALLS, EXPECTED
from test_krum import random_instance


def test_mask_cancellation(criterion):
    rng = np.random.default_rng(1000)
    t0 = time.perf_counter()
    mismatches = 0
    for i in range(1000):
        n, dim = int(rng.integers(2, 9)), int(rng.integers(1, 257))
        ids = [DoIdentity(f"do{i}_{j}", int(rng.integers(2**62))) for j in range(n)]
        seeds = key_exchange(ids, salt=i)
        models = [RingVector(rng.integers(0, 2**64, size=dim, dtype=np.uint64)) for _ in ids]
        masked = [mask_model(w, expand_mask(d.address, ids, seeds, dim, i)) for w, d in zip(models, ids)]
        mismatches += ring_sum(masked) != ring_sum(models)
    elapsed = time.perf_counter() - t0
    ok = criterion("1 mask cancellation", mismatches == 0 and elapsed < 10,
                   f"{mismatches}/1000 mismatches, {elapsed:.2f}s (< 10s)")
    assert ok


def test_krum_oracle_and_planted_outliers(criterion):
    rng = np.random.default_rng(500)
    agree = 0
    for _ in range(500):
        cands, mu, m = random_instance(rng)
        agree += m_krum(cands, mu, m) == naive_m_krum({r: list(v) for r, v in cands.items()}, mu, m)
    excluded = 0
    for _ in range(100):
        p = int(rng.integers(5, 9))
        mu = float(rng.choice([0.1, 0.125, 0.2, 0.25]))
        if max_admissible_m(mu, p) < 1:
            mu = 0.1 if max_admissible_m(0.1, p) else 0.0
        m = int(rng.integers(1, max_admissible_m(mu, p) + 1))
        k = byzantine_count(mu, p)
        dim = int(rng.integers(1, 17))
        honest = rng.normal(size=(p - k, dim))
        diam = max(np.linalg.norm(a - b) for a in honest for b in honest)
        far = [honest.mean(0) + 10 * diam * (1 + rng.random()) * u / np.linalg.norm(u)
               for u in rng.normal(size=(k, dim))]
        cands = dict(enumerate(list(honest) + far, start=1))
        bad = set(range(p - k + 1, p + 1))
        excluded += not bad & set(m_krum(cands, mu, m))
    ok = criterion("2 m-Krum oracle + planted outliers", agree == 500 and excluded == 100,
                   f"oracle {agree}/500, outliers excluded {excluded}/100")
    assert ok


def test_state_machine_legality(criterion):
    wrong = []
    for state, build in BUILDERS.items():
        for method, call in CALLS.items():
            s = build()
            before = s.snapshot()
            if (method, state) in EXPECTED:
                call(s)
                if s.state is not EXPECTED[(method, state)]:
                    wrong.append((method, state.value, "transition"))
            else:
                try:
                    call(s)
                    wrong.append((method, state.value, "accepted"))
                except StateError:
                    if s.snapshot() != before:
                        wrong.append((method, state.value, "mutated"))
    ok = criterion("3 state-machine legality", not wrong,
                   f"{len(BUILDERS) * len(CALLS)} (method, state) pairs, {len(wrong)} wrong")
    assert ok, wrong


def test_ledger_conservation(criterion, monkeypatch):
    violations = []
    original = contract_mod.ContractSession._call

    def audited(self, method, caller, rnd, fn):
        try:
            return original(self, method, caller, rnd, fn)
        finally:
            if not self.ledger.conserved():
                violations.append(method)

    monkeypatch.setattr(contract_mod.ContractSession, "_call", audited)
    rng = np.random.default_rng(4)
    bad_share = 0
    sessions = 0
    for i in range(100):
        R, N = int(rng.integers(4, 11)), int(rng.integers(2, 7))
        mu = float(rng.choice([0.0, 0.1, 0.2, 0.25]))
        if not max_admissible_m(mu, R):
            mu = 0.0
        m = int(rng.integers(1, max_admissible_m(mu, R) + 1))
        failed = set(rng.choice(np.arange(1, R + 1), int(rng.integers(0, 3)), replace=False).tolist())
        s = gas_profile(R, N, dim=8, mu=mu, m=m, seed=i, failed_rounds=failed)
        sessions += 1
        D = s.config.reward_deposit
        if D != sum(s.ledger.balances.values()) or s.ledger.deposit_remaining != 0:
            violations.append(f"session {i} unbalanced")
        if not s.aborted and set(s.payouts().values()) != {D // (m * N)}:
            bad_share += 1
    ok = criterion("4 ledger conservation", not violations and bad_share == 0,
                   f"{sessions} sessions, {len(violations)} conservation violations, {bad_share} wrong shares")
    assert ok


def test_gas_scaling(criterion):
    g = lambda R, N: gas_profile(R, N, dim=64, mu=0.0, m=1).gas_report()
    agg_r = g(8, 4)["ModelAggregate"] / g(4, 4)["ModelAggregate"]
    agg_n = g(4, 8)["ModelAggregate"] / g(4, 4)["ModelAggregate"]
    sup_p = g(8, 4)["OutlierSuppression"] / g(4, 4)["OutlierSuppression"]
    sup_n = [g(8, n)["OutlierSuppression"] for n in (2, 4, 6, 8)]
    spread = (max(sup_n) - min(sup_n)) / min(sup_n)
    ok = (1.9 <= agg_r <= 2.1 and 1.9 <= agg_n <= 2.1 and 3.5 <= sup_p <= 4.5 and spread < 0.05)
    criterion("5 gas scaling", ok,
              f"aggregate R8/R4={agg_r:.3f} N8/N4={agg_n:.3f}, suppression P8/P4={sup_p:.3f}, "
              f"N-spread={spread:.1%}")
    assert ok


@pytest.mark.slow
def test_accuracy_trend(criterion):
    cfg = load_config("defaults")
    t0 = time.perf_counter()
    finals = [run_session(cfg.replace(PL=pl)).final_accuracy for pl in range(len(cfg.arch_list))]
    elapsed = time.perf_counter() - t0
    baseline, full = finals[0], finals[-1]
    drops = [a - b for a, b in zip(finals, finals[1:]) if b < a]
    monotone = len(drops) == 0 or (len(drops) == 1 and drops[0] <= 0.02)
    ok = full - baseline >= 0.10 and monotone and elapsed < 600
    criterion("6 accuracy trend", ok,
              "PL sweep " + "/".join(f"{a:.3f}" for a in finals)
              + f", gain {100 * (full - baseline):.1f} pts (>= 10), {elapsed:.0f}s (< 600s)")
    assert ok


@pytest.fixture(scope="module")
def byzantine_means():
    base = load_config("defaults")
    cases = {(rate, 0.25) for rate in (0.0, 0.02, 0.04, 0.06, 0.08, 0.16)} | {(0.16, 0.5)}
    return {
        case: float(np.mean([run_session(base.replace(adversary_rate=case[0], mu=case[1], seed=s)).final_accuracy
                             for s in range(5)]))
        for case in sorted(cases)
    }


@pytest.mark.slow
def test_byzantine_low_rates_match_clean(criterion, byzantine_means):
    clean = byzantine_means[(0.0, 0.25)]
    gaps = {r: clean - byzantine_means[(r, 0.25)] for r in (0.02, 0.04, 0.06, 0.08)}
    ok = all(abs(g) <= 0.05 for g in gaps.values())
    criterion("7a attack <= 8% within 5 pts of clean", ok,
              f"clean {clean:.3f}; " + ", ".join(f"{int(r * 100)}%: {byzantine_means[(r, 0.25)]:.3f}"
                                                 for r in gaps))
    assert ok


@pytest.mark.slow
def test_byzantine_16_below_8(criterion, byzantine_means):
    a16, a8 = byzantine_means[(0.16, 0.25)], byzantine_means[(0.08, 0.25)]
    ok = a16 < a8
    criterion("7b attack 16% < 8% (mu=0.25)", ok, f"16%: {a16:.3f}, 8%: {a8:.3f}")
    assert ok


@pytest.mark.slow
def test_byzantine_mu_half_beats_quarter(criterion, byzantine_means):
    half, quarter = byzantine_means[(0.16, 0.5)], byzantine_means[(0.16, 0.25)]
    ok = half > quarter
    criterion("7c mu=0.5 > mu=0.25 at 16%", ok, f"mu=0.5: {half:.3f}, mu=0.25: {quarter:.3f}")
    assert ok


def test_mask_recovery_identity(criterion):
    rng = np.random.default_rng(8)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(100):
        n_clients, n_L = int(rng.integers(1, 9)), int(rng.integers(1, 5))
        shapes = [(int(rng.integers(1, 33)),) for _ in range(int(rng.integers(1, 4)))]
        worst = max(worst, verify(n_clients, n_L, shapes, int(rng.integers(2**31))))
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-9 and elapsed < 5
    criterion("8 mask-recovery identity", ok, f"max rel err {worst:.2e} (<= 1e-9), {elapsed:.2f}s (< 5s)")
    assert ok


def test_gradient_correctness(criterion):
    digits = load_digits()
    w = fl.init_model([64, 32, 16, 10], 9)
    w = fl.train(w, digits.subset(np.arange(300)), fl.TrainSpec(1, 10, 0.1, 1))
    X, y = digits.X[300:364], digits.y[300:364]
    g = fl.gradient(w, X, y)
    flat = w.flatten()
    h = 1e-5
    worst = 0.0
    for c in np.random.default_rng(2).choice(flat.size, 1000, replace=False):
        up, dn = flat.copy(), flat.copy()
        up[c] += h
        dn[c] -= h
        fd = (fl.loss(w.unflatten(up), X, y) - fl.loss(w.unflatten(dn), X, y)) / (2 * h)
        scale = max(abs(fd), abs(g[c]))
        if scale > 0:
            worst = max(worst, abs(fd - g[c]) / scale)
    ok = worst <= 1e-4
    criterion("9 gradient correctness", ok, f"max rel diff {worst:.2e} over 1000 coords (<= 1e-4)")
    assert ok


def test_determinism(criterion, tmp_path):
    outs = []
    for name in ("a", "b"):
        subprocess.run([sys.executable, "-m", "secmarket.cli", "run", "--config", "defaults", "--seed", "42",
                        "--out", str(tmp_path / name)], check=True, capture_output=True)
        outs.append(tmp_path / name)
    same = all((outs[0] / f).read_bytes() == (outs[1] / f).read_bytes() for f in ("metrics.csv", "events.log"))
    nonempty = (outs[0] / "events.log").stat().st_size > 0
    ok = criterion("10 determinism", same and nonempty, "metrics.csv and events.log byte-identical")
    assert ok
