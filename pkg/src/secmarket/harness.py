"""Experiment runner: model owner <-> contract iterations, sweeps and metrics.

Config files are flat ``key = value`` text whose keys are the field names
of :class:`ExperimentConfig`.  Everything random derives from the global
seed through :func:`derive_seed`, so a (config, seed) pair fixes every
output byte except the wall-clock timings.
"""
from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import json
import time
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Iterable

import numpy as np

from . import fl, krum
from .adversary import AdversaryProfile, Behavior, assign_adversaries, random_update
from .contract import ContractSession, SessionConfig, State, deploy
from .data import Partition, load_dataset, partition_iid
from .errors import ConfigError, ConstraintError, MarketError, NoDataError
from .fixedpoint import RingVector, encode_vector
from .maskgen import DoIdentity, expand_mask, mask_model

MO_ADDRESS = "MO"


def derive_seed(seed: int, *labels: Any) -> int:
    h = hashlib.blake2b(digest_size=8, person=b"secmkt-derive")
    h.update(str(int(seed)).encode())
    for lab in labels:
        h.update(b"\x1f" + str(lab).encode())
    return int.from_bytes(h.digest(), "little") >> 1  # keep it a positive int63


@dataclass
class ExperimentConfig:
    # contract parameters
    M0: int = 20
    E: int = 2
    B: int = 5
    R: int = 8
    N: int = 4
    mu: float = 0.25
    m: int | None = None
    reward_deposit: int = 1000
    timeout_ticks: int = 10
    # market / training parameters
    MOPreEp: int = 20
    MOEp: int = 2
    DOEp: int = 2
    DONum: int = 64
    PL: int = 3
    Frag: float = 0.5
    iterations: int = 10
    lr: float = 0.2
    arch: str = "64,32,16,10"
    dataset: str = "digits"
    mo_size: int | None = None
    test_size: int | None = None
    # adversaries
    adversary_kind: str = "random_update"
    adversary_rate: float = 0.0
    # misc
    seed: int = 42
    workers: int = 1

    @property
    def arch_list(self) -> list[int]:
        return [int(a) for a in str(self.arch).replace(" ", "").split(",") if a]

    @property
    def eligible_per_iteration(self) -> int:
        return max(1, int(np.floor(self.Frag * self.DONum + 1e-9)))

    def validate(self) -> None:
        problems = []
        if not 0 < self.Frag <= 1:
            problems.append(f"Frag must be in (0, 1], got {self.Frag}")
        if self.DONum < self.N:
            problems.append(f"DONum ({self.DONum}) must be >= N ({self.N})")
        if self.DOEp < self.E:
            problems.append(f"DOEp ({self.DOEp}) must be >= contract minimum E ({self.E})")
        if self.iterations < 0:
            problems.append("iterations must be >= 0")
        n_layers = len(self.arch_list) - 1
        if n_layers < 1:
            problems.append(f"arch {self.arch!r} needs at least two widths")
        elif not 0 <= self.PL <= n_layers:
            problems.append(f"PL must be in [0, {n_layers}], got {self.PL}")
        if self.adversary_kind not in (Behavior.RANDOM_UPDATE.value, Behavior.DROP_OUT.value):
            problems.append(f"unknown adversary_kind {self.adversary_kind!r}")
        if not 0 <= self.adversary_rate <= 1:
            problems.append(f"adversary_rate must be in [0, 1], got {self.adversary_rate}")
        if self.workers < 1:
            problems.append("workers must be >= 1")
        if problems:
            raise ConfigError("; ".join(problems))

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)


PRESETS: dict[str, dict[str, Any]] = {
    "defaults": {},
    "smoke": {"iterations": 2, "MOPreEp": 5},
    "gaussian": {"dataset": "gaussian", "M0": 40, "B": 8, "lr": 0.05},
}


def _coerce(name: str, raw: str):
    ftype = {f.name: f.type for f in fields(ExperimentConfig)}[name]
    raw = raw.strip()
    if "None" in str(ftype) and raw.lower() in ("", "none", "auto"):
        return None
    if str(ftype).startswith("int"):
        return int(raw)
    if str(ftype).startswith("float"):
        return float(raw)
    return raw


def parse_config(text: str, base: ExperimentConfig | None = None) -> ExperimentConfig:
    known = {f.name for f in fields(ExperimentConfig)}
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in known:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        try:
            values[key] = _coerce(key, val)
        except ValueError:
            raise ConfigError(f"line {lineno}: bad value {val!r} for {key}") from None
    return dataclasses.replace(base or ExperimentConfig(), **values)


def load_config(spec: str | None) -> ExperimentConfig:
    """A preset name (``defaults``, ``smoke``, ``gaussian``) or a config file path."""
    if spec is None or spec in PRESETS:
        return ExperimentConfig(**PRESETS[spec or "defaults"])
    return parse_config(Path(spec).read_text())


def dump_config(cfg: ExperimentConfig) -> str:
    return "".join(f"{f.name} = {getattr(cfg, f.name)}\n" for f in fields(cfg))


# -- metrics ----------------------------------------------------------------

METRIC_FIELDS = [
    "iteration", "status", "accuracy",
    "gas_register", "gas_pubkey", "gas_aggregate", "gas_suppress",
    "rounds_attempted", "rounds_failed", "p_size", "p_prime_size", "m",
    "accepted_rounds", "byzantine_dos", "byzantine_rounds", "byzantine_accepted",
    "payout_per_do", "owner_refund", "paid",
]
TIMING_FIELDS = ["iteration", "train_s", "register_ms", "pubkey_ms", "aggregate_ms", "suppress_ms", "payment_ms"]


@dataclass
class MetricsRow:
    iteration: int
    status: str
    accuracy: float
    gas_register: int = 0
    gas_pubkey: int = 0
    gas_aggregate: int = 0
    gas_suppress: int = 0
    rounds_attempted: int = 0
    rounds_failed: int = 0
    p_size: int = 0
    p_prime_size: int = 0
    m: int = 0
    accepted_rounds: str = ""
    byzantine_dos: int = 0
    byzantine_rounds: int = 0
    byzantine_accepted: int = 0
    payout_per_do: int = 0
    owner_refund: int = 0
    paid: str = ""

    def as_csv(self) -> dict[str, str]:
        out = {k: str(v) for k, v in dataclasses.asdict(self).items()}
        out["accuracy"] = f"{self.accuracy:.6f}"
        return out


@dataclass
class SessionResult:
    config: ExperimentConfig
    rows: list[MetricsRow] = field(default_factory=list)
    events: list[str] = field(default_factory=list)
    timings: list[dict[str, float]] = field(default_factory=list)
    public_fraction: float = 0.0

    @property
    def final_accuracy(self) -> float:
        return self.rows[-1].accuracy

    @property
    def accuracies(self) -> list[float]:
        return [r.accuracy for r in self.rows]

    def summary(self) -> dict:
        return {
            "final_accuracy": round(self.final_accuracy, 6),
            "initial_accuracy": round(self.rows[0].accuracy, 6),
            "iterations": len(self.rows) - 1,
            "public_fraction": round(self.public_fraction, 6),
            "failed": [r.status for r in self.rows if r.status.startswith("failed")],
            "seed": self.config.seed,
        }


def metrics_csv(rows: Iterable[MetricsRow], extra: dict[str, str] | None = None) -> str:
    buf = io.StringIO()
    cols = list(extra or {}) + METRIC_FIELDS
    w = csv.DictWriter(buf, fieldnames=cols, lineterminator="\n")
    w.writeheader()
    for row in rows:
        w.writerow({**(extra or {}), **row.as_csv()})
    return buf.getvalue()


# -- one contract execution -------------------------------------------------

@dataclass
class Market:
    """Static pieces of a run: data split, identities, adversaries, reference layers."""
    cfg: ExperimentConfig
    part: Partition
    addresses: list[str]
    identities: dict[str, DoIdentity]
    behavior: dict[str, Behavior]
    reference_private: fl.ModelParams

    def data_of(self, address: str) -> fl.Dataset:
        return self.part.owners[self.addresses.index(address)]


def build_market(cfg: ExperimentConfig, initial: fl.ModelParams) -> Market:
    seed = cfg.seed
    data = load_dataset(cfg.dataset, derive_seed(seed, "dataset"))
    part = partition_iid(data, cfg.DONum, cfg.M0, derive_seed(seed, "partition"), cfg.mo_size, cfg.test_size)
    addresses = [f"do{i:03d}" for i in range(cfg.DONum)]
    identities = {a: DoIdentity(a, derive_seed(seed, "keypair", a)) for a in addresses}
    profile = AdversaryProfile(cfg.adversary_kind, cfg.adversary_rate, derive_seed(seed, "adversaries"))
    behavior = assign_adversaries(addresses, profile)
    reference_private, _ = fl.split_model(initial, cfg.PL)
    return Market(cfg, part, addresses, identities, behavior, reference_private)


@dataclass
class ContractOutcome:
    session: ContractSession | None
    status: str
    new_public: fl.ModelParams | None
    rounds_attempted: int = 0
    byzantine_rounds: set[int] = field(default_factory=set)
    timing: dict[str, float] = field(default_factory=dict)


def _do_payload(market: Market, address: str, public: fl.ModelParams, t: int, dim: int) -> RingVector | None:
    cfg = market.cfg
    kind = market.behavior[address]
    if kind is Behavior.DROP_OUT:
        return None
    if kind is Behavior.RANDOM_UPDATE:
        return random_update(dim, derive_seed(cfg.seed, "noise", t, address))
    spec = fl.TrainSpec(cfg.DOEp, cfg.B, cfg.lr, derive_seed(cfg.seed, "train", t, address))
    local = fl.local_train(public, market.reference_private, market.data_of(address), spec, cfg.M0)
    return encode_vector(local.flatten())


def run_contract(market: Market, public: fl.ModelParams, t: int) -> ContractOutcome:
    """Deploy one contract for iteration ``t`` and drive it to completion."""
    cfg = market.cfg
    clock = {"register_ms": 0.0, "pubkey_ms": 0.0, "aggregate_ms": 0.0, "suppress_ms": 0.0,
             "payment_ms": 0.0, "train_s": 0.0}

    def timed(key, fn, *args, **kw):
        t0 = time.perf_counter()
        try:
            return fn(*args, **kw)
        finally:
            clock[key] += (time.perf_counter() - t0) * 1000.0

    rng = np.random.default_rng(derive_seed(cfg.seed, "frag", t))
    eligible = [market.addresses[i] for i in rng.permutation(cfg.DONum)[: cfg.eligible_per_iteration]]
    flat = public.flatten()
    sess_cfg = SessionConfig(
        initial_public_model=encode_vector(flat), M0=cfg.M0, E=cfg.E, B=cfg.B, R=cfg.R, N=cfg.N,
        mu=cfg.mu, m=cfg.m, reward_deposit=cfg.reward_deposit, whitelist=tuple(eligible),
        timeout_ticks=cfg.timeout_ticks, owner=MO_ADDRESS,
    )
    try:
        session = deploy(sess_cfg)
    except ConfigError as exc:
        return ContractOutcome(None, f"failed:ConfigError:{exc}", None, timing=clock)
    session.start()
    dim = session.dim
    queue = deque(eligible)
    now = 0
    attempted = 0
    byz_rounds: set[int] = set()
    pool = ThreadPoolExecutor(cfg.workers) if cfg.workers > 1 else None
    try:
        for r in range(1, cfg.R + 1):
            if len(queue) < cfg.N:
                break
            roster = [queue.popleft() for _ in range(cfg.N)]
            for a in roster:
                timed("register_ms", session.register, a, r, now)
            attempted += 1
            if any(market.behavior[a] is not Behavior.HONEST for a in roster):
                byz_rounds.add(r)
            seeds = timed("pubkey_ms", session.pub_key_interact, r, [market.identities[a] for a in roster])
            t0 = time.perf_counter()
            if pool is None:
                payloads = [_do_payload(market, a, public, t, dim) for a in roster]
            else:
                payloads = list(pool.map(lambda a: _do_payload(market, a, public, t, dim), roster))
            clock["train_s"] += time.perf_counter() - t0
            for a, vec in zip(roster, payloads):
                if vec is None:
                    continue
                z = expand_mask(a, roster, seeds, dim, r)
                timed("aggregate_ms", session.submit, a, r, mask_model(vec, z), now)
            rec = session.rounds[r]
            if len(rec.submissions) < cfg.N:
                now += cfg.timeout_ticks
            timed("aggregate_ms", session.finalize_round, r, now)
            if rec.failed:
                queue.extend(a for a in roster if market.behavior[a] is not Behavior.DROP_OUT)
            now += 1
    finally:
        if pool is not None:
            pool.shutdown()

    if session.state in (State.REGISTER, State.MODEL_AGGREGATE):
        try:
            session.exit()
        except NoDataError:
            return ContractOutcome(session, "stalled", None, attempted, byz_rounds, clock)
    try:
        timed("suppress_ms", session.suppress_outliers)
    except ConstraintError:
        return ContractOutcome(session, "aborted", None, attempted, byz_rounds, clock)
    timed("payment_ms", session.pay)
    new_public = fl.apply_update(session.accepted_aggregates(), cfg.N, public)
    return ContractOutcome(session, "ok", new_public, attempted, byz_rounds, clock)


def _row(t: int, acc: float, out: ContractOutcome | None, market: Market, status: str) -> MetricsRow:
    row = MetricsRow(iteration=t, status=status, accuracy=acc)
    if out is None or out.session is None:
        return row
    s = out.session
    gas = s.gas_report()
    row.gas_register = gas["Register"]
    row.gas_pubkey = gas["PubKeyInteract"]
    row.gas_aggregate = gas["ModelAggregate"]
    row.gas_suppress = gas["OutlierSuppression"]
    row.rounds_attempted = out.rounds_attempted
    row.rounds_failed = len(s.failed_rounds)
    row.p_size = len(s.successful_rounds)
    row.m = s.m_used or 0
    row.byzantine_dos = sum(
        1 for rec in s.rounds.values() for a in rec.roster if market.behavior[a] is not Behavior.HONEST
    )
    row.byzantine_rounds = len(out.byzantine_rounds)
    if s.accepted is not None:
        row.p_prime_size = len(s.accepted)
        row.accepted_rounds = ";".join(str(r) for r in s.accepted)
        row.byzantine_accepted = len(set(s.accepted) & out.byzantine_rounds)
    payouts = s.payouts()
    if payouts:
        row.payout_per_do = next(iter(payouts.values()))
        row.paid = ";".join(sorted(payouts))
    row.owner_refund = s.ledger.balances.get(MO_ADDRESS, 0)
    return row


def run_session(cfg: ExperimentConfig) -> SessionResult:
    """Pretrain, then ``iterations`` rounds of contract update + local adaptation."""
    cfg.validate()
    seed = cfg.seed
    model = fl.init_model(cfg.arch_list, derive_seed(seed, "reference-model"))
    market = build_market(cfg, model)
    part = market.part
    result = SessionResult(cfg, public_fraction=fl.public_fraction(model, cfg.PL))
    model = fl.train(model, part.model_owner, fl.TrainSpec(cfg.MOPreEp, min(cfg.B, len(part.model_owner)),
                                                          cfg.lr, derive_seed(seed, "pretrain")))
    result.rows.append(MetricsRow(0, "pretrain", fl.evaluate(model, part.test)))
    adapt_batch = min(cfg.B, len(part.model_owner))
    for t in range(1, cfg.iterations + 1):
        private, public = fl.split_model(model, cfg.PL)
        out = None
        status = "mo_only"
        if cfg.PL > 0:
            out = run_contract(market, public, t)
            status = out.status
            if out.new_public is not None:
                public = out.new_public
        spec = fl.TrainSpec(cfg.MOEp, adapt_batch, cfg.lr, derive_seed(seed, "adapt", t))
        model = fl.combine_and_adapt(private, public, part.model_owner, spec)
        result.rows.append(_row(t, fl.evaluate(model, part.test), out, market, status))
        if out is not None:
            if out.session is not None:
                result.events.extend(
                    json.dumps({"iteration": t, **e}, sort_keys=True, separators=(",", ":"))
                    for e in out.session.trace
                )
            result.timings.append({"iteration": t, **out.timing})
            if status.startswith("failed"):
                break
    return result


def write_outputs(result: SessionResult, out_dir: str | Path) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "metrics.csv").write_text(metrics_csv(result.rows))
    (out / "events.log").write_text("".join(e + "\n" for e in result.events))
    (out / "summary.json").write_text(json.dumps(result.summary(), indent=2, sort_keys=True) + "\n")
    (out / "config.txt").write_text(dump_config(result.config))
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=TIMING_FIELDS, lineterminator="\n")
    w.writeheader()
    for row in result.timings:
        w.writerow({k: (f"{v:.3f}" if isinstance(v, float) else v) for k, v in row.items()})
    (out / "timings.csv").write_text(buf.getvalue())
    return out


# -- sweeps -----------------------------------------------------------------

SWEEP_ALIASES = {"attack_rate": "adversary_rate"}


def parse_values(param: str, values: str | Iterable) -> list:
    name = SWEEP_ALIASES.get(param, param)
    if isinstance(values, str):
        values = [v for v in values.split(",") if v.strip()]
    return [_coerce(name, str(v)) for v in values]


def sweep(cfg: ExperimentConfig, param: str, values: Iterable, out_path: str | Path | None = None) -> str:
    """One session per value; every session reuses the config seed (common random numbers)."""
    name = SWEEP_ALIASES.get(param, param)
    if name not in {f.name for f in fields(ExperimentConfig)} or name == "seed":
        raise ConfigError(f"unknown sweep parameter {param!r}")
    vals = parse_values(param, values)
    chunks = []
    for i, v in enumerate(vals):
        res = run_session(cfg.replace(**{name: v}))
        text = metrics_csv(res.rows, {"param": name, "value": str(v)})
        chunks.append(text if i == 0 else text.split("\n", 1)[1])
    merged = "".join(chunks)
    if out_path is not None:
        Path(out_path).parent.mkdir(parents=True, exist_ok=True)
        Path(out_path).write_text(merged)
    return merged


# -- gas profiling ----------------------------------------------------------

def gas_profile(R: int, N: int, dim: int = 64, mu: float = 0.25, m: int | None = None,
                seed: int = 0, failed_rounds: Iterable[int] = ()) -> ContractSession:
    """Drive a contract with synthetic honest submissions and return the finished session.

    Rounds listed in ``failed_rounds`` lose one submission and time out.
    """
    failed = set(failed_rounds)
    rng = np.random.default_rng(seed)
    center = rng.normal(0, 0.1, size=dim)
    addresses = [f"do{i:03d}" for i in range(R * N)]
    cfg = SessionConfig(encode_vector(center), M0=1, E=1, B=1, R=R, N=N, mu=mu, m=m,
                        reward_deposit=1000, whitelist=tuple(addresses), timeout_ticks=5)
    s = deploy(cfg)
    s.start()
    now = 0
    for r in range(1, R + 1):
        roster = addresses[(r - 1) * N: r * N]
        for a in roster:
            s.register(a, r, now)
        seeds = s.pub_key_interact(r, [DoIdentity(a, derive_seed(seed, a)) for a in roster])
        senders = roster[:-1] if r in failed else roster
        for a in senders:
            w = encode_vector(center + rng.normal(0, 0.01, size=dim))
            s.submit(a, r, mask_model(w, expand_mask(a, roster, seeds, dim, r)), now)
        if r in failed:
            now += cfg.timeout_ticks
        s.finalize_round(r, now)
        now += 1
    if s.state is State.OUTLIER_SUPPRESSION:
        try:
            s.suppress_outliers()
            s.pay()
        except ConstraintError:
            pass
    return s


def gas_table(Rs: Iterable[int], Ns: Iterable[int], dim: int = 64, mu: float = 0.25, m: int | None = None) -> list[dict]:
    rows = []
    for R in Rs:
        for N in Ns:
            s = gas_profile(R, N, dim, mu, m)
            rows.append({"R": R, "N": N, **s.gas_report()})
    return rows
