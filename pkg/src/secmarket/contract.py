"""Contract state machine for one secure model-update session.

States follow the six-state lifecycle Setup -> Register <-> ModelAggregate
-> OutlierSuppression -> Payment -> Finished.  Rounds register one after
another, but a full round may keep collecting submissions while the next
round registers (parallel group aggregation); the session state tracks the
most recently opened round.

Every method call is appended to :attr:`ContractSession.trace`.  A rejected
call leaves the contract state untouched.

Gas is a unit count, not EVM gas: 1 per registration, 1 per posted public
key, 1 per ring element stored by a submission, 1 per squared-difference
term evaluated by m-Krum.
"""
from __future__ import annotations

import copy
import enum
import json
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from . import krum
from .errors import (
    AuthError,
    ConfigError,
    ConstraintError,
    DimensionError,
    DuplicateError,
    EligibilityError,
    FullError,
    MarketError,
    NoDataError,
    NotReadyError,
    StateError,
)
from .fixedpoint import RingVector, decode_vector
from .maskgen import DoIdentity, key_exchange


class State(str, enum.Enum):
    SETUP = "Setup"
    REGISTER = "Register"
    MODEL_AGGREGATE = "ModelAggregate"
    OUTLIER_SUPPRESSION = "OutlierSuppression"
    PAYMENT = "Payment"
    FINISHED = "Finished"


class RoundStatus(str, enum.Enum):
    REGISTERING = "registering"
    AGGREGATING = "aggregating"
    SUCCEEDED = "succeeded"
    FAILED = "failed"


PHASES = ("Register", "PubKeyInteract", "ModelAggregate", "OutlierSuppression")

#: method -> states in which it may be called
ALLOWED: dict[str, frozenset[State]] = {
    "whitelist": frozenset({State.SETUP}),
    "start": frozenset({State.SETUP}),
    "register": frozenset({State.REGISTER, State.MODEL_AGGREGATE}),
    "pub_key_interact": frozenset({State.REGISTER, State.MODEL_AGGREGATE}),
    "submit": frozenset({State.REGISTER, State.MODEL_AGGREGATE}),
    "finalize_round": frozenset({State.REGISTER, State.MODEL_AGGREGATE}),
    "exit": frozenset({State.REGISTER, State.MODEL_AGGREGATE}),
    "suppress_outliers": frozenset({State.OUTLIER_SUPPRESSION}),
    "pay": frozenset({State.PAYMENT}),
}
METHODS = tuple(ALLOWED)


@dataclass
class SessionConfig:
    initial_public_model: RingVector
    M0: int = 64
    E: int = 2
    B: int = 8
    R: int = 8
    N: int = 4
    mu: float = 0.25
    m: int | None = None
    reward_deposit: int = 1000
    whitelist: tuple[str, ...] = ()
    timeout_ticks: int = 10
    owner: str = "MO"

    def effective_m(self, p_size: int) -> int:
        return self.m if self.m is not None else krum.default_m(self.mu, p_size)

    def violations(self) -> list[str]:
        out = []
        if self.initial_public_model.dim < 1:
            out.append("public model must have at least one parameter")
        if self.N < 2:
            out.append(f"N >= 2 required (got {self.N})")
        if self.R < 1:
            out.append(f"R >= 1 required (got {self.R})")
        if not self.B >= 1:
            out.append(f"B >= 1 required (got {self.B})")
        if self.M0 < self.B:
            out.append(f"M0 >= B required (got M0={self.M0}, B={self.B})")
        if self.E < 1:
            out.append(f"E >= 1 required (got {self.E})")
        if self.reward_deposit <= 0:
            out.append(f"reward_deposit > 0 required (got {self.reward_deposit})")
        if not 0 <= self.mu < 0.5:
            out.append(f"mu in [0, 0.5) required (got {self.mu})")
        if self.timeout_ticks < 1:
            out.append(f"timeout_ticks >= 1 required (got {self.timeout_ticks})")
        if self.m is not None and self.m < 1:
            out.append(f"m >= 1 required (got {self.m})")
        elif 0 <= self.mu < 0.5 and self.R >= 1:
            m = self.effective_m(self.R)
            if not krum.admissible(m, self.mu, self.R):
                out.append(
                    f"m={m} violates m < (1 - 2*mu)*R - 2 = {(1 - 2 * self.mu) * self.R - 2:g}"
                )
        return out


@dataclass
class RoundRecord:
    round: int
    roster: list[str] = field(default_factory=list)
    submissions: dict[str, RingVector] = field(default_factory=dict)
    status: RoundStatus = RoundStatus.REGISTERING
    opened_at: int | None = None
    keys_exchanged: bool = False
    result: RingVector | None = None

    @property
    def failed(self) -> bool:
        return self.status is RoundStatus.FAILED


@dataclass
class GasMeter:
    counts: dict[str, int] = field(default_factory=lambda: {p: 0 for p in PHASES})

    def charge(self, phase: str, units: int) -> None:
        self.counts[phase] += units

    def total(self) -> int:
        return sum(self.counts.values())

    def snapshot(self) -> dict[str, int]:
        return dict(self.counts)


@dataclass
class Ledger:
    deposit: int
    deposit_remaining: int
    balances: dict[str, int] = field(default_factory=dict)
    gas_spent: dict[str, int] = field(default_factory=dict)
    gas_reimbursed: dict[str, int] = field(default_factory=dict)

    def credit(self, address: str, amount: int) -> None:
        if amount < 0 or amount > self.deposit_remaining:
            raise MarketError(f"illegal transfer of {amount} (remaining {self.deposit_remaining})")
        self.deposit_remaining -= amount
        self.balances[address] = self.balances.get(address, 0) + amount

    def conserved(self) -> bool:
        return (
            self.deposit_remaining + sum(self.balances.values()) == self.deposit
            and self.deposit_remaining >= 0
            and all(v >= 0 for v in self.balances.values())
        )


class ContractSession:
    """One deployed model-update contract."""

    def __init__(self, config: SessionConfig):
        problems = config.violations()
        if problems:
            raise ConfigError("; ".join(problems))
        self.config = config
        self.state = State.SETUP
        self.allowed: set[str] = set(config.whitelist)
        self.rounds: dict[int, RoundRecord] = {}
        self.cursor = 0
        self.clock = 0
        self.ledger = Ledger(config.reward_deposit, config.reward_deposit)
        self.gas = GasMeter()
        self.accepted: list[int] | None = None
        self.m_used: int | None = None
        self.aborted = False
        self.trace: list[dict] = []

    # -- read-only views -------------------------------------------------
    @property
    def dim(self) -> int:
        return self.config.initial_public_model.dim

    @property
    def public_model(self) -> RingVector:
        if self.state is State.SETUP:
            raise StateError("public model is published by start()")
        return self.config.initial_public_model

    @property
    def successful_rounds(self) -> list[int]:
        return sorted(r for r, rec in self.rounds.items() if rec.status is RoundStatus.SUCCEEDED)

    @property
    def failed_rounds(self) -> list[int]:
        return sorted(r for r, rec in self.rounds.items() if rec.status is RoundStatus.FAILED)

    def aggregate(self, r: int) -> RingVector | None:
        return self.rounds[r].result if r in self.rounds else None

    def accepted_aggregates(self) -> dict[int, RingVector]:
        if self.accepted is None:
            raise NoDataError("no rounds have been accepted")
        return {r: self.rounds[r].result for r in self.accepted}

    def gas_report(self) -> dict[str, int]:
        return self.gas.snapshot()

    def snapshot(self) -> dict:
        """Everything except the trace, in comparable form."""
        return {
            "state": self.state.value,
            "allowed": sorted(self.allowed),
            "cursor": self.cursor,
            "clock": self.clock,
            "rounds": {
                r: (
                    tuple(rec.roster),
                    tuple(sorted((a, v.elems.tobytes()) for a, v in rec.submissions.items())),
                    rec.status.value,
                    rec.opened_at,
                    rec.keys_exchanged,
                    None if rec.result is None else rec.result.elems.tobytes(),
                )
                for r, rec in self.rounds.items()
            },
            "ledger": copy.deepcopy(vars(self.ledger)),
            "gas": self.gas.snapshot(),
            "accepted": None if self.accepted is None else tuple(self.accepted),
            "m_used": self.m_used,
            "aborted": self.aborted,
        }

    def trace_lines(self) -> list[str]:
        return [json.dumps(e, sort_keys=True, separators=(",", ":")) for e in self.trace]

    # -- plumbing -------------------------------------------------------
    def _call(self, method: str, caller: str, rnd: int | None, fn):
        before = self.state
        gas_before = self.gas.total()
        event = {
            "seq": len(self.trace),
            "method": method,
            "caller": caller,
            "round": rnd,
            "state_before": before.value,
        }
        try:
            if before not in ALLOWED[method]:
                raise StateError(f"{method}() not allowed in state {before.value}")
            out = fn()
        except MarketError as exc:
            event.update(state_after=self.state.value, gas_delta=self.gas.total() - gas_before,
                         ok=False, error=type(exc).__name__)
            self.trace.append(event)
            raise
        event.update(state_after=self.state.value, gas_delta=self.gas.total() - gas_before,
                     ok=True, error=None)
        self.trace.append(event)
        return out

    def _advance_clock(self, now: int | None) -> None:
        if now is not None:
            if now < self.clock:
                raise NotReadyError(f"logical time cannot go backwards ({now} < {self.clock})")
            self.clock = now

    def _require_owner(self, caller: str | None) -> str:
        caller = self.config.owner if caller is None else caller
        if caller != self.config.owner:
            raise AuthError(f"{caller!r} is not the model owner")
        return caller

    def _round(self, r: int, status: RoundStatus) -> RoundRecord:
        rec = self.rounds.get(r)
        if rec is None or rec.status is not status:
            have = "absent" if rec is None else rec.status.value
            raise StateError(f"round {r} is {have}, expected {status.value}")
        return rec

    def _committed(self) -> set[str]:
        """Addresses whose results are pending or already incorporated."""
        out = set()
        for rec in self.rounds.values():
            if rec.status in (RoundStatus.AGGREGATING, RoundStatus.SUCCEEDED):
                out.update(rec.roster)
        return out

    def _all_closed(self) -> bool:
        return self.cursor == self.config.R and all(
            rec.status in (RoundStatus.SUCCEEDED, RoundStatus.FAILED) for rec in self.rounds.values()
        )

    def _spend(self, address: str, phase: str, units: int) -> None:
        self.gas.charge(phase, units)
        self.ledger.gas_spent[address] = self.ledger.gas_spent.get(address, 0) + units

    # -- model-owner methods ---------------------------------------------
    def whitelist(self, addresses: Iterable[str], caller: str | None = None) -> None:
        addresses = list(addresses)

        def body():
            self._require_owner(caller)
            self.allowed.update(addresses)

        self._call("whitelist", caller or self.config.owner, None, body)

    def start(self, caller: str | None = None) -> RingVector:
        def body():
            self._require_owner(caller)
            if not self.allowed:
                raise ConfigError("whitelist is empty")
            self.cursor = 1
            self.rounds[1] = RoundRecord(1)
            self.state = State.REGISTER
            return self.config.initial_public_model

        return self._call("start", caller or self.config.owner, None, body)

    def exit(self, caller: str | None = None) -> None:
        def body():
            self._require_owner(caller)
            if not self.successful_rounds:
                raise NoDataError("exit() needs at least one successfully aggregated round")
            for rec in self.rounds.values():
                if rec.status in (RoundStatus.REGISTERING, RoundStatus.AGGREGATING):
                    rec.status = RoundStatus.FAILED
            self.state = State.OUTLIER_SUPPRESSION

        self._call("exit", caller or self.config.owner, None, body)

    # -- data-owner methods ----------------------------------------------
    def register(self, address: str, round: int, now: int | None = None) -> None:
        def body():
            cfg = self.config
            rec = self.rounds.get(round)
            if rec is not None and len(rec.roster) >= cfg.N:
                raise FullError(f"round {round} already has {cfg.N} members")
            if self.state is State.MODEL_AGGREGATE:
                if round != self.cursor + 1 or self.cursor >= cfg.R:
                    raise StateError(f"round {round} is not open for registration")
            elif round != self.cursor:
                raise StateError(f"round {round} is not open for registration")
            if address not in self.allowed:
                raise AuthError(f"{address!r} is not whitelisted")
            if address in self._committed():
                raise EligibilityError(f"{address!r} already contributed to an aggregated round")
            if rec is not None and address in rec.roster:
                raise DuplicateError(f"{address!r} already registered for round {round}")
            self._advance_clock(now)
            if rec is None:
                rec = self.rounds[round] = RoundRecord(round)
                self.cursor = round
            rec.roster.append(address)
            self._spend(address, "Register", 1)
            self.state = State.REGISTER
            if len(rec.roster) == cfg.N:
                rec.status = RoundStatus.AGGREGATING
                rec.opened_at = self.clock
                self.state = State.MODEL_AGGREGATE

        self._call("register", address, round, body)

    def pub_key_interact(self, round: int, identities: Sequence[DoIdentity]) -> dict[frozenset, int]:
        """Post the roster's public keys; returns the pairwise seed table."""

        def body():
            rec = self._round(round, RoundStatus.AGGREGATING)
            if sorted(i.address for i in identities) != sorted(rec.roster):
                raise AuthError(f"identities do not match the roster of round {round}")
            if rec.keys_exchanged:
                raise DuplicateError(f"keys already exchanged for round {round}")
            seeds = key_exchange(list(identities), salt=round)
            for ident in identities:
                self._spend(ident.address, "PubKeyInteract", 1)
            rec.keys_exchanged = True
            return seeds

        return self._call("pub_key_interact", "roster", round, body)

    def submit(self, address: str, round: int, masked: RingVector, now: int | None = None) -> None:
        def body():
            rec = self._round(round, RoundStatus.AGGREGATING)
            if address not in rec.roster:
                raise AuthError(f"{address!r} is not in the roster of round {round}")
            if address in rec.submissions:
                raise DuplicateError(f"{address!r} already submitted for round {round}")
            if masked.dim != self.dim:
                raise DimensionError(f"submission dim {masked.dim} != model dim {self.dim}")
            self._advance_clock(now)
            rec.submissions[address] = masked
            self._spend(address, "ModelAggregate", masked.dim)

        self._call("submit", address, round, body)

    # -- events / automatic transitions ----------------------------------
    def finalize_round(self, round: int, now: int | None = None) -> RingVector | None:
        """Close a round: ring sum of submissions, or ``None`` when it failed."""

        def body():
            rec = self._round(round, RoundStatus.AGGREGATING)
            t = self.clock if now is None else now
            complete = len(rec.submissions) == self.config.N
            if not complete and t - rec.opened_at < self.config.timeout_ticks:
                raise NotReadyError(
                    f"round {round}: {len(rec.submissions)}/{self.config.N} submissions, "
                    f"timeout at tick {rec.opened_at + self.config.timeout_ticks}"
                )
            self._advance_clock(now)
            if complete:
                acc = RingVector.zeros(self.dim).elems.copy()
                for addr in rec.roster:
                    acc += rec.submissions[addr].elems
                rec.result = RingVector(acc)
                rec.status = RoundStatus.SUCCEEDED
            else:
                rec.status = RoundStatus.FAILED
            if self._all_closed():
                self.state = State.OUTLIER_SUPPRESSION
            elif round == self.cursor and self.cursor < self.config.R:
                self.cursor += 1
                self.rounds[self.cursor] = RoundRecord(self.cursor)
                self.state = State.REGISTER
            return rec.result

        return self._call("finalize_round", "contract", round, body)

    def suppress_outliers(self) -> list[int]:
        """Run m-Krum over successful rounds; aborts with a full refund if m is inadmissible."""

        def body():
            cfg = self.config
            P = self.successful_rounds
            m = cfg.effective_m(len(P))
            if not P or not krum.admissible(m, cfg.mu, len(P)):
                self.ledger.credit(cfg.owner, self.ledger.deposit_remaining)
                self.aborted = True
                self.state = State.FINISHED
                raise ConstraintError(
                    f"m={m} inadmissible for |P|={len(P)}, mu={cfg.mu}; deposit refunded"
                )
            candidates = {r: decode_vector(self.rounds[r].result, cfg.N) for r in P}
            res = krum.m_krum_detailed(candidates, cfg.mu, m, len(P))
            self.gas.charge("OutlierSuppression", res.distance_terms)
            self.m_used = m
            self.accepted = list(res.selected)
            self.state = State.PAYMENT
            return list(res.selected)

        return self._call("suppress_outliers", "contract", None, body)

    def pay(self) -> Ledger:
        """Split the deposit evenly over DOs of accepted rounds; remainder to the owner."""

        def body():
            cfg = self.config
            payees = [a for r in self.accepted for a in self.rounds[r].roster]
            share = cfg.reward_deposit // len(payees)
            for addr in payees:
                self.ledger.credit(addr, share)
                self.ledger.gas_reimbursed[addr] = self.ledger.gas_spent.get(addr, 0)
            self.ledger.credit(cfg.owner, self.ledger.deposit_remaining)
            self.state = State.FINISHED
            return self.ledger

        return self._call("pay", "contract", None, body)

    def payouts(self) -> dict[str, int]:
        """Reward credited to data owners (excludes the owner's refund)."""
        return {a: v for a, v in self.ledger.balances.items() if a != self.config.owner}


def deploy(config: SessionConfig) -> ContractSession:
    return ContractSession(config)


def committed_rosters(session: ContractSession) -> Mapping[int, list[str]]:
    return {r: list(rec.roster) for r, rec in session.rounds.items() if rec.status is RoundStatus.SUCCEEDED}
