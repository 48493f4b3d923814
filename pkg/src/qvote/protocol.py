"""Anonymous two-candidate voting over parity-even shared bits.

Classical core: every agent holds one bit of a parity-even string per row; the
voter of that row flips its bit to vote F. Quantum layer: the strings come
from measuring Phi0(n) with independently chosen local bases. Events with an
odd number of Hadamard measurements are discarded; a randomly chosen Verifier
keeps an event for voting with probability 2^-m and otherwise tests

    H_p / 2 = sum_i Y_i   (mod 2).

Voting events carry the correction bit ``S_p = H_p/2 mod 2`` so that the row
XOR decodes to 0 when nobody flips.

Agents are numbered 1..n; agent ``a`` holds qubit ``a - 1``.
"""
from __future__ import annotations

import enum
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Iterable, Protocol, Sequence

import numpy as np

from .ghz import SourceStrategy, emit_round
from .qsim import ContractViolation, apply_local, hadamard_layer, index_to_bits, sample_indices
from .seeding import derive_seed, rng_for

log = logging.getLogger(__name__)


class Basis(enum.IntEnum):
    Computational = 0
    Hadamard = 1

    @property
    def letter(self) -> str:
        return "H" if self is Basis.Hadamard else "C"


class Intent(enum.IntEnum):
    E = 0
    F = 1


class RoundKind(str, enum.Enum):
    Discarded = "discard"
    Voting = "voting"
    Verifying = "verifying"


@dataclass(frozen=True)
class AgentProfile:
    agent_id: int
    intent: Intent = Intent.E
    honest: bool = True
    voter_index: int | None = None


@dataclass(frozen=True)
class SecurityParams:
    m: int = 7
    tau: float = 0.05
    rounds: int = 10_000

    def __post_init__(self):
        if self.m < 1:
            raise ContractViolation(f"m must be >= 1, got {self.m}")
        if not 0.0 <= self.tau <= 1.0:
            raise ContractViolation(f"tau must be in [0, 1], got {self.tau}")
        if self.rounds < 0:
            raise ContractViolation("rounds must be >= 0")

    @property
    def voting_fraction(self) -> float:
        return 2.0**-self.m


@dataclass(frozen=True)
class Classification:
    kind: RoundKind
    s_p: int | None = None


@dataclass(frozen=True)
class RoundRecord:
    event_id: int
    bases: tuple[Basis, ...]
    outcomes: tuple[int, ...]
    verifier: int
    kind: RoundKind
    s_p: int | None = None
    passed: bool | None = None
    announced: bool | None = None

    @property
    def hadamard_count(self) -> int:
        return int(sum(self.bases))

    def to_json(self) -> str:
        return json.dumps(
            {
                "event_id": self.event_id,
                "bases": "".join(b.letter for b in self.bases),
                "outcomes": list(self.outcomes),
                "verifier": self.verifier,
                "classification": self.kind.value,
                "S_p": self.s_p,
                "verification": None if self.announced is None else ("success" if self.announced else "failure"),
            },
            separators=(",", ":"),
        )


@dataclass
class ResultsBoard:
    n: int
    rows: np.ndarray = None
    s: np.ndarray = None
    filled: np.ndarray = None

    def __post_init__(self):
        if self.rows is None:
            self.rows = np.zeros((self.n, self.n), dtype=np.uint8)
            self.s = np.zeros(self.n, dtype=np.uint8)
            self.filled = np.zeros(self.n, dtype=bool)

    def set_row(self, voter_index: int, bits: Sequence[int], s_p: int = 0) -> None:
        j = voter_index - 1
        self.rows[j] = np.asarray(bits, dtype=np.uint8) & 1
        self.s[j] = s_p & 1
        self.filled[j] = True


@dataclass
class ElectionOutcome:
    votes_e: int = 0
    votes_f: int = 0
    recorded: dict[int, Intent] = field(default_factory=dict)
    success_flags: dict[int, bool] = field(default_factory=dict)
    any_failure: int = 0
    aborted: bool = False
    status: str = "ok"
    pass_rate: float = float("nan")
    counts: dict[str, int] = field(default_factory=dict)

    def summary(self) -> dict:
        return {
            "status": self.status,
            "aborted": self.aborted,
            "votes": {"E": self.votes_e, "F": self.votes_f},
            "recorded": {str(k): v.name for k, v in sorted(self.recorded.items())},
            "success_flags": {str(k): v for k, v in sorted(self.success_flags.items())},
            "any_failure": self.any_failure,
            "verification_pass_rate": None if np.isnan(self.pass_rate) else self.pass_rate,
            "counts": dict(sorted(self.counts.items())),
        }


# ---------------------------------------------------------------------------
# trusted-coordinator stand-ins for the classical sub-protocols


def unique_index(n: int, seed: int) -> list[int]:
    """Secret voter index for agents 1..n (element a-1 belongs to agent a)."""
    return [int(v) + 1 for v in np.random.default_rng(seed).permutation(n)]


def random_agent(n: int, event_id: int, seed: int) -> int:
    return int(rng_for(seed, "verifier", event_id).integers(1, n + 1))


def logical_or(flags: Iterable[int | bool]) -> int:
    return int(any(bool(f) for f in flags))


def assign_voter_indices(profiles: Sequence[AgentProfile], seed: int) -> list[AgentProfile]:
    """Fill in voter indices that are not already set."""
    if all(p.voter_index is not None for p in profiles):
        idx = sorted(p.voter_index for p in profiles)
        if idx != list(range(1, len(profiles) + 1)):
            raise ContractViolation(f"voter indices must be a permutation of 1..n, got {idx}")
        return list(profiles)
    perm = unique_index(len(profiles), seed)
    return [
        AgentProfile(p.agent_id, p.intent, p.honest, perm[p.agent_id - 1]) for p in profiles
    ]


def make_profiles(intents: Sequence[Intent | str | int], dishonest: Iterable[int] = ()) -> list[AgentProfile]:
    bad = set(dishonest)
    out = []
    for a, it in enumerate(intents, start=1):
        if isinstance(it, str):
            it = Intent[it]
        out.append(AgentProfile(a, Intent(it), a not in bad))
    return out


# ---------------------------------------------------------------------------
# classical scheme with a trusted bit dealer


def classical_baseline_election(
    profiles: Sequence[AgentProfile],
    dealer_seed: int,
    tamper: dict[int, Iterable[int]] | None = None,
) -> ElectionOutcome:
    """Run the classical scheme with a trusted dealer of parity-even strings.

    ``tamper`` maps a dishonest agent id to the voter indices (rows) on which
    it broadcasts the complement of its secret bit.
    """
    n = len(profiles)
    if n < 3:
        raise ContractViolation(f"need at least 3 agents, got {n}")
    profiles = assign_voter_indices(profiles, derive_seed(dealer_seed, "unique-index"))
    tamper = {a: set(rows) for a, rows in (tamper or {}).items()}
    rng = rng_for(dealer_seed, "dealer")
    board = ResultsBoard(n)
    for j in range(1, n + 1):
        bits = rng.integers(0, 2, size=n)
        bits[-1] = bits[:-1].sum() % 2
        row = bits.copy()
        for p in profiles:
            i = p.agent_id - 1
            if p.voter_index == j and p.intent is Intent.F:
                row[i] ^= 1
            if j in tamper.get(p.agent_id, ()):
                row[i] ^= 1
        board.set_row(j, row)
    return tally(board, profiles)


def tally(board: ResultsBoard, profiles: Sequence[AgentProfile] | None = None) -> ElectionOutcome:
    """Decode ``r_j = xor_i R_ji xor S_j``; 0 is a vote for E.

    With ``profiles`` given, each honest voter checks its own row and the
    failure flags are aggregated by :func:`logical_or`.
    """
    if not board.filled.all():
        raise ContractViolation(f"rows {np.flatnonzero(~board.filled) + 1} not filled")
    r = (board.rows.sum(axis=1) + board.s) % 2
    out = ElectionOutcome()
    out.recorded = {j + 1: Intent(int(r[j])) for j in range(board.n)}
    out.votes_f = int(r.sum())
    out.votes_e = board.n - out.votes_f
    if profiles is not None:
        for p in profiles:
            ok = True if not p.honest else out.recorded[p.voter_index] is p.intent
            out.success_flags[p.agent_id] = ok
        out.any_failure = logical_or(not ok for ok in out.success_flags.values())
    return out


# ---------------------------------------------------------------------------
# quantum rounds


def choose_basis(agent: int, round_index: int, seed: int) -> Basis:
    return Basis(derive_seed(seed, "basis", round_index, agent) & 1)


def flip_coins(event_id: int, seed: int, m: int) -> np.ndarray:
    return rng_for(seed, "coins", event_id).integers(0, 2, size=m)


def classify_round(
    bases: Sequence[int],
    coin_seed: int | None = None,
    m: int = 7,
    coins: Sequence[int] | None = None,
    event_id: int = 0,
) -> Classification:
    """Discard on odd Hadamard count; else vote iff all ``m`` coins are heads (1)."""
    h = int(sum(int(b) for b in bases))
    if h % 2:
        return Classification(RoundKind.Discarded)
    if coins is None:
        coins = flip_coins(event_id, coin_seed, m)
    if all(int(c) == 1 for c in coins):
        return Classification(RoundKind.Voting, (h // 2) % 2)
    return Classification(RoundKind.Verifying)


def verify_round(hadamard_count: int, outcomes: Sequence[int]) -> bool:
    if hadamard_count % 2:
        raise ContractViolation(f"odd Hadamard count {hadamard_count} must be discarded before verification")
    return (hadamard_count // 2) % 2 == sum(int(y) for y in outcomes) % 2


def voting_round_to_row(record: RoundRecord, voter: int, intent: Intent) -> tuple[np.ndarray, int]:
    """Broadcast bits for a reserved voting event; ``voter`` flips for intent F."""
    if record.kind is not RoundKind.Voting:
        raise ContractViolation(f"event {record.event_id} is {record.kind.value}, not voting")
    row = np.array(record.outcomes, dtype=np.uint8)
    if intent is Intent.F:
        row[voter - 1] ^= 1
    return row, int(record.s_p)


class DishonestReporter(Protocol):
    controlled: tuple[int, ...]
    verifier_lies: bool

    def report(
        self, side_info: Any, true_bases: tuple[int, ...], true_outcomes: tuple[int, ...], rng: np.random.Generator
    ) -> dict[int, tuple[int, int]]: ...


@dataclass(frozen=True)
class MeasuredRound:
    """Reported bases and outcomes of one fourfold event, before classification."""

    round_index: int
    bases: tuple[int, ...]
    outcomes: tuple[int, ...]
    side_info: Any = None


def measure_round(
    strategy: SourceStrategy,
    round_index: int,
    seed: int,
    dishonest: DishonestReporter | None = None,
) -> MeasuredRound:
    n = strategy.n
    emitted = emit_round(strategy, round_index, rng_for(seed, "source", round_index))
    bases = [int(choose_basis(a, round_index, seed)) for a in range(1, n + 1)]
    rotated = apply_local(emitted.state, hadamard_layer(n, [q for q in range(n) if bases[q]]))
    idx = int(sample_indices(rotated, 1, rng_for(seed, "measure", round_index))[0])
    outcomes = list(index_to_bits(idx, n))
    if dishonest is not None:
        rep = dishonest.report(
            emitted.side_info, tuple(bases), tuple(outcomes), rng_for(seed, "dishonest", round_index)
        )
        for a, (b, y) in rep.items():
            bases[a - 1], outcomes[a - 1] = int(b), int(y)
    return MeasuredRound(round_index, tuple(bases), tuple(outcomes), emitted.side_info)


def _measure_chunk(args) -> list[MeasuredRound]:
    strategy, start, stop, seed, dishonest = args
    return [measure_round(strategy, k, seed, dishonest) for k in range(start, stop)]


def measure_rounds(
    strategy: SourceStrategy,
    rounds: int,
    seed: int,
    dishonest: DishonestReporter | None = None,
    workers: int = 1,
    chunk: int = 2048,
) -> list[MeasuredRound]:
    """Measure ``rounds`` distributed states; output is independent of ``workers``."""
    jobs = [(strategy, s, min(s + chunk, rounds), seed, dishonest) for s in range(0, rounds, chunk)]
    if workers <= 1 or len(jobs) <= 1:
        parts = map(_measure_chunk, jobs)
        return [r for part in parts for r in part]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return [r for part in pool.map(_measure_chunk, jobs) for r in part]


def classify_events(
    measured: Sequence[MeasuredRound],
    n: int,
    params: SecurityParams,
    seed: int,
    dishonest: DishonestReporter | None = None,
) -> list[RoundRecord]:
    """Verifier-side processing of fourfold events, in event order."""
    liars = set(dishonest.controlled) if dishonest is not None and dishonest.verifier_lies else set()
    out = []
    for p, mr in enumerate(measured):
        verifier = random_agent(n, p, seed)
        cls = classify_round(mr.bases, seed, params.m, event_id=p)
        passed = announced = None
        if cls.kind is RoundKind.Verifying:
            passed = verify_round(sum(mr.bases), mr.outcomes)
            announced = True if verifier in liars else passed
        out.append(
            RoundRecord(p, tuple(Basis(b) for b in mr.bases), mr.outcomes, verifier, cls.kind, cls.s_p, passed, announced)
        )
    return out


def decide(
    records: Sequence[RoundRecord],
    profiles: Sequence[AgentProfile],
    params: SecurityParams,
) -> ElectionOutcome:
    """Threshold check, board filling and tally from a classified transcript."""
    n = len(profiles)
    verifying = [r for r in records if r.kind is RoundKind.Verifying]
    voting = [r for r in records if r.kind is RoundKind.Voting]
    counts = {
        "events": len(records),
        "discarded": sum(r.kind is RoundKind.Discarded for r in records),
        "voting": len(voting),
        "verifying": len(verifying),
        "verification_failures": sum(not r.announced for r in verifying),
    }
    pass_rate = 1.0 - counts["verification_failures"] / len(verifying) if verifying else float("nan")
    if not verifying or pass_rate < 1.0 - params.tau:
        # an empty verification set cannot vouch for the source either
        return ElectionOutcome(aborted=True, status="aborted:verification", pass_rate=pass_rate, counts=counts)
    if len(voting) < n:
        return ElectionOutcome(aborted=True, status="insufficient_voting_rounds", pass_rate=pass_rate, counts=counts)
    board = ResultsBoard(n)
    by_index = {p.voter_index: p for p in profiles}
    for j, rec in enumerate(voting[:n], start=1):
        voter = by_index[j]
        row, s_p = voting_round_to_row(rec, voter.agent_id, voter.intent if voter.honest else Intent.E)
        board.set_row(j, row, s_p)
    out = tally(board, profiles)
    out.pass_rate = pass_rate
    out.counts = counts
    failures = sum(not ok for ok in out.success_flags.values())
    if failures / n > params.tau:
        out.aborted = True
        out.status = "aborted:voter_failures"
    return out


def run_election(
    profiles: Sequence[AgentProfile],
    strategy: SourceStrategy,
    params: SecurityParams,
    master_seed: int,
    dishonest: DishonestReporter | None = None,
    workers: int = 1,
) -> tuple[ElectionOutcome, list[RoundRecord]]:
    n = len(profiles)
    if strategy.n != n:
        raise ContractViolation(f"source emits {strategy.n} qubits for {n} agents")
    if n < 3:
        raise ContractViolation(f"need at least 3 agents, got {n}")
    profiles = assign_voter_indices(profiles, derive_seed(master_seed, "unique-index"))
    measured = measure_rounds(strategy, params.rounds, master_seed, dishonest, workers)
    records = classify_events(measured, n, params, master_seed, dishonest)
    outcome = decide(records, profiles, params)
    log.info("election %s: %s", outcome.status, outcome.counts)
    return outcome, records


def write_transcript(records: Iterable[RoundRecord], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for r in records:
            fh.write(r.to_json())
            fh.write("\n")
