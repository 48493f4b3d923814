"""Colluding source + dishonest-agent attacks and the anonymity audit.

Threat model: the last ``n - k`` agents are dishonest and share classical side
information with the source. The source hands the ``k`` honest agents a state
(the "honest part"); the dishonest agents hold nothing useful and simply
choose what bases and outcomes to report, as a function of the side info.

Since bases are reported before the Verifier speaks, colluders cannot see the
honest Hadamard count; a non-discarded event only tells them it has the same
parity as their own count.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Any, Iterable, Sequence

import numpy as np

from .ghz import (
    AdaptiveMalicious,
    FamilyKind,
    FamilyLabel,
    Ideal,
    SourceStrategy,
    family_state,
    honest_statistic_distribution,
    make_phi0,
)
from .protocol import Intent, RoundKind, RoundRecord
from .qsim import ContractViolation, StateVector, apply_local, hadamard_layer, hamming_weights
from .seeding import rng_for
from .stats import P_REJECT, homogeneity_test

MI_LEAK_BITS = 0.01


def embed(honest_state: StateVector, honest_qubits: Sequence[int], n: int) -> StateVector:
    """Place ``honest_state`` on ``honest_qubits`` of an n-qubit register, |0> elsewhere."""
    k = honest_state.n_qubits
    if len(honest_qubits) != k:
        raise ContractViolation("honest_qubits must match the honest state size")
    rest = [q for q in range(n) if q not in honest_qubits]
    full = np.zeros(2 ** (n - k), dtype=complex)
    full[0] = 1.0
    psi = np.kron(honest_state.amplitudes, full).reshape((2,) * n)
    # axes are currently ordered honest_qubits + rest
    order = list(honest_qubits) + rest
    psi = np.transpose(psi, np.argsort(order))
    return StateVector(n, psi.reshape(-1))


@dataclass(frozen=True)
class HonestPartSource:
    """Source policy: pick a (side_info, honest-part state) branch per round.

    Picklable, and a deterministic function of (round, rng).
    """

    branches: tuple[tuple[float, str, StateVector], ...]
    honest_qubits: tuple[int, ...]
    n: int

    def __call__(self, round_index: int, rng: np.random.Generator) -> tuple[StateVector, Any]:
        i = self.draw(rng, 1)[0] if len(self.branches) > 1 else 0
        _, side, st = self.branches[i]
        return embed(st, self.honest_qubits, self.n), side

    def draw(self, rng: np.random.Generator, size: int) -> np.ndarray:
        w = np.array([b[0] for b in self.branches])
        return rng.choice(len(self.branches), size=size, p=w / w.sum())


@dataclass
class DishonestPolicy:
    """Report rule for the colluders.

    ``table[side_info][agent] = (basis, outcome)``. Side info missing from the
    table, or ``table=None``, means the colluders report what they actually
    measured.
    """

    controlled: tuple[int, ...]
    table: dict[Any, dict[int, tuple[int, int]]] | None = None
    verifier_lies: bool = False

    def report(self, side_info, true_bases, true_outcomes, rng=None) -> dict[int, tuple[int, int]]:
        if self.table is not None and side_info in self.table:
            return dict(self.table[side_info])
        return {a: (true_bases[a - 1], true_outcomes[a - 1]) for a in self.controlled}

    def reported_hadamards(self, side_info) -> int:
        return sum(b for b, _ in self.table[side_info].values())

    def reported_ones(self, side_info) -> int:
        return sum(y for _, y in self.table[side_info].values())


@dataclass
class AttackScenario:
    name: str
    source: SourceStrategy
    policy: DishonestPolicy | None
    honest: tuple[int, ...]
    expected_pass: float
    provenance: str
    expected_leak: bool = False
    # exact description of what the honest agents receive: (weight, side_info, honest-part state)
    honest_branches: tuple[tuple[float, Any, StateVector], ...] = ()

    @property
    def n(self) -> int:
        return self.source.n

    @property
    def k(self) -> int:
        return len(self.honest)


# ---------------------------------------------------------------------------
# exact enumeration


@lru_cache(maxsize=4096)
def _odd_parity_prob(state_key: bytes, k: int, subset: tuple[int, ...]) -> float:
    amps = np.frombuffer(state_key, dtype=complex)
    st = StateVector(k, amps)
    probs = apply_local(st, hadamard_layer(k, subset)).probabilities
    return float(probs[hamming_weights(k) % 2 == 1].sum())


def odd_parity_probability(state: StateVector, subset: Iterable[int]) -> float:
    """P[sum of outcomes is odd] when ``subset`` is measured in the Hadamard basis."""
    return _odd_parity_prob(state.amplitudes.tobytes(), state.n_qubits, tuple(sorted(subset)))


def exact_pass_probability(
    branches: Sequence[tuple[float, Any, StateVector]],
    reports: dict[Any, tuple[int, int]],
) -> float:
    """Exact P[verification passes | event not discarded].

    ``reports[side_info] = (H_d, sum of reported dishonest outcomes)``. Honest
    agents pick each basis with a fair coin. Returns NaN if every event would
    be discarded.
    """
    num = den = 0.0
    for w, side, st in branches:
        k = st.n_qubits
        h_d, y_d = reports[side]
        for r in range(k + 1):
            for subset in itertools.combinations(range(k), r):
                h = r + h_d
                if h % 2:
                    continue
                p_odd = odd_parity_probability(st, subset)
                need_odd = ((h // 2) - y_d) % 2
                num += w * (p_odd if need_odd else 1 - p_odd)
                den += w
    return num / den if den > 0 else float("nan")


def policy_reports(policy: DishonestPolicy, sides: Iterable[Any]) -> dict[Any, tuple[int, int]]:
    return {s: (policy.reported_hadamards(s), policy.reported_ones(s)) for s in sides}


def scenario_pass_probability(scenario: AttackScenario) -> float:
    if scenario.policy is None:
        reports = {side: (0, 0) for _, side, _ in scenario.honest_branches}
    else:
        reports = policy_reports(scenario.policy, [b[1] for b in scenario.honest_branches])
    return exact_pass_probability(scenario.honest_branches, reports)


def best_policy(
    branches: Sequence[tuple[float, Any, StateVector]],
    colluders: Sequence[int],
    max_exhaustive: int = 1 << 14,
    samples: int = 4096,
    seed: int = 0,
) -> tuple[DishonestPolicy, float, float]:
    """Search deterministic colluder report tables for the highest pass probability.

    Every (basis, outcome) assignment per colluder per side value is tried when
    the table count is at most ``max_exhaustive``; otherwise ``samples`` tables
    are drawn at random. Returns ``(policy, pass_probability, coverage)``.
    """
    sides = list(dict.fromkeys(b[1] for b in branches))
    per_side = list(itertools.product(itertools.product((0, 1), (0, 1)), repeat=len(colluders)))
    total = len(per_side) ** len(sides)
    if total <= max_exhaustive:
        choices = itertools.product(range(len(per_side)), repeat=len(sides))
        coverage = 1.0
    else:
        rng = np.random.default_rng(seed)
        choices = (tuple(rng.integers(len(per_side), size=len(sides))) for _ in range(samples))
        coverage = samples / total
    best, best_p = None, -1.0
    for pick in choices:
        table = {s: dict(zip(colluders, per_side[c])) for s, c in zip(sides, pick)}
        reports = {s: (sum(b for b, _ in t.values()), sum(y for _, y in t.values())) for s, t in table.items()}
        p = exact_pass_probability(branches, reports)
        if not math.isnan(p) and p > best_p:
            best, best_p = table, p
    return DishonestPolicy(tuple(colluders), best), best_p, coverage


# ---------------------------------------------------------------------------
# scenario builders


def _honest_layout(k: int, n: int) -> tuple[tuple[int, ...], tuple[int, ...]]:
    if not 1 <= k <= n:
        raise ContractViolation(f"need 1 <= k <= n, got k={k}, n={n}")
    return tuple(range(1, k + 1)), tuple(range(k + 1, n + 1))


def _family_label(kind: FamilyKind, k: int, sign: int = 1, subset: Sequence[int] | None = None) -> FamilyLabel:
    if kind in (FamilyKind.Psi0, FamilyKind.Psi1) and subset is None:
        subset = (0,) if kind is FamilyKind.Psi0 else (0, 1, 2)
    return FamilyLabel(kind, sign, k, tuple(subset or ()))


def correcting_report(state: StateVector, odd: bool, colluders: Sequence[int]) -> dict[int, tuple[int, int]]:
    """Colluder reports that make verification pass for a parity-deterministic honest part.

    ``odd`` selects an odd dishonest Hadamard count (one colluder reports H).
    The first colluder's outcome absorbs the honest statistic, which must be
    constant over every honest basis choice of matching parity.
    """
    if not colluders:
        raise ContractViolation("a correcting report needs at least one colluder")
    k = state.n_qubits
    stat = None
    for r in range(1 if odd else 0, k + 1, 2):
        for subset in itertools.combinations(range(k), r):
            p0, p1 = honest_statistic_distribution(state, subset)
            if min(p0, p1) > 1e-9:
                raise ContractViolation(f"honest statistic not deterministic on subset {subset}")
            s = 0 if p0 > 0.5 else 1
            if stat is not None and s != stat:
                raise ContractViolation("honest statistic varies with the basis choice")
            stat = s
    out = {a: (0, 0) for a in colluders}
    out[colluders[0]] = (1 if odd else 0, stat)
    return out


FAMILY_VARIANTS = ("phi0", "phi1", "psi0", "psi1")


def family_attack(
    k: int = 3,
    n: int = 4,
    variant: str | FamilyLabel = "phi0",
    sign: int = 1,
    name: str | None = None,
) -> AttackScenario:
    """Source hands the honest agents a family state and tells the colluders which.

    ``variant`` is one of ``phi0, phi1, psi0, psi1``, ``mixed`` (uniform over
    all eight signed members, re-drawn each round) or an explicit label.
    """
    honest, colluders = _honest_layout(k, n)
    if not colluders:
        raise ContractViolation("family attack needs at least one colluder")
    if isinstance(variant, FamilyLabel):
        labels = [variant]
    elif variant == "mixed":
        labels = [_family_label(FamilyKind(v.capitalize()), k, s) for v in FAMILY_VARIANTS for s in (1, -1)]
    else:
        labels = [_family_label(FamilyKind(variant.capitalize()), k, sign)]
    branches, table = [], {}
    for lab in labels:
        st = family_state(lab)
        branches.append((1.0 / len(labels), lab.token, st))
        table[lab.token] = correcting_report(st, lab.kind in (FamilyKind.Psi0, FamilyKind.Psi1), colluders)
    src = HonestPartSource(tuple(branches), tuple(a - 1 for a in honest), n)
    label = name or f"family-{variant if isinstance(variant, str) else variant.token}"
    return AttackScenario(
        name=label,
        source=AdaptiveMalicious(src, n, label),
        policy=DishonestPolicy(colluders, table),
        honest=honest,
        expected_pass=1.0,
        provenance="DERIVED: exhaustive enumeration of honest bases per side value",
        expected_leak=False,
        honest_branches=tuple(branches),
    )


def naive_attack(honest_state: StateVector, n: int = 4, name: str = "naive") -> AttackScenario:
    """Non-family honest part with the colluders' best fixed report table."""
    k = honest_state.n_qubits
    honest, colluders = _honest_layout(k, n)
    branches = ((1.0, "fixed", honest_state),)
    policy, p, _ = best_policy(branches, colluders)
    src = HonestPartSource(branches, tuple(a - 1 for a in honest), n)
    return AttackScenario(
        name=name,
        source=AdaptiveMalicious(src, n, name),
        policy=policy,
        honest=honest,
        expected_pass=p,
        provenance="DERIVED: exhaustive colluder policy enumeration",
        expected_leak=False,
        honest_branches=branches,
    )


def w_state(k: int = 3) -> StateVector:
    amps = np.zeros(2**k, dtype=complex)
    for q in range(k):
        amps[1 << q] = 1.0
    return StateVector.from_amplitudes(amps, normalize=True)


def ideal_scenario(n: int = 4) -> AttackScenario:
    return AttackScenario(
        name="ideal",
        source=Ideal(n),
        policy=None,
        honest=tuple(range(1, n + 1)),
        expected_pass=1.0,
        provenance="TRIVIAL: noiseless source",
        honest_branches=((1.0, None, make_phi0(n)),),
    )


def planted_leak(k: int = 3, n: int = 4) -> AttackScenario:
    """Negative control: honest part |0...0>, so a flipped bit points at the voter."""
    sc = naive_attack(StateVector.basis([0] * k), n, name="planted-leak")
    sc.expected_leak = True
    sc.provenance = "DERIVED: deterministic computational outcomes expose the flipped position"
    return sc


def scenario_by_name(name: str, n: int = 4, k: int | None = None) -> AttackScenario:
    k = n - 1 if k is None else k
    if name == "ideal":
        return ideal_scenario(n)
    if name.startswith("family-"):
        variant = name.split("-", 1)[1]
        sign = -1 if variant.endswith("neg") else 1
        variant = variant.removesuffix("-neg")
        return family_attack(k, n, variant, sign, name=name)
    if name == "naive-w":
        return naive_attack(w_state(k), n, name=name)
    if name == "naive-product":
        return naive_attack(StateVector.basis([0] * k), n, name=name)
    if name == "planted-leak":
        return planted_leak(k, n)
    raise KeyError(f"unknown scenario {name!r}; known: {', '.join(SCENARIOS)}")


SCENARIOS = (
    "ideal",
    "family-phi0",
    "family-phi1-neg",
    "family-psi0",
    "family-psi1",
    "family-mixed",
    "naive-w",
    "naive-product",
    "planted-leak",
)


def discard_parity_holds(records: Iterable[RoundRecord], honest: Sequence[int]) -> bool:
    """In every non-discarded event, honest and dishonest Hadamard counts share parity."""
    hs = set(honest)
    for r in records:
        if r.kind is RoundKind.Discarded:
            continue
        h_h = sum(int(b) for a, b in enumerate(r.bases, start=1) if a in hs)
        h_d = r.hadamard_count - h_h
        if (h_h - h_d) % 2:
            return False
    return True


# ---------------------------------------------------------------------------
# anonymity audit


def plugin_mutual_information(x: np.ndarray, y: np.ndarray) -> float:
    """Plug-in MI estimate in bits between two integer-coded samples."""
    _, xi = np.unique(x, return_inverse=True)
    _, yi = np.unique(y, return_inverse=True)
    joint = np.zeros((xi.max() + 1, yi.max() + 1))
    np.add.at(joint, (xi, yi), 1)
    return _mi_from_counts(joint)


def _mi_from_counts(joint: np.ndarray) -> float:
    n = joint.sum()
    if n == 0:
        return 0.0
    pxy = joint / n
    px = pxy.sum(axis=1, keepdims=True)
    py = pxy.sum(axis=0, keepdims=True)
    nz = pxy > 0
    return float(max(0.0, (pxy[nz] * np.log2(pxy[nz] / (px @ py)[nz])).sum()))


@dataclass
class AuditArm:
    intent: Intent
    trials: int
    chi2: float
    p_value: float
    mi_bits: float
    mi_ci: tuple[float, float]
    exact_mi_bits: float
    distributions: dict[int, dict[str, float]] = field(default_factory=dict)

    @property
    def leak(self) -> bool:
        return self.p_value < P_REJECT or self.mi_bits > MI_LEAK_BITS


@dataclass
class AuditReport:
    scenario: str
    pass_probability: float
    arms: list[AuditArm]

    @property
    def leak(self) -> bool:
        return any(a.leak for a in self.arms)

    def to_dict(self) -> dict:
        return {
            "scenario": self.scenario,
            "pass_probability": self.pass_probability,
            "leak": self.leak,
            "thresholds": {"mi_bits": MI_LEAK_BITS, "p_reject": P_REJECT},
            "arms": [
                {
                    "intent": a.intent.name,
                    "trials": a.trials,
                    "chi2": a.chi2,
                    "p_value": a.p_value,
                    "mi_bits": a.mi_bits,
                    "mi_ci95": list(a.mi_ci),
                    "exact_mi_bits": a.exact_mi_bits,
                    "leak": a.leak,
                    "distributions": {str(k): v for k, v in a.distributions.items()},
                }
                for a in self.arms
            ],
        }


def _basic_bootstrap_ci(estimate: float, boot: np.ndarray, level: float = 0.95) -> tuple[float, float]:
    # pivotal interval; the plug-in estimator is biased upward, so percentile intervals sit too high
    lo, hi = np.quantile(boot, [(1 - level) / 2, (1 + level) / 2])
    return max(0.0, float(2 * estimate - hi)), max(0.0, float(2 * estimate - lo))


class AuditRefused(RuntimeError):
    """The scenario does not pass verification with certainty."""


def _scenario_reports(scenario: AttackScenario) -> dict[Any, tuple[int, int]]:
    sides = [b[1] for b in scenario.honest_branches]
    if scenario.policy is None:
        return {s: (0, 0) for s in sides}
    return policy_reports(scenario.policy, sides)


def _view_code(strings: np.ndarray, s_p: np.ndarray, side: np.ndarray, k: int) -> np.ndarray:
    return (side * 2 + s_p) * (1 << k) + strings


def exact_view_distribution(scenario: AttackScenario, voter: int, intent: Intent) -> dict[int, float]:
    """Exact distribution of the adversary view given the honest voter position.

    The view is (announced honest string, S_p, side value), coded as in the audit.
    """
    reports = _scenario_reports(scenario)
    k = scenario.k
    out: dict[int, float] = {}
    norm = 0.0
    for si, (w, side, st) in enumerate(scenario.honest_branches):
        h_d, _ = reports[side]
        for r in range(k + 1):
            for subset in itertools.combinations(range(k), r):
                if (r + h_d) % 2:
                    continue
                s_p = ((r + h_d) // 2) % 2
                probs = apply_local(st, hadamard_layer(k, subset)).probabilities
                for y in np.flatnonzero(probs > 1e-15):
                    ann = int(y) ^ ((1 << (k - 1 - voter)) if intent is Intent.F else 0)
                    code = int(_view_code(np.array(ann), np.array(s_p), np.array(si), k))
                    out[code] = out.get(code, 0.0) + w * probs[y]
                    norm += w * probs[y]
    return {c: p / norm for c, p in out.items()}


def exact_mutual_information(scenario: AttackScenario, intent: Intent) -> float:
    k = scenario.k
    dists = [exact_view_distribution(scenario, v, intent) for v in range(k)]
    codes = sorted(set().union(*dists))
    joint = np.array([[d.get(c, 0.0) for c in codes] for d in dists]) / k
    return _mi_from_counts(joint)


def simulate_votes(
    scenario: AttackScenario, trials: int, intent: Intent, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """Sample non-discarded probe events; return (voter position, view code) arrays."""
    k = scenario.k
    branches = scenario.honest_branches
    reports = _scenario_reports(scenario)
    w = np.array([b[0] for b in branches])
    h_d = np.array([reports[b[1]][0] for b in branches])
    voters_out, views_out = [], []
    have = 0
    while have < trials:
        batch = 2 * (trials - have) + 64
        side = rng.choice(len(branches), size=batch, p=w / w.sum())
        bases = rng.integers(0, 2, size=(batch, k))
        h = bases.sum(axis=1) + h_d[side]
        keep = h % 2 == 0
        side, bases, h = side[keep], bases[keep], h[keep]
        m = side.size
        masks = bases @ (1 << np.arange(k - 1, -1, -1))
        strings = np.empty(m, dtype=np.int64)
        for si in np.unique(side):
            for mask in np.unique(masks[side == si]):
                sel = np.flatnonzero((side == si) & (masks == mask))
                subset = [q for q in range(k) if (mask >> (k - 1 - q)) & 1]
                probs = apply_local(branches[si][2], hadamard_layer(k, subset)).probabilities
                strings[sel] = rng.choice(probs.size, size=sel.size, p=probs / probs.sum())
        voter = rng.integers(0, k, size=m)
        if intent is Intent.F:
            strings ^= 1 << (k - 1 - voter)
        s_p = (h // 2) % 2
        voters_out.append(voter)
        views_out.append(_view_code(strings, s_p, side, k))
        have += m
    return np.concatenate(voters_out)[:trials], np.concatenate(views_out)[:trials]


def anonymity_audit(
    scenario: AttackScenario,
    trials: int = 10_000,
    master_seed: int = 0,
    require_verification: bool = True,
    bootstrap: int = 200,
    arms: Sequence[Intent] = (Intent.F, Intent.E),
) -> AuditReport:
    """Estimate how much the adversary view reveals about which honest agent voted.

    For each intent arm, ``trials`` voting events are simulated with the voter
    drawn uniformly among the honest agents. The view is the announced honest
    bit string, the public S_p bit and the source's side information.
    """
    p_pass = scenario_pass_probability(scenario)
    if require_verification and not p_pass >= 1.0 - 1e-12:
        raise AuditRefused(
            f"scenario {scenario.name!r} passes verification with probability {p_pass:.6f} < 1; "
            "anonymity is only claimed when verification always succeeds"
        )
    k = scenario.k
    out = []
    for intent in arms:
        rng = rng_for(master_seed, f"audit/{scenario.name}/{intent.name}")
        voters, views = simulate_votes(scenario, trials, intent, rng)
        chi2, p = homogeneity_test(voters, views)
        mi = plugin_mutual_information(voters, views)
        boot = np.empty(bootstrap)
        for b in range(bootstrap):
            idx = rng.integers(0, trials, size=trials)
            boot[b] = plugin_mutual_information(voters[idx], views[idx])
        dists = {}
        for v in range(k):
            strings = views[voters == v] % (1 << k)
            counts = np.bincount(strings, minlength=1 << k)
            dists[scenario.honest[v]] = {
                format(s, f"0{k}b"): float(c / max(1, counts.sum())) for s, c in enumerate(counts) if c
            }
        out.append(
            AuditArm(
                intent,
                trials,
                chi2,
                p,
                mi,
                _basic_bootstrap_ci(mi, boot),
                exact_mutual_information(scenario, intent),
                dists,
            )
        )
    return AuditReport(scenario.name, p_pass, out)
