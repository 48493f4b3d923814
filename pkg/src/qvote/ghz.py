"""GHZ-family states, their Hadamard-count transformation laws, and state sources.

The two parity-coded states are

    Phi0(n) = 2^{-(n-1)/2} ( sum_{|y| = 0 mod 4} |y>  -  sum_{|y| = 2 mod 4} |y> )
    Phi1(n) = 2^{-(n-1)/2} ( sum_{|y| = 1 mod 4} |y>  -  sum_{|y| = 3 mod 4} |y> )

GHZ(n) maps onto Phi0(n) by applying a Hadamard and *then* ``SqrtZ`` on every
qubit. Applying ``SqrtZ`` first fails for n = 4 (overlap 1/2), so the order
matters; the phase convention of ``SqrtZ`` does not, because only even
Hamming weights carry amplitude after the Hadamard layer.
"""
from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Any, Callable, Iterable, Sequence

import numpy as np

from .qsim import (
    ContractViolation,
    LocalGate,
    StateVector,
    apply_local,
    equal_up_to_phase,
    hadamard_layer,
    hamming_weights,
    inner,
    projector_expectation,
)


class FamilyKind(enum.Enum):
    Phi0 = "Phi0"
    Phi1 = "Phi1"
    Psi0 = "Psi0"
    Psi1 = "Psi1"
    GHZ = "GHZ"
    Other = "Other"


@dataclass(frozen=True)
class FamilyLabel:
    kind: FamilyKind
    sign: int = 1
    n: int = 4
    hadamard_subset: tuple[int, ...] = ()

    def __post_init__(self):
        if self.sign not in (1, -1):
            raise ContractViolation(f"sign must be +1 or -1, got {self.sign}")
        if self.kind in (FamilyKind.Psi0, FamilyKind.Psi1):
            want = 1 if self.kind is FamilyKind.Psi0 else 3
            if len(self.hadamard_subset) % 4 != want:
                raise ContractViolation(
                    f"{self.kind.value} needs |subset| = {want} mod 4, got {len(self.hadamard_subset)}"
                )

    @property
    def token(self) -> str:
        s = "+" if self.sign > 0 else "-"
        if self.hadamard_subset:
            return f"{s}{self.kind.value}[{','.join(map(str, self.hadamard_subset))}]"
        return f"{s}{self.kind.value}"

    def state(self) -> StateVector:
        return family_state(self)


def _signed_weight_state(n: int, plus: int, minus: int) -> StateVector:
    if n < 1:
        raise ContractViolation(f"need n >= 1, got {n}")
    w = hamming_weights(n) % 4
    amps = np.zeros(2**n, dtype=complex)
    amps[w == plus] = 1.0
    amps[w == minus] = -1.0
    amps /= np.sqrt(2 ** (n - 1))
    return StateVector(n, amps)


@lru_cache(maxsize=64)
def make_phi0(n: int) -> StateVector:
    return _signed_weight_state(n, 0, 2)


@lru_cache(maxsize=64)
def make_phi1(n: int) -> StateVector:
    return _signed_weight_state(n, 1, 3)


@lru_cache(maxsize=64)
def make_ghz(n: int) -> StateVector:
    if n < 1:
        raise ContractViolation(f"need n >= 1, got {n}")
    amps = np.zeros(2**n, dtype=complex)
    amps[0] = amps[-1] = 1 / np.sqrt(2)
    return StateVector(n, amps)


def ghz_to_phi0_gates(n: int) -> list[list[LocalGate]]:
    """Gate layers (applied in order) that take GHZ(n) to Phi0(n)."""
    return [[LocalGate.Hadamard] * n, [LocalGate.SqrtZ] * n]


def hadamard_z_rotation(state: StateVector, hadamard_subset: Iterable[int]) -> StateVector:
    """Hadamard on ``hadamard_subset``, PauliZ on every other qubit."""
    return apply_local(state, hadamard_layer(state.n_qubits, hadamard_subset, rest=LocalGate.PauliZ))


def make_psi(k: int, hadamard_subset: Iterable[int], variant: FamilyKind) -> StateVector:
    """Phi0(k) rotated by Hadamards on an odd-sized subset and Z on the rest.

    ``Psi0`` requires ``|subset| = 1 mod 4``; ``Psi1`` requires ``|subset| = 3 mod 4``.
    """
    subset = tuple(sorted(set(hadamard_subset)))
    if variant not in (FamilyKind.Psi0, FamilyKind.Psi1):
        raise ContractViolation(f"variant must be Psi0 or Psi1, got {variant}")
    want = 1 if variant is FamilyKind.Psi0 else 3
    if len(subset) % 4 != want:
        raise ContractViolation(f"{variant.value} needs |subset| = {want} mod 4, got |subset| = {len(subset)}")
    return hadamard_z_rotation(make_phi0(k), subset)


def family_state(label: FamilyLabel) -> StateVector:
    if label.kind is FamilyKind.Phi0:
        st = make_phi0(label.n)
    elif label.kind is FamilyKind.Phi1:
        st = make_phi1(label.n)
    elif label.kind is FamilyKind.GHZ:
        st = make_ghz(label.n)
    elif label.kind in (FamilyKind.Psi0, FamilyKind.Psi1):
        st = make_psi(label.n, label.hadamard_subset, label.kind)
    else:
        raise ContractViolation("no canonical state for FamilyKind.Other")
    return st if label.sign > 0 else -st


def classify_family(state: StateVector, tol: float = 1e-9) -> FamilyLabel:
    """Identify ``state`` as +-Phi0, +-Phi1 or GHZ (up to global phase), else Other.

    The sign is read off the real part of the overlap; complex global phases
    are reported as +1.
    """
    n = state.n_qubits
    for kind, ref in ((FamilyKind.Phi0, make_phi0(n)), (FamilyKind.Phi1, make_phi1(n)), (FamilyKind.GHZ, make_ghz(n))):
        if equal_up_to_phase(state, ref, tol):
            sign = -1 if inner(ref, state).real < 0 else 1
            return FamilyLabel(kind, sign, n)
    return FamilyLabel(FamilyKind.Other, 1, n)


def transformation_property_check(n: int, hadamard_subset: Iterable[int]) -> FamilyLabel:
    subset = tuple(sorted(set(hadamard_subset)))
    if len(subset) % 2:
        raise ContractViolation(f"hadamard subset must have even size, got {len(subset)}; see make_psi")
    out = classify_family(hadamard_z_rotation(make_phi0(n), subset))
    expected = FamilyKind.Phi0 if len(subset) % 4 == 0 else FamilyKind.Phi1
    if out.kind is not expected:
        raise AssertionError(f"subset {subset}: expected {expected.value}, got {out.kind.value}")
    return out


def parity_offset(hadamard_count: int) -> int:
    """The left-hand side of the parity test: ceil(H/2) mod 2."""
    return ((hadamard_count + 1) // 2) % 2


def honest_statistic_distribution(state: StateVector, hadamard_subset: Iterable[int]) -> tuple[float, float]:
    """Distribution of ``ceil(H/2) xor (sum Y mod 2)`` when measuring ``state``.

    Qubits in ``hadamard_subset`` are measured in the Hadamard basis, the rest
    computationally. For even H this is the usual ``H/2 = sum Y`` test; for odd
    H it is ``(H+1)/2 = sum Y``. Returns ``(P[stat=0], P[stat=1])``.
    """
    subset = tuple(sorted(set(hadamard_subset)))
    probs = apply_local(state, hadamard_layer(state.n_qubits, subset)).probabilities
    par = hamming_weights(state.n_qubits) % 2
    p_odd = float(probs[par == 1].sum())
    if parity_offset(len(subset)):
        return p_odd, 1.0 - p_odd
    return 1.0 - p_odd, p_odd


def even_subsets(n: int) -> list[tuple[int, ...]]:
    return [s for r in range(0, n + 1, 2) for s in itertools.combinations(range(n), r)]


def odd_subsets(n: int) -> list[tuple[int, ...]]:
    return [s for r in range(1, n + 1, 2) for s in itertools.combinations(range(n), r)]


# ---------------------------------------------------------------------------
# sources


@dataclass(frozen=True)
class EmittedRoundState:
    round_index: int
    state: StateVector
    side_info: Any = None


@dataclass(frozen=True)
class Ideal:
    n: int = 4

    def to_dict(self) -> dict:
        return {"kind": "ideal", "n": self.n}


@dataclass(frozen=True)
class WernerEnsemble:
    """Phi0 with probability ``p``, else a uniformly random basis state."""

    p: float
    n: int = 4

    def __post_init__(self):
        if not 0.0 <= self.p <= 1.0:
            raise ContractViolation(f"mixing probability must be in [0, 1], got {self.p}")

    @classmethod
    def for_fidelity(cls, fidelity: float, n: int = 4) -> "WernerEnsemble":
        return cls(werner_p_for_fidelity(fidelity, n), n)

    def to_dict(self) -> dict:
        return {"kind": "werner", "n": self.n, "p": self.p}


@dataclass(frozen=True)
class DephasingEnsemble:
    """Phi0 with an independent ``diag(1, e^{i theta})`` on each qubit, theta ~ N(0, sigma^2)."""

    sigma: float
    n: int = 4

    def __post_init__(self):
        if self.sigma < 0:
            raise ContractViolation(f"sigma must be >= 0, got {self.sigma}")

    def to_dict(self) -> dict:
        return {"kind": "dephasing", "n": self.n, "sigma": self.sigma}


@dataclass(frozen=True)
class FixedFamily:
    """Emit ``schedule[round % len(schedule)]`` each round."""

    schedule: tuple[FamilyLabel, ...]
    n: int = 4

    def __post_init__(self):
        if not self.schedule:
            raise ContractViolation("schedule must be nonempty")
        for lab in self.schedule:
            if lab.n != self.n:
                raise ContractViolation(f"schedule label {lab.token} has n={lab.n}, expected {self.n}")

    def to_dict(self) -> dict:
        return {
            "kind": "fixed",
            "n": self.n,
            "schedule": [
                {"kind": l.kind.value, "sign": l.sign, "subset": list(l.hadamard_subset)} for l in self.schedule
            ],
        }


@dataclass(frozen=True)
class AdaptiveMalicious:
    """Source driven by ``policy(round_index, rng) -> (StateVector, side_info)``.

    ``name`` identifies the policy in configs; the policy itself must be a
    picklable, deterministic function of its arguments.
    """

    policy: Callable[[int, np.random.Generator], tuple[StateVector, Any]] = field(compare=False)
    n: int = 4
    name: str = "adaptive"

    def to_dict(self) -> dict:
        return {"kind": "adaptive", "n": self.n, "scenario": self.name}


SourceStrategy = Ideal | WernerEnsemble | DephasingEnsemble | FixedFamily | AdaptiveMalicious


def werner_p_for_fidelity(fidelity: float, n: int) -> float:
    """Mixing probability giving ensemble fidelity ``fidelity`` to Phi0(n): F = p + (1-p)/2^n."""
    d = 2**n
    p = (fidelity - 1 / d) / (1 - 1 / d)
    if not 0.0 <= p <= 1.0:
        raise ContractViolation(f"fidelity {fidelity} unreachable for n={n} (needs p={p})")
    return p


def strategy_from_dict(d: dict) -> SourceStrategy:
    kind = d["kind"]
    n = int(d.get("n", 4))
    if kind == "ideal":
        return Ideal(n)
    if kind == "werner":
        if "fidelity" in d:
            return WernerEnsemble.for_fidelity(float(d["fidelity"]), n)
        return WernerEnsemble(float(d["p"]), n)
    if kind == "dephasing":
        return DephasingEnsemble(float(d["sigma"]), n)
    if kind == "fixed":
        labels = tuple(
            FamilyLabel(FamilyKind(e["kind"]), int(e.get("sign", 1)), n, tuple(e.get("subset", ())))
            for e in d["schedule"]
        )
        return FixedFamily(labels, n)
    if kind == "adaptive":
        from .adversary import scenario_by_name

        return scenario_by_name(d["scenario"], n=n).source
    raise ContractViolation(f"unknown source kind {kind!r}")


def emit_round(strategy: SourceStrategy, round_index: int, rng_seed: int | np.random.Generator) -> EmittedRoundState:
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    n = strategy.n
    if isinstance(strategy, Ideal):
        return EmittedRoundState(round_index, make_phi0(n))
    if isinstance(strategy, WernerEnsemble):
        if rng.random() < strategy.p:
            return EmittedRoundState(round_index, make_phi0(n))
        amps = np.zeros(2**n, dtype=complex)
        amps[rng.integers(2**n)] = 1.0
        return EmittedRoundState(round_index, StateVector(n, amps))
    if isinstance(strategy, DephasingEnsemble):
        theta = rng.normal(0.0, strategy.sigma, size=n) if strategy.sigma > 0 else np.zeros(n)
        phase = np.ones(1, dtype=complex)
        for q in range(n):
            phase = np.kron(phase, np.array([1.0, np.exp(1j * theta[q])]))
        return EmittedRoundState(round_index, StateVector(n, make_phi0(n).amplitudes * phase))
    if isinstance(strategy, FixedFamily):
        lab = strategy.schedule[round_index % len(strategy.schedule)]
        return EmittedRoundState(round_index, family_state(lab), lab.token)
    if isinstance(strategy, AdaptiveMalicious):
        st, side = strategy.policy(round_index, rng)
        if st.n_qubits != n:
            raise ContractViolation(f"policy emitted {st.n_qubits} qubits, expected {n}")
        return EmittedRoundState(round_index, st, side)
    raise ContractViolation(f"unknown strategy {strategy!r}")


def ensemble_branches(strategy: SourceStrategy) -> list[tuple[float, StateVector]]:
    """Exact ``(weight, state)`` decomposition of a discrete ensemble."""
    n = strategy.n
    if isinstance(strategy, Ideal):
        return [(1.0, make_phi0(n))]
    if isinstance(strategy, WernerEnsemble):
        out = [(strategy.p, make_phi0(n))]
        w = (1 - strategy.p) / 2**n
        for y in range(2**n):
            amps = np.zeros(2**n, dtype=complex)
            amps[y] = 1.0
            out.append((w, StateVector(n, amps)))
        return out
    if isinstance(strategy, FixedFamily):
        w = 1.0 / len(strategy.schedule)
        return [(w, family_state(lab)) for lab in strategy.schedule]
    raise ContractViolation(f"{type(strategy).__name__} has no finite branch decomposition")


def ensemble_fidelity(
    strategy: SourceStrategy,
    target: StateVector,
    samples: int = 4096,
    seed: int = 0,
) -> tuple[float, float]:
    """Expected ``|<target|state>|^2`` over the source ensemble.

    Returns ``(fidelity, standard_error)``; the error is 0 for closed forms and
    the Monte Carlo standard error for adaptive sources.
    """
    if isinstance(strategy, DephasingEnsemble):
        return _dephasing_fidelity(strategy, target), 0.0
    if isinstance(strategy, AdaptiveMalicious):
        rng = np.random.default_rng(seed)
        vals = np.array([projector_expectation(emit_round(strategy, r, rng).state, target) for r in range(samples)])
        return float(vals.mean()), float(vals.std(ddof=1) / np.sqrt(samples))
    return float(sum(w * projector_expectation(st, target) for w, st in ensemble_branches(strategy))), 0.0


def _dephasing_fidelity(strategy: DephasingEnsemble, target: StateVector) -> float:
    # E|<t|D(theta) phi0>|^2 = sum_{y,y'} c_y c_y'^* E[e^{i theta.(y - y')}],
    # c_y = conj(t_y) phi0_y, and E e^{i theta (b - b')} = exp(-sigma^2 (b - b')^2 / 2) per qubit
    n = strategy.n
    c = np.conj(target.amplitudes) * make_phi0(n).amplitudes
    idx = np.arange(2**n)
    dist = hamming_weights(n)[idx[:, None] ^ idx[None, :]]
    kernel = np.exp(-0.5 * strategy.sigma**2 * dist)
    return float(np.real(c @ kernel @ np.conj(c)))


def verification_pass_probability(strategy: SourceStrategy) -> float:
    """Exact probability that a verifying round passes with all agents honest.

    Enumerates every ensemble branch and every basis assignment with an even
    number of Hadamards (the only ones that reach verification), weighting
    assignments uniformly as independent fair basis choices would.
    """
    n = strategy.n
    subsets = even_subsets(n)
    total = 0.0
    for w, st in ensemble_branches(strategy):
        total += w * sum(honest_statistic_distribution(st, s)[0] for s in subsets) / len(subsets)
    return float(total)
