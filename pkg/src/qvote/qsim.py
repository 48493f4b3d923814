"""Dense pure-state simulator for a handful of qubits.

Conventions
-----------
* Qubits are indexed from 0. Qubit 0 is the most significant bit of the
  computational-basis index, so ``amplitudes[0b1000]`` is ``|1000>``.
* Polarization mapping: H <-> 0, V <-> 1.
* ``SqrtZ`` is ``diag(1, i)``.

Only local (single-qubit) gates are supported; entangled states are built
directly from their amplitudes.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

MAX_QUBITS = 16
DEFAULT_TOL = 1e-9


class ContractViolation(ValueError):
    """Raised when an operation is called outside its preconditions."""


class LocalGate(enum.Enum):
    Identity = "I"
    Hadamard = "H"
    PauliZ = "Z"
    SqrtZ = "S"
    PauliX = "X"

    @property
    def matrix(self) -> np.ndarray:
        return _GATES[self]


_SQRT2_INV = 1 / np.sqrt(2)
_GATES = {
    LocalGate.Identity: np.eye(2, dtype=complex),
    LocalGate.Hadamard: np.array([[1, 1], [1, -1]], dtype=complex) * _SQRT2_INV,
    LocalGate.PauliZ: np.array([[1, 0], [0, -1]], dtype=complex),
    LocalGate.SqrtZ: np.array([[1, 0], [0, 1j]], dtype=complex),
    LocalGate.PauliX: np.array([[0, 1], [1, 0]], dtype=complex),
}
for _m in _GATES.values():
    _m.flags.writeable = False


@dataclass(frozen=True, eq=False)
class StateVector:
    n_qubits: int
    amplitudes: np.ndarray
    tol: float = field(default=DEFAULT_TOL, repr=False)

    def __post_init__(self):
        if not 1 <= self.n_qubits <= MAX_QUBITS:
            raise ContractViolation(f"n_qubits must be in [1, {MAX_QUBITS}], got {self.n_qubits}")
        amps = np.array(self.amplitudes, dtype=complex).reshape(-1)
        if amps.size != 2**self.n_qubits:
            raise ContractViolation(
                f"expected {2**self.n_qubits} amplitudes for {self.n_qubits} qubits, got {amps.size}"
            )
        norm = float(np.vdot(amps, amps).real)
        if abs(norm - 1.0) > self.tol:
            raise ContractViolation(f"state not normalized: sum |a|^2 = {norm!r}")
        amps.flags.writeable = False
        object.__setattr__(self, "amplitudes", amps)

    @classmethod
    def from_amplitudes(cls, amplitudes, normalize: bool = False) -> "StateVector":
        amps = np.asarray(amplitudes, dtype=complex).reshape(-1)
        n = int(round(np.log2(amps.size)))
        if normalize:
            amps = amps / np.linalg.norm(amps)
        return cls(n, amps)

    @classmethod
    def basis(cls, bits: Sequence[int]) -> "StateVector":
        n = len(bits)
        amps = np.zeros(2**n, dtype=complex)
        amps[bits_to_index(bits)] = 1.0
        return cls(n, amps)

    @property
    def probabilities(self) -> np.ndarray:
        return np.abs(self.amplitudes) ** 2

    def tensor(self, other: "StateVector") -> "StateVector":
        return StateVector(self.n_qubits + other.n_qubits, np.kron(self.amplitudes, other.amplitudes))

    def __neg__(self) -> "StateVector":
        return StateVector(self.n_qubits, -self.amplitudes)

    def __repr__(self) -> str:
        return f"StateVector(n_qubits={self.n_qubits}, nnz={int(np.count_nonzero(np.abs(self.amplitudes) > 1e-12))})"


@dataclass(frozen=True)
class MeasurementOutcome:
    bits: tuple[int, ...]
    probability: float


def bits_to_index(bits: Sequence[int]) -> int:
    idx = 0
    for b in bits:
        idx = (idx << 1) | (int(b) & 1)
    return idx


def index_to_bits(index: int, n: int) -> tuple[int, ...]:
    return tuple((index >> (n - 1 - q)) & 1 for q in range(n))


def hamming_weights(n: int) -> np.ndarray:
    """Hamming weight of every n-bit index, as an int array of length 2**n."""
    idx = np.arange(2**n)
    w = np.zeros(2**n, dtype=np.int64)
    for q in range(n):
        w += (idx >> q) & 1
    return w


def apply_local(state: StateVector, gates: Sequence[LocalGate]) -> StateVector:
    """Apply ``gates[0] (x) gates[1] (x) ...`` to ``state``."""
    n = state.n_qubits
    if len(gates) != n:
        raise ContractViolation(f"need one gate per qubit ({n}), got {len(gates)}")
    psi = state.amplitudes.reshape((2,) * n)
    for q, g in enumerate(gates):
        if g is LocalGate.Identity:
            continue
        # contract the gate's input index with qubit axis q, then move the output back
        psi = np.moveaxis(np.tensordot(g.matrix, psi, axes=([1], [q])), 0, q)
    return StateVector(n, psi.reshape(-1), tol=state.tol)


def hadamard_layer(n: int, subset: Iterable[int], rest: LocalGate = LocalGate.Identity) -> list[LocalGate]:
    """Gate list with Hadamard on ``subset`` and ``rest`` on the other qubits."""
    subset = set(subset)
    bad = [q for q in subset if not 0 <= q < n]
    if bad:
        raise ContractViolation(f"qubit indices {bad} out of range for n={n}")
    return [LocalGate.Hadamard if q in subset else rest for q in range(n)]


def sample_computational(state: StateVector, rng_seed: int | np.random.Generator) -> MeasurementOutcome:
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    probs = state.probabilities
    idx = int(rng.choice(probs.size, p=probs / probs.sum()))
    return MeasurementOutcome(index_to_bits(idx, state.n_qubits), float(probs[idx]))


def sample_indices(state: StateVector, shots: int, rng: np.random.Generator) -> np.ndarray:
    """Draw ``shots`` computational-basis indices from the Born distribution."""
    probs = state.probabilities
    return rng.choice(probs.size, size=shots, p=probs / probs.sum())


def inner(a: StateVector, b: StateVector) -> complex:
    if a.n_qubits != b.n_qubits:
        raise ContractViolation(f"qubit count mismatch: {a.n_qubits} vs {b.n_qubits}")
    return complex(np.vdot(a.amplitudes, b.amplitudes))


def projector_expectation(state: StateVector, target: StateVector) -> float:
    """``|<target|state>|^2``."""
    return float(min(1.0, abs(inner(target, state)) ** 2))


def equal_up_to_phase(a: StateVector, b: StateVector, tol: float = DEFAULT_TOL) -> bool:
    """True when ``a = e^{i phi} b`` for some phi, within ``tol`` in vector norm."""
    ov = inner(b, a)
    if abs(ov) < 0.5:
        return False
    phase = ov / abs(ov)
    return float(np.linalg.norm(a.amplitudes - phase * b.amplitudes)) <= tol


def marginal_state(state: StateVector, keep: Iterable[int]) -> np.ndarray:
    """Reduced density matrix on the ``keep`` qubits (sorted ascending).

    Returns a dense ``2**k x 2**k`` complex matrix.
    """
    n = state.n_qubits
    keep = sorted(set(keep))
    if not keep or any(not 0 <= q < n for q in keep):
        raise ContractViolation(f"keep must be a nonempty subset of range({n}), got {keep}")
    drop = [q for q in range(n) if q not in keep]
    psi = state.amplitudes.reshape((2,) * n).transpose(keep + drop)
    k = len(keep)
    m = psi.reshape(2**k, 2 ** (n - k))
    return m @ m.conj().T
