import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qvote.ghz import (
    DephasingEnsemble,
    FamilyKind,
    FamilyLabel,
    FixedFamily,
    Ideal,
    WernerEnsemble,
    classify_family,
    emit_round,
    ensemble_branches,
    ensemble_fidelity,
    even_subsets,
    family_state,
    ghz_to_phi0_gates,
    hadamard_z_rotation,
    honest_statistic_distribution,
    make_ghz,
    make_phi0,
    make_phi1,
    make_psi,
    odd_subsets,
    strategy_from_dict,
    transformation_property_check,
    verification_pass_probability,
    werner_p_for_fidelity,
)
from qvote.qsim import ContractViolation, LocalGate, StateVector, equal_up_to_phase, projector_expectation

from conftest import kron_all

H = LocalGate.Hadamard.matrix
Z = LocalGate.PauliZ.matrix
S = LocalGate.SqrtZ.matrix
I2 = np.eye(2)


def phi_oracle(n, odd):
    """Signed mod-4 weight state written out bit by bit."""
    amps = np.zeros(2**n, dtype=complex)
    for y in itertools.product((0, 1), repeat=n):
        w = sum(y)
        if w % 2 != odd:
            continue
        idx = int("".join(map(str, y)), 2)
        amps[idx] = 1 if w % 4 in (0, 1) else -1
    return amps / np.sqrt(2 ** (n - 1))


def rotation_matrix(n, subset):
    return kron_all([H if q in subset else Z for q in range(n)])


@pytest.mark.parametrize("n", [2, 3, 4, 5, 6])
def test_phi_states_match_oracle(n):
    assert np.allclose(make_phi0(n).amplitudes, phi_oracle(n, 0))
    assert np.allclose(make_phi1(n).amplitudes, phi_oracle(n, 1))


@pytest.mark.parametrize("n", [3, 4, 5])
def test_ghz_to_phi0_hadamard_then_sqrtz(n):
    psi = kron_all([S] * n) @ kron_all([H] * n) @ make_ghz(n).amplitudes
    assert abs(np.vdot(make_phi0(n).amplitudes, psi)) ** 2 == pytest.approx(1.0, abs=1e-12)
    st_ = make_ghz(n)
    from qvote.qsim import apply_local

    for layer in ghz_to_phi0_gates(n):
        st_ = apply_local(st_, layer)
    assert equal_up_to_phase(st_, make_phi0(n))


def test_sqrtz_first_does_not_reach_phi0():
    # gate order matters; frozen overlap for the reversed order at n = 4
    psi = kron_all([H] * 4) @ kron_all([S] * 4) @ make_ghz(4).amplitudes
    assert abs(np.vdot(make_phi0(4).amplitudes, psi)) ** 2 == pytest.approx(0.25)


# frozen from the dense-matrix oracle: sign of <Phi_target|U Phi0> per subset
TRANSFORMATION_TABLE_4 = {
    (): ("Phi0", 1),
    (0, 1): ("Phi1", 1), (0, 2): ("Phi1", 1), (0, 3): ("Phi1", 1),
    (1, 2): ("Phi1", 1), (1, 3): ("Phi1", 1), (2, 3): ("Phi1", 1),
    (0, 1, 2, 3): ("Phi0", -1),
}


@pytest.mark.parametrize("subset", even_subsets(4))
def test_transformation_laws_exhaustive(subset):
    out = rotation_matrix(4, subset) @ make_phi0(4).amplitudes
    target = make_phi0(4) if len(subset) % 4 == 0 else make_phi1(4)
    ov = np.vdot(target.amplitudes, out)
    assert abs(abs(ov) - 1) < 1e-9
    lab = transformation_property_check(4, subset)
    assert lab.kind.value == ("Phi0" if len(subset) % 4 == 0 else "Phi1")
    assert equal_up_to_phase(hadamard_z_rotation(make_phi0(4), subset), target)
    kind, sign = TRANSFORMATION_TABLE_4[subset]
    assert (lab.kind.value, lab.sign) == (kind, sign)
    assert np.sign(ov.real) == sign


@pytest.mark.parametrize("n", [3, 5, 6])
def test_transformation_laws_other_sizes(n):
    for subset in even_subsets(n):
        lab = transformation_property_check(n, subset)
        assert lab.kind is (FamilyKind.Phi0 if len(subset) % 4 == 0 else FamilyKind.Phi1)


def test_transformation_rejects_odd_subset():
    with pytest.raises(ContractViolation):
        transformation_property_check(4, (0,))


def test_psi_requires_matching_subset_size():
    make_psi(3, (1,), FamilyKind.Psi0)
    make_psi(3, (0, 1, 2), FamilyKind.Psi1)
    with pytest.raises(ContractViolation):
        make_psi(3, (0, 1, 2), FamilyKind.Psi0)
    with pytest.raises(ContractViolation):
        FamilyLabel(FamilyKind.Psi1, 1, 3, (0,))


def family_labels_k3():
    out = []
    for sign in (1, -1):
        out.append(FamilyLabel(FamilyKind.Phi0, sign, 3))
        out.append(FamilyLabel(FamilyKind.Phi1, sign, 3))
        for q in range(3):
            out.append(FamilyLabel(FamilyKind.Psi0, sign, 3, (q,)))
        out.append(FamilyLabel(FamilyKind.Psi1, sign, 3, (0, 1, 2)))
    return out


@pytest.mark.parametrize("label", family_labels_k3(), ids=lambda l: l.token)
def test_honest_statistic_deterministic_k3(label):
    odd = label.kind in (FamilyKind.Psi0, FamilyKind.Psi1)
    subsets = odd_subsets(3) if odd else even_subsets(3)
    stats = set()
    for s in subsets:
        p0, p1 = honest_statistic_distribution(label.state(), s)
        assert min(p0, p1) < 1e-9 and max(p0, p1) > 1 - 1e-9
        stats.add(int(p1 > 0.5))
    # one constant value per state, whatever the bases
    assert len(stats) == 1
    # frozen constants: Phi0 and Psi1 give 0, Phi1 and Psi0 give 1
    assert stats == {1 if label.kind in (FamilyKind.Phi1, FamilyKind.Psi0) else 0}


def test_honest_statistic_against_dense_oracle():
    rng = np.random.default_rng(3)
    for _ in range(20):
        v = rng.normal(size=8) + 1j * rng.normal(size=8)
        psi = StateVector.from_amplitudes(v, normalize=True)
        for s in even_subsets(3) + odd_subsets(3):
            probs = np.abs(kron_all([H if q in s else I2 for q in range(3)]) @ psi.amplitudes) ** 2
            offset = ((len(s) + 1) // 2) % 2
            p1 = sum(p for y, p in enumerate(probs) if (bin(y).count("1") + offset) % 2 == 1)
            assert honest_statistic_distribution(psi, s)[1] == pytest.approx(p1, abs=1e-12)


def test_w_state_not_deterministic():
    w = StateVector.from_amplitudes([0, 1, 1, 0, 1, 0, 0, 0], normalize=True)
    dists = [honest_statistic_distribution(w, s) for s in even_subsets(3)]
    assert any(min(d) > 0.1 for d in dists)
    # frozen: every 2-subset gives (1/6, 5/6)
    for s, d in zip(even_subsets(3), dists):
        if len(s) == 2:
            assert sorted(d) == pytest.approx([1 / 6, 5 / 6])


@pytest.mark.parametrize(
    "label",
    [FamilyLabel(FamilyKind.Phi0, -1, 4), FamilyLabel(FamilyKind.Phi1, 1, 4), FamilyLabel(FamilyKind.GHZ, 1, 4)],
    ids=lambda l: l.token,
)
def test_classify_roundtrip(label):
    assert classify_family(family_state(label)) == label


def test_classify_other():
    assert classify_family(StateVector.basis([0, 0, 0, 0])).kind is FamilyKind.Other


def test_werner_parameters_frozen():
    p = werner_p_for_fidelity(0.89, 4)
    assert p == pytest.approx((0.89 - 1 / 16) / (15 / 16))
    assert p == pytest.approx(0.8826666666666667, abs=1e-12)
    w = WernerEnsemble.for_fidelity(0.89)
    assert ensemble_fidelity(w, make_phi0(4))[0] == pytest.approx(0.89, abs=1e-12)
    assert sum(wt for wt, _ in ensemble_branches(w)) == pytest.approx(1.0)
    # each basis-state branch passes half the time, averaged over even subsets
    assert 1 - verification_pass_probability(w) == pytest.approx((1 - p) / 2, abs=1e-12)
    assert 1 - verification_pass_probability(w) == pytest.approx(0.058666666666666, abs=1e-12)
    with pytest.raises(ContractViolation):
        werner_p_for_fidelity(0.01, 4)


def test_ideal_passes_always():
    assert verification_pass_probability(Ideal(4)) == pytest.approx(1.0, abs=1e-12)
    assert verification_pass_probability(Ideal(5)) == pytest.approx(1.0, abs=1e-12)


@pytest.mark.parametrize("sigma", [0.0, 0.2, 0.6])
def test_dephasing_fidelity_closed_form_vs_monte_carlo(sigma):
    src = DephasingEnsemble(sigma)
    exact, _ = ensemble_fidelity(src, make_phi0(4))
    rng = np.random.default_rng(11)
    vals = [projector_expectation(emit_round(src, r, rng).state, make_phi0(4)) for r in range(4000)]
    se = np.std(vals) / np.sqrt(len(vals)) + 1e-12
    assert abs(np.mean(vals) - exact) < 4 * se + 1e-9
    if sigma == 0:
        assert exact == pytest.approx(1.0)


def test_fixed_family_schedule_and_side_info():
    labs = (FamilyLabel(FamilyKind.Phi0, 1, 4), FamilyLabel(FamilyKind.Phi1, -1, 4))
    src = FixedFamily(labs, 4)
    e1 = emit_round(src, 3, 0)
    assert e1.side_info == "-Phi1"
    assert equal_up_to_phase(e1.state, make_phi1(4))
    # Phi1 fails the honest test with certainty
    assert verification_pass_probability(src) == pytest.approx(0.5)


@pytest.mark.parametrize(
    "d",
    [
        {"kind": "ideal"},
        {"kind": "werner", "p": 0.5},
        {"kind": "dephasing", "sigma": 0.3},
        {"kind": "fixed", "schedule": [{"kind": "Phi1", "sign": -1}]},
    ],
)
def test_strategy_dict_roundtrip(d):
    s = strategy_from_dict(d)
    assert strategy_from_dict(s.to_dict()) == s


def test_werner_from_fidelity_dict():
    s = strategy_from_dict({"kind": "werner", "fidelity": 0.89})
    assert s.p == pytest.approx(0.8826666666666667)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), r=st.integers(0, 10**6))
def test_emit_round_is_seeded(seed, r):
    src = WernerEnsemble(0.5)
    a, b = emit_round(src, r, seed), emit_round(src, r, seed)
    assert np.array_equal(a.state.amplitudes, b.state.amplitudes)
