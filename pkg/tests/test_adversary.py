import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qvote import adversary as adv
from qvote.ghz import FamilyKind, FamilyLabel, make_phi0
from qvote.protocol import Intent, RoundKind, SecurityParams, classify_events, make_profiles, measure_rounds
from qvote.qsim import ContractViolation, LocalGate, StateVector, equal_up_to_phase

from conftest import kron_all

H = LocalGate.Hadamard.matrix
I2 = np.eye(2)


def brute_pass_probability(scenario):
    """Walk every branch, honest basis tuple and outcome string with dense matrices."""
    k = scenario.k
    num = den = 0.0
    for w, side, st_ in scenario.honest_branches:
        if scenario.policy is None:
            reps = {}
        else:
            reps = scenario.policy.table[side]
        h_d = sum(b for b, _ in reps.values())
        y_d = sum(y for _, y in reps.values())
        for bases in itertools.product((0, 1), repeat=k):
            h = sum(bases) + h_d
            if h % 2:
                continue
            probs = np.abs(kron_all([H if b else I2 for b in bases]) @ st_.amplitudes) ** 2
            for idx, p in enumerate(probs):
                ones = bin(idx).count("1") + y_d
                num += w * p * ((h // 2) % 2 == ones % 2)
            den += w
    return num / den


FAMILY_CASES = [(v, s) for v in adv.FAMILY_VARIANTS for s in (1, -1)]


@pytest.mark.parametrize("variant,sign", FAMILY_CASES)
def test_family_attack_passes_with_certainty(variant, sign):
    sc = adv.family_attack(3, 4, variant, sign)
    assert adv.scenario_pass_probability(sc) == pytest.approx(1.0, abs=1e-12)
    assert brute_pass_probability(sc) == pytest.approx(1.0, abs=1e-12)


@pytest.mark.parametrize("q", [0, 1, 2])
def test_family_attack_any_psi0_position(q):
    lab = FamilyLabel(FamilyKind.Psi0, -1, 3, (q,))
    sc = adv.family_attack(3, 4, lab)
    assert adv.scenario_pass_probability(sc) == pytest.approx(1.0, abs=1e-12)


@pytest.mark.parametrize("k,n", [(2, 4), (3, 5), (4, 5)])
def test_family_attack_other_sizes(k, n):
    for v in adv.FAMILY_VARIANTS:
        if v == "psi1" and k < 3:
            continue
        sc = adv.family_attack(k, n, v)
        assert brute_pass_probability(sc) == pytest.approx(1.0, abs=1e-12)


def test_mixed_family_attack():
    sc = adv.scenario_by_name("family-mixed")
    assert len(sc.honest_branches) == 8
    assert adv.scenario_pass_probability(sc) == pytest.approx(1.0, abs=1e-12)


def test_family_attack_needs_colluder():
    with pytest.raises(ContractViolation):
        adv.family_attack(4, 4)


# frozen from exhaustive colluder search (256 report tables)
NAIVE_BEST = {"naive-w": 0.875, "naive-product": 0.625}


@pytest.mark.parametrize("name", sorted(NAIVE_BEST))
def test_naive_attacks_cannot_pass_surely(name):
    sc = adv.scenario_by_name(name)
    p = adv.scenario_pass_probability(sc)
    assert p == pytest.approx(NAIVE_BEST[name], abs=1e-12)
    assert p < 1.0
    assert brute_pass_probability(sc) == pytest.approx(p, abs=1e-12)


def test_best_policy_is_exhaustive_maximum():
    branches = ((1.0, "fixed", adv.w_state(3)),)
    policy, best, coverage = adv.best_policy(branches, (4,))
    assert coverage == 1.0
    for b, y in itertools.product((0, 1), repeat=2):
        p = adv.exact_pass_probability(branches, {"fixed": (b, y)})
        assert p <= best + 1e-12


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**31))
def test_random_honest_part_never_beats_family(seed):
    # a generic 3-qubit honest part is not parity-deterministic, so some report table loses
    rng = np.random.default_rng(seed)
    v = rng.normal(size=8) + 1j * rng.normal(size=8)
    sc = adv.naive_attack(StateVector.from_amplitudes(v, normalize=True))
    assert sc.expected_pass < 1.0 - 1e-6
    assert brute_pass_probability(sc) == pytest.approx(sc.expected_pass, abs=1e-12)


def test_embed_places_honest_part():
    st_ = make_phi0(3)
    full = adv.embed(st_, (0, 1, 2), 4)
    assert equal_up_to_phase(full, st_.tensor(StateVector.basis([0])))
    full = adv.embed(StateVector.basis([1]), (2,), 3)
    assert full.probabilities[0b001] == 1.0


def test_exact_pass_matches_protocol_monte_carlo():
    sc = adv.scenario_by_name("naive-w")
    measured = measure_rounds(sc.source, 8000, 21, sc.policy)
    recs = classify_events(measured, 4, SecurityParams(), 21, sc.policy)
    ver = [r for r in recs if r.kind is RoundKind.Verifying]
    rate = sum(r.passed for r in ver) / len(ver)
    sigma = math.sqrt(0.875 * 0.125 / len(ver))
    assert abs(rate - 0.875) < 3 * sigma


@pytest.mark.parametrize("name", ["family-phi0", "family-psi1", "naive-product"])
def test_discard_parity(name):
    sc = adv.scenario_by_name(name)
    measured = measure_rounds(sc.source, 500, 2, sc.policy)
    recs = classify_events(measured, 4, SecurityParams(), 2, sc.policy)
    assert adv.discard_parity_holds(recs, sc.honest)
    assert any(r.kind is RoundKind.Discarded for r in recs)


def test_mi_estimator_basics():
    rng = np.random.default_rng(0)
    x = rng.integers(0, 3, 20_000)
    assert adv.plugin_mutual_information(x, x) == pytest.approx(math.log2(3), abs=0.01)
    assert adv.plugin_mutual_information(x, rng.integers(0, 4, 20_000)) < 0.002


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 3), st.integers(0, 5)), min_size=1, max_size=200))
def test_mi_nonnegative_and_bounded(pairs):
    x, y = map(np.array, zip(*pairs))
    mi = adv.plugin_mutual_information(x, y)
    assert 0.0 <= mi <= math.log2(len(np.unique(x))) + 1e-9


@pytest.mark.parametrize("name", ["ideal", "family-phi0", "family-phi1-neg", "family-psi0", "family-psi1", "family-mixed"])
@pytest.mark.parametrize("intent", [Intent.E, Intent.F])
def test_exact_view_independent_of_voter(name, intent):
    sc = adv.scenario_by_name(name)
    dists = [adv.exact_view_distribution(sc, v, intent) for v in range(sc.k)]
    for d in dists[1:]:
        assert set(d) == set(dists[0])
        for c in d:
            assert d[c] == pytest.approx(dists[0][c], abs=1e-12)
    assert adv.exact_mutual_information(sc, intent) < 1e-12


def test_planted_leak_exact_mi_frozen():
    sc = adv.planted_leak()
    # frozen from exact enumeration
    assert adv.exact_mutual_information(sc, Intent.F) == pytest.approx(0.6093599710688556, abs=1e-9)
    assert adv.exact_mutual_information(sc, Intent.E) == pytest.approx(0.0, abs=1e-12)


def test_audit_refuses_unsound_scenario():
    with pytest.raises(adv.AuditRefused):
        adv.anonymity_audit(adv.scenario_by_name("naive-w"), trials=100)


def test_audit_small_run_is_seeded():
    sc = adv.scenario_by_name("family-psi0")
    a = adv.anonymity_audit(sc, trials=2000, master_seed=3, bootstrap=20).to_dict()
    b = adv.anonymity_audit(sc, trials=2000, master_seed=3, bootstrap=20).to_dict()
    assert a == b
    assert not a["leak"]
    for arm in a["arms"]:
        lo, hi = arm["mi_ci95"]
        assert 0.0 <= lo <= hi


def test_planted_leak_flagged_small():
    rep = adv.anonymity_audit(adv.planted_leak(), trials=2000, require_verification=False, bootstrap=20)
    assert rep.leak
    f_arm = next(a for a in rep.arms if a.intent is Intent.F)
    assert f_arm.mi_ci[0] <= f_arm.exact_mi_bits + 0.05


def test_scenario_catalog():
    for name in adv.SCENARIOS:
        sc = adv.scenario_by_name(name)
        assert sc.name == name
        assert sc.n == 4
    with pytest.raises(KeyError):
        adv.scenario_by_name("nope")
