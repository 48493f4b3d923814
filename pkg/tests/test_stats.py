import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qvote.seeding import derive_seed, rng_for
from qvote.stats import (
    ProvenanceError,
    Reference,
    StatReport,
    SupportViolation,
    binomial_z,
    homogeneity_test,
    uniformity_test,
    wilson_interval,
    within_sigma,
)


def test_uniformity_accepts_uniform():
    rng = np.random.default_rng(0)
    rep = uniformity_test(rng.integers(0, 8, 50_000), range(8))
    assert rep.ok and rep.p_value > 0.001


def test_uniformity_rejects_skew():
    rng = np.random.default_rng(0)
    x = np.concatenate([rng.integers(0, 8, 50_000), np.zeros(2000, dtype=int)])
    assert uniformity_test(x, range(8)).status == "reject"


def test_support_violation():
    with pytest.raises(SupportViolation):
        uniformity_test([(0, 0), (1, 1), (0, 1)], [(0, 0), (1, 1)])


def test_bit_tuples_and_ints_agree():
    a = uniformity_test([(0, 1), (1, 0), (1, 0)], [(0, 1), (1, 0)])
    b = uniformity_test([1, 2, 2], [1, 2])
    assert a.p_value == pytest.approx(b.p_value)


def test_references_need_provenance():
    Reference(0.87, "published", 0.03)
    with pytest.raises(ProvenanceError):
        Reference(1.0, "guess")
    with pytest.raises(ProvenanceError):
        StatReport("m", 1.0, references=[0.87])
    with pytest.raises(ValueError):
        StatReport("m", 1.0, p_value=1.5)


@settings(max_examples=60, deadline=None)
@given(n=st.integers(1, 5000), data=st.data())
def test_wilson_contains_estimate(n, data):
    k = data.draw(st.integers(0, n))
    lo, hi = wilson_interval(k, n)
    assert 0.0 <= lo <= k / n <= hi <= 1.0


def test_binomial_z():
    assert binomial_z(50, 100, 0.5) == 0.0
    assert binomial_z(60, 100, 0.5) == pytest.approx(2.0)
    assert binomial_z(10, 10, 1.0) == 0.0
    assert within_sigma(1.03, 1.0, 0.01)
    assert not within_sigma(1.031, 1.0, 0.01)


def test_homogeneity():
    rng = np.random.default_rng(1)
    g = rng.integers(0, 3, 9000)
    _, p_indep = homogeneity_test(g, rng.integers(0, 4, 9000))
    _, p_dep = homogeneity_test(g, g + rng.integers(0, 2, 9000))
    assert p_indep > 0.001 and p_dep < 1e-10
    assert homogeneity_test([0, 0], [1, 2]) == (0.0, 1.0)


@settings(max_examples=40)
@given(st.integers(0, 2**63), st.text(max_size=10), st.lists(st.integers(0, 2**31), max_size=3))
def test_derive_seed_deterministic(master, label, idx):
    assert derive_seed(master, label, *idx) == derive_seed(master, label, *idx)
    assert rng_for(master, label, *idx).integers(2**62) == rng_for(master, label, *idx).integers(2**62)


def test_derive_seed_separates_labels():
    seeds = {derive_seed(1, lab, i) for lab in ("a", "b", "coins") for i in range(100)}
    assert len(seeds) == 300
