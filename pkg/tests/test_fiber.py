import numpy as np
import pytest
from hypothesis import given, strategies as st

from spinscatter import fiber as F
from spinscatter.clifford import build_clifford_rep
from spinscatter.suites import FiberSampler, fiber_lemma_suite

seeds = st.integers(0, 2 ** 31 - 1)
dims = st.integers(2, 4)


def pair_of(seed, n, size=8, spread=1.0):
    rng = np.random.default_rng(seed)
    s = FiberSampler(spread=spread)
    return F.FiberPair(s.spd(rng, size, n), s.spd(rng, size, n))


@given(seeds, dims)
def test_delta_vanishes_iff_metrics_agree(seed, n):
    p = pair_of(seed, n)
    assert np.all(F.delta(F.FiberPair(p.g, p.g)) < 1e-12)
    assert np.all(F.delta(p) > 0)


@given(seeds, dims)
def test_delta_and_rho_under_swap(seed, n):
    p = pair_of(seed, n)
    q = F.FiberPair(p.h, p.g)
    assert np.allclose(F.delta(p), F.delta(q), rtol=1e-10)
    assert np.allclose(p.rho * q.rho, 1.0, rtol=1e-10)


@given(seeds, dims, st.floats(0.1, 10.0))
def test_homothety_delta_closed_form(seed, n, c):
    p = pair_of(seed, n)
    q = F.FiberPair(p.g, c * p.g)
    assert np.allclose(F.delta(q), 2 * np.sinh(0.25 * n * abs(np.log(c))), rtol=1e-10)
    assert np.allclose(q.rho, c ** (n / 2), rtol=1e-10)


@given(seeds, dims)
def test_A_is_g_selfadjoint_and_reproduces_h(seed, n):
    p = pair_of(seed, n)
    assert np.allclose(p.g @ p.A, p.h, atol=1e-9 * np.max(np.abs(p.h)))
    assert np.allclose(p.power(0.5) @ p.power(0.5), p.A, rtol=1e-9, atol=1e-9)


@given(seeds, dims)
def test_K_is_gram_selfadjoint_with_K2_equal_nK(seed, n):
    rep = build_clifford_rep(n)
    p = pair_of(seed, n)
    d = rep.spinor_dim
    for which in "gh":
        K = F.K_operator(rep, p, which)
        G = F.gram(p, which, d)
        GK = G @ K
        assert np.max(np.abs(GK - F.mH(GK))) <= 1e-9 * max(1.0, np.max(np.abs(GK)))
        assert np.allclose(K @ K, n * K, atol=1e-9 * max(1.0, np.max(np.abs(K))))


@given(seeds, dims)
def test_L_adjoint_identities(seed, n):
    rep = build_clifford_rep(n)
    p = pair_of(seed, n)
    L = F.L_operators(rep, p)
    d = rep.spinor_dim
    assert np.allclose(L.L_g @ L.L_g_star, n * np.eye(d), atol=1e-9)
    assert np.allclose(L.L_h_star @ L.L_h, F.K_operator(rep, p, "h"), atol=1e-9 * max(1, np.max(np.abs(L.L_h_star))))


@given(seeds, dims)
def test_pointwise_S_bound(seed, n):
    p = pair_of(seed, n)
    S = F.S_operators(build_clifford_rep(n), p)
    assert np.all(np.abs(S.S) <= F.delta(p) * (1 + 1e-12) + 1e-12)


def test_sign_flip_fault_is_detected():
    res = fiber_lemma_suite(3, 200, fault="K-sign-flip")
    assert not res.passed
    assert res.residuals["K_g selfadjoint"] > 1e-3


def test_unknown_fault_rejected():
    p = pair_of(0, 2)
    with pytest.raises(ValueError):
        F.K_operator(build_clifford_rep(2), p, fault="nope")


def test_non_spd_metric_rejected():
    with pytest.raises(ValueError):
        F.FiberPair(np.diag([1.0, -1.0]), np.eye(2))


@pytest.mark.parametrize("n", [2, 3])
def test_small_lemma_suite_has_no_violations(n):
    res = fiber_lemma_suite(n, 500, seed=1)
    assert res.passed, (res.residuals, res.violations)


def test_lemma_suite_is_reproducible():
    a = fiber_lemma_suite(2, 300, seed=5).as_dict()
    b = fiber_lemma_suite(2, 300, seed=5).as_dict()
    assert a == b
