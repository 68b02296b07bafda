import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.linalg import expm

from spinscatter.clifford import (N_MAX, N_MIN, build_clifford_rep, clifford_mul, project_to_clifford,
                                  spin_lift)
from spinscatter.suites import clifford_suite

dims = st.integers(N_MIN, N_MAX)


def skew(rng, n):
    a = rng.normal(size=(n, n))
    return a - a.T


@given(dims)
def test_gammas_anticommute_to_minus_two(n):
    G = build_clifford_rep(n).gamma_array()
    d = G.shape[-1]
    for i in range(n):
        for j in range(n):
            ac = G[i] @ G[j] + G[j] @ G[i]
            assert np.allclose(ac, -2.0 * (i == j) * np.eye(d), atol=1e-14)


@given(dims)
def test_gammas_are_skew_hermitian(n):
    G = build_clifford_rep(n).gamma_array()
    assert np.max(np.abs(G + np.conj(np.swapaxes(G, 1, 2)))) == 0.0


@given(dims)
def test_spinor_dimension(n):
    assert build_clifford_rep(n).spinor_dim == 2 ** (n // 2)


@given(dims, st.integers(0, 2 ** 31 - 1))
def test_vector_squares_to_minus_norm(n, seed):
    rep = build_clifford_rep(n)
    v = np.random.default_rng(seed).normal(size=n)
    s = np.random.default_rng(seed + 1).normal(size=rep.spinor_dim) + 0j
    assert np.allclose(clifford_mul(rep, v, clifford_mul(rep, v, s)), -(v @ v) * s)


@given(st.integers(N_MIN, 6), st.integers(0, 2 ** 31 - 1))
def test_quarter_projection_is_infinitesimal_spin_lift(n, seed):
    rng = np.random.default_rng(seed)
    rep = build_clifford_rep(n)
    E, v = skew(rng, n), rng.normal(size=n)
    X = 0.25 * project_to_clifford(rep, E)
    assert np.allclose(X @ rep.vec(v) - rep.vec(v) @ X, rep.vec(E @ v), atol=1e-12)


@given(st.integers(N_MIN, 6), st.integers(0, 2 ** 31 - 1))
def test_spin_lift_covers_rotation(n, seed):
    rng = np.random.default_rng(seed)
    rep = build_clifford_rep(n)
    E, v = 0.5 * skew(rng, n), rng.normal(size=n)
    S = spin_lift(rep, E)
    assert np.allclose(S @ S.conj().T, np.eye(rep.spinor_dim), atol=1e-12)
    assert np.allclose(S @ rep.vec(v) @ np.linalg.inv(S), rep.vec(expm(E) @ v), atol=1e-10)


def test_two_dimensional_projection_value():
    rep = build_clifford_rep(2)
    G = rep.gamma_array()
    E = np.array([[0.0, -1.0], [1.0, 0.0]])
    assert np.allclose(project_to_clifford(rep, E), 2 * G[0] @ G[1])


def test_three_dimensional_volume_element():
    rep = build_clifford_rep(3)
    w = rep.volume_element()
    assert np.allclose(w @ w, np.eye(2))
    herm = [-1j * g for g in rep.gammas]
    prod = herm[0] @ herm[1] @ herm[2]
    assert np.allclose(prod, 1j * np.eye(2)) or np.allclose(prod, -1j * np.eye(2))


def test_non_skew_input_rejected():
    with pytest.raises(ValueError):
        project_to_clifford(build_clifford_rep(2), np.eye(2))


@pytest.mark.parametrize("n", [0, 1, 9, 2.5])
def test_bad_dimension_rejected(n):
    with pytest.raises(ValueError):
        build_clifford_rep(n)


def test_clifford_suite_is_exact():
    res = clifford_suite(range(2, 7))
    assert all(r.passed for r in res)
    assert max(max(r.residuals.values()) for r in res) <= 1e-12
