import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from spinscatter import stochastic as S
from spinscatter.clifford import build_clifford_rep
from spinscatter.manifolds import flat_torus, round_sphere

X = np.array([0.3, 1.1])
S0 = np.array([1.0, 0.5j])


def mode(k):
    k = np.asarray(k, dtype=float)
    return lambda p: np.exp(1j * (p @ k))[:, None] * S0


def const(p):
    return np.broadcast_to(S0, (len(p), 2)).copy()


def small(**kw):
    base = dict(t=0.2, n_steps=16, n_paths=400, seed=3)
    return S.PathConfig(**(base | kw))


@pytest.mark.parametrize("bad", [dict(t=-1.0), dict(n_steps=8), dict(n_paths=0), dict(scheme="euler"),
                                 dict(n_paths=401, antithetic=True)])
def test_path_config_validation(bad):
    with pytest.raises(ValueError):
        small(**bad)


@given(st.integers(0, 2 ** 31 - 1), st.lists(st.integers(0, 10 ** 6), min_size=1, max_size=5, unique=True))
def test_path_normals_depend_only_on_seed_and_index(seed, idx):
    a = S.path_normals(seed, idx, 4, 2)
    b = np.stack([S.path_normals(seed, [i], 4, 2)[0] for i in idx])
    assert np.array_equal(a, b)


@given(st.integers(0, 2 ** 31 - 1), st.integers(0, 1000))
def test_antithetic_pairs_are_opposite(seed, j):
    xi = S.path_normals(seed, [2 * j, 2 * j + 1], 4, 2, antithetic=True)
    assert np.array_equal(xi[0], -xi[1])


def test_results_independent_of_chunking_and_workers():
    a = S.feynman_kac(mode([1, 1]), X, small(chunk=64), flat_torus())
    b = S.feynman_kac(mode([1, 1]), X, small(chunk=400, workers=2), flat_torus())
    assert np.array_equal(a.estimate, b.estimate)
    assert np.array_equal(a.standard_error, b.standard_error)


def test_constant_spinor_feynman_kac_has_zero_variance():
    r = S.feynman_kac(const, X, small(), flat_torus())
    assert np.max(np.abs(r.estimate - S0)) < 1e-15
    assert np.max(np.abs(r.standard_error)) == 0.0


@pytest.mark.parametrize("est", [S.bismut_gradient, S.bismut_dirac])
def test_constant_spinor_bismut_is_exact_with_antithetic_pairs(est):
    r = est(const, X, small(antithetic=True), flat_torus())
    assert np.max(np.abs(r.estimate)) == 0.0


def test_flat_mode_feynman_kac():
    k = np.array([1.0, -2.0])
    r = S.feynman_kac(mode(k), X, small(n_paths=2000), flat_torus())
    assert np.max(r.z_scores(np.exp(-0.2 * k @ k) * mode(k)(X[None])[0])) <= 3


def test_flat_mode_bismut_dirac():
    k = np.array([1.0, 0.0])
    G = build_clifford_rep(2).gamma_array()
    ref = np.exp(-0.2) * mode(k)(X[None])[0]
    r = S.bismut_dirac(mode(k), X, small(n_paths=2000), flat_torus())
    assert np.max(r.z_scores(sum(1j * k[a] * G[a] @ ref for a in range(2)))) <= 3


def test_literal_display_doubles_the_gradient():
    k = np.array([1.0, 0.0])
    cfg = small(n_paths=200, antithetic=True)
    a = S.bismut_gradient(mode(k), X, cfg, flat_torus())
    b = S.bismut_gradient(mode(k), X, cfg, flat_torus(), literal_display=True)
    assert np.allclose(b.estimate, 2 * a.estimate)


def test_sphere_weak_order_is_one():
    e = S.sphere_weak_errors(0.5, (16, 32, 64))
    slopes = np.log2(e[:-1] / e[1:])
    assert np.all((slopes > 1 / 1.6) & (slopes < 1.6))


def test_hilbert_schmidt_closed_form_on_torus():
    r = S.hs_norm_estimate(1.0, "P", flat_torus(), 0.3, N=16)
    assert abs(r.frobenius - r.spectral) <= 1e-8 * r.spectral


@settings(max_examples=4)
@given(st.floats(0.3, 1.0))
def test_kato_simon_on_sphere(t):
    assert S.kato_simon_check(round_sphere(), t).passed
