import numpy as np
import pytest
import sympy as sp
from hypothesis import given, settings, strategies as st

from spinscatter import manifolds as M
from spinscatter import reference as R

x1, x2 = sp.symbols("x1 x2", real=True)


@pytest.fixture(scope="module")
def flat16():
    return R.build_torus_dirac(M.flat_torus(), 16)


@pytest.fixture(scope="module")
def constant16():
    return R.build_torus_dirac(M.flat_torus(), 16, M.diagonal_torus(sp.Rational(6, 5), sp.Rational(4, 5)))


@pytest.fixture(scope="module")
def conformal16():
    return R.build_torus_dirac(M.flat_torus(), 16, M.conformal(M.flat_torus(), sp.sin(x1) * sp.sin(x2) / 10))


def test_flat_spectrum_closed_form(flat16):
    assert np.max(np.abs(np.sort(flat16.spectrum("g")) - R.flat_spectrum(16))) < 1e-10


def test_constant_metric_spectrum(constant16):
    ev = np.sort(constant16.spectrum("h"))
    assert np.max(np.abs(ev - R.flat_spectrum(16, A=np.diag([1.2, 0.8])))) < 1e-10


def test_dirac_is_symmetric(conformal16):
    assert conformal16.hermiticity_defect("h") < 1e-12


def test_lichnerowicz(conformal16):
    assert R.lichnerowicz_residual(conformal16, "h") < 1e-8


def test_identification_identities(conformal16):
    assert max(R.identification_identities(conformal16).values()) < 1e-10


@settings(max_examples=5)
@given(st.floats(0.01, 1.0))
def test_semigroup_is_a_contraction(t):
    ops = R.build_torus_dirac(M.flat_torus(), 8)
    P = R.semigroup(ops, "g", t)
    assert np.linalg.norm(P, 2) <= 1 + 1e-12


def test_semigroup_property(flat16):
    P1, P2 = R.semigroup(flat16, "g", 0.1), R.semigroup(flat16, "g", 0.2)
    assert np.allclose(P1 @ P1, P2, atol=1e-12)


@pytest.mark.parametrize("which", ["I", "II"])
def test_hpw_constant_pair(constant16, which):
    assert R.verify_hpw(constant16, which, 0.1).residual <= 1e-8


@pytest.mark.parametrize("which", ["I", "II"])
def test_hpw_identical_pair_vanishes(flat16, which):
    r = R.verify_hpw(flat16, which, 0.1)
    assert r.residual <= 1e-12 or np.max(np.abs(r.lhs)) < 1e-14


@pytest.mark.parametrize("which", ["I", "II"])
def test_hpw_factorisation_terms(conformal16, which):
    r = R.verify_hpw(conformal16, which, 0.1)
    assert max(v for k, v in r.factor_checks.items() if k != "discretisation") < 1e-10


def test_hpw_rejects_bad_arguments(flat16):
    with pytest.raises(ValueError):
        R.verify_hpw(flat16, "III", 0.1)
    with pytest.raises(ValueError):
        R.verify_hpw(flat16, "I", -1.0)


@pytest.mark.slow
@pytest.mark.parametrize("which", ["I", "II"])
def test_hpw_conformal_pair_at_32(which):
    ops = R.build_torus_dirac(M.flat_torus(), 32, M.conformal(M.flat_torus(), sp.sin(x1) * sp.sin(x2) / 10))
    assert R.verify_hpw(ops, which, 0.1).residual <= 1e-5
