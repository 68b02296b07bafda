import numpy as np
import pytest
import sympy as sp
from hypothesis import given, strategies as st

from spinscatter import manifolds as M
from spinscatter.fiber import FiberPair, delta

coord = st.floats(-0.6, 0.6)


@given(coord, coord)
def test_sphere_scalar_curvature_is_two(a, b):
    c = M.curvature(M.round_sphere(), np.array([[a, b]]))
    assert np.allclose(c.scal, 2.0, atol=1e-9)


@given(coord, coord)
def test_hyperbolic_scalar_curvature_is_minus_two(a, b):
    c = M.curvature(M.hyperbolic_disk(2), np.array([[a, b]]))
    assert np.allclose(c.scal, -2.0, atol=1e-8)


@given(st.floats(0, 6.28), st.floats(0, 6.28))
def test_flat_torus_is_flat(a, b):
    c = M.curvature(M.flat_torus(), np.array([[a, b]]))
    assert np.max(np.abs(c.Rud)) == 0.0


def test_hyperbolic_space_form_has_parallel_curvature():
    c = M.curvature(M.hyperbolic_disk(2), np.array([[0.2, -0.3]]))
    assert c.nablaR_norm()[0] < 1e-8


def test_conformal_scalar_curvature_formula():
    # scal of e^{2u} g_flat in 2D is -2 e^{-2u} Lap u
    x1, x2 = sp.symbols("x1 x2", real=True)
    u = sp.sin(x1) * sp.cos(x2) / 5
    m = M.conformal(M.flat_torus(), u)
    p = np.array([[0.4, 1.3]])
    lap = float(sp.diff(u, x1, 2).subs({x1: 0.4, x2: 1.3}) + sp.diff(u, x2, 2).subs({x1: 0.4, x2: 1.3}))
    expected = -2 * np.exp(-2 * float(u.subs({x1: 0.4, x2: 1.3}))) * lap
    assert np.allclose(M.curvature(m, p).scal, expected, rtol=1e-9)


@pytest.mark.parametrize("r", [0.3, 1.0])
def test_ball_volume_quadrature_matches_closed_forms(r):
    for m in (M.hyperbolic_disk(2), M.round_sphere()):
        q = M.ball_volume_quadrature(m, np.array([0.1, 0.05]), r)
        assert abs(q - m.ball_volume_closed(r)) / m.ball_volume_closed(r) < 1e-6


def test_exp_map_preserves_speed_on_sphere():
    m = M.round_sphere()
    x = np.array([0.2, 0.1])
    g = m.metric(x)
    V = np.array([0.3, -0.2])
    y = M.exp_map(m, x, V, steps=64)
    # distance on the unit sphere from the embedded points
    def emb(p):
        q = p @ p
        return np.array([2 * p[0], 2 * p[1], q - 1]) / (1 + q)
    ang = np.arccos(np.clip(emb(x) @ emb(y), -1, 1))
    assert abs(ang - np.sqrt(V @ g @ V)) < 1e-8


def test_parse_expression_rejects_garbage():
    with pytest.raises(ValueError):
        M.parse_expression("sin(x1", 2)


@given(st.floats(0.2, 5.0))
def test_delta_of_constant_diagonal_torus(c):
    m_h = M.diagonal_torus(sp.nsimplify(c), 1)
    p = np.array([[1.0, 2.0]])
    pair = FiberPair(M.flat_torus().metric(p), m_h.metric(p))
    assert np.allclose(delta(pair), 2 * np.sinh(0.5 * abs(np.log(c))), rtol=1e-10)
