import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from spinscatter import criteria as C


def bump(A, R=2.0, **kw):
    return C.MetricPairSpec.from_dict({"base": "hyperbolic_disk_2",
                                      "perturbation": {"kind": "bump", "amplitude": A, "radius": R}} | kw)


def einstein(s0=0.5, S=1.0):
    return C.RicciFlowSpec.from_dict({"family": {"kind": "einstein", "base": "hyperbolic_disk_2", "lambda": -1},
                                      "kappa": -2, "s0": s0, "S": S})


@pytest.mark.parametrize("base", ["hyperbolic_disk_2", "euclidean_2", "round_sphere"])
@pytest.mark.parametrize("which", [1, 2])
def test_identical_metrics_give_zero(base, which):
    r = C.evaluate_main_criterion(C.MetricPairSpec(base, {"kind": "identity"}), which)
    assert r.value == 0.0 and r.verdict == C.SATISFIED


def test_psi1_grows_with_amplitude():
    vals = [C.evaluate_main_criterion(bump(A), 1).value for A in (0.1, 0.25, 0.5)]
    assert vals[0] < vals[1] < vals[2]


def test_tolerance_halving_is_stable():
    a = C.evaluate_main_criterion(bump(0.5), 1, tol=1e-4)
    b = C.evaluate_main_criterion(bump(0.5), 1, tol=5e-5)
    assert abs(a.value - b.value) <= 1e-4 * abs(a.value)


def test_constant_diagonal_torus_closed_form():
    # delta and t fixed, omega = 0, Psi_g = 1: integral = |T^2| max(delta^2, delta) / (pi t)
    s = C.MetricPairSpec.from_dict({"base": "flat_torus_2", "symmetry": "general", "t": 0.5,
                                    "perturbation": {"kind": "diagonal", "a11": "2", "a22": "1"}})
    d = 2 * np.sinh(0.5 * np.log(2))
    r = C.evaluate_main_criterion(s, 1)
    assert r.value == pytest.approx(4 * np.pi * max(d * d, d) / 0.5, rel=1e-12)


@given(st.floats(1.1, 5.0))
@settings(max_examples=5)
def test_homothety_flagged_divergent(c):
    s = C.MetricPairSpec("hyperbolic_disk_2", {"kind": "homothety", "c": c})
    r = C.evaluate_main_criterion(s, 1)
    assert r.divergent and r.verdict == C.VIOLATED
    vol = 2 * np.pi * (np.cosh(1.0) - 1)
    assert r.details["lower_bound"] == pytest.approx(2 * np.sinh(0.5 * np.log(c)) / vol, rel=1e-9)


def test_homothety_on_compact_base_is_finite():
    s = C.MetricPairSpec("round_sphere", {"kind": "homothety", "c": 2.0})
    r = C.evaluate_main_criterion(s, 1)
    assert not r.divergent and np.isfinite(r.value)


@pytest.mark.parametrize("data, field", [
    ({"perturbation": {"kind": "bump"}}, "base"),
    ({"base": "klein_bottle"}, "base"),
    ({"base": "hyperbolic_disk_2", "perturbation": {"kind": "wiggle"}}, "perturbation.kind"),
    ({"base": "hyperbolic_disk_2", "t": -1}, "t"),
    ({"base": "hyperbolic_disk_2", "n_ball": 10}, "n_ball"),
    ({"base": "flat_torus_2", "perturbation": {"kind": "diagonal", "a11": "2", "a22": "1"}}, "symmetry"),
])
def test_malformed_spec_names_the_field(data, field):
    with pytest.raises(C.SpecError) as exc:
        C.MetricPairSpec.from_dict(data)
    assert exc.value.field.startswith(field)


def test_satisfied_report_needs_passing_hypotheses():
    with pytest.raises(ValueError):
        C.CriterionReport("x", "Theorem main a)", 1, 1.0, 0.0, False, None, "m",
                          [C.HypothesisItem("h", "fail", None, "")], C.SATISFIED, "", [], {})


@given(st.floats(0.05, 0.9))
@settings(max_examples=5)
def test_einstein_ricci_bound_closed_form(s0):
    spec = einstein(s0=s0, S=1.0)
    x = np.array([[0.1, 0.2], [-0.3, 0.05]])
    A, B = C.ricci_flow_bounds(spec, x)
    As, Bs = C.ricci_flow_bounds(spec, x, method="sampled")
    assert np.allclose(A, 1 / (1 + 2 * s0))
    assert np.allclose(As, A, rtol=1e-8) and np.all(Bs < 1e-10) and np.all(B == 0)


def test_einstein_flow_diverges_on_hyperbolic_plane():
    r = C.evaluate_ricci_criterion(einstein(), "b")
    assert r.divergent and r.verdict == C.VIOLATED


def test_einstein_flow_must_stay_positive():
    with pytest.raises(C.SpecError) as exc:
        C.RicciFlowSpec.from_dict({"family": {"kind": "einstein", "base": "round_sphere", "lambda": 1},
                                   "kappa": -2, "s0": 0.1, "S": 1.0}).flow
    assert exc.value.field == "S"


def test_static_identity_flow_vanishes():
    spec = C.RicciFlowSpec.from_dict({"family": {"kind": "static", "perturbation": {"kind": "identity"}},
                                      "kappa": 0, "s0": 0.5, "S": 1.0})
    r = C.evaluate_ricci_criterion(spec, "b")
    assert r.value == 0.0 and r.verdict == C.SATISFIED


def test_flow_table_roundtrip_and_kappa_check():
    t = C.ConformalFlowTable.load("conformal_flow_t2")
    assert t.S == pytest.approx(0.5)
    with pytest.raises(C.SpecError):
        C.RicciFlowSpec.from_dict({"family": {"kind": "tabulated"}, "kappa": -1, "s0": 0.1, "S": 0.5}).flow


def test_tabulated_flow_satisfies_the_flow_equation():
    spec = C.RicciFlowSpec.from_dict({"family": {"kind": "tabulated"}, "kappa": -2, "s0": 0.1, "S": 0.5})
    items = {h.name: h for h in C._flow_hypotheses(spec)}
    assert items["(ii) dg/ds = kappa Ric"].status == "pass"
