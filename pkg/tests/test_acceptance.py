"""Acceptance criteria 1-9, one printed PASS/FAIL line each (also collected in the terminal summary)."""
import time

import numpy as np
import pytest
import sympy as sp

from spinscatter import cli, criteria as C, stochastic as S
from spinscatter import manifolds as M, reference as R
from spinscatter.clifford import build_clifford_rep
from spinscatter.sphere import SphereGalerkin
from spinscatter.suites import clifford_suite, fiber_lemma_suite

T_FLAT, X_FLAT = 0.2, np.array([0.3, 1.1])
MODES = [((1, 0), (1, 0)), ((0, 1), (0, 1)), ((1, -2), (1, 0.5j)), ((2, 1), (0.5, -1j)), ((-1, -1), (1, 1))]
T_SPH = 0.3
X_SPH = np.array([0.3, -0.5, 0.8]) / np.linalg.norm([0.3, -0.5, 0.8])
SPHERE_FIELDS = [
    lambda p: np.stack([1 + p[..., 0] * p[..., 2] + 0.5j * p[..., 1], p[..., 2] ** 2 - 0.3j * p[..., 0]], -1),
    lambda p: np.stack([p[..., 0] - 1j * p[..., 2], 0.5 + p[..., 1] + 0j], -1),
]
ESTIMATORS = ("feynman_kac", "bismut_gradient", "bismut_dirac")


def _zmax(rep, ref):
    return float(np.max(rep.z_scores(ref)))


@pytest.fixture(scope="module")
def flat_battery():
    """max |z| per estimator over the Fourier-mode battery (10^4 paths, 256 steps)."""
    G = build_clifford_rep(2).gamma_array()
    cfg = S.PathConfig(t=T_FLAT, n_steps=256, n_paths=10_000, seed=0)
    m = M.flat_torus()
    z = {e: 0.0 for e in ESTIMATORS}
    t0 = time.perf_counter()
    for k, s0 in MODES:
        k, s0 = np.array(k, dtype=float), np.array(s0, dtype=complex)
        psi = lambda p, k=k, s0=s0: np.exp(1j * (p @ k))[:, None] * s0
        ref = np.exp(-T_FLAT * k @ k) * np.exp(1j * X_FLAT @ k) * s0
        refs = {"feynman_kac": ref,
                "bismut_gradient": np.concatenate([1j * k[0] * ref, 1j * k[1] * ref]),
                "bismut_dirac": 1j * k[0] * G[0] @ ref + 1j * k[1] * G[1] @ ref}
        for e in ESTIMATORS:
            z[e] = max(z[e], _zmax(getattr(S, e)(psi, X_FLAT, cfg, m), refs[e]))
    return z, time.perf_counter() - t0


@pytest.fixture(scope="module")
def sphere_battery():
    """max |z| per estimator against the Galerkin (dense matrix) oracle on the unit sphere."""
    G = SphereGalerkin(L=8)
    be = S.SphereBackend()
    cfg = S.PathConfig(t=T_SPH, n_steps=64, n_paths=10_000, seed=0)
    u0 = S.init_state(be, X_SPH, 1).u0
    z = {e: 0.0 for e in ESTIMATORS}
    t0 = time.perf_counter()
    for f in SPHERE_FIELDS:
        c = G.project(f)
        ct = G.heat(T_SPH, c)
        psi = lambda p, c=c: G.spinor_values(c, p)
        refs = {"feynman_kac": G.spinor_values(ct, X_SPH),
                "bismut_gradient": np.concatenate([G.covariant_derivative(ct, X_SPH, u0[:, a]) for a in range(2)]),
                "bismut_dirac": G.spinor_values(G.dirac_coef(ct), X_SPH)}
        for e in ESTIMATORS:
            z[e] = max(z[e], _zmax(getattr(S, e)(psi, X_SPH, cfg, be), refs[e]))
    return z, time.perf_counter() - t0


def test_criterion_1_clifford_suite(acceptance):
    t0 = time.perf_counter()
    res = clifford_suite(range(2, 7))
    dt = time.perf_counter() - t0
    worst = max(max(r.residuals.values()) for r in res)
    ok = worst <= 1e-12 and dt <= 5
    assert acceptance(1, ok, f"n = 2..6, max residual {worst:.1e}, {dt:.2f} s")


def test_criterion_2_fiber_lemma_suite(acceptance):
    t0 = time.perf_counter()
    res = [fiber_lemma_suite(n, 10_000, seed=0) for n in (2, 3, 4)]
    dt = time.perf_counter() - t0
    worst = max(max(r.residuals.values()) for r in res)
    viol = sum(sum(r.violations.values()) for r in res)
    ok = all(r.passed for r in res) and worst <= 1e-10 and viol == 0 and dt <= 60
    assert acceptance(2, ok, f"3 x 10^4 fibers, max residual {worst:.1e}, {viol} violations, {dt:.1f} s")


def test_criterion_3_hpw_identities(acceptance):
    t0 = time.perf_counter()
    T = M.flat_torus()
    const = R.build_torus_dirac(T, 16, M.diagonal_torus(sp.Rational(6, 5), sp.Rational(4, 5)))
    rc = max(R.verify_hpw(const, w, 0.1).residual for w in ("I", "II"))
    x1, x2 = sp.symbols("x1 x2", real=True)
    h = M.conformal(T, sp.sin(x1) * sp.sin(x2) / 10)
    seq = {w: [] for w in ("I", "II")}
    for N in (16, 32, 64):
        ops = R.build_torus_dirac(T, N, h)
        for w in seq:
            seq[w].append(R.verify_hpw(ops, w, 0.1).residual)
    dt = time.perf_counter() - t0
    floor = 1e-12
    mono = all(b <= max(a, floor) for s in seq.values() for a, b in zip(s, s[1:]))
    r32 = max(s[1] for s in seq.values())
    ok = rc <= 1e-8 and r32 <= 1e-5 and mono and dt <= 600
    detail = (f"constant pair {rc:.1e}; conformal N=32 {r32:.1e}; "
              f"I {', '.join(f'{v:.1e}' for v in seq['I'])}; II {', '.join(f'{v:.1e}' for v in seq['II'])}; "
              f"monotone to floor {floor:.0e}: {mono}; {dt:.0f} s")
    assert acceptance(3, ok, detail)


def test_criterion_4_feynman_kac(acceptance, flat_battery, sphere_battery):
    t0 = time.perf_counter()
    errs = S.sphere_weak_errors(0.5, (16, 32, 64))
    slopes = np.log2(errs[:-1] / errs[1:])
    slope_ok = bool(np.all((slopes >= 1 / 1.6) & (slopes <= 1.6)))
    dt = time.perf_counter() - t0 + flat_battery[1] / 3 + sphere_battery[1] / 3
    zf, zs = flat_battery[0]["feynman_kac"], sphere_battery[0]["feynman_kac"]
    ok = zf <= 3 and zs <= 3 and slope_ok and dt <= 600
    assert acceptance(4, ok, f"T^2 max|z| {zf:.2f}, S^2 max|z| {zs:.2f}, weak-order slopes "
                             f"{', '.join(f'{s:.3f}' for s in slopes)}, ~{dt:.0f} s")


def test_criterion_5_bismut(acceptance, flat_battery, sphere_battery):
    z = max(flat_battery[0][e] for e in ESTIMATORS[1:])
    zs = max(sphere_battery[0][e] for e in ESTIMATORS[1:])
    cfg = S.PathConfig(t=0.5, n_steps=64, n_paths=2000, seed=0, antithetic=True)
    s0 = np.array([1.0, 0.5j])
    const = lambda p: np.broadcast_to(s0, (len(p), 2)).copy()
    exact = max(float(np.max(np.abs(S.bismut_gradient(const, X_FLAT, cfg, M.flat_torus()).estimate))),
                float(np.max(np.abs(S.bismut_dirac(const, X_FLAT, cfg, M.flat_torus()).estimate))),
                float(np.max(np.abs(S.feynman_kac(const, X_FLAT, cfg, M.flat_torus()).estimate - s0))))
    dt = 2 * (flat_battery[1] + sphere_battery[1]) / 3
    ok = z <= 3 and zs <= 3 and exact <= 1e-14 and dt <= 900
    assert acceptance(5, ok, f"T^2 max|z| {z:.2f}, S^2 max|z| {zs:.2f}, constant-spinor error {exact:.1e}, "
                             f"~{dt:.0f} s")


def test_criterion_6_kato_simon(acceptance):
    rt = S.kato_simon_check(M.flat_torus(), 0.3, N=16)
    rs = S.kato_simon_check(M.round_sphere(), 0.3)
    ok = rt.max_ratio <= 1 + 1e-6 and rs.max_ratio <= 1 + 1e-6
    assert acceptance(6, ok, f"max ratio T^2 {rt.max_ratio:.8f}, S^2 {rs.max_ratio:.6f}")


def test_criterion_7_hilbert_schmidt(acceptance):
    t, N = 0.3, 16
    r = S.hs_norm_estimate(1.0, "P", M.flat_torus(), t, N=N)
    k = np.fft.fftfreq(N, 1.0 / N)
    closed = np.sqrt(2 * np.sum(np.exp(-2 * t * (k[:, None] ** 2 + k[None, :] ** 2))))
    rel = abs(r.frobenius - closed) / closed
    assert acceptance(7, rel <= 1e-8, f"|HS - closed form| / closed form = {rel:.1e}")


def test_criterion_8_criterion_targets(acceptance):
    spec = C.MetricPairSpec.from_dict({k: v for k, v in cli.load_spec("hyperbolic_bump")[0].items()
                                       if k != "which"})
    rel = {}
    for w in (1, 2):
        rep = C.evaluate_main_criterion(spec, w)
        oracle = C.fixed_grid_oracle(spec, w, panels=48)
        rel[w] = abs(rep.value - oracle) / abs(oracle) if np.isfinite(rep.value) else np.inf
        rel[w] = rel[w] if rep.verdict == C.SATISFIED else np.inf
    hom = C.MetricPairSpec.from_dict({k: v for k, v in cli.load_spec("hyperbolic_homothety")[0].items()
                                      if k != "which"})
    ein = C.RicciFlowSpec.from_dict({k: v for k, v in cli.load_spec("einstein_flow_h2")[0].items()
                                     if k != "which"})
    div = (C.evaluate_main_criterion(hom, 1).divergent and C.evaluate_ricci_criterion(ein, "b").divergent)
    chains = {}
    for name in ("einstein_flow_h2", "conformal_flow_t2", "static_torus_bump_flow"):
        fs = C.RicciFlowSpec.from_dict({k: v for k, v in cli.load_spec(name)[0].items() if k != "which"})
        chains[name] = C.omega_vs_B_check(fs).max_ratio
    ok = max(rel.values()) <= 1e-3 and div and max(chains.values()) <= 1
    assert acceptance(8, ok, f"oracle rel. diff Psi1 {rel[1]:.1e}, Psi2 {rel[2]:.1e}; divergence flags {div}; "
                             f"proof-chain max ratio {max(chains.values()):.3f}")


def test_criterion_9_determinism(acceptance, tmp_path, capsys):
    runs = [("stochastic", "--spec", "flat_torus_battery", "--paths", "1000", "--workers", "2"),
            ("stochastic", "--spec", "constant_spinor_battery", "--workers", "2"),
            ("criterion", "--spec", "hyperbolic_bump", "--which", "1"),
            ("verify-algebra", "--n", "2,3", "--fibers", "500")]
    same = True
    for i, argv in enumerate(runs):
        blobs = []
        for rep in range(2):
            d = tmp_path / f"{i}-{rep}"
            cli.main(list(argv) + ["--format", "jsonl", "--out", str(d), "--seed", "11"])
            blobs.append(b"".join(p.read_bytes() for p in sorted(d.glob("*.jsonl"))))
        same &= blobs[0] == blobs[1] and len(blobs[0]) > 0
    capsys.readouterr()
    assert acceptance(9, same, f"{len(runs)} commands run twice, parallel MC with 2 workers, byte-identical: {same}")
