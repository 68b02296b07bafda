"""Vectorised verification suites for the Clifford and fiber algebra."""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import fiber as F
from .clifford import N_MIN, build_clifford_rep


@dataclass(frozen=True)
class FiberSampler:
    """Random metric pairs with log10-eigenvalues of g and h uniform in [-spread, spread]."""
    spread: float = 1.0
    jet_scale: float = 1.0

    def spd(self, rng, size, n):
        Q = np.linalg.qr(rng.normal(size=(size, n, n)))[0]
        w = 10.0 ** rng.uniform(-self.spread, self.spread, size=(size, n))
        return (Q * w[:, None, :]) @ np.swapaxes(Q, 1, 2)

    def sym_jet(self, rng, size, n):
        d = rng.normal(scale=self.jet_scale, size=(size, n, n, n))
        return 0.5 * (d + np.swapaxes(d, -1, -2))

    def jets(self, rng, size, n):
        g, h = self.spd(rng, size, n), self.spd(rng, size, n)
        return F.FiberJet.from_arrays(g, h, self.sym_jet(rng, size, n), self.sym_jet(rng, size, n))


@dataclass
class SuiteResult:
    name: str
    n: int
    samples: int
    residuals: dict = field(default_factory=dict)
    tolerance: float = 1e-10
    bound_ratios: dict = field(default_factory=dict)
    violations: dict = field(default_factory=dict)
    seconds: float = 0.0

    @property
    def passed(self):
        return (all(v <= self.tolerance for v in self.residuals.values())
                and all(v == 0 for v in self.violations.values()))

    def as_dict(self):
        return {"suite": self.name, "n": self.n, "samples": self.samples, "tolerance": self.tolerance,
                "residuals": {k: float(v) for k, v in self.residuals.items()},
                "bound_ratios": {k: float(v) for k, v in self.bound_ratios.items()},
                "violations": {k: int(v) for k, v in self.violations.items()},
                "passed": bool(self.passed)}


def clifford_suite(ns=range(N_MIN, 7), tolerance=1e-12):
    out = []
    for n in ns:
        t0 = time.perf_counter()
        rep = build_clifford_rep(n)
        G = rep.gamma_array()
        anti = np.einsum("iab,jbc->ijac", G, G) + np.einsum("jab,ibc->ijac", G, G)
        target = -2.0 * np.eye(n)[:, :, None, None] * np.eye(rep.spinor_dim)
        res = SuiteResult("clifford", n, 1, tolerance=tolerance)
        res.residuals["anticommutation"] = np.max(np.abs(anti - target))
        res.residuals["skew_adjoint"] = np.max(np.abs(G + np.conj(np.swapaxes(G, 1, 2))))
        res.seconds = time.perf_counter() - t0
        out.append(res)
    return out


def _rel(a, b):
    """Per-sample max-abs difference relative to max(1, |a|, |b|)."""
    ax = (-2, -1)
    scale = np.maximum(1.0, np.maximum(np.max(np.abs(a), axis=ax), np.max(np.abs(b), axis=ax)))
    return np.max(np.abs(a - b), axis=ax) / scale


def _selfadjoint_residual(K, G):
    GK = G @ K
    return _rel(GK, F.mH(GK))


def _chunk_checks(rep, jet, rng, fault=None):
    """Residual arrays and (lhs, rhs) bound pairs for one batch of fibers."""
    pair = jet.pair
    n, d = pair.n, rep.spinor_dim
    Gg, Gh = F.gram(pair, "g", d), F.gram(pair, "h", d)
    Id = np.eye(d)
    r, b = {}, {}

    Kg, Kh = F.K_operator(rep, pair, "g", fault=fault), F.K_operator(rep, pair, "h", fault=fault)
    L = F.L_operators(rep, pair)
    for j, K, G, Lj, Ls in (("g", Kg, Gg, L.L_g, L.L_g_star), ("h", Kh, Gh, L.L_h, L.L_h_star)):
        r[f"K_{j} selfadjoint"] = _selfadjoint_residual(K, G)
        r[f"K_{j}^2 = nK_{j}"] = _rel(K @ K, n * K)
        r[f"K_{j} = L*L"] = _rel(K, Ls @ Lj)
        r[f"L_{j}L_{j}* = n Id"] = _rel(Lj @ Ls, n * np.broadcast_to(Id, Kg.shape[:-2] + (d, d)))
        r[f"L_{j}* closed form"] = _rel(Ls, F.L_star_closed_form(rep, pair, j))
    Ah = F.A_prime_tilde(pair, 0.5, d)
    r["K commutation"] = _rel(Ah @ Kg, Kh @ Ah)
    S = F.S_operators(rep, pair)
    r["S-hat commutation"] = _rel(Ah @ S.S_hat_g, S.S_hat_h @ Ah)
    r["L difference"] = _rel(L.L_h_star @ L.L_hg, Kh @ F.A_prime_tilde(pair, -0.5, d) @ Ah)
    r["musical relations"] = F.musical_residual(pair)[..., None, None].max(axis=(-2, -1))
    # U and U-hat map L^2(vol_g) to L^2(vol_h), and vol_h = rho vol_g
    rho = pair.rho[..., None, None]
    U = S.U
    r["U unitary"] = _rel(rho * F.mH(U) @ U, np.broadcast_to(Id, U.shape))
    Uh = S.U_hat
    uh_res = _rel(rho * F.mH(Uh) @ Gh @ Uh, Gg)
    # U-hat is only unitary where S-hat is selfadjoint
    r["U-hat unitary (selfadjoint S-hat)"] = np.where(_selfadjoint_residual(S.S_hat_h, Gh) <= 1e-10, uh_res, 0.0)
    swapped = F.FiberPair(pair.h, pair.g)
    r["rho symmetry"] = np.abs(pair.rho * swapped.rho - 1.0)
    r["delta symmetry"] = np.abs(F.delta(pair) - F.delta(swapped)) / np.maximum(1.0, F.delta(pair))

    dl = F.delta(pair)
    om = F.omega(jet)
    b["|S| <= delta"] = (np.abs(S.S), dl)
    b["|S~_g| <= C1 delta"] = (F.gram_norm(S.S_tilde, Gg, Gg), F.C1(pair) * dl)
    b["|S~_h| <= C1 delta"] = (F.gram_norm(S.S_tilde, Gh, Gh), F.C1(pair) * dl)
    b["|S^_g| <= C2 delta"] = (F.gram_norm(S.S_hat_g, Gg, Gg), F.C2(pair) * dl)
    b["|S^_h| <= C2 delta"] = (F.gram_norm(S.S_hat_h, Gh, Gh), F.C2(pair) * dl)
    b["|T~| <= C3 omega"] = (F.gram_norm(F.T_tilde_hom(rep, jet), None, Gg), F.C3(pair) * om)
    b["|T| <= T-constant omega"] = (F.T_norm(jet), F.T_constant(pair) * om)
    M = F.M_operators(rep, jet)
    b["|M_hg| <= C5 omega"] = (np.linalg.norm(M.M_hg, 2, axis=(-2, -1)), F.C5(pair) * om)
    b["|M_gh| <= C6 omega"] = (np.linalg.norm(M.M_gh, 2, axis=(-2, -1)), F.C6(pair) * om)
    for s, Mat, fn, C in (("+", M.M_hg_plus, F.mabs_sgn_hermitian, F.C7), ("-", M.M_hg_minus, F.mabs_sgn_skew, F.C7),
                          ("+", M.M_gh_plus, F.mabs_sgn_hermitian, F.C8), ("-", M.M_gh_minus, F.mabs_sgn_skew, F.C8)):
        tag = "hg" if C is F.C7 else "gh"
        b[f"|mabs(M{s}_{tag})^1/2| <= {C.__name__} sqrt(omega)"] = (
            np.linalg.norm(fn(Mat)[0], 2, axis=(-2, -1)), C(pair) * np.sqrt(om))
    X = rng.normal(size=pair.batch_shape + (n,))
    lhs = F.g_op_norm(pair, F.nabla_g_A_power(jet, X, -0.5))
    b["nabla-difference bound"] = (lhs, F.nabla_difference_constant(pair) * F.g_op_norm(pair, jet.dGamma(X)))
    return r, b


def fiber_lemma_suite(n, n_fibers=10_000, seed=0, *, sampler=FiberSampler(), chunk=2500,
                      tolerance=1e-10, slack=1e-12, fault=None):
    """Identity residuals and bound-lemma violations over random fibers.

    A bound lhs <= rhs counts as violated when lhs > rhs * (1 + slack) + slack.
    ``fault`` is forwarded to the K operators so the suite can be shown to catch a broken build.
    """
    t0 = time.perf_counter()
    rep = build_clifford_rep(n)
    rng = np.random.default_rng([seed, n])
    res = SuiteResult("fiber", n, n_fibers, tolerance=tolerance)
    for start in range(0, n_fibers, chunk):
        size = min(chunk, n_fibers - start)
        jet = sampler.jets(rng, size, n)
        r, b = _chunk_checks(rep, jet, rng, fault)
        for k, v in r.items():
            res.residuals[k] = max(res.residuals.get(k, 0.0), float(np.max(v)))
        for k, (lhs, rhs) in b.items():
            viol = int(np.count_nonzero(lhs > rhs * (1 + slack) + slack))
            ratio = np.where(rhs > 0, lhs / np.where(rhs > 0, rhs, 1.0), np.where(lhs > slack, np.inf, 0.0))
            res.violations[k] = res.violations.get(k, 0) + viol
            res.bound_ratios[k] = max(res.bound_ratios.get(k, 0.0), float(np.max(ratio)))
    res.seconds = time.perf_counter() - t0
    return res
