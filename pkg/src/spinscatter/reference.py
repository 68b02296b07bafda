"""Spectral reference solvers on the 2-torus.

Spinor fields are periodic C^d-valued grid functions in components over the
spin frame of ``E_g = g^{-1/2}`` (g side) or ``E_h = A^{-1/2} E_g`` (h side),
so the identification I is the identity on components.  Derivatives are
Fourier collocation with the Nyquist wavenumber taken as ``-N/2``.

Grid fields carry shape ``(..., N, N, d)`` (spinors) or ``(..., N, N, n*d)``
(covector-valued spinors, flattened as in :mod:`spinscatter.fiber`).
"""
from __future__ import annotations

import hashlib
import json
import warnings
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from numpy.polynomial import chebyshev as cheb
from scipy.linalg import block_diag, eigh

from . import fiber as F
from .clifford import project_to_clifford
from .manifolds import ModelManifold, curvature

DENSE_MAX = 32
TWO_PI = 2 * np.pi


class AliasingWarning(UserWarning):
    pass


def wavenumbers(N, period=TWO_PI):
    return np.fft.fftfreq(N, 1.0 / N) * (TWO_PI / period)


def derivative_matrix_1d(N, period=TWO_PI):
    """Dense Fourier collocation derivative (skew-Hermitian because the Nyquist mode keeps k = -N/2)."""
    k = wavenumbers(N, period)
    return np.fft.ifft(1j * k[:, None] * np.fft.fft(np.eye(N), axis=0), axis=0)


def _check_torus(m: ModelManifold):
    if m.n != 2 or m.domain.kind != "torus":
        raise ValueError(f"{m.name}: a model on the 2-torus is required")
    return float(m.domain.periods[0])


def _aliasing_check(name, field_grid, N):
    """Warn when a coefficient field carries energy in the top third of the resolved modes."""
    c = np.fft.fft2(field_grid.reshape(N, N, -1), axes=(0, 1))
    k = np.abs(np.fft.fftfreq(N, 1.0 / N))
    top = (k[:, None] > N / 3) | (k[None, :] > N / 3)
    total = np.sum(np.abs(c) ** 2)
    if total > 0 and np.sum(np.abs(c[top]) ** 2) > 1e-16 * total:
        warnings.warn(f"{name}: metric spectrum reaches the top third of the N={N} modes", AliasingWarning,
                      stacklevel=3)


@dataclass(frozen=True, eq=False)
class _Side:
    """Frame, connection and Clifford data of one metric on the grid."""
    E: np.ndarray           # (N, N, n, n) orthonormal frame, columns
    ginv: np.ndarray        # (N, N, n, n) inverse metric
    Omega: np.ndarray       # (N, N, n, d, d) spin connection, block a acts along d_a
    Lblk: np.ndarray        # (N, N, n, d, d) block a = sum_i E[a, i] gamma_i
    weight: np.ndarray      # (N, N) quadrature weight times volume density
    scal: np.ndarray        # (N, N)


@dataclass(eq=False)
class DiscretizedOperatorSet:
    """Collocation Dirac operators for a metric pair on T^2, plus the fiber data of the pair.

    Dense matrices (``D_g``, ``D_h``, ``I``, ``I_star``, ``I_inv``) exist for
    N <= DENSE_MAX; every operator is also available matrix-free.
    """
    N: int
    period: float
    rep: object = field(repr=False)
    points: np.ndarray = field(repr=False)
    jet: F.FiberJet = field(repr=False)
    g: _Side = field(repr=False)
    h: _Side = field(repr=False)
    identical: bool = False
    raw_asymmetry: dict = field(default_factory=dict)
    names: tuple = ("g", "h")

    # ----------------------------------------------------------- basics
    @property
    def d(self):
        return self.rep.spinor_dim

    @property
    def n(self):
        return 2

    @property
    def rho(self):
        return self.jet.pair.rho

    @property
    def dim(self):
        return self.N * self.N * self.d

    @property
    def dense(self):
        return self.N <= DENSE_MAX

    def side(self, which):
        if which not in ("g", "h"):
            raise ValueError("which must be 'g' or 'h'")
        return self.g if which == "g" else self.h

    @cached_property
    def _k(self):
        return wavenumbers(self.N, self.period)

    def diff(self, u, axis):
        """Collocation derivative along x_{axis+1} of a field (..., N, N, m)."""
        k = self._k[:, None, None] if axis == 0 else self._k[:, None]
        ax = -3 if axis == 0 else -2
        return np.fft.ifft(1j * k * np.fft.fft(u, axis=ax), axis=ax)

    # ----------------------------------------------------------- operators
    def grad(self, which, v):
        """Spinorial covariant derivative: (..., N, N, d) -> (..., N, N, n*d)."""
        s = self.side(which)
        v = np.asarray(v, dtype=complex)
        blocks = [self.diff(v, a) + np.einsum("ijst,...ijt->...ijs", s.Omega[:, :, a], v) for a in range(2)]
        return np.concatenate(blocks, axis=-1)

    def _grad_H(self, which, u):
        """Plain (unweighted) conjugate transpose of ``grad``."""
        s = self.side(which)
        d = self.d
        out = 0
        for a in range(2):
            ua = u[..., a * d:(a + 1) * d]
            out = out - self.diff(ua, a) + np.einsum("ijts,...ijt->...ijs", np.conj(s.Omega[:, :, a]), ua)
        return out

    def gram_T(self, which, u):
        """Apply g^{-1} (x) Id (or h^{-1} (x) Id) pointwise."""
        s = self.side(which)
        return np.einsum("ijab,...ijbs->...ijas", s.ginv, u.reshape(u.shape[:-1] + (2, self.d))).reshape(u.shape)

    def grad_adjoint(self, which, u):
        """Adjoint of ``grad`` for the volume-weighted discrete inner products."""
        w = self.side(which).weight
        return self._grad_H(which, w[..., None] * self.gram_T(which, u)) / w[..., None]

    def _dirac_raw(self, which, v):
        s = self.side(which)
        gv = self.grad(which, v)
        d = self.d
        return sum(np.einsum("ijst,...ijt->...ijs", s.Lblk[:, :, a], gv[..., a * d:(a + 1) * d]) for a in range(2))

    def _dirac_raw_H(self, which, u):
        s = self.side(which)
        Lu = [np.einsum("ijts,...ijt->...ijs", np.conj(s.Lblk[:, :, a]), u) for a in range(2)]
        return self._grad_H(which, np.concatenate(Lu, axis=-1))

    def dirac(self, which, v):
        """Symmetrised collocation Dirac operator, selfadjoint for the weighted inner product."""
        if self.identical and which == "h":
            which = "g"
        w = self.side(which).weight[..., None]
        v = np.asarray(v, dtype=complex)
        return 0.5 * (self._dirac_raw(which, v) + self._dirac_raw_H(which, w * v) / w)

    def dirac2(self, which, v):
        return self.dirac(which, self.dirac(which, v))

    def I(self, v):
        return np.asarray(v, dtype=complex)

    def I_inv(self, v):
        return np.asarray(v, dtype=complex)

    def I_star(self, v):
        return self.rho[..., None] * np.asarray(v, dtype=complex)

    # ----------------------------------------------------------- inner products
    def inner(self, which, u, v):
        """Weighted L^2 inner product of spinor fields (antilinear in u)."""
        w = self.side(which).weight
        return np.einsum("ij,...ijs,...ijs->...", w, np.conj(u), v)

    def inner_T(self, which, u, v):
        w = self.side(which).weight
        return np.einsum("ij,...ijs,...ijs->...", w, np.conj(u), self.gram_T(which, v))

    def norm(self, which, u):
        return np.sqrt(np.real(self.inner(which, u, u)))

    # ----------------------------------------------------------- dense forms
    def _to_field(self, flat):
        return flat.reshape(flat.shape[:-1] + (self.N, self.N, self.d))

    def _dense_from(self, apply):
        if not self.dense:
            raise ValueError(f"dense matrices are only built for N <= {DENSE_MAX}")
        eye = np.eye(self.dim, dtype=complex)
        return apply(self._to_field(eye)).reshape(self.dim, self.dim).T

    @cached_property
    def D_g(self):
        return self._dense_from(lambda v: self.dirac("g", v))

    @cached_property
    def D_h(self):
        return self.D_g if self.identical else self._dense_from(lambda v: self.dirac("h", v))

    def weights_flat(self, which):
        return np.repeat(self.side(which).weight.reshape(-1), self.d)

    @cached_property
    def I_matrix(self):
        return np.eye(self.dim)

    @cached_property
    def I_inv_matrix(self):
        return np.eye(self.dim)

    @cached_property
    def I_star_matrix(self):
        """W_g^{-1} I^H W_h, which is rho I^{-1} pointwise."""
        return np.diag(1.0 / self.weights_flat("g")) @ self.I_matrix.T @ np.diag(self.weights_flat("h"))

    def dense_matrix(self, name):
        return {"D_g": self.D_g, "D_h": self.D_h, "I": self.I_matrix, "I*": self.I_star_matrix,
                "I^-1": self.I_inv_matrix}[name]

    # ----------------------------------------------------------- spectra
    def _eig(self, which):
        if self.identical and which == "h":
            which = "g"
        cache = self.__dict__.setdefault("_eig_cache", {})
        if which not in cache:
            D = self.D_g if which == "g" else self.D_h
            sw = np.sqrt(self.weights_flat(which))
            Dt = sw[:, None] * D / sw[None, :]
            lam, Y = eigh(0.5 * (Dt + Dt.conj().T), driver="evr")
            cache[which] = (lam, Y, sw)
        return cache[which]

    def spectrum(self, which):
        return self._eig(which)[0]

    def hermiticity_defect(self, which):
        """Relative asymmetry of W D for the symmetrised dense operator."""
        D = self.D_g if which == "g" else self.D_h
        WD = self.weights_flat(which)[:, None] * D
        return float(np.linalg.norm(WD - WD.conj().T) / np.linalg.norm(WD))

    @cached_property
    def _d2_bound(self):
        """Upper bound for the spectrum of D^2 (power iteration with a safety factor)."""
        out = {}
        rng = np.random.default_rng(0)
        for which in ("g", "h"):
            v = rng.normal(size=(self.N, self.N, self.d)) + 0j
            lam = 0.0
            for _ in range(60):
                v = v / self.norm(which, v)
                u = self.dirac2(which, v)
                lam = float(np.real(self.inner(which, v, u)))
                v = u
            out[which] = 1.3 * lam + 10.0
        return out

    def heat(self, which, t, v):
        """e^{-t D^2} applied to fields v (..., N, N, d)."""
        if self.identical and which == "h":
            which = "g"
        v = np.asarray(v, dtype=complex)
        if t == 0:
            return v
        if self.dense:
            lam, Y, sw = self._eig(which)
            flat = v.reshape(v.shape[:-3] + (self.dim,))
            c = (sw * flat) @ np.conj(Y)
            return self._to_field(((np.exp(-t * lam ** 2) * c) @ Y.T) / sw)
        return _chebyshev_heat(lambda x: self.dirac2(which, x), v, t, self._d2_bound[which])


def _chebyshev_heat(apply_D2, v, t, bound, tol=1e-16):
    """exp(-t X) v for X selfadjoint with spectrum in [0, bound], by a Chebyshev series."""
    c = t * bound
    # the coefficients behave like exp(-k^2 / c); this degree reaches round-off
    deg = max(32, int(2 * np.sqrt(40 * c)) + 16)
    coef = cheb.chebinterpolate(lambda y: np.exp(-0.5 * c * (y + 1.0)), deg)
    keep = np.nonzero(np.abs(coef) > tol * np.sum(np.abs(coef)))[0]
    coef = coef[: keep[-1] + 1]

    def B(x):  # maps [0, bound] to [-1, 1]
        return (2.0 / bound) * apply_D2(x) - x

    b1 = np.zeros_like(v)
    b2 = np.zeros_like(v)
    for ck in coef[:0:-1]:
        b1, b2 = ck * v + 2.0 * B(b1) - b2, b1
    return coef[0] * v + B(b1) - b2


def _frame_and_connection(rep, jet_side_E, Gamma, N, period, k):
    """Spin connection Omega_a = pr(E^{-1}(d_a E + Gamma_a E)) / 4 with spectral d_a E."""
    E = jet_side_E
    dE = []
    for ax in (0, 1):
        shape = [1, 1, 1, 1]
        shape[ax] = N
        dE.append(np.real(np.fft.ifft(1j * k.reshape(shape) * np.fft.fft(E, axis=ax), axis=ax)))
    Einv = np.linalg.inv(E)
    Om = []
    for a in range(2):
        Ga = Gamma[:, :, :, a, :]                            # (Gamma_a)^k_j = Gamma^k_{aj}
        w = Einv @ (dE[a] + Ga @ E)
        Om.append(0.25 * project_to_clifford(rep, 0.5 * (w - F.mT(w)), check_skew=False))
    return np.stack(Om, axis=2)


def _L_blocks(rep, E):
    return np.einsum("...ai,ist->...ast", E, rep.gamma_array())


def build_torus_dirac(m: ModelManifold, N: int, h: ModelManifold | None = None) -> DiscretizedOperatorSet:
    """Collocation Dirac operators of the metric pair (m, h) on an N x N grid (h defaults to m)."""
    if not isinstance(N, (int, np.integer)) or N < 4 or N > 64 or N & (N - 1):
        raise ValueError(f"N must be a power of two between 4 and 64, got {N!r}")
    N = int(N)
    period = _check_torus(m)
    if h is None:
        h = m
    if _check_torus(h) != period:
        raise ValueError("g and h live on tori with different periods")
    rep = m.rep
    xs = np.arange(N) * (period / N)
    pts = np.stack(np.meshgrid(xs, xs, indexing="ij"), axis=-1)
    gg, dg = m.jet(pts, 0), m.jet(pts, 1)
    hh, dh = h.jet(pts, 0), h.jet(pts, 1)
    for name, arr in (("g", gg), ("h", hh)):
        _aliasing_check(f"{name} ({(m if name == 'g' else h).name})", arr, N)
    identical = bool(np.array_equal(gg, hh) and np.array_equal(dg, dh))
    Eg = F.sym_sqrt_pair(gg)[1]
    jet = F.FiberJet.from_arrays(gg, hh, dg, dh, frame=Eg)
    k = wavenumbers(N, period)
    cell = (period / N) ** 2
    wg = cell * np.sqrt(np.linalg.det(gg))
    scal_g = curvature(m, pts, derivative=False).scal
    g_side = _Side(Eg, np.linalg.inv(gg), _frame_and_connection(rep, Eg, jet.Gamma_g, N, period, k),
                   _L_blocks(rep, Eg), wg, scal_g)
    if identical:
        h_side = g_side
    else:
        Eh = jet.pair.Eh
        scal_h = curvature(h, pts, derivative=False).scal
        h_side = _Side(Eh, np.linalg.inv(hh), _frame_and_connection(rep, Eh, jet.Gamma_h, N, period, k),
                       _L_blocks(rep, Eh), wg * jet.pair.rho, scal_h)
    ops = DiscretizedOperatorSet(N, period, rep, pts, jet, g_side, h_side, identical, names=(m.name, h.name))
    if ops.dense:
        for which in ("g", "h"):
            raw = ops._dense_from(lambda v: ops._dirac_raw(which, v))
            WD = ops.weights_flat(which)[:, None] * raw
            ops.raw_asymmetry[which] = float(np.linalg.norm(WD - WD.conj().T) / np.linalg.norm(WD))
            if ops.hermiticity_defect(which) > 1e-8:
                raise RuntimeError(f"D_{which} is not selfadjoint for the discrete inner product")
    return ops


def semigroup(ops: DiscretizedOperatorSet, which: str, t: float) -> np.ndarray:
    """Dense heat semigroup e^{-t D^2} (N <= DENSE_MAX)."""
    if t < 0:
        raise ValueError("t must be nonnegative")
    if not ops.dense:
        raise ValueError(f"dense semigroups need N <= {DENSE_MAX}; use ops.heat for matrix-free application")
    lam, Y, sw = ops._eig(which)
    return (Y * np.exp(-t * lam ** 2)) @ Y.conj().T * (sw[None, :] / sw[:, None])


# ---------------------------------------------------------------------------
# test fields


def band_limited_field(ops: DiscretizedOperatorSet, rng, count=1, kmax=None):
    """Random complex spinor fields whose Fourier modes satisfy |k_i| <= kmax (default N/4)."""
    N, d = ops.N, ops.d
    kmax = N // 4 if kmax is None else kmax
    kk = np.abs(np.fft.fftfreq(N, 1.0 / N))
    mask = (kk[:, None] <= kmax) & (kk[None, :] <= kmax)
    c = (rng.normal(size=(count, N, N, d)) + 1j * rng.normal(size=(count, N, N, d))) * mask[..., None]
    return np.fft.ifft2(c, axes=(1, 2))


def _apply(M, v):
    return np.einsum("ijkl,...ijl->...ijk", M, v)


# ---------------------------------------------------------------------------
# HPW verification

HPW_I_TERMS = {
    "grad": ("Shat_h_half", "U_hat", "Shat_g_half"),
    "M+_hg": ("T+_g;h", "V+", "T+_g"),
    "M-_hg": ("T-_g;h", "V-", "T-_g"),
    "M+_gh": ("T+_h", "Vhat+", "T+_h;g"),
    "M-_gh": ("T-_h", "Vhat-", "T-_h;g"),
    "S": ("S_half", "U", "S_half"),
}
HPW_II_TERMS = {
    "Q": ("Q_h", "W_hat", "Q_g"),
    "R": ("R_h", "W_hat", "R_g"),
    "M+_gh": ("T+_h", "W+", "T+_h;g"),
    "M-_gh": ("T-_h", "W-", "T-_h;g"),
}


@dataclass
class HPWResult:
    which: str
    t: float
    N: int
    residual: float
    residuals: np.ndarray
    lhs: np.ndarray
    rhs: np.ndarray
    terms: dict
    factor_checks: dict
    dominant: str | None = None
    dominant_factors: tuple = ()

    def passed(self, tol):
        return bool(self.residual <= tol)

    def as_dict(self):
        return {"which": self.which, "t": self.t, "N": self.N, "residual": float(self.residual),
                "factor_checks": {k: float(v) for k, v in self.factor_checks.items()},
                "dominant": self.dominant, "dominant_factors": list(self.dominant_factors)}


def _fiber_parts(ops):
    cache = ops.__dict__.setdefault("_fiber_cache", {})
    if not cache:
        rep, jet, d = ops.rep, ops.jet, ops.d
        pair = jet.pair
        cache["I"] = F.hpw_fiber_factors(rep, jet, "I")
        cache["II"] = F.hpw_fiber_factors(rep, jet, "II")
        cache["M"] = F.M_operators(rep, jet)
        cache["L"] = F.L_operators(rep, pair)
        cache["S"] = F.S_operators(rep, pair)
        cache["K_g"] = F.K_operator(rep, pair, "g")
        cache["Ah"] = F.A_prime_tilde(pair, 0.5, d)
        cache["T_hom"] = F.T_tilde_hom(rep, jet)
    return cache


def _heated(ops, which, t, phi, psi):
    out = {"Pg": ops.heat("g", t, phi), "Ph": ops.heat("h", t, psi)}
    if which == "I":
        out["mid"] = ops.heat("g", t / 2, ops.dirac2("g", ops.heat("g", t / 2, phi)))
    return out


def hpw_lhs_terms(ops, which, t, phi, psi, heated=None):
    """Each term of the factorised composition, paired as <psi, term phi>_h."""
    f = _fiber_parts(ops)[which].factors
    hf = heated or _heated(ops, which, t, phi, psi)
    Pg, Ph = hf["Pg"], hf["Ph"]
    out = {}
    if which == "I":
        gh, gg = ops.grad("h", Ph), ops.grad("g", Pg)
        out["grad"] = ops.inner_T("h", _apply(f["Shat_h_half"], gh), _apply(f["U_hat"], _apply(f["Shat_g_half"], gg)))
        Dh, Dg = ops.dirac("h", Ph), ops.dirac("g", Pg)
        for s in "+-":
            out[f"M{s}_hg"] = ops.inner("h", _apply(f[f"T{s}_g;h"], Dh), _apply(f[f"V{s}"], _apply(f[f"T{s}_g"], Pg)))
            out[f"M{s}_gh"] = -ops.inner("h", _apply(f[f"T{s}_h"], Ph),
                                         _apply(f[f"Vhat{s}"], _apply(f[f"T{s}_h;g"], Dg)))
        out["S"] = -ops.inner("h", _apply(f["S_half"], Ph), _apply(f["U"], _apply(f["S_half"], hf["mid"])))
    else:
        gg = ops.grad("g", Pg)
        out["Q"] = ops.inner_T("h", _apply(f["Q_h"], Ph), _apply(f["W_hat"], _apply(f["Q_g"], gg)))
        out["R"] = ops.inner_T("h", _apply(f["R_h"], Ph), _apply(f["W_hat"], _apply(f["R_g"], Pg)))
        for s in "+-":
            out[f"M{s}_gh"] = -ops.inner("h", _apply(f[f"T{s}_h"], Ph), _apply(f[f"W{s}"], _apply(f[f"T{s}_h;g"], Pg)))
    return out


def hpw_unfactored_terms(ops, which, t, phi, psi, heated=None):
    """The same terms before splitting into mabs/sgn factors (pointwise identities)."""
    c = _fiber_parts(ops)
    M, L, S = c["M"], c["L"], c["S"]
    hf = heated or _heated(ops, which, t, phi, psi)
    Pg, Ph = hf["Pg"], hf["Ph"]
    rho = ops.rho
    out = {}
    if which == "I":
        gh, gg = ops.grad("h", Ph), ops.grad("g", Pg)
        # L_h^* I L_hg - rho^{-1} L_gh^* I L_g, from the fiber L operators
        X = L.L_h_star @ L.L_hg - (L.L_gh_star @ L.L_g) / rho[..., None, None]
        out["grad"] = ops.inner_T("h", gh, _apply(X, gg))
        Dh, Dg = ops.dirac("h", Ph), ops.dirac("g", Pg)
        for s, Mhg, Mgh in (("+", M.M_hg_plus, M.M_gh_plus), ("-", M.M_hg_minus, M.M_gh_minus)):
            out[f"M{s}_hg"] = ops.inner("h", Dh, _apply(Mhg, Pg))
            out[f"M{s}_gh"] = -ops.inner("h", _apply(Mgh, Ph), Dg / rho[..., None])
        out["S"] = -ops.inner("h", Ph, (1.0 - 1.0 / rho)[..., None] * hf["mid"])
    else:
        Lh_star = L.L_h_star
        X = S.S_tilde @ S.I_tilde
        gg = ops.grad("g", Pg)
        out["Q"] = ops.inner_T("h", _apply(Lh_star, Ph), _apply(X, gg))
        out["R"] = ops.inner_T("h", _apply(Lh_star, Ph), _apply(X, 0.25 * _apply(c["T_hom"], Pg)))
        out["M+_gh"] = -ops.inner("h", Ph, _apply(M.M_gh_plus, Pg))
        out["M-_gh"] = -ops.inner("h", Ph, _apply(M.M_gh_minus, Pg))
    return out


def hpw_rhs(ops, which, t, phi, psi, heated=None):
    """<D_h^k psi, P^h I P^g phi> - <psi, P^h I P^g D_g^k phi> (k = 2 for I, 1 for II).

    Evaluated as <P^h psi, (D_h^k I - I D_g^k) P^g phi>, using that P^j commutes with D_j
    and is selfadjoint; this form vanishes identically when h = g.
    """
    D = ops.dirac2 if which == "I" else ops.dirac
    hf = heated or _heated(ops, which, t, phi, psi)
    Pg, Ph = hf["Pg"], hf["Ph"]
    return ops.inner("h", Ph, D("h", ops.I(Pg)) - ops.I(D("g", Pg)))


def verify_hpw(ops: DiscretizedOperatorSet, which: str, t: float, n_test: int = 4, *, seed: int = 0,
               eps: float = 1e-30, kmax=None) -> HPWResult:
    """Max relative residual |LHS - RHS| / (|LHS| + |RHS| + eps) over random band-limited test pairs."""
    if which not in ("I", "II"):
        raise ValueError("which must be 'I' or 'II'")
    if t <= 0:
        raise ValueError("t must be positive")
    rng = np.random.default_rng([seed, ops.N])
    phi = band_limited_field(ops, rng, n_test, kmax)
    psi = band_limited_field(ops, rng, n_test, kmax)
    hf = _heated(ops, which, t, phi, psi)
    terms = hpw_lhs_terms(ops, which, t, phi, psi, hf)
    lhs = sum(terms.values())
    rhs = hpw_rhs(ops, which, t, phi, psi, hf)
    res = np.abs(lhs - rhs) / (np.abs(lhs) + np.abs(rhs) + eps)
    table = HPW_I_TERMS if which == "I" else HPW_II_TERMS
    ref = hpw_unfactored_terms(ops, which, t, phi, psi, hf)
    scale = np.abs(lhs) + np.abs(rhs) + eps
    checks = {k: float(np.max(np.abs(terms[k] - ref[k]) / scale)) for k in table}
    checks["discretisation"] = float(np.max(np.abs(sum(ref.values()) - rhs) / scale))
    out = HPWResult(which, float(t), ops.N, float(np.max(res)), res, lhs, rhs, terms, checks)
    worst = max(checks, key=checks.get)
    out.dominant = worst
    out.dominant_factors = table.get(worst, ())
    return out


# ---------------------------------------------------------------------------
# further invariants


def lichnerowicz_residual(ops, which="g", n_test=2, seed=0, kmax=None):
    """|D^2 v - grad^* grad v - scal/4 v| / |D^2 v| on band-limited test fields."""
    rng = np.random.default_rng([seed, ops.N, 7])
    kmax = ops.N // 8 if kmax is None else kmax
    v = band_limited_field(ops, rng, n_test, kmax)
    s = ops.side(which)
    lhs = ops.dirac2(which, v)
    rhs = ops.grad_adjoint(which, ops.grad(which, v)) + 0.25 * s.scal[..., None] * v
    return float(np.max(ops.norm(which, lhs - rhs) / ops.norm(which, lhs)))


def identification_identities(ops):
    """Residuals of I^{-1} I = Id and I^* = rho I^{-1} (matrix level when dense)."""
    out = {}
    if ops.dense:
        Id = np.eye(ops.dim)
        out["I^-1 I = Id"] = float(np.max(np.abs(ops.I_inv_matrix @ ops.I_matrix - Id)))
        rho = np.repeat(ops.rho.reshape(-1), ops.d)
        out["I* = rho I^-1"] = float(np.max(np.abs(ops.I_star_matrix - rho[:, None] * ops.I_inv_matrix)))
    rng = np.random.default_rng(1)
    u = band_limited_field(ops, rng, 1)[0]
    v = band_limited_field(ops, rng, 1)[0]
    lhs = ops.inner("h", u, ops.I(v))
    rhs = ops.inner("g", ops.I_star(u), v)
    out["<u, I v>_h = <I* u, v>_g"] = float(abs(lhs - rhs) / max(abs(lhs), 1e-300))
    return out


def s_factor_route(ops, t):
    """Frobenius norms of (I^*I - 1) e^{-tD_g^2} and of I^* U S S e^{-tD_g^2}, plus their difference.

    ``literal_inverse_route`` is the same product with I^{-1} in place of I^*.
    """
    P = semigroup(ops, "g", t)
    lhs = ops.I_star_matrix @ ops.I_matrix @ P - P
    f = _fiber_parts(ops)["I"].factors
    USS = (f["U"] @ f["S_half"] @ f["S_half"]).reshape(-1, ops.d, ops.d)
    blk = block_diag(*USS)
    rhs = ops.I_star_matrix @ blk @ P
    lit = ops.I_inv_matrix @ blk @ P
    return {"lhs_frobenius": float(np.linalg.norm(lhs)), "rhs_frobenius": float(np.linalg.norm(rhs)),
            "difference": float(np.linalg.norm(lhs - rhs)),
            "literal_inverse_route_difference": float(np.linalg.norm(lhs - lit))}


def connection_difference_residual(ops):
    """max |Omega^h_a - Omega^g_a - T~(d_a)/4|, the collocated skewed-connection identity."""
    T = F.T_tilde_hom(ops.rep, ops.jet)
    d = ops.d
    worst = 0.0
    for a in range(2):
        diff = ops.h.Omega[:, :, a] - ops.g.Omega[:, :, a] - 0.25 * T[..., a * d:(a + 1) * d, :]
        worst = max(worst, float(np.max(np.abs(diff))))
    return worst


def flat_spectrum(N, period=TWO_PI, A=None, spinor_dim=2):
    """Closed-form Dirac spectrum +-|A^{-1/2} k| (A constant) on the N x N Fourier lattice."""
    k = wavenumbers(N, period)
    K = np.stack(np.meshgrid(k, k, indexing="ij"), axis=-1).reshape(-1, 2)
    if A is not None:
        w, V = np.linalg.eigh(np.asarray(A, dtype=float))
        K = K @ (V @ np.diag(w ** -0.5) @ V.T).T
    r = np.linalg.norm(K, axis=-1)
    vals = np.concatenate([r, -r] * (spinor_dim // 2))
    return np.sort(vals)


# ---------------------------------------------------------------------------
# hyperbolic space


@dataclass(frozen=True)
class HyperbolicFacts:
    n: int
    scal: float
    spec_ac_D2: tuple = (0.0, float("inf"))
    spec_D: tuple = (float("-inf"), float("inf"))
    spec_pp_D: tuple = ()
    spec_sc_D2: tuple = ()

    def ball_volume(self, r):
        r = np.asarray(r, dtype=float)
        if self.n == 2:
            return 2 * np.pi * (np.cosh(r) - 1)
        if self.n == 3:
            return np.pi * (np.sinh(2 * r) - 2 * r)
        from scipy.integrate import quad
        from math import gamma, pi
        area = 2 * pi ** (self.n / 2) / gamma(self.n / 2)
        return np.vectorize(lambda s: area * quad(lambda u: np.sinh(u) ** (self.n - 1), 0, s)[0])(r)

    def as_dict(self):
        return {"n": self.n, "scal": self.scal, "spec_ac_D2": list(self.spec_ac_D2), "spec_D": list(self.spec_D),
                "spec_pp_D": list(self.spec_pp_D), "spec_sc_D2": list(self.spec_sc_D2)}


def hyperbolic_facts(n: int = 2) -> HyperbolicFacts:
    """Spectral facts of the Dirac operator on hyperbolic n-space (curvature -1)."""
    if n < 2:
        raise ValueError("n must be at least 2")
    return HyperbolicFacts(n, -float(n * (n - 1)))


# ---------------------------------------------------------------------------
# golden records


def config_hash(config: dict) -> str:
    return hashlib.sha256(json.dumps(config, sort_keys=True).encode()).hexdigest()[:16]
