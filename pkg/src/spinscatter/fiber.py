"""Pointwise (single-fiber) perturbation algebra for a pair of metrics g, h.

Every function accepts arrays with arbitrary leading batch axes, so the same
code evaluates one fiber or a whole grid of them.

Conventions:

* Tangent vectors and covectors are stored in coordinate components.
* Spinors are stored in components w.r.t. a spin frame over a g-orthonormal
  frame ``E_g`` (columns).  The h-orthonormal frame is ``E_h = A^{-1/2} E_g``
  and beta (the identification of spinor fibres) is the identity on
  components.  The default ``E_g`` consists of A-eigenvectors.
* ``T*M (x) Sigma`` is flattened with index ``a * d + s`` (covector index a,
  spinor index s).  Its inner product is ``g^{-1} (x) Id`` on the g-side and
  ``h^{-1} (x) Id`` on the h-side.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .clifford import CliffordRep, build_clifford_rep, project_to_clifford

DEGENERATE_GAP = 1e-12
COND_MAX = 1e12
EIGVEC_COND_MAX = 1e8
SGN_ZERO = 1e-14


def mT(x):
    return np.swapaxes(x, -1, -2)


def mH(x):
    return np.conj(np.swapaxes(x, -1, -2))


# ---------------------------------------------------------------------------
# linear-algebra helpers (batched)


def _check_spd(M, name):
    M = np.asarray(M, dtype=float)
    if M.ndim < 2 or M.shape[-1] != M.shape[-2]:
        raise ValueError(f"{name} must be a (stack of) square matrices")
    scale = np.maximum(1.0, np.max(np.abs(M), axis=(-2, -1)))
    if np.any(np.max(np.abs(M - mT(M)), axis=(-2, -1)) > 1e-10 * scale):
        raise ValueError(f"{name} is not symmetric")
    w = np.linalg.eigvalsh(M)
    if np.any(w[..., 0] <= 0):
        raise ValueError(f"{name} is not positive definite (min eigenvalue {np.min(w[..., 0]):.3e})")
    cond = w[..., -1] / w[..., 0]
    if np.any(cond > COND_MAX):
        raise ValueError(f"{name} has condition number {np.max(cond):.3e} > {COND_MAX:.0e}")
    return 0.5 * (M + mT(M))


def sym_sqrt_pair(G):
    """G^{1/2}, G^{-1/2} for Hermitian positive definite G."""
    w, U = np.linalg.eigh(G)
    s = np.sqrt(w)
    return (U * s[..., None, :]) @ mH(U), (U / s[..., None, :]) @ mH(U)


def power_divdiff(a, b, p):
    """Divided difference (a^p - b^p)/(a - b) for positive a, b, evaluated stably."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    L = np.log(a) - np.log(b)
    small = np.abs(L) < 1e-8
    Ls = np.where(small, 1.0, L)
    ratio = np.where(small, p * (1 + 0.5 * (p - 1) * L), np.expm1(p * Ls) / np.expm1(Ls))
    return b ** (p - 1) * ratio


def gram_adjoint(M, G_in, G_out):
    """Adjoint of M : (V, G_in) -> (W, G_out)."""
    return np.linalg.solve(G_in, mH(M) @ G_out)


def gram_norm(M, G_in=None, G_out=None):
    """Operator norm of M w.r.t. the Gram matrices (identity when omitted)."""
    X = M
    if G_in is not None:
        X = X @ sym_sqrt_pair(G_in)[1]
    if G_out is not None:
        X = sym_sqrt_pair(G_out)[0] @ X
    return np.linalg.norm(X, 2, axis=(-2, -1))


def _sgn(z):
    """Complex sign with sgn(0) = 1; zero is judged relative to the largest |z| on the last axis."""
    z = np.asarray(z)
    az = np.abs(z)
    scale = np.maximum(np.max(az, axis=-1, keepdims=True), 1.0)
    nz = az > SGN_ZERO * scale
    return np.where(nz, z / np.where(nz, az, 1.0), 1.0 + 0j)


def _chop(w):
    """Set eigenvalues at round-off level (relative to the largest) to exact zero."""
    scale = np.maximum(np.max(np.abs(w), axis=-1, keepdims=True), 1.0)
    return np.where(np.abs(w) > SGN_ZERO * 100 * scale, w, 0.0)


def _apply_eig(U, w, Uinv):
    return (U * w[..., None, :]) @ Uinv


def selfadjoint_function(B, G, f):
    """f(B) for B selfadjoint w.r.t. the Gram matrix G (f acts on real eigenvalues)."""
    Gh, Gmh = sym_sqrt_pair(G)
    Bh = Gh @ B @ Gmh
    w, U = np.linalg.eigh(0.5 * (Bh + mH(Bh)))
    return Gmh @ _apply_eig(U, f(w), mH(U)) @ Gh


def mabs_sgn_selfadjoint(B, G):
    """(mabs(B)^{1/2}, mabs(B), sgn(B)) for G-selfadjoint B."""
    Gh, Gmh = sym_sqrt_pair(G)
    Bh = Gh @ B @ Gmh
    w, U = np.linalg.eigh(0.5 * (Bh + mH(Bh)))
    w = _chop(w)
    Uh = mH(U)
    return tuple(Gmh @ _apply_eig(U, vals, Uh) @ Gh
                 for vals in (np.sqrt(np.abs(w)), np.abs(w), _sgn(w).real))


def mabs_sgn_hermitian(B):
    """(mabs^{1/2}, mabs, sgn) of a Hermitian matrix."""
    w, U = np.linalg.eigh(0.5 * (B + mH(B)))
    w = _chop(w)
    Uh = mH(U)
    return tuple(_apply_eig(U, vals, Uh)
                 for vals in (np.sqrt(np.abs(w)) + 0j, np.abs(w) + 0j, _sgn(w)))


def mabs_sgn_skew(B):
    """(mabs^{1/2}, mabs, sgn) of a skew-Hermitian matrix B = U diag(-i mu) U^H."""
    H = 1j * B
    mu, U = np.linalg.eigh(0.5 * (H + mH(H)))
    mu = _chop(mu)
    Uh = mH(U)
    return tuple(_apply_eig(U, vals, Uh)
                 for vals in (np.sqrt(np.abs(mu)) + 0j, np.abs(mu) + 0j, _sgn(-1j * mu)))


def diagonalizable_function(B, f):
    """f(B) through an eigendecomposition, rejecting numerically defective B."""
    w, V = np.linalg.eig(np.asarray(B, dtype=complex))
    c = np.linalg.cond(V)
    if np.any(~np.isfinite(c)) or np.any(c > EIGVEC_COND_MAX):
        raise np.linalg.LinAlgError(f"eigenvector matrix condition {np.max(c):.3e} exceeds "
                                    f"{EIGVEC_COND_MAX:.0e}: operator is numerically non-diagonalizable")
    return _apply_eig(V, f(w), np.linalg.inv(V))


def mabs_sgn_diagonalizable(B):
    return (diagonalizable_function(B, lambda z: np.sqrt(np.abs(z)) + 0j),
            diagonalizable_function(B, lambda z: np.abs(z) + 0j),
            diagonalizable_function(B, _sgn))


def kron_id(M, d):
    """M (x) Id_d for a stack of matrices."""
    n = M.shape[-1]
    out = M[..., :, None, :, None] * np.eye(d)[:, None, :]
    return out.reshape(M.shape[:-2] + (n * d, n * d))


# ---------------------------------------------------------------------------
# metric pairs


def _eig_A(g, h):
    # A = g^{-1} h is g-selfadjoint; diagonalise through the Cholesky factor of g
    L = np.linalg.cholesky(g)
    Linv = np.linalg.inv(L)
    C = Linv @ h @ mT(Linv)
    lam, W = np.linalg.eigh(0.5 * (C + mT(C)))
    V = mT(Linv) @ W
    Vinv = mT(W) @ mT(L)
    return np.linalg.solve(g, h), lam, V, Vinv


class FiberPair:
    """A metric pair (g, h) at one point or at a stack of points."""

    def __init__(self, g, h, frame=None):
        self.g = _check_spd(g, "g")
        self.h = _check_spd(h, "h")
        if self.g.shape != self.h.shape:
            raise ValueError(f"g and h have different shapes {self.g.shape} and {self.h.shape}")
        self.n = self.g.shape[-1]
        self.batch_shape = self.g.shape[:-2]
        self.A, self.lam, self.V, self.Vinv = _eig_A(self.g, self.h)
        if frame is None:
            frame = self.V
        frame = np.broadcast_to(np.asarray(frame, dtype=float), self.g.shape)
        err = np.max(np.abs(mT(frame) @ self.g @ frame - np.eye(self.n)))
        if err > 1e-8:
            raise ValueError(f"frame is not g-orthonormal (error {err:.2e})")
        self.Eg = frame
        self.Eg_inv = mT(frame) @ self.g
        self.Eh = self.power(-0.5) @ frame
        self.Eh_inv = self.Eg_inv @ self.power(0.5)

    def func(self, f):
        """f(A) from the eigendecomposition."""
        return _apply_eig(self.V, f(self.lam), self.Vinv)

    def power(self, p):
        return self.func(lambda x: x ** p)

    @property
    def rho(self):
        return np.prod(np.sqrt(self.lam), axis=-1)

    @property
    def norm_A(self):
        return self.lam[..., -1]

    @property
    def norm_Ainv(self):
        return 1.0 / self.lam[..., 0]

    def quasi_isometry_constant(self):
        return np.maximum(self.norm_A, self.norm_Ainv)

    def __getitem__(self, idx):
        return FiberPair(self.g[idx], self.h[idx], frame=self.Eg[idx])


def compute_A(pair: FiberPair):
    """A = g^{-1} h, its eigenvalues (ascending) and g-orthonormal eigenvectors (columns)."""
    return pair.A, pair.lam, pair.V


def delta(pair: FiberPair):
    m = np.max(np.abs(np.log(pair.lam)), axis=-1)
    return 2.0 * np.sinh(0.25 * pair.n * m)


def rho(pair: FiberPair):
    return pair.rho


def christoffel(g, dg):
    """Gamma[..., k, i, j] = Gamma^k_{ij} from dg[..., l, i, j] = d_l g_{ij}."""
    ginv = np.linalg.inv(g)
    # S[i, j, l] = d_i g_jl + d_j g_il - d_l g_ij
    S = dg + np.swapaxes(dg, -3, -2) - np.moveaxis(dg, -3, -1)
    return 0.5 * np.einsum("...kl,...ijl->...kij", ginv, S)


def connection_matrix(Gamma, X):
    """[..., k, j] = sum_i Gamma^k_{ij} X^i."""
    return np.einsum("...kij,...i->...kj", Gamma, X)


class FiberJet:
    """Metric pair plus first derivatives (dg[..., l, i, j] = d_l g_ij) at the point(s)."""

    def __init__(self, pair: FiberPair, dg, dh):
        self.pair = pair
        n = pair.n
        shp = pair.batch_shape + (n, n, n)
        self.dg = np.broadcast_to(np.asarray(dg, dtype=float), shp)
        self.dh = np.broadcast_to(np.asarray(dh, dtype=float), shp)
        self.Gamma_g = christoffel(pair.g, self.dg)
        self.Gamma_h = christoffel(pair.h, self.dh)
        ginv = np.linalg.inv(pair.g)
        # d_k A = -g^{-1} (d_k g) A + g^{-1} d_k h
        self.dA = (np.einsum("...ab,...kbc,...cd->...kad", -ginv, self.dg, pair.A)
                   + np.einsum("...ab,...kbc->...kac", ginv, self.dh))

    @classmethod
    def from_arrays(cls, g, h, dg, dh, frame=None):
        return cls(FiberPair(g, h, frame=frame), dg, dh)

    @property
    def n(self):
        return self.pair.n

    def dGamma(self, X):
        return connection_matrix(self.Gamma_h - self.Gamma_g, np.asarray(X, dtype=float))


def g_op_norm(pair: FiberPair, B, metric="g"):
    """Operator norm of an endomorphism of TM w.r.t. g (or h)."""
    G = pair.g if metric == "g" else pair.h
    Gh, Gmh = sym_sqrt_pair(G)
    return np.linalg.norm(Gh @ B @ Gmh, 2, axis=(-2, -1))


def tensor_spectral_norm(C, n_random=6, iters=100, rtol=1e-12):
    """max over unit z, u, y of sum C[z, u, y] z_z u_u y_y for real 3-tensors C[..., z, u, y].

    Alternating maximisation (one vector at a time, each update exact) run
    from several starts at once: coordinate axes for u, the two leading left
    singular vectors of the u-unfolding and a fixed pseudo-random set.  The
    result is the value at a critical point, hence a lower bound.
    """
    C = np.asarray(C, dtype=float)
    n = C.shape[-2]
    batch = C.shape[:-3]
    Cu = np.moveaxis(C, -2, -1).reshape(batch + (n * n, n))      # [(z, y), u]
    Cz = np.moveaxis(C, -3, -1).reshape(batch + (n * n, n))      # [(u, y), z]
    Cy = C.reshape(batch + (n * n, n))                           # [(z, u), y]
    Uu = np.linalg.svd(mT(Cu))[0][..., :, :2]
    rand = np.random.default_rng(12345).normal(size=(n_random, n))
    u = np.concatenate([np.broadcast_to(np.eye(n), batch + (n, n)), mT(Uu),
                        np.broadcast_to(rand, batch + rand.shape)], axis=-2)
    u = u / np.linalg.norm(u, axis=-1, keepdims=True)
    # start z, y at the top singular pair of C(., u, .)
    Mu = (mT(Cu)[..., None, :, :] * u[..., :, :, None]).sum(axis=-2).reshape(u.shape[:-1] + (n, n))
    uu, _, vv = np.linalg.svd(Mu)
    z, y = uu[..., :, 0], vv[..., 0, :]

    def outer(a, b):
        return (a[..., :, None] * b[..., None, :]).reshape(a.shape[:-1] + (n * n,))

    def unit(v):
        nrm = np.linalg.norm(v, axis=-1, keepdims=True)
        return v / np.where(nrm > 0, nrm, 1.0), nrm[..., 0]

    best = None
    for _ in range(iters):
        u, _ = unit(outer(z, y) @ Cu)
        z, _ = unit(outer(u, y) @ Cz)
        y, val = unit(outer(z, u) @ Cy)
        new = np.max(val, axis=-1)
        if best is not None and np.all(new - best <= rtol * np.maximum(new, 1e-300)):
            best = np.maximum(new, best)
            break
        best = new
    return best


def omega(jet: FiberJet):
    """sup over g-unit X of the g-operator norm of (nabla^h - nabla^g)_X."""
    Gh, Gmh = sym_sqrt_pair(jet.pair.g)
    D = jet.Gamma_h - jet.Gamma_g
    # C[z, u, y] = (g^{1/2} D(g^{-1/2} u) g^{-1/2})_{zy}
    C = np.einsum("...zk,...kij,...iu,...jy->...zuy", Gh, D, Gmh, Gmh)
    return tensor_spectral_norm(C)


# ---------------------------------------------------------------------------
# T, T-tilde and M


def daleckii_krein(pair: FiberPair, dA, p):
    """Derivative of A^p in direction dA, by divided differences of the eigenvalues."""
    li, lj = pair.lam[..., :, None], pair.lam[..., None, :]
    F = power_divdiff(li, lj, p)
    F = np.where(np.abs(li - lj) < DEGENERATE_GAP, p * li ** (p - 1) + 0 * lj, F)
    return pair.V @ (F * (pair.Vinv @ dA @ pair.V)) @ pair.Vinv


def nabla_g_A_power(jet: FiberJet, X, p):
    """nabla^g_X (A^p) = D(A^p)[d_X A] + [Gamma_g(X), A^p]."""
    X = np.asarray(X, dtype=float)
    dXA = np.einsum("...k,...kab->...ab", X, jet.dA)
    Ap = jet.pair.power(p)
    Gx = connection_matrix(jet.Gamma_g, X)
    return daleckii_krein(jet.pair, dXA, p) + Gx @ Ap - Ap @ Gx


def T_hg(jet: FiberJet, X):
    """T(X) = A^{1/2} (nabla^g_X A^{-1/2} + (nabla^h_X - nabla^g_X) A^{-1/2})."""
    pair = jet.pair
    return pair.power(0.5) @ (nabla_g_A_power(jet, X, -0.5) + jet.dGamma(X) @ pair.power(-0.5))


def T_gh(jet: FiberJet, X):
    """Connection-difference tensor with the roles of g and h exchanged: -A^{-1/2} T(X) A^{1/2}."""
    pair = jet.pair
    return -pair.power(-0.5) @ T_hg(jet, X) @ pair.power(0.5)


def _rep(rep, n):
    if rep is None:
        return build_clifford_rep(n)
    if rep.n != n:
        raise ValueError(f"Clifford representation has n={rep.n}, metric pair has n={n}")
    return rep


def T_tilde(rep: CliffordRep | None, jet: FiberJet, X):
    """Clifford projection of T(X) in the spin frame over E_g."""
    pair = jet.pair
    rep = _rep(rep, pair.n)
    F = pair.Eg_inv @ T_hg(jet, X) @ pair.Eg
    return project_to_clifford(rep, 0.5 * (F - mT(F)), check_skew=False)


def T_tilde_hom(rep, jet: FiberJet):
    """T-tilde as Hom(Sigma, T*M (x) Sigma); block a is T-tilde(d_a), shape (..., n*d, d)."""
    n = jet.n
    return np.concatenate([T_tilde(rep, jet, np.eye(n)[a]) for a in range(n)], axis=-2)


@dataclass
class MOperators:
    M_hg: np.ndarray
    M_gh: np.ndarray
    M_hg_plus: np.ndarray
    M_hg_minus: np.ndarray
    M_gh_plus: np.ndarray
    M_gh_minus: np.ndarray


def M_operators(rep, jet: FiberJet) -> MOperators:
    pair = jet.pair
    rep = _rep(rep, pair.n)
    G = rep.gamma_array()
    Amh, Ah = pair.power(-0.5), pair.power(0.5)
    Mhg = Mgh = 0
    for i in range(pair.n):
        Mhg = Mhg + G[i] @ T_tilde(rep, jet, np.einsum("...ab,...b->...a", Amh, pair.Eg[..., :, i]))
        # in the h-spin frame T-tilde_{g,h}(Y) has the components of -T-tilde_{h,g}(Y)
        Mgh = Mgh - G[i] @ T_tilde(rep, jet, np.einsum("...ab,...b->...a", Ah, pair.Eh[..., :, i]))
    Mhg, Mgh = 0.25 * Mhg, 0.25 * Mgh
    return MOperators(Mhg, Mgh, 0.5 * (Mhg + mH(Mhg)), 0.5 * (Mhg - mH(Mhg)),
                      0.5 * (Mgh + mH(Mgh)), 0.5 * (Mgh - mH(Mgh)))


# ---------------------------------------------------------------------------
# L, K, S


def gram(pair: FiberPair, which: str, d: int):
    """Inner product on T*M (x) Sigma_j in the flattened layout."""
    return kron_id(np.linalg.inv(pair.g if which == "g" else pair.h), d)


def A_prime_tilde(pair: FiberPair, p: float, d: int):
    """(A')^p (x) Id on T*M (x) Sigma; A' acts on covector components as A^T."""
    return kron_id(mT(pair.power(p)), d)


def _L_matrix(rep, E):
    # block a is sum_i E[a, i] gamma_i, since xi^sharp has frame components E^T xi
    n, d = rep.n, rep.spinor_dim
    blocks = np.einsum("...ai,ist->...sat", E, rep.gamma_array())
    return blocks.reshape(E.shape[:-2] + (d, n * d))


def _eps_e_matrix(rep, Einv):
    # sum_i eps_i (x) e_i. : Sigma -> T*M (x) Sigma; block a is sum_i Einv[i, a] gamma_i
    n, d = rep.n, rep.spinor_dim
    blocks = np.einsum("...ia,ist->...ast", Einv, rep.gamma_array())
    return blocks.reshape(Einv.shape[:-2] + (n * d, d))


@dataclass
class LOperators:
    L_g: np.ndarray
    L_h: np.ndarray
    L_hg: np.ndarray
    L_gh: np.ndarray
    L_g_star: np.ndarray
    L_h_star: np.ndarray
    L_hg_star: np.ndarray
    L_gh_star: np.ndarray


def L_operators(rep, pair: FiberPair) -> LOperators:
    rep = _rep(rep, pair.n)
    d = rep.spinor_dim
    Lg = _L_matrix(rep, pair.Eg)
    Lh = _L_matrix(rep, pair.Eh)
    Lhg = Lg @ A_prime_tilde(pair, -0.5, d)
    Lgh = Lh @ A_prime_tilde(pair, 0.5, d)
    Gg, Gh, I = gram(pair, "g", d), gram(pair, "h", d), np.eye(d)
    return LOperators(Lg, Lh, Lhg, Lgh, gram_adjoint(Lg, Gg, I), gram_adjoint(Lh, Gh, I),
                      gram_adjoint(Lhg, Gg, I), gram_adjoint(Lgh, Gh, I))


def L_star_closed_form(rep, pair: FiberPair, which: str):
    """-sum_i phi_i (x) v_i . tau, with (v_i) the frame of the j side and (phi_i) its dual coframe."""
    rep = _rep(rep, pair.n)
    return -_eps_e_matrix(rep, pair.Eg_inv if which == "g" else pair.Eh_inv)


def K_operator(rep, pair: FiberPair, which: str = "g", *, fault: str | None = None):
    """K_j(xi (x) sigma) = -sum_i eps_i (x) e_i . xi^sharp . sigma."""
    rep = _rep(rep, pair.n)
    E, Einv = (pair.Eg, pair.Eg_inv) if which == "g" else (pair.Eh, pair.Eh_inv)
    K = -_eps_e_matrix(rep, Einv) @ _L_matrix(rep, E)
    if fault == "K-sign-flip":
        # test hook: negate the strictly upper covector blocks
        mask = np.kron(np.triu(np.ones((rep.n, rep.n)), 1), np.ones((rep.spinor_dim,) * 2))
        K = K * (1 - 2 * mask)
    elif fault is not None:
        raise ValueError(f"unknown fault {fault!r}")
    return K


@dataclass
class SOperators:
    S: np.ndarray
    S_tilde: np.ndarray
    S_hat_g: np.ndarray
    S_hat_h: np.ndarray
    U: np.ndarray
    U_hat: np.ndarray
    W_hat: np.ndarray
    I_tilde: np.ndarray


def S_operators(rep, pair: FiberPair) -> SOperators:
    rep = _rep(rep, pair.n)
    d = rep.spinor_dim
    sr = np.sqrt(pair.rho)[..., None, None]
    Amh = A_prime_tilde(pair, -0.5, d)
    Ah = A_prime_tilde(pair, 0.5, d)
    S = (sr - 1.0 / sr)[..., 0, 0]
    S_tilde = Amh - np.eye(pair.n * d)
    Kg = K_operator(rep, pair, "g")
    Kh = K_operator(rep, pair, "h")
    Sg = sr * Kg @ Amh - Ah @ Kg / sr
    Sh = sr * Kh @ Amh - Ah @ Kh / sr
    U = np.where(S >= 0, 1.0, -1.0)[..., None, None] / sr * np.eye(d)
    U_hat = S_hat_functions(rep, pair, "h")[2] @ Ah / sr
    W_hat = mabs_sgn_selfadjoint(S_tilde, gram(pair, "h", d))[2] @ Ah
    return SOperators(S, S_tilde, Sg, Sh, U, U_hat, W_hat, Ah)


def S_hat_functions(rep, pair: FiberPair, which: str):
    """(mabs^{1/2}, mabs, sgn) of S-hat_j, through its similarity to a selfadjoint operator."""
    rep = _rep(rep, pair.n)
    d = rep.spinor_dim
    sr = np.sqrt(pair.rho)[..., None, None]
    K = K_operator(rep, pair, which)
    Aq = A_prime_tilde(pair, 0.25, d)
    Amq = A_prime_tilde(pair, -0.25, d)
    H = sr * Amq @ K @ Amq - Aq @ K @ Aq / sr
    return tuple(Aq @ F @ Amq for F in mabs_sgn_selfadjoint(H, gram(pair, which, d)))


# ---------------------------------------------------------------------------
# bound constants, assembled from the proof chain


def C1(pair: FiberPair):
    # |lambda^{-1/2} - 1| <= 2 sinh(|ln lambda| / 2) <= delta for n >= 2
    return np.ones(pair.batch_shape)


def C2(pair: FiberPair):
    return pair.n * pair.norm_A ** 0.25 * pair.norm_Ainv ** 0.25


def nabla_difference_constant(pair: FiberPair):
    """|nabla_X A^{-1/2}| <= this * |(nabla^h - nabla^g)_X|."""
    return pair.norm_Ainv ** 1.5 * pair.norm_A


def T_constant(pair: FiberPair):
    a, b = pair.norm_A, pair.norm_Ainv
    return b ** 1.5 * a ** 1.5 + b ** 0.5 * a ** 0.5


def C3(pair: FiberPair):
    # sum_{ijk} |a_ijk| <= n^3 |T|_g
    return pair.n ** 3 * T_constant(pair)


def C5(pair: FiberPair):
    # sum_i |T~(e_i) sigma| <= sqrt(n) |T~(sigma)|
    return 0.25 * np.sqrt(pair.n) * pair.norm_Ainv ** 0.5 * C3(pair)


def C6(pair: FiberPair):
    # |T_{g,h}|_h <= |A^{-1}|^{3/2} |A| |T_{h,g}|_g, and |A^{1/2} v_i|_g <= |A|^{1/2}
    return (0.25 * np.sqrt(pair.n) * pair.norm_A ** 0.5 * pair.n ** 3
            * pair.norm_Ainv ** 1.5 * pair.norm_A * T_constant(pair))


def C7(pair: FiberPair):
    return np.sqrt(C5(pair))


def C8(pair: FiberPair):
    return np.sqrt(C6(pair))


def T_norm(jet: FiberJet):
    """sup over g-unit X of |T(X)|_g (X -> T(X) is linear)."""
    Gh, Gmh = sym_sqrt_pair(jet.pair.g)
    cols = [Gh @ T_hg(jet, Gmh[..., :, i]) @ Gmh for i in range(jet.n)]
    return tensor_spectral_norm(np.stack(cols, axis=-2))


# ---------------------------------------------------------------------------
# HPW multiplication factors


@dataclass
class FiberOperators:
    """Pointwise multipliers of an HPW composition, keyed by name."""
    which: str
    factors: dict = field(default_factory=dict)

    def __getitem__(self, key):
        return self.factors[key]

    def keys(self):
        return self.factors.keys()


HPW_I_FACTORS = ("Shat_h_half", "Shat_g_half", "U_hat", "T+_g", "T-_g", "T+_g;h", "T-_g;h", "V+", "V-",
                 "T+_h", "T-_h", "T+_h;g", "T-_h;g", "Vhat+", "Vhat-", "S_half", "U")
HPW_II_FACTORS = ("Q_g", "Q_h", "R_g", "R_h", "W_hat", "T+_h", "T-_h", "T+_h;g", "T-_h;g", "W+", "W-")


def hpw_fiber_factors(rep, jet: FiberJet, which: str = "I") -> FiberOperators:
    """Every pointwise multiplier of the factorised HPW operator I (six terms) or II (four terms)."""
    if which not in ("I", "II"):
        raise ValueError("which must be 'I' or 'II'")
    pair = jet.pair
    rep = _rep(rep, pair.n)
    d = rep.spinor_dim
    S = S_operators(rep, pair)
    M = M_operators(rep, jet)
    parts = {"+_hg": mabs_sgn_hermitian(M.M_hg_plus), "-_hg": mabs_sgn_skew(M.M_hg_minus),
             "+_gh": mabs_sgn_hermitian(M.M_gh_plus), "-_gh": mabs_sgn_skew(M.M_gh_minus)}
    f = {}
    if which == "I":
        f["Shat_h_half"] = S_hat_functions(rep, pair, "h")[0]
        f["Shat_g_half"] = S_hat_functions(rep, pair, "g")[0]
        f["U_hat"] = S.U_hat
        for s in "+-":
            f[f"T{s}_g"] = f[f"T{s}_g;h"] = parts[f"{s}_hg"][0]
            f[f"V{s}"] = parts[f"{s}_hg"][2]
            f[f"T{s}_h"] = f[f"T{s}_h;g"] = parts[f"{s}_gh"][0]
            f[f"Vhat{s}"] = mH(parts[f"{s}_gh"][2]) / pair.rho[..., None, None]
        f["S_half"] = np.sqrt(np.abs(_chop(S.S[..., None])[..., 0]))[..., None, None] * np.eye(d)
        f["U"] = S.U
    else:
        Gh = gram(pair, "h", d)
        Lh_star = gram_adjoint(_L_matrix(rep, pair.Eh), Gh, np.eye(d))
        half_h, abs_h, _ = mabs_sgn_selfadjoint(S.S_tilde, Gh)
        f["Q_g"] = mabs_sgn_selfadjoint(S.S_tilde, gram(pair, "g", d))[0]
        f["Q_h"] = half_h @ Lh_star
        f["R_g"] = 0.25 * T_tilde_hom(rep, jet)
        f["R_h"] = abs_h @ Lh_star
        f["W_hat"] = S.W_hat
        for s in "+-":
            f[f"T{s}_h"] = f[f"T{s}_h;g"] = parts[f"{s}_gh"][0]
            f[f"W{s}"] = parts[f"{s}_gh"][2]
    return FiberOperators(which, f)


def beta_compat_check(rep, pair: FiberPair, X, sigma):
    """|beta(X ._g sigma) - A^{-1/2}X ._h beta(sigma)|, both sides evaluated from coordinates."""
    rep = _rep(rep, pair.n)
    X = np.asarray(X, dtype=float)
    sigma = np.asarray(sigma, dtype=complex)
    lhs = rep.vec(np.einsum("...ab,...b->...a", pair.Eg_inv, X))
    Y = np.einsum("...ab,...b->...a", pair.power(-0.5), X)
    rhs = rep.vec(np.einsum("...ab,...b->...a", pair.Eh_inv, Y))
    return np.linalg.norm(np.einsum("...st,...t->...s", lhs - rhs, sigma), axis=-1)


def musical_residual(pair: FiberPair, p: float = -0.5):
    """Relative residuals of A^p #^g = #^h (A')^{p+1} and A^p #^j = #^j (A')^p (j = g, h)."""
    ginv, hinv = np.linalg.inv(pair.g), np.linalg.inv(pair.h)
    Ap = pair.power(p)

    def rel(a, b):
        return np.max(np.abs(a - b), axis=(-2, -1)) / np.maximum(1.0, np.max(np.abs(a), axis=(-2, -1)))

    return np.maximum.reduce([rel(Ap @ ginv, hinv @ mT(pair.power(p + 1))),
                              rel(Ap @ ginv, ginv @ mT(Ap)), rel(Ap @ hinv, hinv @ mT(Ap))])
