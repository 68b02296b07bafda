"""Unit 2-sphere in its embedding: exact geodesics and a polynomial Galerkin Dirac operator.

Spinors of S^2 are realised as the restriction of the trivial C^2 spinor
bundle of R^3.  With ``cl`` the R^3 Clifford multiplication and nu the outer
normal, tangent vectors act by ``X . phi = cl(X) cl(nu) phi`` and the spin
connection is ``nabla_Y phi = d_Y phi + cl(Y) cl(nu) phi / 2``.  In this
trivialisation D = -cl(nu) sum_a gamma_a d^T_a - 1, which maps C^2-valued
polynomials of degree <= L into themselves, so a Galerkin projection onto
them is exact.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from itertools import product

import numpy as np
from scipy.linalg import eigh
from scipy.special import eval_legendre

from .clifford import build_clifford_rep

GAMMA3 = build_clifford_rep(3).gamma_array()


def cl(v):
    """R^3 Clifford multiplication matrices, (..., 3) -> (..., 2, 2)."""
    return np.tensordot(np.asarray(v), GAMMA3, axes=([-1], [0]))


def exponents(L):
    return [e for e in product(range(L + 1), repeat=3) if sum(e) <= L]


def monomials(p, exps):
    p = np.asarray(p, dtype=float)
    e = np.asarray(exps)
    return np.prod(p[..., None, :] ** e, axis=-1)


def quadrature(L):
    """Nodes and weights on S^2 integrating polynomials of degree <= 2L + 2 exactly."""
    nt = L + 3
    x, wx = np.polynomial.legendre.leggauss(nt)
    nphi = 2 * L + 5
    ph = 2 * np.pi * np.arange(nphi) / nphi
    st = np.sqrt(1 - x ** 2)
    pts = np.stack([st[:, None] * np.cos(ph), st[:, None] * np.sin(ph), np.repeat(x[:, None], nphi, 1)], -1)
    w = np.repeat(wx[:, None], nphi, 1) * (2 * np.pi / nphi)
    return pts.reshape(-1, 3), w.reshape(-1)


def tangent_projection(p):
    p = np.asarray(p, dtype=float)
    return np.eye(3) - p[..., :, None] * p[..., None, :]


@dataclass(eq=False)
class SphereGalerkin:
    """Dirac operator of the unit sphere on C^2-valued polynomials of degree <= L."""
    L: int = 12

    @cached_property
    def _setup(self):
        exps = exponents(self.L)
        pts, w = quadrature(self.L)
        V = monomials(pts, exps)
        # orthonormal basis of the restricted polynomials
        U, s, Wt = np.linalg.svd(np.sqrt(w)[:, None] * V, full_matrices=False)
        r = int(np.sum(s > 1e-10 * s[0]))
        coef = Wt[:r].T / s[:r]                              # monomial coefficients of the basis
        return exps, pts, w, coef

    @property
    def exps(self):
        return self._setup[0]

    @property
    def scalar_dim(self):
        return self._setup[3].shape[1]

    @property
    def dim(self):
        return 2 * self.scalar_dim

    @cached_property
    def _grad_maps(self):
        """Monomial-coefficient matrices of d/dx_a."""
        exps = self.exps
        idx = {e: i for i, e in enumerate(exps)}
        out = np.zeros((3, len(exps), len(exps)))
        for j, e in enumerate(exps):
            for a in range(3):
                if e[a] > 0:
                    f = list(e)
                    f[a] -= 1
                    out[a, idx[tuple(f)], j] = e[a]
        return out

    def basis_values(self, p):
        """Scalar basis functions at points, (..., r)."""
        return monomials(p, self.exps) @ self._setup[3]

    def basis_gradients(self, p):
        """Ambient gradients of the scalar basis, (..., 3, r)."""
        M = monomials(p, self.exps)
        coef = self._setup[3]
        return np.stack([M @ (self._grad_maps[a] @ coef) for a in range(3)], axis=-2)

    def spinor_values(self, c, p):
        """Field with coefficients c (..., r, 2) (basis index, spinor index) at points p."""
        return np.einsum("...r,rs->...s", self.basis_values(p), np.asarray(c).reshape(self.scalar_dim, 2))

    def dirac_on_nodes(self, c, p):
        """D applied to the field with coefficients c, evaluated at points p."""
        c = np.asarray(c).reshape(self.scalar_dim, 2)
        vals = self.basis_values(p) @ c
        grad = np.einsum("...ar,rs->...as", self.basis_gradients(p), c)          # ambient gradient
        tang = np.einsum("...ab,...bs->...as", tangent_projection(p), grad)
        S = np.einsum("ast,...at->...s", GAMMA3, tang)        # sum_a gamma_a d^T_a phi
        return -np.einsum("...st,...t->...s", cl(p), S) - vals

    def covariant_derivative(self, c, p, X):
        """nabla_X of the field at p (X tangent, ambient components)."""
        c = np.asarray(c).reshape(self.scalar_dim, 2)
        grad = np.einsum("...ar,rs->...as", self.basis_gradients(p), c)
        vals = self.basis_values(p) @ c
        dX = np.einsum("...a,...as->...s", X, grad)
        return dX + 0.5 * np.einsum("...st,...tu,...u->...s", cl(X), cl(p), vals)

    @cached_property
    def D(self):
        """Galerkin matrix in the orthonormal basis (index r * 2 + s)."""
        _, pts, w, _ = self._setup
        B = self.basis_values(pts)
        tang = np.einsum("qab,qbr->qar", tangent_projection(pts), self.basis_gradients(pts))
        C = -np.einsum("qst,atu->qasu", cl(pts), GAMMA3)
        M = np.einsum("q,qi,qasu,qaj->isju", w, B, C, tang).reshape(self.dim, self.dim)
        cols = M - np.kron(np.einsum("q,qi,qj->ij", w, B, B), np.eye(2))
        return 0.5 * (cols + cols.conj().T)

    @cached_property
    def _eig(self):
        return eigh(self.D)

    def spectrum(self):
        return self._eig[0]

    def heat(self, t, c):
        lam, Y = self._eig
        return Y @ (np.exp(-t * lam ** 2) * (Y.conj().T @ np.asarray(c).reshape(-1)))

    def dirac_coef(self, c):
        return self.D @ np.asarray(c).reshape(-1)

    def project(self, f):
        """Coefficients of the L^2 projection of a C^2-valued function f(p) -> (..., 2)."""
        _, pts, w, _ = self._setup
        B = self.basis_values(pts)
        return np.einsum("q,qr,qs->rs", w, B, f(pts)).reshape(-1)

    def kernel(self, t, p, q):
        """Heat kernel e^{-tD^2}(p, q) as 2x2 matrices, (..., 2, 2)."""
        lam, Y = self._eig
        r = self.scalar_dim
        Yr = Y.reshape(r, 2, -1)
        Fp = np.einsum("...r,rsj->...sj", self.basis_values(p), Yr)
        Fq = np.einsum("...r,rsj->...sj", self.basis_values(q), Yr)
        return np.einsum("...sj,j,...tj->...st", Fp, np.exp(-t * lam ** 2), np.conj(Fq))


def scalar_heat_kernel(t, cos_angle, lmax=80):
    """e^{-t Delta}(x, y) on the unit sphere as a function of cos(d(x, y))."""
    c = np.asarray(cos_angle, dtype=float)
    out = np.zeros_like(c)
    for l in range(lmax + 1):
        out = out + (2 * l + 1) / (4 * np.pi) * np.exp(-t * l * (l + 1)) * eval_legendre(l, c)
    return out


def exact_dirac_spectrum(kmax):
    """+-(k + 1) with multiplicity 2(k + 1) for k = 0..kmax."""
    vals = []
    for k in range(kmax + 1):
        vals += [k + 1.0] * (2 * (k + 1)) + [-(k + 1.0)] * (2 * (k + 1))
    return np.sort(vals)


def geodesic_step(p, frame, T, v):
    """Move along the great circle with initial velocity v, transporting an orthonormal
    tangent frame (..., 3, 2) and a spinor transport matrix T (..., 2, 2) exactly."""
    th = np.linalg.norm(v, axis=-1)
    safe = np.where(th > 0, th, 1.0)
    vh = v / safe[..., None]
    c, s = np.cos(th), np.sin(th)
    p_new = c[..., None] * p + s[..., None] * vh
    vh_new = -s[..., None] * p + c[..., None] * vh
    comp = np.einsum("...a,...ai->...i", vh, frame)
    frame_new = frame + (vh_new - vh)[..., :, None] * comp[..., None, :]
    # spinor transport: d/ds T = -(1/2) cl(pdot) cl(p) T with cl(pdot) cl(p) = cl(vh) cl(p) constant
    G = np.einsum("...st,...tu->...su", cl(vh), cl(p))
    half = 0.5 * th
    R = np.cos(half)[..., None, None] * np.eye(2) - np.sin(half)[..., None, None] * G
    return p_new, frame_new, R @ T


def clifford_frame(p, frame):
    """Matrices of Clifford multiplication by the frame vectors: cl(e_i) cl(nu), (..., 2, 2, 2)."""
    return np.einsum("...ai,...b,abst->...ist", frame, p,
                     np.einsum("ast,btu->absu", GAMMA3, GAMMA3))
