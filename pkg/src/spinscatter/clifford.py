"""Complex Clifford algebra representations with the convention e.e = -|e|^2.

Gamma matrices are built from Pauli strings (Jordan-Wigner layout) and
multiplied by i, so every gamma is skew-Hermitian and squares to -Id.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

_I2 = np.eye(2, dtype=complex)
_X = np.array([[0, 1], [1, 0]], dtype=complex)
_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
_Z = np.array([[1, 0], [0, -1]], dtype=complex)

N_MIN, N_MAX = 2, 8


def _kron_all(mats):
    out = np.ones((1, 1), dtype=complex)
    for m in mats:
        out = np.kron(out, m)
    return out


@dataclass(frozen=True)
class CliffordRep:
    n: int
    spinor_dim: int
    gammas: tuple = field(repr=False)

    def gamma_array(self) -> np.ndarray:
        """Stacked gammas, shape (n, d, d)."""
        return _stack(self.n)

    def vec(self, v) -> np.ndarray:
        """Matrix of Clifford multiplication by v (orthonormal frame components)."""
        v = np.asarray(v)
        if v.shape[-1] != self.n:
            raise ValueError(f"vector has {v.shape[-1]} components, representation has n={self.n}")
        return np.tensordot(v, self.gamma_array(), axes=([-1], [0]))

    def volume_element(self) -> np.ndarray:
        out = np.eye(self.spinor_dim, dtype=complex)
        for g in self.gammas:
            out = out @ g
        return out


@lru_cache(maxsize=None)
def _stack(n: int) -> np.ndarray:
    arr = np.array(build_clifford_rep(n).gammas)
    arr.setflags(write=False)
    return arr


@lru_cache(maxsize=None)
def build_clifford_rep(n: int) -> CliffordRep:
    if not isinstance(n, (int, np.integer)) or not (N_MIN <= n <= N_MAX):
        raise ValueError(f"Clifford dimension must be an integer in [{N_MIN}, {N_MAX}], got {n!r}")
    n = int(n)
    m = n // 2
    hermitian = []
    for k in range(m):
        left = [_Z] * k
        right = [_I2] * (m - k - 1)
        hermitian.append(_kron_all(left + [_X] + right))
        hermitian.append(_kron_all(left + [_Y] + right))
    if n % 2:
        hermitian.append(_kron_all([_Z] * m))
    gammas = []
    for G in hermitian:
        g = 1j * G
        g.setflags(write=False)
        gammas.append(g)
    return CliffordRep(n=n, spinor_dim=2 ** m, gammas=tuple(gammas))


def clifford_mul(rep: CliffordRep, v, sigma) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    sigma = np.asarray(sigma, dtype=complex)
    if v.shape != (rep.n,):
        raise ValueError(f"expected a vector of length {rep.n}, got shape {v.shape}")
    if sigma.shape[0] != rep.spinor_dim:
        raise ValueError(f"expected spinor of dimension {rep.spinor_dim}, got shape {sigma.shape}")
    return rep.vec(v) @ sigma


def project_to_clifford(rep: CliffordRep, E, *, check_skew: bool = True, atol: float = 1e-10) -> np.ndarray:
    """Clifford image of an endomorphism E given in an orthonormal frame.

    With E(e_j) = sum_i E[i, j] e_i the tensor e_j^* (x) E(e_j) is mapped to
    sum_{i,j} E[i, j] gamma_j gamma_i.  For skew E one quarter of the result
    is the infinitesimal spin lift, i.e. [pr(E)/4, c(v)] = c(E v).
    """
    E = np.asarray(E)
    if E.shape[-2:] != (rep.n, rep.n):
        raise ValueError(f"expected {rep.n}x{rep.n} matrices, got shape {E.shape}")
    if check_skew:
        ET = np.swapaxes(E, -1, -2)
        if np.max(np.abs(E + ET), initial=0.0) > atol * max(1.0, np.max(np.abs(E), initial=0.0)):
            raise ValueError("project_to_clifford expects a skew-symmetric matrix")
    # sum_{ij} E_ij g_j g_i
    return np.einsum("...ij,jiac->...ac", E, _pairs(rep.n))


def spin_lift(rep: CliffordRep, E) -> np.ndarray:
    """Spin representation of exp(E) for skew E: exp(pr(E)/4)."""
    from scipy.linalg import expm

    return expm(0.25 * project_to_clifford(rep, E))


@lru_cache(maxsize=None)
def _pairs(n: int) -> np.ndarray:
    G = _stack(n)
    arr = np.einsum("iab,jbc->ijac", G, G)
    arr.setflags(write=False)
    return arr


def pair_matrix(rep: CliffordRep) -> np.ndarray:
    """gamma_i gamma_j for all i, j, shape (n, n, d, d)."""
    return _pairs(rep.n)
