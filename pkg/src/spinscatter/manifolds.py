"""Chart-based model Riemannian manifolds and their curvature data.

Index conventions: ``dg[..., l, i, j] = d_l g_ij`` (derivative axes first),
``Gamma[..., k, i, j] = Gamma^k_ij`` and

    Rud[..., i, j, k, l] = (R(d_i, d_j) d_k)^l,   R(X, Y) = [nabla_X, nabla_Y] - nabla_[X, Y],

so that ``Ric_jk = sum_i Rud[i, j, k, i]`` is positive on round spheres.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable

import numpy as np
import sympy as sp
from scipy.stats import qmc

from . import fiber as F
from .clifford import build_clifford_rep, project_to_clifford

MAX_ORDER = 3


# ---------------------------------------------------------------------------
# metric jets


class SymbolicJet:
    """Metric components as sympy expressions, with lambdified derivatives up to third order."""

    def __init__(self, coords, G):
        self.coords = tuple(coords)
        self.G = sp.Matrix(G)
        self.n = len(self.coords)
        if self.G.shape != (self.n, self.n):
            raise ValueError("metric matrix does not match the number of coordinates")
        self._funcs = {}

    def _components(self, order):
        n = self.n
        idx = [(i, j) for i in range(n) for j in range(i, n)]
        base = [self.G[i, j] for i, j in idx]
        ders = [()]
        for _ in range(order):
            ders = [d + (l,) for d in ders for l in range(n)]
        exprs = []
        for d in ders:
            for e in base:
                exprs.append(sp.diff(e, *[self.coords[l] for l in d]) if d else e)
        return ders, idx, exprs

    def _func(self, order):
        if order not in self._funcs:
            ders, idx, exprs = self._components(order)
            f = sp.lambdify(self.coords, exprs, modules="numpy", cse=True)
            self._funcs[order] = (ders, idx, f)
        return self._funcs[order]

    def evaluate(self, x, order):
        x = np.asarray(x, dtype=float)
        batch = x.shape[:-1]
        n = self.n
        ders, idx, f = self._func(order)
        with np.errstate(all="ignore"):
            vals = f(*np.moveaxis(x, -1, 0))
        vals = [np.broadcast_to(np.asarray(v, dtype=float), batch) for v in vals]
        out = np.empty(batch + (n,) * order + (n, n))
        k = 0
        for d in ders:
            for i, j in idx:
                out[(Ellipsis,) + d + (i, j)] = vals[k]
                out[(Ellipsis,) + d + (j, i)] = vals[k]
                k += 1
        return out


class FiniteDifferenceJet:
    """Derivatives of a vectorised metric callable by nested central differences
    with one Richardson extrapolation step (error O(h^4))."""

    STEPS = {1: 1e-3, 2: 3e-3, 3: 1e-2}

    def __init__(self, metric: Callable, n: int, length_scale: float = 1.0):
        self.metric = metric
        self.n = n
        self.length_scale = length_scale

    def _nested(self, x, axes, h):
        if not axes:
            return np.asarray(self.metric(x), dtype=float)
        e = np.zeros(self.n)
        e[axes[0]] = h
        return (self._nested(x + e, axes[1:], h) - self._nested(x - e, axes[1:], h)) / (2 * h)

    def evaluate(self, x, order):
        x = np.asarray(x, dtype=float)
        if order == 0:
            return np.asarray(self.metric(x), dtype=float)
        h = self.STEPS[order] * self.length_scale
        n = self.n
        out = np.empty(x.shape[:-1] + (n,) * order + (n, n))
        for axes in np.ndindex(*(n,) * order):
            srt = tuple(sorted(axes))
            tail = (slice(None), slice(None))
            if srt != axes:
                out[(Ellipsis,) + axes + tail] = out[(Ellipsis,) + srt + tail]
                continue
            coarse = self._nested(x, axes, h)
            fine = self._nested(x, axes, h / 2)
            out[(Ellipsis,) + axes + tail] = (4 * fine - coarse) / 3
        return out


# ---------------------------------------------------------------------------
# models


@dataclass(frozen=True)
class Domain:
    kind: str                       # "R^n", "torus", "ball", "half-space"
    periods: tuple | None = None

    def contains(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "ball":
            return np.sum(x * x, axis=-1) < 1.0
        if self.kind == "half-space":
            return x[..., -1] > 0
        return np.all(np.isfinite(x), axis=-1)

    def wrap(self, x):
        if self.kind == "torus":
            return np.mod(x, np.asarray(self.periods))
        return x


@dataclass(frozen=True, eq=False)
class ModelManifold:
    name: str
    n: int
    jet_source: object = field(repr=False)
    domain: Domain = Domain("R^n")
    params: dict = field(default_factory=dict)
    scal_constant: float | None = None
    sectional_constant: float | None = None
    ball_volume_closed: Callable | None = field(default=None, repr=False)
    length_scale: float = 1.0
    analytic: bool = True
    radial_profile: object = field(default=None, repr=False)

    def check_points(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.n:
            raise ValueError(f"{self.name}: points must have {self.n} coordinates, got shape {x.shape}")
        if not np.all(self.domain.contains(x)):
            raise ValueError(f"{self.name}: point outside the chart domain ({self.domain.kind})")
        return x

    def jet(self, x, order):
        """Metric derivative of the given order at x (order 0 is the metric itself)."""
        x = self.check_points(x)
        out = self.jet_source.evaluate(x, order)
        bad = ~np.all(np.isfinite(out.reshape(x.shape[:-1] + (-1,))), axis=-1)
        if np.any(bad):
            # removable singularities of symbolic expressions (e.g. at a chart origin):
            # average over a small symmetric stencil
            eps = 1e-6 * self.length_scale
            xb = x[bad]
            acc = 0.0
            for k in range(self.n):
                for s in (1, -1):
                    acc = acc + self.jet_source.evaluate(xb + s * eps * np.eye(self.n)[k], order)
            out = np.array(out)
            out[bad] = acc / (2 * self.n)
        return out

    def metric(self, x):
        return self.jet(x, 0)

    def metric_jet(self, x, order=1):
        return tuple(self.jet(x, k) for k in range(order + 1))

    @cached_property
    def rep(self):
        return build_clifford_rep(self.n)


def _sym_coords(n):
    return sp.symbols(" ".join(f"x{i + 1}" for i in range(n)), real=True)


def symbolic_metric(name, coords, G, *, domain=Domain("R^n"), **kw):
    coords = tuple(coords)
    return ModelManifold(name, len(coords), SymbolicJet(coords, G), domain=domain, **kw)


def user_metric(name, metric: Callable, n: int, *, domain=Domain("R^n"), length_scale=1.0, **kw):
    return ModelManifold(name, n, FiniteDifferenceJet(metric, n, length_scale), domain=domain,
                         length_scale=length_scale, analytic=False, **kw)


def _flat_volume(n):
    from math import gamma, pi
    c = pi ** (n / 2) / gamma(n / 2 + 1)
    return lambda r: c * np.asarray(r, dtype=float) ** n


def flat_torus(n=2, period=2 * np.pi):
    x = _sym_coords(n)
    return symbolic_metric(f"flat_torus_{n}", x, sp.eye(n), domain=Domain("torus", (period,) * n),
                           params={"n": n, "period": period}, scal_constant=0.0, sectional_constant=0.0,
                           ball_volume_closed=_flat_volume(n))


def euclidean(n=2):
    x = _sym_coords(n)
    return symbolic_metric(f"euclidean_{n}", x, sp.eye(n), params={"n": n}, scal_constant=0.0,
                           sectional_constant=0.0, ball_volume_closed=_flat_volume(n))


def round_sphere(radius=1.0):
    """Round 2-sphere in stereographic coordinates (all points except one pole)."""
    x = _sym_coords(2)
    R = sp.nsimplify(radius)
    conf = 4 * R ** 2 / (1 + x[0] ** 2 + x[1] ** 2) ** 2
    K = 1.0 / radius ** 2
    vol = lambda r: 2 * np.pi * radius ** 2 * (1 - np.cos(np.minimum(np.asarray(r, dtype=float) / radius, np.pi)))
    return symbolic_metric("round_sphere", x, conf * sp.eye(2), params={"radius": radius},
                           scal_constant=2 * K, sectional_constant=K, ball_volume_closed=vol)


def _hyperbolic_volume(n):
    if n == 2:
        return lambda r: 2 * np.pi * (np.cosh(r) - 1)
    if n == 3:
        return lambda r: np.pi * (np.sinh(2 * np.asarray(r, dtype=float)) - 2 * np.asarray(r, dtype=float))
    return None


def hyperbolic_disk(n=2):
    """Hyperbolic space of curvature -1 in the Poincare ball chart."""
    x = _sym_coords(n)
    q = sum(c ** 2 for c in x)
    model = symbolic_metric(f"hyperbolic_disk_{n}", x, 4 / (1 - q) ** 2 * sp.eye(n), domain=Domain("ball"),
                            params={"n": n}, scal_constant=-float(n * (n - 1)), sectional_constant=-1.0,
                            ball_volume_closed=_hyperbolic_volume(n))
    return model


def hyperbolic_half_space(n=3):
    """Hyperbolic space of curvature -1 in the upper half-space chart (last coordinate > 0)."""
    x = _sym_coords(n)
    return symbolic_metric(f"hyperbolic_half_space_{n}", x, sp.eye(n) / x[-1] ** 2, domain=Domain("half-space"),
                           params={"n": n}, scal_constant=-float(n * (n - 1)), sectional_constant=-1.0,
                           ball_volume_closed=_hyperbolic_volume(n))


def disk_distance_expr(coords):
    """Hyperbolic distance to the origin in the Poincare ball chart."""
    q = sum(c ** 2 for c in coords)
    return 2 * sp.atanh(sp.sqrt(q))


def conformal(base: ModelManifold, phi, name=None, *, radial_profile=None):
    """e^{2 phi} g_0 for a symbolic base model and a sympy expression phi in its coordinates."""
    if not isinstance(base.jet_source, SymbolicJet):
        raise ValueError("conformal perturbations need a symbolic base model")
    src = base.jet_source
    phi = sp.sympify(phi)
    return symbolic_metric(name or f"conformal[{base.name}]", src.coords, sp.exp(2 * phi) * src.G,
                           domain=base.domain, params={"base": base.name, "phi": str(phi)},
                           radial_profile=radial_profile)


def diagonal_torus(a11, a22, period=2 * np.pi, name="diagonal_torus"):
    """diag(a11, a22) on T^2 with sympy expressions (positive, periodic) in x1, x2."""
    x = _sym_coords(2)
    G = sp.diag(sp.sympify(a11), sp.sympify(a22))
    return symbolic_metric(name, x, G, domain=Domain("torus", (period, period)),
                           params={"a11": str(a11), "a22": str(a22)})


def expression_symbols(n):
    """Names usable in metric/profile expression strings."""
    x = _sym_coords(n)
    return {f"x{i + 1}": s for i, s in enumerate(x)} | {"pi": sp.pi}


def parse_expression(text, n, extra=None):
    loc = expression_symbols(n)
    if extra:
        loc |= extra
    try:
        return sp.sympify(text, locals=loc)
    except (sp.SympifyError, SyntaxError, TypeError) as exc:
        raise ValueError(f"cannot parse expression {text!r}: {exc}") from exc


# ---------------------------------------------------------------------------
# curvature


@dataclass
class CurvatureData:
    g: np.ndarray
    Gamma: np.ndarray
    dGamma: np.ndarray          # [..., m, k, i, j] = d_m Gamma^k_ij
    Rud: np.ndarray
    Ric_form: np.ndarray        # Ric_jk
    Ric: np.ndarray             # Ric^a_k, endomorphism of TM
    scal: np.ndarray
    nablaR: np.ndarray | None = None     # [..., p, i, j, k, l] = (nabla_p R)(d_i, d_j) d_k, component l
    grad_scal: np.ndarray | None = None  # d_p scal (covector)
    nablaRic: np.ndarray | None = None   # [..., p, j, k] = (nabla_p Ric)_jk

    @property
    def n(self):
        return self.g.shape[-1]

    def frame(self):
        return F.sym_sqrt_pair(self.g)[1]

    def R_norm(self):
        """Frobenius norm of R in a g-orthonormal frame."""
        E = self.frame()
        T = np.einsum("...ia,...jb,...kc,...el,...ijkl->...abce", E, E, E, np.linalg.inv(E), self.Rud, optimize=True)
        return np.sqrt(np.sum(T ** 2, axis=(-4, -3, -2, -1)))

    def nablaR_norm(self):
        """Frobenius norm of nabla R in a g-orthonormal frame."""
        E = self.frame()
        T = np.einsum("...pq,...ia,...jb,...kc,...el,...pijkl->...qabce", E, E, E, E, np.linalg.inv(E),
                      self.nablaR, optimize=True)
        return np.sqrt(np.sum(T ** 2, axis=(-5, -4, -3, -2, -1)))

    def Ric_op_norm(self):
        Gh, Gmh = F.sym_sqrt_pair(self.g)
        return np.linalg.norm(Gh @ self.Ric @ Gmh, 2, axis=(-2, -1))


def mT(x):
    return np.swapaxes(x, -1, -2)


def curvature_from_jet(g, dg, ddg, dddg=None):
    ginv = np.linalg.inv(g)
    dginv = -np.einsum("...ka,...mab,...bq->...mkq", ginv, dg, ginv)
    S = dg + np.swapaxes(dg, -3, -2) - np.moveaxis(dg, -3, -1)            # S[i, j, q]
    dS = ddg + np.swapaxes(ddg, -3, -2) - np.moveaxis(ddg, -3, -1)        # dS[m, i, j, q]
    Gam = 0.5 * np.einsum("...kq,...ijq->...kij", ginv, S)
    dGam = 0.5 * (np.einsum("...mkq,...ijq->...mkij", dginv, S) + np.einsum("...kq,...mijq->...mkij", ginv, dS))
    # Rud[i, j, k, l] = d_i G^l_jk - d_j G^l_ik + G^l_im G^m_jk - G^l_jm G^m_ik
    t1 = np.einsum("...iljk->...ijkl", dGam)
    quad = np.einsum("...lim,...mjk->...ijkl", Gam, Gam)
    Rud = t1 - np.swapaxes(t1, -4, -3) + quad - np.swapaxes(quad, -4, -3)
    Ric_form = np.einsum("...ijki->...jk", Rud)
    Ric = np.einsum("...aj,...jk->...ak", ginv, Ric_form)
    scal = np.einsum("...aa->...", Ric)
    data = CurvatureData(g, Gam, dGam, Rud, Ric_form, Ric, scal)
    if dddg is None:
        return data
    # second derivatives of Gamma
    ddginv = (-np.einsum("...pka,...mab,...bq->...pmkq", dginv, dg, ginv)
              - np.einsum("...ka,...pmab,...bq->...pmkq", ginv, ddg, ginv)
              - np.einsum("...ka,...mab,...pbq->...pmkq", ginv, dg, dginv))
    ddS = dddg + np.swapaxes(dddg, -3, -2) - np.moveaxis(dddg, -3, -1)  # ddS[p, m, i, j, q]
    ddGam = 0.5 * (np.einsum("...pmkq,...ijq->...pmkij", ddginv, S)
                   + np.einsum("...mkq,...pijq->...pmkij", dginv, dS)
                   + np.einsum("...pkq,...mijq->...pmkij", dginv, dS)
                   + np.einsum("...kq,...pmijq->...pmkij", ginv, ddS))
    t1 = np.einsum("...piljk->...pijkl", ddGam)
    q1 = np.einsum("...plim,...mjk->...pijkl", dGam, Gam) + np.einsum("...lim,...pmjk->...pijkl", Gam, dGam)
    dR = t1 - np.swapaxes(t1, -4, -3) + q1 - np.swapaxes(q1, -4, -3)
    nR = (dR + np.einsum("...lpq,...ijkq->...pijkl", Gam, Rud)
          - np.einsum("...qpi,...qjkl->...pijkl", Gam, Rud)
          - np.einsum("...qpj,...iqkl->...pijkl", Gam, Rud)
          - np.einsum("...qpk,...ijql->...pijkl", Gam, Rud))
    data.nablaR = nR
    data.nablaRic = np.einsum("...pijki->...pjk", nR)
    data.grad_scal = np.einsum("...jk,...pjk->...p", ginv, data.nablaRic)
    return data


def curvature(m: ModelManifold, x, *, derivative=True) -> CurvatureData:
    """Riemann, Ricci, scalar curvature and (optionally) nabla R at the point(s) x."""
    x = m.check_points(x)
    jets = [m.jet(x, k) for k in range(4 if derivative else 3)]
    return curvature_from_jet(*jets)


def christoffel(m: ModelManifold, x):
    g, dg = m.jet(x, 0), m.jet(x, 1)
    return F.christoffel(g, dg)


# ---------------------------------------------------------------------------
# curvature sections acting on spinors


def default_frame(g):
    """The g-orthonormal frame g^{-1/2} (columns)."""
    return F.sym_sqrt_pair(g)[1]


def spinor_curvature_from(rep, curv: CurvatureData, u, v, frame=None):
    """R~(u, v) = 1/4 sum_ij g(R(u, v) e_i, e_j) gamma_i gamma_j in the spin frame over ``frame``."""
    E = default_frame(curv.g) if frame is None else frame
    Einv = np.linalg.inv(E)
    Ruv = np.einsum("...ijkl,...i,...j->...lk", curv.Rud, np.asarray(u, float), np.asarray(v, float))
    Ef = Einv @ Ruv @ E
    return 0.25 * project_to_clifford(rep, 0.5 * (Ef - mT(Ef)), check_skew=False)


def spinor_curvature(rep, m: ModelManifold, x, u, v, frame=None):
    rep = rep or m.rep
    return spinor_curvature_from(rep, curvature(m, x, derivative=False), u, v, frame)


def underline_Rtilde_from(rep, curv: CurvatureData, frame=None):
    """Weitzenboeck endomorphism of T*M (x) Sigma (flattened layout a * d + s).

    phi -> (Ric' (x) 1) phi - 2 sum_i R~(., e_i) phi(e_i) + scal/4 phi.
    """
    n, d = curv.n, rep.spinor_dim
    E = default_frame(curv.g) if frame is None else frame
    ginv = np.linalg.inv(curv.g)
    eye_n = np.eye(n)
    # block [a, b]: -2 R~(d_a, g^{-1} d_b) since sum_i E[b, i] e_i = g^{-1}[:, b]
    blocks = np.stack([np.stack([spinor_curvature_from(rep, curv, eye_n[a] + 0 * curv.scal[..., None],
                                                       ginv[..., :, b], E) for b in range(n)], axis=-3)
                       for a in range(n)], axis=-4)                                    # [..., a, b, s, t]
    out = -2 * blocks
    out = out + np.einsum("...ba,st->...abst", curv.Ric, np.eye(d))
    out = out + 0.25 * curv.scal[..., None, None, None, None] * np.einsum("ab,st->abst", eye_n, np.eye(d))
    return np.swapaxes(out, -3, -2).reshape(curv.g.shape[:-2] + (n * d, n * d))


def underline_Rtilde(rep, m: ModelManifold, x, frame=None):
    rep = rep or m.rep
    return underline_Rtilde_from(rep, curvature(m, x, derivative=False), frame)


def rho_bismut_from(rep, curv: CurvatureData, frame=None):
    """rho(psi)(v) = 1/4 (grad scal, v) psi + sum_i (nabla_{e_i} R~)(e_i, v) psi, as (..., n*d, d)."""
    if curv.nablaR is None:
        raise ValueError("rho needs curvature data with nabla R")
    n, d = curv.n, rep.spinor_dim
    E = default_frame(curv.g) if frame is None else frame
    Einv = np.linalg.inv(E)
    ginv = np.linalg.inv(curv.g)
    # endomorphism sum_i (nabla_{e_i} R)(e_i, d_a) = sum_{m,p} g^{mp} (nabla_m R)(d_p, d_a)
    div = np.einsum("...mp,...mpakl->...alk", ginv, curv.nablaR)          # [a, l, k]
    Ef = np.einsum("...ij,...ajk,...kl->...ail", Einv, div, E)
    blocks = 0.25 * project_to_clifford(rep, 0.5 * (Ef - mT(Ef)), check_skew=False)
    blocks = blocks + 0.25 * curv.grad_scal[..., :, None, None] * np.eye(d)
    return blocks.reshape(curv.g.shape[:-2] + (n * d, d))


def rho_bismut(rep, m: ModelManifold, x, frame=None):
    rep = rep or m.rep
    return rho_bismut_from(rep, curvature(m, x), frame)


# ---------------------------------------------------------------------------
# geodesics, balls, weights


def geodesic_rhs(m: ModelManifold, state):
    n = m.n
    x, v = state[..., :n], state[..., n:2 * n]
    Gam = christoffel(m, x)
    acc = -np.einsum("...kij,...i,...j->...k", Gam, v, v)
    return np.concatenate([v, acc], axis=-1)


def exp_map(m: ModelManifold, x, V, steps=32):
    """exp_x(V) by RK4 on the geodesic equation (coordinates, batched)."""
    x = np.asarray(x, dtype=float)
    V = np.asarray(V, dtype=float)
    x, V = np.broadcast_arrays(x, V)
    state = np.concatenate([x, V], axis=-1)
    dt = 1.0 / steps
    for _ in range(steps):
        k1 = geodesic_rhs(m, state)
        k2 = geodesic_rhs(m, state + 0.5 * dt * k1)
        k3 = geodesic_rhs(m, state + 0.5 * dt * k2)
        k4 = geodesic_rhs(m, state + dt * k3)
        state = state + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    return m.domain.wrap(state[..., :m.n])


def _variational_rhs(m, state):
    n = m.n
    x, v = state[..., :n], state[..., n:2 * n]
    Y = state[..., 2 * n:2 * n + n * n].reshape(x.shape[:-1] + (n, n))
    Z = state[..., 2 * n + n * n:2 * n + 2 * n * n].reshape(x.shape[:-1] + (n, n))
    g, dg = m.jet(x, 0), m.jet(x, 1)
    ddg = m.jet(x, 2)
    curv = curvature_from_jet(g, dg, ddg)
    Gam, dGam = curv.Gamma, curv.dGamma
    acc = -np.einsum("...kij,...i,...j->...k", Gam, v, v)
    dY = Z
    dZ = (-np.einsum("...mkij,...ma,...i,...j->...ka", dGam, Y, v, v)
          - 2 * np.einsum("...kij,...i,...ja->...ka", Gam, v, Z))
    vol = np.sqrt(np.linalg.det(g))
    return np.concatenate([v, acc, dY.reshape(x.shape[:-1] + (-1,)), dZ.reshape(x.shape[:-1] + (-1,))], axis=-1), vol


def _sphere_rule(n, m_theta):
    """Quadrature nodes/weights on the unit sphere S^{n-1} (n = 2 or 3)."""
    if n == 2:
        th = 2 * np.pi * (np.arange(m_theta) + 0.5) / m_theta
        return np.stack([np.cos(th), np.sin(th)], axis=-1), np.full(m_theta, 2 * np.pi / m_theta)
    if n == 3:
        z, wz = np.polynomial.legendre.leggauss(m_theta // 2)
        ph = 2 * np.pi * (np.arange(m_theta) + 0.5) / m_theta
        Z, P = np.meshgrid(z, ph, indexing="ij")
        s = np.sqrt(1 - Z ** 2)
        pts = np.stack([s * np.cos(P), s * np.sin(P), Z], axis=-1).reshape(-1, 3)
        w = (wz[:, None] * np.full(m_theta, 2 * np.pi / m_theta)[None, :]).reshape(-1)
        return pts, w
    raise ValueError("ball-volume quadrature implemented for n = 2, 3")


def ball_volume_quadrature(m: ModelManifold, x, r, *, m_theta=64, n_radial=24, steps_per_node=4):
    """Volume of the geodesic ball B(x, r) by integrating the Jacobian of exp in polar coordinates.

    ``x`` may be a batch of points (..., n); the result then has shape (...).
    """
    x = m.check_points(np.asarray(x, dtype=float))
    n = m.n
    batch = x.shape[:-1]
    xs = x.reshape(-1, n)
    K = xs.shape[0]
    dirs, wdir = _sphere_rule(n, m_theta)
    D = dirs.shape[0]
    Gmh = F.sym_sqrt_pair(m.metric(xs))[1]                          # (K, n, n)
    V = np.einsum("da,kba->kdb", dirs, Gmh).reshape(K * D, n)       # g_x-unit initial velocities
    Gmh_rep = np.repeat(Gmh, D, axis=0)
    nodes, wts = np.polynomial.legendre.leggauss(n_radial)
    s_nodes = 0.5 * r * (nodes + 1)
    w_nodes = 0.5 * r * wts
    P = K * D
    state = np.concatenate([np.repeat(xs, D, axis=0), V, np.zeros((P, n * n)),
                            np.broadcast_to(np.eye(n).reshape(-1), (P, n * n))], axis=-1)
    total = np.zeros(P)
    s = 0.0
    for sn, wn in zip(s_nodes, w_nodes):
        steps = max(1, int(np.ceil(steps_per_node * (sn - s) / max(r / n_radial, 1e-12))))
        dt = (sn - s) / steps
        for _ in range(steps):
            k1, _ = _variational_rhs(m, state)
            k2, _ = _variational_rhs(m, state + 0.5 * dt * k1)
            k3, _ = _variational_rhs(m, state + 0.5 * dt * k2)
            k4, _ = _variational_rhs(m, state + dt * k3)
            state = state + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        s = sn
        Y = state[:, 2 * n:2 * n + n * n].reshape(P, n, n)
        gx = m.metric(m.domain.wrap(state[:, :n]))
        # dvol = sqrt(det g(exp)) |det d exp| dV, polar in g_x-orthonormal coordinates
        jac = np.sqrt(np.linalg.det(gx)) * np.abs(np.linalg.det(Y @ Gmh_rep)) / sn
        total += wn * jac
    out = (total.reshape(K, D) @ wdir).reshape(batch)
    return float(out) if out.ndim == 0 else out


def ball_volume(m: ModelManifold, x, r, **kw):
    """mu(B(x, r)); closed form for space forms, otherwise polar quadrature of the exponential map."""
    if r <= 0:
        raise ValueError("ball radius must be positive")
    if m.ball_volume_closed is not None:
        return float(m.ball_volume_closed(r))
    return ball_volume_quadrature(m, x, r, **kw)


def ball_samples(m: ModelManifold, x, r=1.0, count=256):
    """Quasi-uniform points of the geodesic ball B(x, r): x itself plus images under exp of a Halton set."""
    x = m.check_points(np.asarray(x, dtype=float))
    n = m.n
    u = qmc.Halton(d=n, scramble=False).random(count)[1:]
    # map the unit cube to the unit ball: Gaussian-free radial/angle construction
    if n == 2:
        rad = np.sqrt(u[:, 0])
        th = 2 * np.pi * u[:, 1]
        pts = np.stack([rad * np.cos(th), rad * np.sin(th)], axis=-1)
    else:
        rad = u[:, 0] ** (1 / n)
        z = 2 * u[:, 1] - 1
        ph = 2 * np.pi * u[:, 2]
        s = np.sqrt(1 - z ** 2)
        pts = rad[:, None] * np.stack([s * np.cos(ph), s * np.sin(ph), z], axis=-1)
        if n > 3:
            raise ValueError("ball sampling implemented for n <= 3")
    Gmh = F.sym_sqrt_pair(m.metric(x))[1]
    V = r * pts @ Gmh.T
    ys = exp_map(m, np.broadcast_to(x, V.shape), V)
    return np.concatenate([x[None, :], ys], axis=0)


def fiber_jet(m_g: ModelManifold, m_h: ModelManifold, x, frame=None):
    if m_g.n != m_h.n:
        raise ValueError("metric pair has mismatched dimensions")
    x = m_g.check_points(x)
    return F.FiberJet.from_arrays(m_g.jet(x, 0), m_h.jet(x, 0), m_g.jet(x, 1), m_h.jet(x, 1), frame=frame)


@dataclass
class WeightData:
    Psi_g: float
    Psi_h: float
    delta: float
    omega: float
    Psi1: float
    Psi2: float
    ball_volume: float
    n_ball: int
    safety: float

    def as_dict(self):
        return {k: float(v) if isinstance(v, (float, np.floating)) else v for k, v in self.__dict__.items()}


def psi_weight(m: ModelManifold, x, n_ball=256, safety=1.05, radius=1.0):
    """(1 + safety * max over sampled B(x, radius) of |nabla R|)^2."""
    if m.sectional_constant is not None:
        return 1.0
    ys = ball_samples(m, x, radius, n_ball)
    mx = float(np.max(curvature(m, ys).nablaR_norm()))
    return (1.0 + safety * mx) ** 2


def weight_functions(m_g: ModelManifold, m_h: ModelManifold, x, t, *, n_ball=256, safety=1.05):
    """Pointwise weights of the integrability criterion at a single point x."""
    if n_ball < 256:
        raise ValueError("at least 256 ball samples are required")
    x = m_g.check_points(np.asarray(x, dtype=float))
    jet = fiber_jet(m_g, m_h, x)
    dl = float(F.delta(jet.pair))
    om = float(F.omega(jet))
    pg = psi_weight(m_g, x, n_ball, safety)
    ph = psi_weight(m_h, x, n_ball, safety)
    psi1 = max(dl ** 2, om ** 2, dl * pg)
    psi2 = max(om, dl * pg, dl * ph)
    vol = ball_volume(m_g, x, float(np.sqrt(t)))
    return WeightData(pg, ph, dl, om, psi1, psi2, vol, n_ball, safety)
