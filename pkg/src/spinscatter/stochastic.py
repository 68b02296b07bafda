"""Brownian motion with frame and spinor transport, the Q-process, and Monte Carlo
estimators of the heat semigroup, its covariant derivative and its Dirac derivative.

Conventions
-----------
* The generator is Delta, not Delta/2: every step has Gaussian increments of
  covariance 2 dt Id in frame coordinates.
* Values at the starting point x are expressed in frame components: covectors
  through the starting frame u_0 (``phi(u_0 e_i)``), spinors in the backend's
  spinor trivialisation at x.  On chart models u_0 = g(x)^{-1/2}, so spinor
  components are those of the spin frame over g^{-1/2}, the same frame the
  torus reference solver uses.
* ``(a, b) = b^H a``, linear in the first slot.
* With generator Delta the Ito integrals of the derivative formulas carry a
  factor 1/2 and the rho-term carries factor 1 (the quadratic variation of the
  anti-development is 2 ds).  See ``bismut_gradient``.
"""
from __future__ import annotations

import multiprocessing
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from math import inf

import numpy as np

from . import fiber as F
from . import sphere as S
from .clifford import build_clifford_rep, project_to_clifford
from .manifolds import ModelManifold, curvature_from_jet, rho_bismut_from, underline_Rtilde_from

MIN_STEPS = 16


@dataclass(frozen=True)
class PathConfig:
    """Horizon ``t``, time grid, path count, exit radius and seeding of a path ensemble."""
    t: float
    n_steps: int = 64
    n_paths: int = 10_000
    r: float = inf
    seed: int = 0
    scheme: str = "geodesic-rk4"
    chunk: int = 2048
    workers: int = 1
    antithetic: bool = False

    def __post_init__(self):
        if not self.t > 0:
            raise ValueError(f"horizon t must be positive, got {self.t}")
        if int(self.n_steps) != self.n_steps or self.n_steps < MIN_STEPS:
            raise ValueError(f"n_steps must be an integer >= {MIN_STEPS}, got {self.n_steps}")
        if int(self.n_paths) != self.n_paths or self.n_paths < 2:
            raise ValueError(f"n_paths must be an integer >= 2, got {self.n_paths}")
        if not self.r > 0:
            raise ValueError("exit radius must be positive")
        if self.scheme not in ("geodesic-rk4", "exact"):
            raise ValueError(f"unknown step scheme {self.scheme!r}")
        if self.chunk < 1 or self.workers < 1:
            raise ValueError("chunk and workers must be positive")
        if self.antithetic and self.n_paths % 2:
            raise ValueError("antithetic sampling needs an even number of paths")

    @property
    def dt(self):
        return self.t / self.n_steps


def path_normals(seed, indices, n_steps, n, antithetic=False):
    """Standard normals (len(indices), n_steps, n); path i always draws from the stream (seed, i).

    With ``antithetic`` paths 2j and 2j + 1 share the stream (seed, j) with opposite signs.
    """
    if not antithetic:
        return np.stack([np.random.default_rng([int(seed), int(i)]).standard_normal((n_steps, n)) for i in indices])
    return np.stack([(1 - 2 * (int(i) % 2)) * np.random.default_rng([int(seed), int(i) // 2])
                     .standard_normal((n_steps, n)) for i in indices])


def pairwise_mean(samples):
    """Mean over the leading (path) axis using numpy's pairwise summation."""
    a = np.ascontiguousarray(np.moveaxis(np.asarray(samples), 0, -1))
    return np.sum(a, axis=-1) / a.shape[-1]


# ---------------------------------------------------------------------------
# path state and geometry backends


@dataclass
class PathState:
    """Ensemble state after time ``s``; arrays carry a leading path axis."""
    backend: object = field(repr=False)
    x: np.ndarray
    u: np.ndarray
    T: np.ndarray
    s: float = 0.0
    scal_integral: np.ndarray | None = None
    bbar: np.ndarray | None = None            # accumulated anti-development
    increments: list = field(default_factory=list)
    Q: np.ndarray | None = None
    exited: np.ndarray | None = None
    tau: np.ndarray | None = None
    frame_drift: float = 0.0                  # largest orthonormality correction applied
    unitarity_drift: float = 0.0
    record: bool = False
    x0: np.ndarray | None = None              # starting point and frame
    u0: np.ndarray | None = None
    R_start: np.ndarray | None = field(default=None, repr=False)

    @property
    def n_paths(self):
        return self.x.shape[0]


def _polar_unitary(T):
    U, _, Vh = np.linalg.svd(T)
    return U @ Vh


def _inv_sqrt_sym(M):
    w, V = np.linalg.eigh(M)
    return (V / np.sqrt(w)[..., None, :]) @ F.mT(V)


def _sym_power_derivative(g, dg, p):
    """d(g^p) in direction dg for symmetric positive g, batched."""
    w, V = np.linalg.eigh(g)
    li, lj = w[..., :, None], w[..., None, :]
    K = F.power_divdiff(li, lj, p)
    K = np.where(np.abs(li - lj) < 1e-12 * np.maximum(li, lj), p * li ** (p - 1) + 0 * lj, K)
    return V @ (K * (F.mT(V) @ dg @ V)) @ F.mT(V)


def _intertwiner(c, gamma):
    """Unitary V with V gamma_i V^{-1} = c_i, by averaging over Clifford monomials."""
    n, d = gamma.shape[0], gamma.shape[1]
    rng = np.random.default_rng(12345)
    for _ in range(8):
        M = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
        V = np.zeros((d, d), dtype=complex)
        for mask in range(2 ** n):
            A, B = np.eye(d, dtype=complex), np.eye(d, dtype=complex)
            for i in range(n):
                if mask >> i & 1:
                    A, B = A @ c[i], B @ gamma[i]
            V += A @ M @ np.linalg.inv(B)
        if np.linalg.norm(V) > 1e-8:
            return _polar_unitary(V)
    raise RuntimeError("no intertwiner found")


class ChartBackend:
    """Brownian motion in a coordinate chart of a model manifold (RK4 geodesic steps)."""

    def __init__(self, model: ModelManifold, substeps: int = 2):
        self.model = model
        self.n = model.n
        self.rep = model.rep
        self.d = self.rep.spinor_dim
        self.substeps = max(2, int(substeps) // 2 * 2)
        self.closed = model.domain.kind == "torus"
        # builtin flat models use the unit metric in their charts
        self.flat = model.sectional_constant == 0.0 and np.allclose(model.metric(np.zeros(self.n) + 0.5), np.eye(self.n))

    # geometry at points
    def _jets(self, x, order):
        return [self.model.jet(x, k) for k in range(order + 1)]

    def frame(self, x):
        return F.sym_sqrt_pair(self.model.metric(x))[1]

    def _rhs(self, x, V, u, T):
        g, dg = self._jets(x, 1)
        Gam = F.christoffel(g, dg)
        GV = np.einsum("...kaj,...a->...kj", Gam, V)
        E = F.sym_sqrt_pair(g)[1]
        dE = _sym_power_derivative(g, np.einsum("...abc,...a->...bc", dg, V), -0.5)
        w = np.linalg.solve(E, dE + GV @ E)
        Om = 0.25 * project_to_clifford(self.rep, 0.5 * (w - F.mT(w)), check_skew=False)
        return V, -np.einsum("...kj,...j->...k", GV, V), -GV @ u, -Om @ T

    def _rk4(self, x, V, u, T, h):
        y = (x, V, u, T)
        k1 = self._rhs(*y)
        k2 = self._rhs(*[a + 0.5 * h * b for a, b in zip(y, k1)])
        k3 = self._rhs(*[a + 0.5 * h * b for a, b in zip(y, k2)])
        k4 = self._rhs(*[a + h * b for a, b in zip(y, k3)])
        return tuple(a + h / 6 * (b1 + 2 * b2 + 2 * b3 + b4) for a, b1, b2, b3, b4 in zip(y, k1, k2, k3, k4))

    def start(self, x0, P):
        x0 = self.model.check_points(np.asarray(x0, dtype=float))
        E = self.frame(x0)
        return (np.broadcast_to(x0, (P, self.n)).copy(), np.broadcast_to(E, (P, self.n, self.n)).copy(),
                np.broadcast_to(np.eye(self.d, dtype=complex), (P, self.d, self.d)).copy())

    def clifford_at_start(self, state):
        return self.rep.gamma_array()

    def move(self, x, u, T, v):
        """Geodesic with initial velocity v; returns midpoint and endpoint (x, u, T)."""
        if self.flat:
            # unit metric: straight lines, trivial transport
            return (x + 0.5 * v, u, T), (x + v, u, T)
        h = 1.0 / self.substeps
        V = v
        mid = None
        for k in range(self.substeps):
            x, V, u, T = self._rk4(x, V, u, T, h)
            if 2 * (k + 1) == self.substeps:
                mid = (x.copy(), u.copy(), T.copy())
        return mid, (x, u, T)

    def finish(self, x, u, T):
        g = self.model.metric(x)
        G = F.mT(u) @ g @ u
        drift = float(np.max(np.abs(G - np.eye(self.n)))) if len(x) else 0.0
        u = u @ _inv_sqrt_sym(G)
        Tu = _polar_unitary(T)
        udrift = float(np.max(np.abs(Tu - T))) if len(x) else 0.0
        x = self.model.domain.wrap(x)
        if not np.all(self.model.domain.contains(x)):
            bad = int(np.count_nonzero(~self.model.domain.contains(x)))
            raise RuntimeError(f"{self.model.name}: {bad} path(s) left the chart domain")
        return x, u, Tu, drift, udrift

    def scal(self, x):
        if self.flat:
            return np.zeros(x.shape[:-1])
        return curvature_from_jet(*self._jets(x, 2)).scal

    def weitzenboeck_parallel(self, x, u, T):
        """//^{-1} underline-R~ // at the current points, in starting-frame components."""
        if self.flat:
            k = self.n * self.d
            return np.zeros((x.shape[0], k, k)), np.zeros(x.shape[0])
        curv = curvature_from_jet(*self._jets(x, 2))
        E = F.sym_sqrt_pair(curv.g)[1]
        R = underline_Rtilde_from(self.rep, curv, frame=E)
        Id = np.eye(self.d)
        to_frame = _kron_batch(F.mT(u), Id)
        from_frame = _kron_batch(np.linalg.inv(F.mT(u)), Id)
        Tb = _kron_batch(np.broadcast_to(np.eye(self.n), u.shape), T)
        return F.mH(Tb) @ to_frame @ R @ from_frame @ Tb, curv.scal

    def rho_adjoint_parallel(self, x, u, T):
        """(//^{-1} rho //)^* : starting-frame T*M (x) Sigma -> Sigma."""
        curv = curvature_from_jet(*self._jets(x, 3))
        E = F.sym_sqrt_pair(curv.g)[1]
        rho = rho_bismut_from(self.rep, curv, frame=E)            # (P, n d, d), coordinate covectors
        Tb = _kron_batch(np.broadcast_to(np.eye(self.n), u.shape), T)
        par = F.mH(Tb) @ _kron_batch(F.mT(u), np.eye(self.d)) @ rho @ T
        return F.mH(par)

    def distance_from(self, x0, x):
        g0 = self.model.metric(np.asarray(x0, float))
        dx = x - x0
        if self.model.domain.kind == "torus":
            per = np.asarray(self.model.domain.periods)
            dx = dx - per * np.round(dx / per)
        return np.sqrt(np.einsum("...i,ij,...j->...", dx, g0, dx))


def _kron_batch(A, B):
    """Batched Kronecker product A (x) B for (..., m, m) and (..., k, k)."""
    A, B = np.asarray(A), np.asarray(B)
    out = A[..., :, None, :, None] * B[..., None, :, None, :]
    s = out.shape
    return out.reshape(s[:-4] + (s[-4] * s[-3], s[-2] * s[-1]))


class SphereBackend:
    """Unit 2-sphere in R^3 with exact great-circle steps and the embedded spinor trivialisation."""
    closed = True
    n = 2
    d = 2

    def __init__(self, radius=1.0):
        if radius != 1.0:
            raise ValueError("the embedded sphere backend supports the unit sphere only")
        self.rep = build_clifford_rep(2)
        self._Rstd = None

    @staticmethod
    def to_ambient(x):
        x = np.asarray(x, dtype=float)
        if x.shape[-1] == 3:
            return x / np.linalg.norm(x, axis=-1, keepdims=True)
        q = np.sum(x * x, axis=-1, keepdims=True)
        return np.concatenate([2 * x, q - 1], axis=-1) / (1 + q)

    @staticmethod
    def tangent_frame(p):
        a = np.array([0.0, 0.0, 1.0]) if abs(p[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
        e1 = a - (a @ p) * p
        e1 /= np.linalg.norm(e1)
        e2 = np.cross(p, e1)
        return np.stack([e1, e2], axis=-1)

    def start(self, x0, P):
        p = self.to_ambient(x0)
        u = self.tangent_frame(p)
        return (np.broadcast_to(p, (P, 3)).copy(), np.broadcast_to(u, (P, 3, 2)).copy(),
                np.broadcast_to(np.eye(2, dtype=complex), (P, 2, 2)).copy())

    def clifford_at_start(self, state):
        return S.clifford_frame(state.x0, state.u0)

    def move(self, x, u, T, v):
        mid = S.geodesic_step(x, u, T, 0.5 * v)
        end = S.geodesic_step(x, u, T, v)
        return mid, end

    def finish(self, x, u, T):
        x2 = x / np.linalg.norm(x, axis=-1, keepdims=True)
        G = F.mT(u) @ u
        drift = float(np.max(np.abs(G - np.eye(2))))
        u = u - x2[..., :, None] * np.einsum("...a,...ai->...i", x2, u)[..., None, :]
        u = u @ _inv_sqrt_sym(F.mT(u) @ u)
        Tu = _polar_unitary(T)
        return x2, u, Tu, drift, float(np.max(np.abs(Tu - T)))

    def scal(self, x):
        return np.full(x.shape[:-1], 2.0)

    def _R_standard(self):
        """underline-R~ of the unit sphere in orthonormal-frame components with standard gammas."""
        if self._Rstd is None:
            from .manifolds import curvature, round_sphere
            x = np.zeros(2)
            curv = curvature(round_sphere(), x, derivative=False)
            E = F.sym_sqrt_pair(curv.g)[1]
            R = underline_Rtilde_from(self.rep, curv, frame=E)
            Id = np.eye(2)
            self._Rstd = np.kron(E.T, Id) @ R @ np.kron(np.linalg.inv(E.T), Id)
        return self._Rstd

    def weitzenboeck_parallel(self, x, u, T, state=None):
        # constant in parallel-frame components; conjugate the standard-gamma form into
        # the embedded trivialisation at the starting point
        if state.R_start is None:
            V = _intertwiner(S.clifford_frame(state.x0, state.u0), self.rep.gamma_array())
            W = np.kron(np.eye(2), V)
            state.R_start = W @ self._R_standard() @ F.mH(W)
        R = state.R_start
        return np.broadcast_to(R, (x.shape[0],) + R.shape), self.scal(x)

    def rho_adjoint_parallel(self, x, u, T):
        return np.zeros((x.shape[0], self.d, self.n * self.d), dtype=complex)

    def distance_from(self, x0, x):
        return np.arccos(np.clip(x @ x0, -1.0, 1.0))


def backend_for(model):
    if isinstance(model, (ChartBackend, SphereBackend)):
        return model
    if isinstance(model, ModelManifold) and model.name == "round_sphere":
        return SphereBackend(model.params.get("radius", 1.0))
    if isinstance(model, ModelManifold):
        return ChartBackend(model)
    raise TypeError(f"cannot simulate Brownian motion on {model!r}")


# ---------------------------------------------------------------------------
# stepping


def init_state(backend, x0, P, *, with_Q=False, record=False):
    backend = backend_for(backend)
    x, u, T = backend.start(x0, P)
    st = PathState(backend, x, u, T, scal_integral=np.zeros(P), bbar=np.zeros((P, backend.n)),
                   exited=np.zeros(P, dtype=bool), tau=np.full(P, inf), record=record)
    st.x0, st.u0 = x[0].copy(), u[0].copy()
    if with_Q:
        k = backend.n * backend.d
        st.Q = np.broadcast_to(np.eye(k, dtype=complex), (P, k, k)).copy()
    return st


def step(state: PathState, dt, xi, *, r=inf):
    """One geodesic random-walk step of size dt driven by standard normals xi (P, n).

    Updates position, frame, spinor transport, the scal integral (midpoint rule),
    the anti-development, Q (implicit midpoint, when tracked) and exit data.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    be = state.backend
    xi = np.asarray(xi, dtype=float)
    db = np.sqrt(2.0 * dt) * xi
    v = np.einsum("...ai,...i->...a", state.u, db)
    mid, end = be.move(state.x, state.u, state.T, v)
    if state.Q is not None:
        if isinstance(be, SphereBackend):
            B, sc = be.weitzenboeck_parallel(*mid, state=state)
        else:
            B, sc = be.weitzenboeck_parallel(*mid)
        k = B.shape[-1]
        I = np.eye(k)
        # Q' = -Q B  =>  Q_{new} (I + dt B / 2) = Q (I - dt B / 2)
        rhs = state.Q @ (I - 0.5 * dt * B)
        state.Q = F.mT(np.linalg.solve(F.mT(I + 0.5 * dt * B), F.mT(rhs)))
    else:
        sc = be.scal(mid[0])
    state.scal_integral = state.scal_integral + dt * sc
    x, u, T, drift, udrift = be.finish(*end)
    state.x, state.u, state.T = x, u, T
    state.frame_drift = max(state.frame_drift, drift)
    state.unitarity_drift = max(state.unitarity_drift, udrift)
    state.bbar = state.bbar + db
    if state.record:
        state.increments.append(db)
    state.s += dt
    if np.isfinite(r):
        out = (~state.exited) & (be.distance_from(state.x0, x) >= r)
        state.tau[out] = state.s
        state.exited |= out
    return state


# ---------------------------------------------------------------------------
# estimators


@dataclass
class EstimatorReport:
    """Monte Carlo mean with standard errors taken separately for real and imaginary parts."""
    name: str
    estimate: np.ndarray
    standard_error: np.ndarray
    n_paths: int
    config: dict
    reference: np.ndarray | None = None
    diagnostics: dict = field(default_factory=dict)

    def within(self, reference=None, k=3.0, atol=1e-12):
        ref = self.reference if reference is None else np.asarray(reference)
        diff = np.asarray(self.estimate) - ref
        se = np.asarray(self.standard_error)
        return bool(np.all(np.abs(diff.real) <= k * se.real + atol) and np.all(np.abs(diff.imag) <= k * se.imag + atol))

    def z_scores(self, reference=None):
        ref = self.reference if reference is None else np.asarray(reference)
        diff = np.asarray(self.estimate) - ref
        se = np.asarray(self.standard_error)
        zr = np.abs(diff.real) / np.where(se.real > 0, se.real, np.inf)
        zi = np.abs(diff.imag) / np.where(se.imag > 0, se.imag, np.inf)
        return np.maximum(zr, zi)

    def as_dict(self):
        def enc(a):
            if a is None:
                return None
            a = np.asarray(a)
            return {"re": np.real(a).tolist(), "im": np.imag(a).tolist()} if np.iscomplexobj(a) else a.tolist()
        return {"estimator": self.name, "estimate": enc(self.estimate), "standard_error": enc(self.standard_error),
                "n_paths": self.n_paths, "config": self.config, "reference": enc(self.reference),
                "diagnostics": self.diagnostics}


def _pair_average(samples, cfg):
    samples = np.asarray(samples)
    if cfg.antithetic:
        # pair averages are i.i.d.; averaging them first keeps exact cancellations exact
        return 0.5 * (samples[0::2] + samples[1::2])
    return samples


def _summarize(name, samples, cfg, extra, diagnostics):
    samples = _pair_average(samples, cfg)
    P = samples.shape[0]
    mean = pairwise_mean(samples)
    sr = np.std(samples.real, axis=0, ddof=1) / np.sqrt(P)
    si = np.std(samples.imag, axis=0, ddof=1) / np.sqrt(P) if np.iscomplexobj(samples) else 0 * sr
    se = sr + 1j * si if np.iscomplexobj(samples) else sr
    # chunk and workers change scheduling only, never the numbers
    conf = {k: v for k, v in asdict(cfg).items() if k not in ("chunk", "workers")} | extra
    return EstimatorReport(name, mean, se, cfg.n_paths, conf, diagnostics=diagnostics)


_JOB = None   # (kind, model, psi, x0, cfg, literal), inherited by forked workers


def _simulate_chunk(idx):
    kind, backend, psi, x0, cfg, literal = _JOB
    be = backend_for(backend)
    P = len(idx)
    xi = path_normals(cfg.seed, idx, cfg.n_steps, be.n, cfg.antithetic)
    dt = cfg.dt
    need_Q = kind == "gradient"
    st = init_state(be, x0, P, with_Q=need_Q)
    n, d = be.n, be.d
    if kind == "gradient":
        K = np.zeros((P, d, n * d), dtype=complex)
        a_ito, a_rho = (1.0, 0.5) if literal else (0.5, 1.0)
        Id = np.eye(d)
    for k in range(cfg.n_steps):
        if kind == "gradient":
            s_k = k * dt
            wgt = np.exp(0.25 * st.scal_integral)[:, None, None]
            QH = F.mH(st.Q)
            dbk = np.sqrt(2.0 * dt) * xi[:, k]
            G = _kron_batch(dbk[:, None, :], Id)                           # A -> A(db), (P, d, n d)
            K += a_ito * wgt * (-1.0 / cfg.t) * (G @ QH)
            if not isinstance(be, SphereBackend) and not _is_flat(be):
                rs = be.rho_adjoint_parallel(st.x, st.u, st.T)
                K += a_rho * wgt * (rs @ QH) * ((1.0 - s_k / cfg.t) * dt)
        step(st, dt, xi[:, k], r=cfg.r)
    vals = psi(st.x)
    pulled = np.einsum("pts,pt->ps", np.conj(st.T), vals)                     # T^H psi(b_t)
    damp = np.exp(-0.25 * st.scal_integral)
    if kind == "fk":
        out = damp[:, None] * pulled
    elif kind == "gradient":
        out = -damp[:, None] * np.einsum("pst,ps->pt", np.conj(K), pulled)      # -K^H pulled
    else:
        c = be.clifford_at_start(st)
        scale = (1.0 if literal else 0.5) / cfg.t
        JH = scale * np.einsum("pi,ist->pst", st.bbar, c)
        out = damp[:, None] * np.einsum("pst,pt->ps", JH, pulled)
    diag = {"frame_drift": st.frame_drift, "unitarity_drift": st.unitarity_drift,
            "exited": int(np.count_nonzero(st.exited))}
    return out, diag


def _is_flat(be):
    return getattr(be, "flat", False)


def _run(kind, model, psi, x, cfg: PathConfig, literal=False):
    be = backend_for(model)
    if kind != "fk" and not be.closed:
        raise ValueError("the deterministic l-process needs exit to be impossible (tau = infinity); "
                         f"{getattr(be, 'model', be)!r} is not a closed model")
    chunks = [np.arange(s, min(s + cfg.chunk, cfg.n_paths)) for s in range(0, cfg.n_paths, cfg.chunk)]
    global _JOB
    _JOB = (kind, be, psi, x, cfg, literal)
    try:
        if cfg.workers > 1:
            # chunk boundaries do not depend on the worker count, so results are identical
            ctx = multiprocessing.get_context("fork")
            with ProcessPoolExecutor(max_workers=min(cfg.workers, os.cpu_count() or 1), mp_context=ctx) as pool:
                results = list(pool.map(_simulate_chunk, chunks))
        else:
            results = [_simulate_chunk(idx) for idx in chunks]
    finally:
        _JOB = None
    samples = np.concatenate([r[0] for r in results])
    diag = {"frame_drift": max(r[1]["frame_drift"] for r in results),
            "unitarity_drift": max(r[1]["unitarity_drift"] for r in results),
            "exited": sum(r[1]["exited"] for r in results)}
    return samples, diag


def _echo(model, x):
    name = getattr(model, "name", type(model).__name__)
    return {"model": name, "x": np.asarray(x, dtype=float).tolist()}


def feynman_kac(psi, x, cfg: PathConfig, model) -> EstimatorReport:
    """E[exp(-1/4 int_0^t scal) //_t^{-1} psi(b_t)], an estimate of P_t psi(x).

    ``psi`` maps points (P, dim) to spinor components (P, d) in the backend trivialisation.
    """
    samples, diag = _run("fk", model, psi, x, cfg)
    return _summarize("feynman_kac", samples, cfg, _echo(model, x), diag)


def bismut_gradient(psi, x, cfg: PathConfig, model, v=None, *, literal_display=False) -> EstimatorReport:
    """Estimate of the covariant derivative of P_t psi at x (first derivative formula).

    The estimate is the full vector in T*M (x) Sigma frame components (layout i * d + s);
    when ``v`` is given the pairing (grad, v) is reported in diagnostics.  The process
    U = 1/2 int e^{1/4 int scal} G(db) Q* l' + int e^{1/4 int scal} //^{-1} rho* // Q* l ds
    uses l_s = v (1 - s/t).  ``literal_display=True`` uses the coefficients 1 and 1/2
    instead, which belong to the Delta/2 normalisation.
    """
    samples, diag = _run("gradient", model, psi, x, cfg, literal_display)
    rep = _summarize("bismut_gradient", samples, cfg, _echo(model, x) | {"literal_display": literal_display}, diag)
    if v is not None:
        v = np.asarray(v).reshape(-1)
        pair = _pair_average(samples, cfg) @ np.conj(v)
        rep.diagnostics["pairing"] = complex(pairwise_mean(pair))
        rep.diagnostics["pairing_se"] = complex(np.std(pair.real, ddof=1) / np.sqrt(len(pair))
                                                + 1j * np.std(pair.imag, ddof=1) / np.sqrt(len(pair)))
    return rep


def bismut_dirac(psi, x, cfg: PathConfig, model, zeta=None, *, literal_display=False) -> EstimatorReport:
    """Estimate of D P_t psi(x) (second derivative formula) with l_s = zeta (1 - s/t).

    The Clifford Ito integral int db . l' enters with factor 1/2 (generator Delta).
    """
    samples, diag = _run("dirac", model, psi, x, cfg, literal_display)
    rep = _summarize("bismut_dirac", samples, cfg, _echo(model, x) | {"literal_display": literal_display}, diag)
    if zeta is not None:
        z = np.asarray(zeta).reshape(-1)
        rep.diagnostics["pairing"] = complex(pairwise_mean(_pair_average(samples, cfg) @ np.conj(z)))
    return rep


# ---------------------------------------------------------------------------
# weak order of the scheme


def sphere_transfer_matrix(galerkin, modes, dt, n_gh=16):
    """One-step transition operator of the weighted walk on a rotation-invariant mode space.

    ``modes`` holds Galerkin coefficient vectors (columns, orthonormal).  The step
    psi -> E[e^{-dt scal / 4} //^{-1} psi(exp_x(sqrt(2 dt) u xi))] commutes with rotations,
    so it maps each isotypic Dirac eigenspace to itself; the expectation over xi is
    taken by a tensor Gauss-Hermite rule instead of sampling.
    """
    _, pts, w, _ = galerkin._setup
    z, wz = np.polynomial.hermite_e.hermegauss(n_gh)
    wz = wz / wz.sum()
    xi = np.stack(np.meshgrid(z, z, indexing="ij"), -1).reshape(-1, 2)
    wxi = np.outer(wz, wz).reshape(-1)
    be = SphereBackend()
    frames = np.stack([be.tangent_frame(p) for p in pts])
    Nq, Ng = len(pts), len(xi)
    p = np.repeat(pts, Ng, axis=0)
    u = np.repeat(frames, Ng, axis=0)
    T = np.broadcast_to(np.eye(2, dtype=complex), (Nq * Ng, 2, 2))
    v = np.einsum("pai,pi->pa", u, np.sqrt(2 * dt) * np.tile(xi, (Nq, 1)))
    p1, _, T1 = S.geodesic_step(p, u, T, v)
    damp = np.exp(-0.25 * dt * be.scal(p1))
    B = galerkin.basis_values(pts)
    out = np.empty((modes.shape[1], modes.shape[1]), dtype=complex)
    for j in range(modes.shape[1]):
        vals = galerkin.spinor_values(modes[:, j], p1)
        pulled = damp[:, None] * np.einsum("pts,pt->ps", np.conj(T1), vals)
        Mv = np.einsum("qg,g,qgs->qs", np.ones((Nq, Ng)), wxi, pulled.reshape(Nq, Ng, 2))
        coef = np.einsum("q,qr,qs->rs", w, B, Mv).reshape(-1)
        out[:, j] = modes.conj().T @ coef
    return out


def sphere_weak_errors(t, levels=(16, 32, 64), k=2, L=6, n_gh=16, weights=None):
    """L^2 weak errors |(M_dt^n - e^{-t D^2}) psi| of the walk on the unit sphere.

    psi is a fixed combination of the Dirac eigenspinors with |lambda| = k + 1.
    """
    G = S.SphereGalerkin(L=L)
    lam, Y = G._eig
    idx = np.nonzero(np.abs(np.abs(lam) - (k + 1)) < 1e-6)[0]
    modes = Y[:, idx]
    c = np.ones(len(idx)) / np.sqrt(len(idx)) if weights is None else np.asarray(weights)
    exact = np.exp(-t * lam[idx] ** 2) * c
    errs = []
    for n in levels:
        M = sphere_transfer_matrix(G, modes, t / n, n_gh)
        errs.append(float(np.linalg.norm(np.linalg.matrix_power(M, n) @ c - exact)))
    return np.array(errs)


# ---------------------------------------------------------------------------
# Hilbert-Schmidt norms of weighted semigroups and domination of heat kernels

HS_OPS = ("P", "grad P", "D P")


@dataclass
class HSReport:
    """HS norm of A op_t by the discretized matrix and by the volume-integral bound route."""
    op: str
    t: float
    frobenius: float
    bound_integral: float
    constant: float | None = None
    spectral: float | None = None
    details: dict = field(default_factory=dict)

    @property
    def ratio(self):
        return self.frobenius / self.bound_integral if self.bound_integral > 0 else 0.0

    @property
    def passed(self):
        if self.constant is None:
            return True
        return self.frobenius <= self.constant * self.bound_integral * (1 + 1e-9) + 1e-14

    def as_dict(self):
        return {"op": self.op, "t": self.t, "frobenius": self.frobenius, "bound_integral": self.bound_integral,
                "ratio": self.ratio, "constant": self.constant, "spectral": self.spectral,
                "passed": self.passed} | self.details


def _weight_values(A, pts):
    if callable(A):
        return np.asarray(A(pts), dtype=complex) * np.ones(pts.shape[:-1])
    return np.broadcast_to(np.asarray(A, dtype=complex), pts.shape[:-1])


def _torus_hs(model, A, op, t, N):
    from .reference import build_torus_dirac, semigroup
    ops = build_torus_dirac(model, N)
    P = semigroup(ops, "g", t)
    w = ops.g.weight
    a = _weight_values(A, ops.points).reshape(-1)
    d = ops.d
    if op == "P":
        K = P
        out_w = np.repeat(w.reshape(-1), d)
        left = np.sqrt(out_w)[:, None] * (np.repeat(a, d)[:, None] * K)
    elif op == "D P":
        K = ops._dense_from(lambda v: ops.dirac("g", v)) @ P
        out_w = np.repeat(w.reshape(-1), d)
        left = np.sqrt(out_w)[:, None] * (np.repeat(a, d)[:, None] * K)
    else:
        eye = np.eye(ops.dim, dtype=complex).reshape(ops.dim, N, N, d)
        K = ops.grad("g", eye).reshape(ops.dim, -1).T @ P                 # (N N n d, N N d)
        # pointwise Gram w g^{-1} (x) Id on T*M (x) Sigma, applied through its square root
        Gh = F.sym_sqrt_pair(ops.g.ginv)[0].reshape(N * N, 2, 2)          # g^{-1/2}
        Bm = np.einsum("p,pab,st->pasbt", np.sqrt(w.reshape(-1)), Gh, np.eye(d)).reshape(N * N, 2 * d, 2 * d)
        Kr = K.reshape(N * N, 2 * d, -1)
        left = np.einsum("pab,pbc->pac", Bm, a[:, None, None] * Kr).reshape(N * N * 2 * d, -1)
    right = np.repeat(1.0 / np.sqrt(w.reshape(-1)), d)
    frob = float(np.linalg.norm(left * right[None, :]))
    # bound route: (int |A|^2 / mu(B(x, sqrt t)) dmu)^{1/2}
    from .manifolds import ball_volume, ball_volume_quadrature
    r = float(np.sqrt(t))
    if model.ball_volume_closed is not None:
        vol = np.full(N * N, ball_volume(model, ops.points[0, 0], r))
    else:
        vol = ball_volume_quadrature(model, ops.points.reshape(-1, 2), r, m_theta=16, n_radial=8).reshape(-1)
    bound = float(np.sqrt(np.sum(w.reshape(-1) * np.abs(a) ** 2 / vol)))
    spectral = None
    if model.sectional_constant == 0.0 and op == "P" and np.allclose(a, a[0]):
        from .reference import wavenumbers
        k = wavenumbers(N, ops.period)
        k2 = k[:, None] ** 2 + k[None, :] ** 2
        spectral = float(abs(a[0]) * np.sqrt(d * np.sum(np.exp(-2 * t * k2))))
    return frob, bound, spectral


def _sphere_hs(A, op, t, L):
    G = S.SphereGalerkin(L=L)
    lam, Y = G._eig
    _, pts, w, _ = G._setup
    a = _weight_values(A, pts)
    r = G.scalar_dim
    vals = np.einsum("qr,rsj->qsj", G.basis_values(pts), Y.reshape(r, 2, -1))   # eigenspinors at nodes
    decay = np.exp(-t * lam ** 2)
    if op == "D P":
        decay = decay * np.abs(lam)
    if op == "grad P":
        # |nabla phi|^2 integrates to lambda^2 - scal/4 = lambda^2 - 1/2 for eigenspinors
        decay = decay * np.sqrt(np.maximum(lam ** 2 - 0.5, 0.0))
        frob2 = np.sum(decay ** 2 * np.einsum("q,q,qsj->j", w, np.abs(a) ** 2, np.abs(vals) ** 2)) if np.ptp(
            np.abs(a)) == 0 else None
        if frob2 is None:
            raise ValueError("grad P on the sphere needs a constant weight")
    else:
        frob2 = np.sum(decay ** 2 * np.einsum("q,q,qsj->j", w, np.abs(a) ** 2, np.abs(vals) ** 2))
    vol = 2 * np.pi * (1 - np.cos(np.sqrt(t)))
    bound = float(np.sqrt(np.sum(w * np.abs(a) ** 2) / vol))
    return float(np.sqrt(frob2)), bound, None


def hs_norm_estimate(A, op, model, t, *, N=16, L=12, constant=None) -> HSReport:
    """HS norm of A op_t (op in {"P", "grad P", "D P"}) on a compact builtin model, two ways.

    (i) the Frobenius norm of the discretized weighted operator;
    (ii) the integral (int |A|^2 / mu(B(x, sqrt t)) dmu)^{1/2}, which the heat-kernel
    route bounds (i) by up to a constant.  ``constant`` (e.g. fitted from A = 1)
    turns the report into a check.
    """
    if op not in HS_OPS:
        raise ValueError(f"op must be one of {HS_OPS}")
    if not t > 0:
        raise ValueError("t must be positive")
    if isinstance(model, ModelManifold) and model.name == "round_sphere":
        frob, bound, spec = _sphere_hs(A, op, t, L)
    elif isinstance(model, ModelManifold) and model.domain.kind == "torus":
        frob, bound, spec = _torus_hs(model, A, op, t, N)
    else:
        raise ValueError(f"{getattr(model, 'name', model)}: Hilbert-Schmidt estimates need a compact builtin model")
    return HSReport(op, float(t), frob, bound, constant, spec)


@dataclass
class KatoReport:
    model: str
    t: float
    C: float
    max_ratio: float
    pairs: int

    @property
    def passed(self):
        return self.max_ratio <= 1 + 1e-6

    def as_dict(self):
        return asdict(self) | {"passed": self.passed}


def kato_simon_check(model, t, *, N=32, L=12, n_points=64, seed=0) -> KatoReport:
    """max over point pairs of |P_t(x, y)| / (e^{-tC/4} e^{-t Delta}(x, y)), C = inf scal."""
    if isinstance(model, ModelManifold) and model.name == "round_sphere":
        if model.params.get("radius", 1.0) != 1.0:
            raise ValueError("unit sphere only")
        G = S.SphereGalerkin(L=L)
        rng = np.random.default_rng(seed)
        p = rng.normal(size=(n_points, 3))
        p /= np.linalg.norm(p, axis=1, keepdims=True)
        P1, P2 = np.repeat(p, n_points, 0), np.tile(p, (n_points, 1))
        K = G.kernel(t, P1, P2)
        scalar = S.scalar_heat_kernel(t, np.sum(P1 * P2, axis=1))
        C = 2.0
    elif isinstance(model, ModelManifold) and model.domain.kind == "torus" and model.sectional_constant == 0.0:
        from .reference import build_torus_dirac, semigroup, wavenumbers
        ops = build_torus_dirac(model, N)
        P = semigroup(ops, "g", t)
        d = ops.d
        w = ops.g.weight.reshape(-1)
        K = (P.reshape(N * N, d, N * N, d) / w[None, None, :, None]).transpose(0, 2, 1, 3).reshape(-1, d, d)
        k = wavenumbers(N, ops.period)
        x = np.arange(N) * ops.period / N
        # e^{-t Delta}(x, y) on the same Fourier modes
        k1 = np.real(np.fft.ifft(np.exp(-t * k ** 2))) * N / ops.period   # 1-d kernel on the grid offsets
        idx = np.arange(N)
        k1m = k1[(idx[:, None] - idx[None, :]) % N]
        scalar = np.einsum("ac,bd->abcd", k1m, k1m).reshape(N * N, N * N).reshape(-1)
        del x
        C = 0.0
    else:
        raise ValueError("the heat-kernel domination check needs the unit sphere or a flat 2-torus")
    ratio = np.linalg.norm(K, 2, axis=(-2, -1)) / (np.exp(-t * C / 4) * scalar)
    return KatoReport(getattr(model, "name", "?"), float(t), C, float(np.max(ratio)), int(ratio.size))
