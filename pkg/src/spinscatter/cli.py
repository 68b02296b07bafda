"""Command-line batch runner: algebra suites, HPW residuals, stochastic batteries and criteria.

Exit status: 0 when everything ran and (for verification commands) passed, 1 on a
verification failure, 2 on configuration or spec errors.  Criterion runs exit 0 as
soon as the evaluation completes, whatever the verdict.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np
import sympy as sp
import yaml

from . import reports
from .clifford import N_MAX, N_MIN, build_clifford_rep
from .criteria import (MetricPairSpec, RicciFlowSpec, SpecError, evaluate_main_criterion,
                       evaluate_ricci_criterion)

OUT_ENV = "SPINSCATTER_OUT"
FORMATS = ("human", "jsonl", "csv")
Z_LIMIT = 3.0
EXACT_ATOL = 1e-13


class ConfigError(Exception):
    """Bad command line or spec file; ``where`` names the field or line."""

    def __init__(self, where, message):
        super().__init__(f"{where}: {message}")
        self.where = where


@dataclass
class RunConfig:
    command: str
    spec: str | None = None
    seed: int | None = None
    tol: float | None = None
    out: str = "spinscatter-out"
    fmt: str = "human"
    paths: int | None = None
    grid: tuple = ()
    n: tuple = ()
    fibers: int | None = None
    fault: str | None = None
    workers: int = 1
    which: tuple = ()

    def __post_init__(self):
        if self.tol is not None and not self.tol > 0:
            raise ConfigError("--tol", "tolerances must be positive")
        if self.paths is not None and self.paths < 2:
            raise ConfigError("--paths", "need at least two paths")
        if self.fibers is not None and self.fibers < 1:
            raise ConfigError("--fibers", "need at least one fiber")
        if self.workers < 1:
            raise ConfigError("--workers", "must be positive")
        if self.fmt not in FORMATS:
            raise ConfigError("--format", f"expected one of {FORMATS}")
        for N in self.grid:
            if N < 4 or N & (N - 1):
                raise ConfigError("--grid", f"N = {N} is not a power of two >= 4")
        for n in self.n:
            if not N_MIN <= n <= N_MAX:
                raise ConfigError("--n", f"dimension {n} outside the supported range {N_MIN}..{N_MAX}")


# ---------------------------------------------------------------------------
# spec loading


def load_spec(name_or_path):
    """Parse a YAML spec from a path or a bundled name; returns (dict, source label)."""
    p = Path(name_or_path)
    if p.is_file():
        text, label = p.read_text(), str(p)
    else:
        res = resources.files("spinscatter") / "data" / f"{name_or_path}.yaml"
        if not res.is_file():
            raise ConfigError("--spec", f"no file or bundled spec named {name_or_path!r}")
        text, label = res.read_text(), f"bundled:{name_or_path}"
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f"{label} line {mark.line + 1} column {mark.column + 1}" if mark else label
        raise ConfigError(where, getattr(exc, "problem", None) or str(exc)) from None
    if not isinstance(data, dict):
        raise ConfigError(label, "spec must be a mapping")
    return data, label


def bundled_specs():
    return sorted(p.name[:-5] for p in (resources.files("spinscatter") / "data").iterdir()
                  if p.name.endswith(".yaml"))


def _take(d, key, default=None, cast=None, required=False):
    if key not in d:
        if required:
            raise SpecError(key, "missing")
        return default
    v = d[key]
    if cast is None:
        return v
    try:
        return cast(v)
    except (TypeError, ValueError):
        raise SpecError(key, f"cannot read {v!r}") from None


def _only(d, allowed, where="spec"):
    extra = sorted(set(d) - set(allowed))
    if extra:
        raise SpecError(f"{where}.{extra[0]}" if where != "spec" else extra[0], "unknown field")


def _cplx(v):
    return complex(str(v).replace(" ", "")) if isinstance(v, str) else complex(v)


# ---------------------------------------------------------------------------
# emission


def _emit(cfg: RunConfig, stem, records, human):
    path = reports.write(records, cfg.out, stem, cfg.fmt, human + "\n")
    print(human)
    print(f"records: {path}")


def _base_config(cfg: RunConfig, spec):
    return {"command": cfg.command, "spec": spec}


# ---------------------------------------------------------------------------
# verify-algebra


def cmd_verify_algebra(cfg: RunConfig):
    from .suites import clifford_suite, fiber_lemma_suite
    spec = {}
    if cfg.spec:
        spec, _ = load_spec(cfg.spec)
        _only(spec, {"type", "clifford_n", "fiber_n", "fibers", "tolerance", "seed"})
    seed = cfg.seed if cfg.seed is not None else int(spec.get("seed", 0))
    cl_n = list(cfg.n) or list(spec.get("clifford_n", range(N_MIN, 7)))
    fb_n = list(cfg.n) or list(spec.get("fiber_n", (2, 3, 4)))
    for n in cl_n + fb_n:
        if not isinstance(n, int) or not N_MIN <= n <= N_MAX:
            raise ConfigError("n", f"dimension {n} outside the supported range {N_MIN}..{N_MAX}")
    fibers = cfg.fibers or int(spec.get("fibers", 10_000))
    tol = cfg.tol or float(spec.get("tolerance", 1e-10))
    resolved = {"clifford_n": cl_n, "fiber_n": fb_n, "fibers": fibers, "tolerance": tol,
                "seed": seed, "fault": cfg.fault}
    conf = _base_config(cfg, resolved)
    records, lines, ok = [], [], True
    for res in clifford_suite(cl_n, tolerance=min(tol, 1e-12)):
        records.append(_suite_record(conf, seed, res))
        ok &= res.passed
        lines.append(_suite_line(res))
    for n in fb_n:
        res = fiber_lemma_suite(n, fibers, seed, tolerance=tol, fault=cfg.fault)
        records.append(_suite_record(conf, seed, res))
        ok &= res.passed
        lines.append(_suite_line(res))
        lines += [f"    FAIL {reports.generic_name(k)} [{k}]: {v:.3e}"
                  for k, v in res.residuals.items() if v > res.tolerance]
        lines += [f"    FAIL {k}: {v} violations" for k, v in res.violations.items() if v]
    lines.append("verify-algebra: " + ("all invariants hold" if ok else "invariant failure"))
    _emit(cfg, "verify-algebra", records, "\n".join(lines))
    return 0 if ok else 1


def _suite_record(conf, seed, res):
    d = res.as_dict()
    keyed = {}
    for k, v in d["residuals"].items():
        keyed.setdefault(reports.anchor_for(k) or "other", {})[k] = v
    d["by_anchor"] = keyed
    return reports.make_record("verify-algebra", conf, seed, d,
                               [reports.anchor_for(k) for k in list(d["residuals"]) + list(d["violations"])])


def _suite_line(res):
    worst = max(res.residuals.values()) if res.residuals else 0.0
    nv = sum(res.violations.values())
    return (f"{'PASS' if res.passed else 'FAIL'} {res.name} n={res.n} samples={res.samples} "
            f"max residual {worst:.2e} bound violations {nv}")


# ---------------------------------------------------------------------------
# hpw


def _torus_model(desc, field_name):
    from .manifolds import conformal, diagonal_torus, flat_torus, parse_expression
    if desc in (None, "flat_torus_2", "flat"):
        return flat_torus(2)
    if not isinstance(desc, dict) or "kind" not in desc:
        raise SpecError(field_name, "expected flat_torus_2 or a mapping with a kind")
    kind = desc["kind"]
    try:
        if kind == "diagonal":
            _only(desc, {"kind", "a11", "a22"}, field_name)
            return diagonal_torus(parse_expression(str(desc["a11"]), 2), parse_expression(str(desc["a22"]), 2))
        if kind == "conformal":
            _only(desc, {"kind", "phi"}, field_name)
            return conformal(flat_torus(2), parse_expression(str(desc["phi"]), 2))
    except KeyError as exc:
        raise SpecError(f"{field_name}.{exc.args[0]}", "missing") from None
    except ValueError as exc:
        raise SpecError(field_name, str(exc)) from None
    raise SpecError(f"{field_name}.kind", f"unknown torus metric kind {kind!r}")


def _golden(name):
    if not name:
        return None
    res = resources.files("spinscatter") / "data" / name
    p = Path(name)
    if p.is_file():
        return json.loads(p.read_text())
    if res.is_file():
        return json.loads(res.read_text())
    raise SpecError("golden", f"no golden file {name!r}")


def cmd_hpw(cfg: RunConfig):
    from .reference import build_torus_dirac, verify_hpw
    if not cfg.spec:
        raise ConfigError("--spec", "hpw needs a torus pair spec")
    spec, _ = load_spec(cfg.spec)
    _only(spec, {"type", "name", "g", "h", "t", "grid", "formulas", "thresholds", "n_test",
                 "seed", "monotone", "roundoff_floor", "golden"})
    name = spec.get("name", Path(cfg.spec).stem)
    t = _take(spec, "t", 0.1, float)
    if not t > 0:
        raise SpecError("t", "must be positive")
    grid = list(cfg.grid) or [int(N) for N in spec.get("grid", [16])]
    for N in grid:
        if N < 4 or N & (N - 1):
            raise SpecError("grid", f"N = {N} is not a power of two >= 4")
    formulas = list(spec.get("formulas", ["I", "II"]))
    for w in formulas:
        if w not in ("I", "II"):
            raise SpecError("formulas", f"unknown formula {w!r}")
    thresholds = {int(k): float(v) for k, v in (spec.get("thresholds") or {}).items()}
    if cfg.tol is not None:
        thresholds = {N: cfg.tol for N in grid}
    n_test = _take(spec, "n_test", 4, int)
    floor = _take(spec, "roundoff_floor", 0.0, float)
    seed = cfg.seed if cfg.seed is not None else _take(spec, "seed", 0, int)
    g = _torus_model(spec.get("g"), "g")
    h = _torus_model(spec.get("h"), "h")
    golden = _golden(spec.get("golden"))
    resolved = {k: v for k, v in spec.items() if k not in ("seed", "grid", "thresholds")}
    resolved |= {"grid": grid, "thresholds": thresholds, "seed": seed}
    conf = _base_config(cfg, resolved)
    records, lines, ok = [], [f"HPW residuals for {name} (t = {t:g})"], True
    table = {}
    for N in grid:
        ops = build_torus_dirac(g, N, h)
        for w in formulas:
            r = verify_hpw(ops, w, t, n_test, seed=seed)
            thr = thresholds.get(N)
            passed = None if thr is None else r.passed(thr)
            ok &= passed is not False
            table[(w, N)] = r.residual
            rec = r.as_dict() | {"name": name, "threshold": thr, "passed": passed}
            if golden is not None:
                gv = golden.get("pairs", {}).get(name, {}).get("residuals", {}).get(w, {}).get(str(N))
                rec["golden_residual"] = gv
            records.append(reports.make_record("hpw", conf, seed, rec, [reports.ANCHORS[f"hpw {w}"]]))
            tag = "----" if passed is None else ("PASS" if passed else "FAIL")
            lim = "" if thr is None else f" (threshold {thr:.0e})"
            gold = "" if golden is None or rec.get("golden_residual") is None else \
                f" golden {rec['golden_residual']:.3e}"
            lines.append(f"{tag} {w:>2} N={N:<3} residual {r.residual:.3e}{lim}{gold} dominant {r.dominant}")
    if spec.get("monotone", False) and len(grid) > 1:
        for w in formulas:
            seq = [table[(w, N)] for N in sorted(grid)]
            strict = all(b <= a for a, b in zip(seq, seq[1:]))
            # once the residual sits at the roundoff floor, further refinement only reshuffles rounding
            mono = all(b <= max(a, floor) for a, b in zip(seq, seq[1:]))
            ok &= mono
            records.append(reports.make_record("hpw", conf, seed, {
                "name": name, "which": w, "check": "monotone refinement", "grid": sorted(grid),
                "residuals": seq, "roundoff_floor": floor, "strictly_monotone": strict, "passed": mono},
                [reports.ANCHORS[f"hpw {w}"]]))
            lines.append(f"{'PASS' if mono else 'FAIL'} {w:>2} monotone refinement over N = {sorted(grid)} "
                         f"(floor {floor:.0e}, strictly monotone: {strict})")
    lines.append("hpw: " + ("all residuals within thresholds" if ok else "threshold exceeded"))
    _emit(cfg, f"hpw-{name}", records, "\n".join(lines))
    return 0 if ok else 1


# ---------------------------------------------------------------------------
# stochastic


STOCH_KEYS = {"type", "name", "model", "t", "x", "n_steps", "n_paths", "seed", "estimators", "observables",
              "antithetic", "chunk", "galerkin_L", "checks"}
ESTIMATORS = ("feynman_kac", "bismut_gradient", "bismut_dirac")


def _stoch_model(name):
    from .manifolds import flat_torus
    from .stochastic import SphereBackend
    if name == "flat_torus_2":
        return flat_torus(2)
    if name == "round_sphere":
        return SphereBackend()
    raise SpecError("model", f"stochastic batteries run on flat_torus_2 or round_sphere, not {name!r}")


def _torus_observable(ob, i, x, t):
    """psi and exact references for a Fourier mode (or constant) on the flat torus."""
    G = build_clifford_rep(2).gamma_array()
    s0 = np.array([_cplx(v) for v in ob.get("spinor", [1, 0])])
    k = np.array([float(v) for v in ob.get("k", [0, 0])]) if ob["kind"] == "fourier" else np.zeros(2)
    if np.any(k != np.round(k)):
        raise SpecError(f"observables[{i}].k", "wave numbers must be integers on the 2 pi torus")

    def psi(p):
        return np.exp(1j * (p @ k))[:, None] * s0
    val = psi(np.asarray(x)[None])[0]
    ref = np.exp(-t * k @ k) * val
    refs = {"feynman_kac": ref,
            "bismut_gradient": np.concatenate([1j * k[a] * ref for a in range(2)]),
            "bismut_dirac": sum(1j * k[a] * G[a] @ ref for a in range(2))}
    return psi, refs


def _sphere_observable(ob, i, x, t, be, L):
    from .manifolds import parse_expression
    from .sphere import SphereGalerkin
    from .stochastic import init_state
    if ob["kind"] == "constant":
        s0 = np.array([_cplx(v) for v in ob.get("spinor", [1, 0])])

        def f(p):
            return np.broadcast_to(s0, p.shape[:-1] + (2,)).copy()
    else:
        comps = ob.get("components")
        if not isinstance(comps, list) or len(comps) != 2:
            raise SpecError(f"observables[{i}].components", "need two polynomial components in x1, x2, x3")
        try:
            exprs = [parse_expression(str(c), 3, {"I": sp.I}) for c in comps]
        except ValueError as exc:
            raise SpecError(f"observables[{i}].components", str(exc)) from None
        fns = [sp.lambdify(sp.symbols("x1 x2 x3", real=True), e, "numpy") for e in exprs]

        def f(p):
            return np.stack([np.asarray(fn(p[..., 0], p[..., 1], p[..., 2]), dtype=complex)
                             * np.ones(p.shape[:-1]) for fn in fns], -1)
    G = SphereGalerkin(L=L)
    c = G.project(f)
    back = G.spinor_values(c, G._setup[1])
    if np.max(np.abs(back - f(G._setup[1]))) > 1e-10:
        raise SpecError(f"observables[{i}].components", f"polynomial degree exceeds the Galerkin degree {L}")

    def psi(p):
        return G.spinor_values(c, p)
    ct = G.heat(t, c)
    u0 = init_state(be, x, 1).u0
    refs = {"feynman_kac": G.spinor_values(ct, x),
            "bismut_gradient": np.concatenate([G.covariant_derivative(ct, x, u0[:, a]) for a in range(2)]),
            "bismut_dirac": G.spinor_values(G.dirac_coef(ct), x)}
    return psi, refs


def _label(ob):
    if ob["kind"] == "fourier":
        return "fourier k=" + ",".join(str(int(v)) for v in ob["k"])
    return ob.get("label", ob["kind"])


def cmd_stochastic(cfg: RunConfig):
    from . import stochastic as st
    if not cfg.spec:
        raise ConfigError("--spec", "stochastic needs a battery spec")
    spec, _ = load_spec(cfg.spec)
    _only(spec, STOCH_KEYS)
    name = spec.get("name", Path(cfg.spec).stem)
    model_name = _take(spec, "model", required=True)
    model = _stoch_model(model_name)
    t = _take(spec, "t", 0.2, float)
    x = np.array([float(v) for v in _take(spec, "x", required=True)])
    if model_name == "round_sphere":
        x = x / np.linalg.norm(x)
    seed = cfg.seed if cfg.seed is not None else _take(spec, "seed", 0, int)
    n_paths = cfg.paths or _take(spec, "n_paths", 10_000, int)
    antithetic = bool(spec.get("antithetic", False))
    if antithetic and n_paths % 2:
        n_paths += 1
    try:
        pc = st.PathConfig(t=t, n_steps=_take(spec, "n_steps", 64, int), n_paths=n_paths, seed=seed,
                           chunk=_take(spec, "chunk", 2048, int), workers=cfg.workers, antithetic=antithetic)
    except ValueError as exc:
        raise SpecError("spec", str(exc)) from None
    estimators = list(spec.get("estimators", ESTIMATORS))
    for e in estimators:
        if e not in ESTIMATORS:
            raise SpecError("estimators", f"unknown estimator {e!r}")
    obs = spec.get("observables", [])
    L = _take(spec, "galerkin_L", 8, int)
    resolved = {k: v for k, v in spec.items() if k not in ("seed", "n_paths")} | {"seed": seed, "n_paths": n_paths}
    conf = _base_config(cfg, resolved)
    records, lines, ok = [], [f"stochastic battery {name} on {model_name}, t = {t:g}, "
                                 f"{pc.n_paths} paths, {pc.n_steps} steps"], True
    for i, ob in enumerate(obs):
        if not isinstance(ob, dict) or ob.get("kind") not in ("fourier", "constant", "polynomial"):
            raise SpecError(f"observables[{i}].kind", "expected fourier, constant or polynomial")
        exact = ob["kind"] == "constant" and model_name == "flat_torus_2"
        if model_name == "flat_torus_2":
            if ob["kind"] == "polynomial":
                raise SpecError(f"observables[{i}].kind", "polynomial observables live on the sphere")
            psi, refs = _torus_observable(ob, i, x, t)
        else:
            if ob["kind"] == "fourier":
                raise SpecError(f"observables[{i}].kind", "Fourier modes live on the torus")
            psi, refs = _sphere_observable(ob, i, x, t, model, L)
        for e in estimators:
            rep = getattr(st, e)(psi, x, pc, model)
            ref = refs[e]
            err = float(np.max(np.abs(rep.estimate - ref)))
            z = rep.z_scores(ref)
            if exact:
                passed = err <= EXACT_ATOL and float(np.max(np.abs(rep.standard_error))) <= EXACT_ATOL
                crit = f"|error| {err:.1e}, SE {float(np.max(np.abs(rep.standard_error))):.1e}"
            else:
                zmax = float(np.max(z))
                passed = zmax <= Z_LIMIT
                crit = f"max |z| {zmax:.2f}"
            ok &= passed
            rec = rep.as_dict() | {"battery": name, "observable": _label(ob), "reference": ref,
                                   "z_scores": z, "max_abs_error": err, "exactness_check": exact,
                                   "passed": passed}
            records.append(reports.make_record("stochastic", conf, seed, rec, [reports.ANCHORS[e]]))
            lines.append(f"{'PASS' if passed else 'FAIL'} {e:<16} {_label(ob):<22} {crit}")
    checks = spec.get("checks") or {}
    _only(checks, {"weak_order", "kato_simon", "hilbert_schmidt"}, "checks")
    for kind, params in checks.items():
        passed, rec, line = _extra_check(kind, params or {}, model_name)
        ok &= passed
        records.append(reports.make_record("stochastic", conf, seed, rec | {"battery": name},
                                           [reports.ANCHORS[{"weak_order": "weak order"}.get(kind, kind)]]))
        lines.append(line)
    lines.append("stochastic: " + ("all observables within tolerance" if ok else "statistical failure"))
    _emit(cfg, f"stochastic-{name}", records, "\n".join(lines))
    return 0 if ok else 1


def _extra_check(kind, p, model_name):
    from . import stochastic as st
    from .manifolds import flat_torus, round_sphere
    t = float(p.get("t", 0.5))
    if kind == "weak_order":
        if model_name != "round_sphere":
            raise SpecError("checks.weak_order", "the weak-order study runs on the sphere")
        levels = tuple(int(v) for v in p.get("levels", (16, 32, 64)))
        errs = st.sphere_weak_errors(t, levels, k=int(p.get("k", 2)))
        slopes = np.log2(errs[:-1] / errs[1:]) / np.log2(np.array(levels[1:]) / np.array(levels[:-1]))
        factor = float(p.get("factor", 1.6))
        passed = bool(np.all((slopes >= 1 / factor) & (slopes <= factor)))
        line = (f"{'PASS' if passed else 'FAIL'} weak order over n = {list(levels)}: "
                f"slopes {', '.join(f'{s:.3f}' for s in slopes)}")
        return passed, {"check": "weak order", "t": t, "levels": list(levels), "errors": errs,
                        "slopes": slopes, "factor": factor, "passed": passed}, line
    model = round_sphere() if model_name == "round_sphere" else flat_torus(2)
    if kind == "kato_simon":
        r = st.kato_simon_check(model, t, N=int(p.get("N", 16)))
        line = f"{'PASS' if r.passed else 'FAIL'} Kato-Simon domination, max ratio {r.max_ratio:.6f}"
        return r.passed, {"check": "kato_simon"} | r.as_dict(), line
    if model_name != "flat_torus_2":
        raise SpecError("checks.hilbert_schmidt", "the closed-form comparison runs on the flat torus")
    N = int(p.get("N", 16))
    r = st.hs_norm_estimate(1.0, "P", model, t, N=N)
    rel = abs(r.frobenius - r.spectral) / r.spectral
    passed = rel <= float(p.get("rtol", 1e-8))
    line = f"{'PASS' if passed else 'FAIL'} Hilbert-Schmidt closed form, relative difference {rel:.2e}"
    return passed, {"check": "hilbert_schmidt", "relative_difference": rel, "passed": passed} | r.as_dict(), line


# ---------------------------------------------------------------------------
# criterion / ricci


def cmd_criterion(cfg: RunConfig, flows_only=False):
    if not cfg.spec:
        raise ConfigError("--spec", "criterion needs a metric-pair or flow spec")
    data, _ = load_spec(cfg.spec)
    kind = data.get("type", "ricci_flow" if "family" in data else "metric_pair")
    which = list(cfg.which) or data.get("which")
    body = {k: v for k, v in data.items() if k not in ("which",)}
    if kind == "metric_pair":
        if flows_only:
            raise ConfigError("--spec", "ricci expects a flow spec (type: ricci_flow)")
        spec = MetricPairSpec.from_dict(body)
        which = [int(w) for w in (which or [1, 2])]
        if any(w not in (1, 2) for w in which):
            raise SpecError("which", "weights are 1 and 2")
        run = evaluate_main_criterion
    elif kind == "ricci_flow":
        spec = RicciFlowSpec.from_dict(body)
        spec.flow
        which = [str(w) for w in (which or ["a", "b"])]
        if any(w not in ("a", "b") for w in which):
            raise SpecError("which", "parts are a and b")
        run = evaluate_ricci_criterion
    else:
        raise SpecError("type", f"unknown spec type {kind!r}")
    seed = cfg.seed if cfg.seed is not None else int(getattr(spec, "seed", 0))
    resolved = spec.as_dict() | {"type": kind, "which": which, "tol": cfg.tol or spec.tol}
    conf = _base_config(cfg, resolved)
    name = spec.name or Path(cfg.spec).stem
    records, lines = [], []
    for w in which:
        rep = run(spec, w, tol=cfg.tol)
        rec = rep.as_dict() | {"spec": spec.as_dict()}
        anchor = reports.ANCHORS["main" if kind == "metric_pair" else "ricci"]
        records.append(reports.make_record(cfg.command, conf, seed, rec, [anchor]))
        lines.append(rep.summary())
    _emit(cfg, f"{cfg.command}-{name}", records, "\n".join(lines))
    return 0


# ---------------------------------------------------------------------------
# entry point


def _ints(text):
    try:
        return tuple(int(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _strs(text):
    return tuple(v.strip() for v in text.split(",") if v.strip())


def build_parser():
    p = argparse.ArgumentParser(prog="spinscatter", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--spec", help="spec file path or bundled spec name")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", default=os.environ.get(OUT_ENV, "spinscatter-out"),
                        help=f"output directory (default ${OUT_ENV} or ./spinscatter-out)")
    common.add_argument("--tol", type=float, help="tolerance override")
    common.add_argument("--format", dest="fmt", choices=FORMATS, default="human")
    common.add_argument("--workers", type=int, default=1)
    va = sub.add_parser("verify-algebra", parents=[common], help="Clifford and fiber lemma suites")
    va.add_argument("--n", type=_ints, default=(), help="dimensions, e.g. 2,3,4")
    va.add_argument("--fibers", type=int)
    va.add_argument("--fault", choices=("K-sign-flip",), help="inject a known defect (test mode)")
    hp = sub.add_parser("hpw", parents=[common], help="HPW identities on the 2-torus")
    hp.add_argument("--grid", type=_ints, default=(), help="grid sizes N, e.g. 16,32")
    so = sub.add_parser("stochastic", parents=[common], help="Monte Carlo batteries against oracles")
    so.add_argument("--paths", type=int)
    for name in ("criterion", "ricci"):
        c = sub.add_parser(name, parents=[common], help="integrability criterion" if name == "criterion"
                           else "criterion for flow specs")
        c.add_argument("--which", type=_strs, default=(), help="weights 1,2 or flow parts a,b")
    sub.add_parser("list-specs", help="names of the bundled specs")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    if args.command == "list-specs":
        print("\n".join(bundled_specs()))
        return 0
    try:
        cfg = RunConfig(command=args.command, spec=args.spec, seed=args.seed, tol=args.tol, out=args.out,
                        fmt=args.fmt, paths=getattr(args, "paths", None), grid=getattr(args, "grid", ()),
                        n=getattr(args, "n", ()), fibers=getattr(args, "fibers", None),
                        fault=getattr(args, "fault", None), workers=args.workers,
                        which=getattr(args, "which", ()))
        handler = {"verify-algebra": cmd_verify_algebra, "hpw": cmd_hpw, "stochastic": cmd_stochastic,
                   "criterion": cmd_criterion, "ricci": lambda c: cmd_criterion(c, flows_only=True)}
        return handler[args.command](cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except SpecError as exc:
        print(f"spec error in field {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
