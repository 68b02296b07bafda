"""Structured run records: anchors, config hashing and JSON-lines / CSV / text writers.

Records carry no timestamps or durations, so identical inputs give identical bytes.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from dataclasses import asdict, is_dataclass
from pathlib import Path

import numpy as np

from . import __version__

TOOL = "spinscatter"

# check name -> theorem-level anchor in the source text
ANCHORS = {
    "anticommutation": "Definition Clifford multiplication",
    "skew_adjoint": "Definition Clifford multiplication",
    "K selfadjoint": "Lemma K_j-sa-and-commutation-formula",
    "K^2 = nK": "Lemma K_j-sa-and-commutation-formula",
    "K = L*L": "Lemma K_j-sa-and-commutation-formula",
    "LL* = n Id": "Lemma fibrewise_adjoint_L",
    "L* closed form": "Lemma fibrewise_adjoint_L",
    "K commutation": "Eq. K_gK_h-commutation-relation",
    "S-hat commutation": "Eq. widehat_S-A-commutator",
    "L difference": "Eq. fibrewise-L-difference",
    "musical relations": "Eq. varrho-A",
    "U unitary": "Eq. definition-I",
    "U-hat unitary (selfadjoint S-hat)": "Eq. definition-I",
    "rho symmetry": "Eq. varrho-A",
    "delta symmetry": "Eq. definition-delta-omega",
    "|S| <= delta": "Lemma S-Shat-pointwise-estimates",
    "|S~| <= C1 delta": "Lemma S-Shat-pointwise-estimates",
    "|S^| <= C2 delta": "Lemma S-Shat-pointwise-estimates",
    "|T~| <= C3 omega": "Lemma tilde-T-bounds",
    "|T| <= T-constant omega": "Lemma tilde-T-bounds",
    "|M| <= C omega": "Corollary M-bounds",
    "|mabs(M)^1/2| <= C sqrt(omega)": "Corollary M-bounds",
    "nabla-difference bound": "Proposition nabla-difference-bound",
    "hpw I": "Theorem dirac-hpw-formula",
    "hpw II": "Theorem dirac-hpw-formula2",
    "feynman_kac": "Eq. bismut",
    "bismut_gradient": "Eq. B1",
    "bismut_dirac": "Eq. B2",
    "weak order": "Eq. spast",
    "kato_simon": "Eq. ks",
    "hilbert_schmidt": "Eq. aappq0",
    "main": "Theorem main",
    "ricci": "Theorem ricci-flow",
}


def generic_name(name):
    """Strip the metric tag (_g, _h, _hg, +/-) so per-side checks share one anchor key."""
    s = name
    for tag in ("_hg", "_gh", "_g", "_h", "+", "-"):
        s = s.replace(tag, "")
    s = s.replace("C5", "C").replace("C6", "C").replace("C7", "C").replace("C8", "C")
    return s


def anchor_for(name):
    if name in ANCHORS:
        return ANCHORS[name]
    g = generic_name(name)
    if g in ANCHORS:
        return ANCHORS[g]
    for key, val in ANCHORS.items():
        if g.startswith(key):
            return val
    return None


def plain(obj):
    """JSON-safe copy: numpy to builtins, complex to {re, im}, non-finite floats to strings."""
    if is_dataclass(obj) and not isinstance(obj, type):
        return plain(obj.as_dict() if hasattr(obj, "as_dict") else asdict(obj))
    if isinstance(obj, dict):
        return {str(k): plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return plain(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (complex, np.complexfloating)):
        z = complex(obj)
        return {"re": plain(z.real), "im": plain(z.imag)}
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return x
    if obj is None or isinstance(obj, str):
        return obj
    return str(obj)


def dumps(obj):
    return json.dumps(plain(obj), sort_keys=True, allow_nan=False, separators=(",", ":"))


def config_hash(config):
    """First 16 hex digits of sha256 over the canonical JSON of ``config``."""
    return hashlib.sha256(dumps(config).encode()).hexdigest()[:16]


def make_record(command, config, seed, payload, anchors=()):
    anchors = sorted({a for a in anchors if a})
    return {"tool": TOOL, "version": __version__, "command": command,
            "config_hash": config_hash(config), "seed": seed,
            "anchors": anchors, **plain(payload)}


def to_jsonl(records):
    return "".join(dumps(r) + "\n" for r in records)


def _flatten(d, prefix=""):
    out = {}
    for k, v in d.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict) and set(v) != {"re", "im"}:
            out.update(_flatten(v, key + "."))
        elif isinstance(v, (list, dict)):
            out[key] = json.dumps(v, sort_keys=True)
        else:
            out[key] = v
    return out


def to_csv(records):
    rows = [_flatten(plain(r)) for r in records]
    cols = sorted({c for r in rows for c in r})
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=cols, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow(r)
    return buf.getvalue()


def write(records, out_dir, stem, fmt, human_text=""):
    """Write records as ``stem.jsonl``, ``stem.csv`` or ``stem.txt``; returns the path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if fmt == "jsonl":
        path, text = out / f"{stem}.jsonl", to_jsonl(records)
    elif fmt == "csv":
        path, text = out / f"{stem}.csv", to_csv(records)
    elif fmt == "human":
        path, text = out / f"{stem}.txt", human_text
    else:
        raise ValueError(f"unknown format {fmt!r}")
    path.write_text(text)
    return path
