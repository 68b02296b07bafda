"""N-refinement study of the HPW residuals on the torus; writes the golden residual file.

    python3 scripts/hpw_resolution_study.py            # both bundled pairs, writes data/hpw_golden.json
    python3 scripts/hpw_resolution_study.py --dry-run  # print only
"""
import argparse
import json
from pathlib import Path

from spinscatter import cli
from spinscatter.reference import build_torus_dirac, verify_hpw

GOLDEN = Path(__file__).resolve().parents[1] / "src" / "spinscatter" / "data" / "hpw_golden.json"


def study(spec_name):
    spec, _ = cli.load_spec(spec_name)
    g, h = cli._torus_model(spec.get("g"), "g"), cli._torus_model(spec.get("h"), "h")
    out = {}
    for N in spec["grid"]:
        ops = build_torus_dirac(g, N, h)
        for w in spec["formulas"]:
            r = verify_hpw(ops, w, spec["t"], spec.get("n_test", 4), seed=spec.get("seed", 0))
            out.setdefault(w, {})[str(N)] = r.residual
            print(f"{spec_name:<20} {w:>2} N={N:<3} residual {r.residual:.3e}  dominant {r.dominant}")
    return {"t": spec["t"], "residuals": out,
            "thresholds": {str(k): v for k, v in spec.get("thresholds", {}).items()}}


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--dry-run", action="store_true")
    args = ap.parse_args()
    pairs = {name: study(name) for name in ("hpw_constant_pair", "hpw_conformal_pair")}
    if args.dry_run:
        return
    # one file, keyed by pair, so both specs can point at it
    merged = {"pairs": pairs}
    GOLDEN.write_text(json.dumps(merged, indent=2, sort_keys=True) + "\n")
    print(f"wrote {GOLDEN}")


if __name__ == "__main__":
    main()
