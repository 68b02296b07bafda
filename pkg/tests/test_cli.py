import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from spinscatter import cli, reports


def run(capsys, *argv):
    code = cli.main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def test_plain_handles_complex_numpy_and_inf():
    d = reports.plain({"z": 1 + 2j, "a": np.arange(2), "f": np.float32(0.5), "i": np.inf, "b": np.bool_(True)})
    assert d == {"z": {"re": 1.0, "im": 2.0}, "a": [0, 1], "f": 0.5, "i": "inf", "b": True}
    json.dumps(d, allow_nan=False)


@given(st.dictionaries(st.text(max_size=5), st.integers(), max_size=6))
def test_config_hash_ignores_key_order(d):
    assert reports.config_hash(d) == reports.config_hash(dict(reversed(list(d.items()))))


def test_every_fiber_check_has_an_anchor():
    from spinscatter.suites import fiber_lemma_suite
    res = fiber_lemma_suite(2, 5)
    assert all(reports.anchor_for(k) for k in list(res.residuals) + list(res.bound_ratios))


def test_list_specs(capsys):
    code, out, _ = run(capsys, "list-specs")
    assert code == 0 and "hyperbolic_bump" in out.split()


def test_verify_algebra_small_run(capsys, tmp_path):
    code, out, _ = run(capsys, "verify-algebra", "--n", "2,3", "--fibers", "100", "--out", str(tmp_path))
    assert code == 0 and "all invariants hold" in out


def test_fault_injection_fails_on_K_selfadjoint(capsys, tmp_path):
    code, out, _ = run(capsys, "verify-algebra", "--n", "2", "--fibers", "50", "--fault", "K-sign-flip",
                       "--out", str(tmp_path))
    assert code == 1 and "FAIL K selfadjoint" in out


def test_dimension_out_of_range_is_a_config_error(capsys):
    code, _, err = run(capsys, "verify-algebra", "--n", "9")
    assert code == 2 and "--n" in err


def test_grid_must_be_power_of_two(capsys):
    code, _, err = run(capsys, "hpw", "--spec", "hpw_constant_pair", "--grid", "24")
    assert code == 2 and "power of two" in err


def test_yaml_error_reports_line(capsys, tmp_path):
    p = tmp_path / "bad.yaml"
    p.write_text("type: metric_pair\nbase: hyperbolic_disk_2\nperturbation: {kind: bump\n  radius: [2\n")
    code, _, err = run(capsys, "criterion", "--spec", str(p))
    assert code == 2 and "line 4" in err


def test_unknown_field_reports_field(capsys, tmp_path):
    p = tmp_path / "bad.yaml"
    p.write_text("type: metric_pair\nbase: hyperbolic_disk_2\nperturbation: {kind: bump, amplitude: x}\n")
    code, _, err = run(capsys, "criterion", "--spec", str(p))
    assert code == 2 and "perturbation.amplitude" in err


def test_missing_spec_is_a_config_error(capsys):
    assert run(capsys, "criterion", "--spec", "no_such_spec")[0] == 2


def test_ricci_rejects_metric_pair_specs(capsys):
    assert run(capsys, "ricci", "--spec", "identity")[0] == 2


def test_criterion_exit_zero_even_when_violated(capsys, tmp_path):
    code, out, _ = run(capsys, "criterion", "--spec", "hyperbolic_homothety", "--which", "1",
                       "--out", str(tmp_path))
    assert code == 0 and "criterion violated (divergent integral)" in out


def test_hpw_constant_pair(capsys, tmp_path):
    code, out, _ = run(capsys, "hpw", "--spec", "hpw_constant_pair", "--format", "csv", "--out", str(tmp_path))
    assert code == 0
    header = (tmp_path / "hpw-hpw_constant_pair.csv").read_text().splitlines()[0].split(",")
    assert {"anchors", "config_hash", "residual", "seed", "version"} <= set(header)


def test_records_embed_version_hash_seed_and_anchors(capsys, tmp_path):
    run(capsys, "criterion", "--spec", "identity", "--format", "jsonl", "--out", str(tmp_path), "--seed", "7")
    recs = [json.loads(line) for line in (tmp_path / "criterion-identity.jsonl").read_text().splitlines()]
    assert len(recs) == 2
    for r in recs:
        assert r["version"] and len(r["config_hash"]) == 16 and r["seed"] == 7
        assert r["anchors"] == ["Theorem main"]


def test_output_directory_from_environment(capsys, tmp_path, monkeypatch):
    monkeypatch.setenv(cli.OUT_ENV, str(tmp_path / "env"))
    run(capsys, "criterion", "--spec", "identity", "--which", "1")
    assert (tmp_path / "env" / "criterion-identity.txt").exists()


def test_stochastic_records_are_reproducible_across_workers(capsys, tmp_path):
    outs = []
    for i, w in enumerate(("1", "1", "2")):
        d = tmp_path / str(i)
        code, _, _ = run(capsys, "stochastic", "--spec", "constant_spinor_battery", "--paths", "200",
                         "--format", "jsonl", "--out", str(d), "--workers", w)
        assert code == 0
        outs.append((d / "stochastic-constant_spinor_battery.jsonl").read_bytes())
    assert outs[0] == outs[1] == outs[2]


def test_tolerance_must_be_positive(capsys):
    assert run(capsys, "criterion", "--spec", "identity", "--tol", "-1")[0] == 2
