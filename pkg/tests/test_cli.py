import csv
import hashlib
import json

import pytest

from labcbg import cli
from labcbg.geometry import design_to_dict, preset


def run_cli(*argv):
    return cli.main([str(a) for a in argv])


def test_missing_design_file(tmp_path, capsys):
    assert run_cli("simulate", "--design", tmp_path / "nope.json", "--out", tmp_path / "o") == 2
    assert "not found" in capsys.readouterr().err


def test_design_and_preset_are_exclusive(tmp_path):
    p = tmp_path / "d.json"
    p.write_text(json.dumps(design_to_dict(preset("cbg930"))))
    assert run_cli("simulate", "--design", p, "--preset", "cbg930", "--out", tmp_path / "o") == 2


def test_invalid_design_reports_violations(tmp_path, capsys):
    d = design_to_dict(preset("cbg930"))
    d["etch_width_nm"] = 40.0
    p = tmp_path / "d.json"
    p.write_text(json.dumps(d))
    assert run_cli("simulate", "--design", p, "--out", tmp_path / "o") == 2
    assert "invalid design" in capsys.readouterr().err


def test_bad_band_is_usage_error(tmp_path):
    with pytest.raises(SystemExit) as info:
        run_cli("simulate", "--band", "930,80", "--out", tmp_path / "o")
    assert info.value.code == 2


def test_paper_fidelity_needs_opt_in(tmp_path, capsys):
    assert run_cli("simulate", "--mesh", "paper-fidelity", "--out", tmp_path / "o") == 2
    err = capsys.readouterr().err
    assert "GiB" in err and "--i-have-compute" in err


def test_empty_sweep_writes_header_only(tmp_path):
    out = tmp_path / "sw"
    assert run_cli("sweep", "--param", "R", "--offsets", "", "--out", out) == 0
    assert (out / "sweep.csv").read_text() == "param,offset_nm,resonance_nm,purcell,c_na_0.7\n"
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["offsets_nm"] == [] and manifest["results"] == []


def test_sweep_with_only_invalid_offsets(tmp_path, capsys):
    assert run_cli("sweep", "--param", "W", "--offsets=-1000,-500", "--out", tmp_path) == 2
    assert "invalid" in capsys.readouterr().err


def test_non_empty_output_needs_force(tmp_path):
    (tmp_path / "old.txt").write_text("x")
    assert run_cli("sweep", "--param", "R", "--offsets", "", "--out", tmp_path) == 2
    assert run_cli("sweep", "--param", "R", "--offsets", "", "--out", tmp_path, "--force") == 0
    assert not (tmp_path / "old.txt").exists()


def test_manifest_checksums(tmp_path):
    out = tmp_path / "opt"
    assert run_cli("optimize", "--surrogate", "--seed", 3, "--out", out) == 0
    manifest = json.loads((out / "run_manifest.json").read_text())
    assert manifest["schema_version"] == cli.SCHEMA_VERSION
    assert manifest["seed"] == 3 and manifest["status"] == "ok"
    for name, entry in manifest["files"].items():
        assert hashlib.sha256((out / name).read_bytes()).hexdigest() == entry["sha256"]


def test_surrogate_trace_is_reproducible(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert run_cli("optimize", "--surrogate", "--seed", 7, "--out", a) == 0
    assert run_cli("optimize", "--surrogate", "--seed", 7, "--out", b) == 0
    assert (a / "trace.csv").read_bytes() == (b / "trace.csv").read_bytes()


def test_trace_rows_carry_best_parameters(tmp_path):
    assert run_cli("optimize", "--surrogate", "--seed", 1, "--out", tmp_path) == 0
    with open(tmp_path / "trace.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert {r["stage"] for r in rows} == {"stage1", "stage2"}
    for r in rows:
        assert all(r[k] for k in ("R", "P", "W", "t_sc"))
        assert bool(r["t_s"]) == (r["stage"] == "stage2")
    for stage in ("stage1", "stage2"):
        costs = [float(r["best_cost"]) for r in rows if r["stage"] == stage]
        assert costs == sorted(costs, reverse=True)


def test_resume_reuses_every_evaluation(tmp_path, capsys):
    assert run_cli("optimize", "--surrogate", "--seed", 7, "--out", tmp_path) == 0
    first = (tmp_path / "trace.csv").read_bytes()
    capsys.readouterr()
    assert run_cli("optimize", "--surrogate", "--seed", 7, "--out", tmp_path, "--resume") == 0
    assert "(0 new evaluations)" in capsys.readouterr().out
    manifest = json.loads((tmp_path / "run_manifest.json").read_text())
    assert manifest["evaluations_computed"] == 0 and manifest["cache_hits"] > 0
    assert (tmp_path / "trace.csv").read_bytes() == first


def test_infeasible_search_box_is_numeric_failure(tmp_path):
    cfg = tmp_path / "cfg.json"
    bounds = {"W": [400.0, 420.0], "P": [300.0, 310.0]}
    cfg.write_text(json.dumps({"stage1": {"bounds": bounds, "pso": {"swarm_size": 4,
                                                                     "max_iterations": 2}}}))
    out = tmp_path / "o"
    assert run_cli("optimize", "--surrogate", "--config", cfg, "--out", out) == 3
    assert json.loads((out / "run_manifest.json").read_text())["status"] == "failed"


def test_bad_config_json(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text("{not json")
    assert run_cli("optimize", "--surrogate", "--config", cfg, "--out", tmp_path / "o") == 2


def test_check_passes(capsys):
    assert run_cli("check") == 0
    out = capsys.readouterr().out
    assert "1.152" in out and "0 failure(s)" in out
    assert "FAIL" not in out


def test_check_detects_perturbation(capsys):
    assert run_cli("check", "--perturb", "0.01") != 0
    assert "FAIL" in capsys.readouterr().out


def test_zero_threads_rejected(tmp_path):
    assert run_cli("sweep", "--param", "R", "--offsets", "", "--threads", 0, "--out", tmp_path) == 2


def test_unknown_design_key_rejected(tmp_path, capsys):
    d = design_to_dict(preset("cbg930"))
    d["etch_width"] = 80.0
    p = tmp_path / "d.json"
    p.write_text(json.dumps(d))
    assert run_cli("simulate", "--design", p, "--out", tmp_path / "o") == 2
    assert "etch_width" in capsys.readouterr().err
