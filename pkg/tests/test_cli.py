import json
import os

import jsonschema
import numpy as np
import pytest

from malab.cli import main, _schema


def run_cli(args):
    return main(args)


def test_catalog_constants(tmp_path, capsys):
    assert run_cli(["catalog", "--set", "n=3", "--out", str(tmp_path)]) == 0
    payload = json.loads((tmp_path / "catalog.json").read_text())
    fixtures = {f["name"]: f for f in payload["fixtures"]}
    exp = fixtures["expsolution"]
    assert exp["drift"]["d"] == [1.0, 0.0, 0.0]
    assert exp["drift"]["d0"] == pytest.approx(2 * np.log(2.0))
    assert fixtures["duallog"]["drift"]["d0"] == pytest.approx(0.0)


def test_solve_artifacts_and_determinism(tmp_path):
    cfg = {
        "n": 2, "side": "dual",
        "domain": {"kind": "box", "lo": [1, -1], "hi": [2, 1]},
        "resolution": [17, 33],
        "drift": {"d0": 0.0, "d": [1.0, 0.0]},
        "boundary": {"kind": "fixture", "name": "duallog"},
    }
    cfg_path = tmp_path / "solve.json"
    cfg_path.write_text(json.dumps(cfg))
    out1, out2 = tmp_path / "a", tmp_path / "b"
    assert run_cli(["solve", "--config", str(cfg_path), "--out", str(out1)]) == 0
    assert run_cli(["solve", "--config", str(cfg_path), "--out", str(out2)]) == 0
    for name in ("solution.csv", "solver_report.json", "solution.meta.json"):
        assert (out1 / name).read_bytes() == (out2 / name).read_bytes()
    report = json.loads((out1 / "solver_report.json").read_text())
    jsonschema.validate(report, _schema("solver_report.schema.json"))
    assert report["converged"] and report["final_residual"] <= 1e-10
    # quadratic convergence tail: late residual ratios are tiny
    hist = report["residual_history"]
    assert hist[-1] / hist[-2] <= 1e-2


def test_verify_identities_cli(tmp_path):
    assert run_cli(["verify", "--set", "fixture=quadratic",
                    "--set", "suite=identities", "--set", "probes.count=10",
                    "--out", str(tmp_path)]) == 0
    report = json.loads((tmp_path / "check_report.json").read_text())
    jsonschema.validate(report, _schema("check_report.schema.json"))
    assert report["passed"] is True
    assert (tmp_path / "check_report.csv").exists()


def test_geometry_jsonl_schema(tmp_path):
    assert run_cli(["geometry", "--set", "fixture=expsolution",
                    "--set", "probes.count=5", "--out", str(tmp_path)]) == 0
    schema = _schema("geometry_sample.schema.json")
    lines = (tmp_path / "geometry.jsonl").read_text().strip().split("\n")
    assert len(lines) == 5
    for line in lines:
        jsonschema.validate(json.loads(line), schema)


def test_blowup_cli_schema(tmp_path):
    assert run_cli(["blowup", "--set", "fixture=duallog", "--set", "p=[1,0]",
                    "--set", "ladder=[0.1,0.2]", "--set", "probes_per_axis=61",
                    "--out", str(tmp_path)]) == 0
    report = json.loads((tmp_path / "blowup_report.json").read_text())
    jsonschema.validate(report, _schema("blowup_report.schema.json"))
    assert len(report["records"]) == 2
    assert all(r["scaling_rel_error"] <= 1e-6 for r in report["records"])


def test_det_barrier_cli(tmp_path):
    assert run_cli(["verify", "--set", "fixture=quadratic",
                    "--set", "suite=det_barrier", "--set", "delta=1.0",
                    "--set", "r_prime=2.0", "--out", str(tmp_path)]) == 0
    report = json.loads((tmp_path / "check_report.json").read_text())
    assert report["tolerances"]["d5"] == pytest.approx(4.756828460010884)


def test_unknown_key_rejected(tmp_path, capsys):
    rc = run_cli(["catalog", "--set", "bogus_key=1"])
    assert rc == 2
    err = json.loads(capsys.readouterr().err)
    assert err["error"] == "UsageError"


def test_bad_suite_rejected(capsys):
    assert run_cli(["verify", "--set", "suite=nope"]) == 2


def test_computational_error_exit_code(tmp_path, capsys):
    # a section that is not compact and not allowed to clip -> exit 1
    rc = run_cli(["verify", "--set", "fixture=duallog", "--set", "suite=functionals",
                  "--set", "p=[1,0]", "--set", "level=2.0",
                  "--set", 'window={"lo": [0.001, -8], "hi": [25, 8]}',
                  "--set", "allow_clipped=false", "--out", str(tmp_path)])
    assert rc == 1
    err = json.loads(capsys.readouterr().err)
    assert err["error"] == "WindowError"


def test_missing_config_file():
    assert run_cli(["solve", "--config", "/nonexistent.json"]) == 2
