import csv
import hashlib
import io
import json
import subprocess
import sys

from strokemem.cli import fmt, main
from strokemem import montecarlo
from strokemem.montecarlo import TRIAL_COLUMNS, TrialConfig


def run(argv):
    out, err = io.StringIO(), io.StringIO()
    code = main(argv, out=out, err=err)
    return code, out.getvalue(), err.getvalue()


def test_bounds_overlap_prints_value_and_report():
    code, out, _ = run(["bounds", "overlap", "--P", "10", "--L", "3", "--M", "100", "--t", "1"])
    assert code == 0
    first, second = out.splitlines()
    assert first == "0.027"
    rec = json.loads(second)
    assert rec["name"] == "overlap" and rec["inputs"] == {"P": 10, "L": 3, "M": 100, "t": 1}


def test_bounds_boolean_and_errors():
    code, out, _ = run(["bounds", "capacity", "--gamma", "0.6", "--r", "1", "--t", "1",
                        "--uniform", "true"])
    assert code == 0 and out.splitlines()[0] == "false"
    assert run(["bounds", "overlap", "--P", "10"])[0] == 1
    assert run(["bounds", "nope"])[0] == 1
    assert run(["bounds", "binom-tail", "--trials", "10", "--prob", "0.5", "--k", "2"])[0] == 1
    code, out, _ = run(["bounds", "list"])
    assert code == 0 and "overlap:" in out


def test_missing_config_is_input_error():
    code, _, err = run(["experiment", "--config", "missing.json", "--seed", "1"])
    assert code == 1
    assert "not found" in err


def test_usage_errors():
    code, _, err = run(["frobnicate"])
    assert code == 1 and "invalid choice" in err
    assert run(["experiment", "--trials", "5"])[0] == 1
    assert run(["gen", "--bogus", "1"])[0] == 1
    assert run(["experiment", "--seed", "1", "--kappa", "2.0"])[0] == 1


def test_experiment_report_and_csv(tmp_path):
    out_json = tmp_path / "report.json"
    csv_dir = tmp_path / "csv"
    code, out, _ = run(["experiment", "--seed", "3", "--trials", "50", "--out", str(out_json),
                        "--csv", str(csv_dir)])
    assert code == 0 and out.rstrip().endswith("PASS")
    doc = json.loads(out_json.read_text())
    assert {"manifest", "rates", "bounds", "comparisons"} <= set(doc)
    assert doc["manifest"]["master_seed"] == 3
    trials = csv_dir / "trials.csv"
    digest = hashlib.sha256(trials.read_bytes()).hexdigest()
    assert doc["manifest"]["files"][str(trials)] == digest
    rows = list(csv.reader(trials.open()))
    assert tuple(rows[0]) == TRIAL_COLUMNS and len(rows) == 51
    cfg = TrialConfig.from_dict(doc["manifest"]["config"])
    assert cfg.master_seed == 3 and cfg.n_trials == 50


def test_experiment_is_reproducible(tmp_path):
    docs = []
    for i, jobs in enumerate(("1", "2")):
        path = tmp_path / f"r{i}.json"
        run(["experiment", "--seed", "9", "--trials", "40", "--jobs", jobs, "--out", str(path),
             "--csv", str(tmp_path / f"c{i}")])
        doc = json.loads(path.read_text())
        for key in ("started", "finished", "files"):
            doc["manifest"].pop(key)
        docs.append(json.dumps(doc, sort_keys=True))
        docs.append((tmp_path / f"c{i}" / "trials.csv").read_bytes())
    assert docs[0] == docs[2]
    assert docs[1] == docs[3]


def test_config_file_with_flag_override(tmp_path):
    cfg = {"schema": 1, "params": {"n_features": 1024, "n_strokes": 100, "n_concepts": 5,
                                   "kappa": 0.5, "size": {"kind": "fixed", "L": 3}},
           "good_event": {"delta": 0.34, "rho": 1}, "n_trials": 10, "master_seed": 0}
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    out_json = tmp_path / "r.json"
    code, _, _ = run(["experiment", "--config", str(path), "--seed", "5", "--trials", "7",
                      "--out", str(out_json)])
    assert code == 0
    echo = json.loads(out_json.read_text())["manifest"]["config"]
    assert echo["n_trials"] == 7 and echo["master_seed"] == 5
    assert echo["params"]["n_features"] == 1024
    reparsed = TrialConfig.from_dict(json.loads(json.dumps(echo)))
    assert reparsed.to_dict() == echo


def test_sweep_writes_grid(tmp_path):
    code, out, _ = run(["experiment", "--seed", "2", "--trials", "30", "--sweep",
                        "params.n_features=1024,4096", "--csv", str(tmp_path),
                        "--out", str(tmp_path / "r.json")])
    assert code == 0
    grid = list(csv.DictReader((tmp_path / "grid.csv").open()))
    assert {row["value"] for row in grid} == {"1024", "4096"}
    doc = json.loads((tmp_path / "r.json").read_text())
    assert len(doc["points"]) == 2


def test_recovery_used_only(tmp_path):
    code, out, _ = run(["recovery", "--seed", "1", "--trials", "30", "--used-only",
                        "--out", str(tmp_path / "r.json")])
    assert code == 0
    doc = json.loads((tmp_path / "r.json").read_text())
    assert doc["manifest"]["config"]["used_only"] is True
    assert "exact_recovery_failure_rate" in doc["rates"]


def test_acceptance_failure_exit_code(monkeypatch):
    # valid bounds cannot be beaten honestly, so force every comparison to fail
    real = montecarlo.compare
    monkeypatch.setattr(montecarlo, "compare",
                        lambda *a, **k: {**real(*a, **k), "passed": False})
    code, out, _ = run(["experiment", "--seed", "1", "--trials", "20"])
    assert code == 2
    assert "VIOLATED" in out


def test_gen_and_retrieve(tmp_path):
    code, out, _ = run(["gen", "--N-f", "64", "--M", "10", "--P", "3", "--L", "2", "--seed", "4"])
    assert code == 0
    doc = json.loads(out)
    assert len(doc["strokes"]) == 10 and len(doc["concepts"]) == 3
    code, out, _ = run(["retrieve", "--seed", "4", "--target", "0"])
    assert code == 0
    trace = json.loads(out)
    assert trace["target_overlaps"] == trace["target_stroke_weights"]
    assert run(["retrieve", "--seed", "4", "--target", "99"])[0] == 1


def test_energy_demo(tmp_path):
    code, out, _ = run(["energy-demo", "--potential", "quadratic", "--steps", "10000",
                        "--seed", "1", "--csv", str(tmp_path)])
    assert code == 0
    assert "monotone true" in out
    rows = list(csv.reader((tmp_path / "trajectory.csv").open()))
    energies = [float(r[1]) for r in rows[1:]]
    assert len(energies) == 10001
    assert all(b <= a + 1e-9 * max(1.0, abs(a)) for a, b in zip(energies, energies[1:]))


def test_energy_demo_divergence_is_numerical_error():
    code, _, err = run(["energy-demo", "--potential", "quartic", "--steps", "200", "--scale", "50",
                        "--dt", "0.5"])
    assert code == 3
    assert "numerical error" in err


def test_fmt_is_locale_independent():
    assert fmt(0.1234567891) == "0.123457"
    assert fmt(12) == "12"
    assert fmt(True) == "true"
    assert fmt(1e-9) == "1e-09"


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "strokemem", "bounds", "margin", "--l", "5",
                           "--u", "5", "--delta", "0.4", "--rho", "1", "--a", "1", "--b", "0"],
                          capture_output=True, text=True, check=False)
    assert proc.returncode == 0
    assert proc.stdout.splitlines()[0] == "1"
