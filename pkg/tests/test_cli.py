import json
import subprocess
import sys

import pytest
from dataclasses import replace

from searchtrack.cli import main
from searchtrack.config import save_scenario
from searchtrack.harness import desk_scale
from searchtrack.world import generate_scenario


@pytest.fixture
def config(tmp_path):
    sc = desk_scale(generate_scenario("BaseConfig"), duration=4, n_particles=30)
    path = tmp_path / "desk.json"
    save_scenario(sc, path)
    return path


def test_generate(tmp_path, capsys):
    out = tmp_path / "base.json"
    assert main(["generate", "Overestimate", "--seed", "2", "--out", str(out)]) == 0
    d = json.loads(out.read_text())
    assert d["name"] == "Overestimate" and d["seed"] == 2
    assert json.loads(capsys.readouterr().out)["written"] == str(out)


def test_run_and_metrics(config, tmp_path, capsys):
    out = tmp_path / "ep.csv"
    assert main(["run", "--config", str(config), "--seed", "1", "--out", str(out)]) == 0
    result = json.loads(capsys.readouterr().out)
    assert result["steps"] == 4
    truth, est = tmp_path / "ep.truth.csv", tmp_path / "ep.est.csv"
    assert truth.exists() and est.exists()
    assert main(["metrics", "--truth", str(truth), "--est", str(est), "--cutoff", "50"]) == 0
    m = json.loads(capsys.readouterr().out)
    assert m["final"]["total"] == pytest.approx(result["final_ospa2"], abs=1e-9)


def test_mc(config, tmp_path, capsys):
    out = tmp_path / "summary.json"
    assert main(["mc", "--config", str(config), "--runs", "2", "--base-seed", "5",
                 "--jobs", "1", "--out", str(out)]) == 0
    s = json.loads(out.read_text())
    assert s["run_count"] == 2 and s["base_seed"] == 5 and len(s["step_mean"]) == 4


def test_bad_config_reports_json_error(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"duration": 3}))
    assert main(["run", "--config", str(bad), "--out", str(tmp_path / "x.csv")]) == 1
    err = json.loads(capsys.readouterr().err)
    assert err["error"] == "ConfigError" and "workspace" in err["message"]


def test_console_script_entry(tmp_path):
    out = tmp_path / "r.json"
    proc = subprocess.run([sys.executable, "-m", "searchtrack.cli", "generate", "Random",
                           "--out", str(out)], capture_output=True, text=True)
    assert proc.returncode == 0 and out.exists()
