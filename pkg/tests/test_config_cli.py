import csv
import json
import subprocess
import sys

import pytest

from impulsegame.cli import run_command
from impulsegame.config import ConfigError, RunConfig
from impulsegame.problem import tp1

SMALL = {"grid": {"nx": 41, "nt": 20}, "simulation": {"paths": 200, "q": 3},
         "game": {"q_values": [1, 2]}, "verify": {"trials": 2}}


def write(tmp_path, doc, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(doc))
    return str(p)


def test_preset_expansion_and_round_trip(tmp_path):
    cfg = RunConfig.from_dict({"problem": {"preset": "tp1"}})
    assert cfg.doc["problem"] == tp1().to_dict()
    again = RunConfig.from_dict(json.loads(cfg.dumps()))
    assert again.dumps() == cfg.dumps()
    cfg.dump(tmp_path / "c.json")
    assert RunConfig.load(tmp_path / "c.json").hash == cfg.hash


def test_hash_ignores_key_order():
    a = RunConfig.from_dict({"problem": {"preset": "tp2"}, "seed": 3, "grid": {"nx": 41}})
    b = RunConfig.from_dict({"grid": {"nx": 41}, "seed": 3, "problem": {"preset": "tp2"}})
    assert a.hash == b.hash
    c = RunConfig.from_dict({"grid": {"nx": 41}, "seed": 4, "problem": {"preset": "tp2"}})
    assert c.hash != a.hash


@pytest.mark.parametrize("doc", [{}, {"problem": {"preset": "tp9"}},
                                 {"problem": {"preset": "tp1"}, "plotting": {}},
                                 {"problem": {"preset": "tp1"}, "grid": {"nx": 1}}])
def test_bad_configs(doc):
    with pytest.raises((ConfigError, ValueError)):
        RunConfig.from_dict(doc)


def test_typed_views():
    cfg = RunConfig.from_dict({"problem": {"preset": "tp1"}, **SMALL})
    spec = cfg.spec()
    grid = cfg.grid(spec)
    assert (grid.nx, grid.nt) == (41, 20)
    assert len(cfg.impulse_grid(spec, grid)) == 321
    assert cfg.scheme().time_stepping == "implicit"


def test_missing_config_file(tmp_path, capsys):
    missing = str(tmp_path / "nope.json")
    assert run_command(["solve", "--config", missing, "--out", str(tmp_path)]) == 2
    assert missing in capsys.readouterr().err


def test_usage_errors(capsys):
    assert run_command(["explode"]) == 64
    assert run_command(["solve"]) == 64
    assert run_command(["solve", "--config", "x", "--q", "two"]) == 64


def test_invalid_json(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    assert run_command(["solve", "--config", str(p), "--out", str(tmp_path / "o")]) == 2


def test_solve_tp2(tmp_path):
    cfg = write(tmp_path, {"problem": {"preset": "tp2"}, **SMALL})
    out = tmp_path / "out"
    assert run_command(["solve", "--config", cfg, "--out", str(out)]) == 0
    rows = (out / "layer0.csv").read_text().splitlines()
    assert rows[0] == "x1,u,b1,act,z1"
    assert all(abs(float(r.split(",")[1]) - 1.0) <= 1e-12 for r in rows[1:])
    man = json.loads((out / "manifest.json").read_text())
    assert man["command"] == "solve" and len(man["solution_id"]) == 16
    assert "layer20.csv" in man["outputs"] and "validation.json" in man["outputs"]
    assert json.loads((out / "validation.json").read_text())["passed"]


def test_nonconforming_problem_exits_2(tmp_path):
    doc = {"problem": tp1().to_dict(), **SMALL}
    doc["problem"]["cost"] = {"family": "constant", "value": 1.0}
    cfg = write(tmp_path, doc)
    out = tmp_path / "out"
    assert run_command(["solve", "--config", cfg, "--out", str(out)]) == 2
    report = json.loads((out / "validation.json").read_text())
    assert not report["passed"]
    assert not (out / "layer0.csv").exists()


def test_verify_tp1(tmp_path):
    cfg = write(tmp_path, {"problem": {"preset": "tp1"}, **SMALL})
    out = tmp_path / "out"
    code = run_command(["verify", "--config", cfg, "--out", str(out), "--lambda", "0.25",
                        "--rho", "0.5"])
    lines = [json.loads(s) for s in (out / "verdicts.jsonl").read_text().splitlines()]
    assert code == 0, [v for v in lines if not v["pass"]]
    names = [v["check"] for v in lines]
    assert "strict_supersolution[0.25]" in names and "comparison_ordered" in names
    assert all(set(v) == {"check", "pass", "worst_node", "margin"} for v in lines)


def test_simulate_and_game(tmp_path):
    cfg = write(tmp_path, {"problem": {"preset": "tp1"}, **SMALL})
    out = tmp_path / "sim"
    assert run_command(["simulate", "--config", cfg, "--out", str(out), "--seed", "5"]) == 0
    est = json.loads((out / "estimate.json").read_text())
    assert set(est) == {"mean", "se", "n", "seed"} and est["seed"] == 5 and est["n"] == 200
    assert (out / "path.csv").read_text().startswith("k,t,X_pre1")
    out = tmp_path / "game"
    assert run_command(["game", "--config", cfg, "--out", str(out)]) == 0
    pair = json.loads((out / "value_pair.json").read_text())
    assert pair["q"] == 3
    assert len((out / "q_sweep.csv").read_text().splitlines()) == 3
    with open(out / "dpp.csv", newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["rule", "Delta", "se"] and rows[1][0] == "exit [-1.0, 1.0]"


def test_converge(tmp_path):
    doc = {"problem": {"preset": "tp1"}, "convergence": {"levels": 3, "nx": 11, "nt": 5}}
    out = tmp_path / "out"
    assert run_command(["converge", "--config", write(tmp_path, doc), "--out", str(out)]) == 0
    lines = (out / "convergence.csv").read_text().splitlines()
    assert lines[0] == "nx,nt,z_step,sup_diff,order" and len(lines) == 4


def test_console_script_module_entry(tmp_path):
    cfg = write(tmp_path, {"problem": {"preset": "tp0"}, **SMALL})
    proc = subprocess.run([sys.executable, "-c", "from impulsegame.cli import main; main()",
                           "solve", "--config", cfg, "--out", str(tmp_path / "o")],
                          capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr


def test_hash_ignores_worker_count():
    a = RunConfig.from_dict({"problem": {"preset": "tp1"}, "simulation": {"workers": 1}})
    b = RunConfig.from_dict({"problem": {"preset": "tp1"}, "simulation": {"workers": 8}})
    assert a.hash == b.hash and a.dumps() != b.dumps()
