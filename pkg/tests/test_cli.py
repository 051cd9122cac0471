import csv
import json

import numpy as np
import pytest

from conftest import t3_system
from gridattack.cli import main
from gridattack.grid import dump_grid


@pytest.fixture
def t3_file(tmp_path):
    path = tmp_path / "t3.json"
    path.write_text(dump_grid(t3_system([3])))
    return str(path)


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def test_validate(capsys, t3_file):
    code, out, _ = run(capsys, "validate", t3_file)
    doc = json.loads(out)
    assert code == 0 and doc["rank"] == 3 and doc["connected"] and doc["protected"] == [3]


def test_validate_ieee14_with_phasors(capsys):
    code, out, _ = run(capsys, "validate", "ieee14", "--phasors", "1,2,3,4,6,8,9,10,13")
    assert code == 0 and json.loads(out)["meters"] == 29


def test_topology_without_phasors_is_a_validation_error(capsys):
    code, _, err = run(capsys, "validate", "ieee14")
    assert code == 2 and "phasors" in err


def test_missing_file_is_io_error(capsys, tmp_path):
    code, _, _ = run(capsys, "validate", str(tmp_path / "nope.json"))
    assert code == 3


def test_bad_grid_is_validation_error(capsys, tmp_path):
    path = tmp_path / "bad.json"
    path.write_text('{"buses": [1, 2], "lines": [{"from": 1, "to": 5, "b": 1}]}')
    assert run(capsys, "validate", str(path))[0] == 2


def test_estimate_with_cleanup(capsys, t3_file, tmp_path):
    z = t3_system().H @ np.array([0.1, 0.2, -0.1])
    z[5] += 1.0
    zfile = tmp_path / "z.json"
    zfile.write_text(json.dumps({"z": z.tolist()}))
    code, out, _ = run(capsys, "estimate", t3_file, str(zfile), "--clean")
    doc = json.loads(out)
    assert code == 0 and doc["estimate"]["detected"] and doc["cleanup"]["removed"] == [5]


def test_estimate_length_mismatch(capsys, t3_file, tmp_path):
    zfile = tmp_path / "z.json"
    zfile.write_text("[1, 2]")
    assert run(capsys, "estimate", t3_file, str(zfile))[0] == 2


def test_attack_then_verify(capsys, t3_file, tmp_path):
    attack_file = tmp_path / "attack.json"
    code, _, _ = run(capsys, "attack", "detect", t3_file, "--kappa", "1", "--out", str(attack_file))
    assert code == 0
    doc = json.loads(attack_file.read_text())
    assert doc["bait"] == [3] and [e["index"] for e in doc["support"]] == [0, 1]
    code, out, _ = run(capsys, "verify", t3_file, str(attack_file))
    report = json.loads(out)
    assert code == 0 and report["deceived"] and report["removed"] == [3]


@pytest.mark.parametrize("algo", ["sdp", "mincut"])
def test_attack_heuristics(capsys, t3_file, algo):
    code, out, _ = run(capsys, "attack", "detect", t3_file, "--algo", algo, "--seed", "3")
    assert code == 0 and len(json.loads(out)["support"]) >= 2


def test_attack_verdicts(capsys, tmp_path):
    path = tmp_path / "all.json"
    path.write_text(dump_grid(t3_system(range(6))))
    assert json.loads(run(capsys, "attack", "hidden", str(path))[1]) == {"verdict": "infeasible"}
    out = run(capsys, "attack", "detect", str(path), "--algo", "mincut")[1]
    assert json.loads(out) == {"verdict": "not-found"}


def test_sweep(capsys, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"fractions": [0.0, 0.2], "trials": 2, "algorithms": ["oracle", "hidden"]}))
    out_csv, summary = tmp_path / "r.csv", tmp_path / "s.json"
    code, _, _ = run(capsys, "sweep", "--config", str(cfg), "--out", str(out_csv), "--summary", str(summary))
    assert code == 0
    rows = list(csv.DictReader(out_csv.open()))
    assert len(rows) == 8 and rows[0]["algorithm"] == "oracle"
    assert json.loads(summary.read_text())["metadata"]["phasor_rounding"] == "ceil"


def test_sweep_rejects_unknown_keys(capsys, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text('{"trails": 3}')
    assert run(capsys, "sweep", "--config", str(cfg))[0] == 2
