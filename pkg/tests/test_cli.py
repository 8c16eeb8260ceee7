import json

import numpy as np
import pytest

from dynfl.cli import main
from dynfl.instance import make_instance, write_instance


@pytest.fixture
def inst_file(tmp_path):
    p = tmp_path / "inst.json"
    assert main(["gen", "--nf", "3", "--nc", "4", "--T", "2", "--g", "1", "--seed", "3",
                 "--kind", "two-level", "--out", str(p)]) == 0
    return p


def test_unknown_subcommand(capsys):
    assert main(["frobnicate"]) == 1
    assert "usage" in capsys.readouterr().err


def test_missing_required_flag():
    assert main(["solve"]) == 1
    assert main(["experiment", "--in", "x.json", "--trials", "-3"]) == 1


def test_malformed_json_names_location(tmp_path, capsys):
    p = tmp_path / "bad.json"
    p.write_text('{\n "T": 2,\n "g": oops}')
    assert main(["solve", "--in", str(p)]) == 2
    assert f"{p}:3:7" in capsys.readouterr().err


def test_invalid_metric_is_data_error(tmp_path, capsys):
    p = tmp_path / "bad.json"
    write_instance(make_instance(np.array([[[10.0, 1.0], [1.0, 1.0]]]), [1.0, 1.0]), p)
    assert main(["validate", "--in", str(p)]) == 2
    assert main(["solve", "--in", str(p)]) == 2
    assert "triangle" in capsys.readouterr().err


def test_stage_chain(tmp_path, inst_file):
    frac, prep, rnd, exp = (tmp_path / n for n in ("frac.json", "prep.json", "r.json", "e.json"))
    assert main(["validate", "--in", str(inst_file)]) == 0
    assert main(["solve", "--in", str(inst_file), "--out", str(frac)]) == 0
    assert set(json.loads(frac.read_text())) >= {"x", "y", "z", "objective", "opening",
                                                  "connection", "switching"}
    assert main(["preprocess", "--in", str(frac), "--out", str(prep)]) == 0
    assert main(["round", "--in", str(prep), "--seed", "4", "--out", str(rnd)]) == 0
    r = json.loads(rnd.read_text())
    assert len(r["steps"]) == 2 and r["cost"]["total"] > 0
    assert main(["experiment", "--in", str(prep), "--trials", "3000", "--out", str(exp)]) == 0
    rep = json.loads(exp.read_text())
    assert rep["bounds"]["ok"]
    assert {"empirical", "bound", "se", "ok"} <= set(rep["bounds"]["checks"][0])
    assert main(["perturb", "--inA", str(prep), "--inB", str(prep), "--trials", "100"]) == 0


def test_oracle_limit(tmp_path, inst_file, capsys):
    assert main(["oracle", "--in", str(inst_file), "--limit", "10"]) == 2
    assert "limit" in capsys.readouterr().err
    out = tmp_path / "exact.json"
    assert main(["oracle", "--in", str(inst_file), "--out", str(out)]) == 0
    assert json.loads(out.read_text())["examined"] == 49


def test_pipeline_report_is_reproducible(tmp_path, inst_file):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    args = ["pipeline", "--in", str(inst_file), "--trials", "5000", "--seed", "1", "--no-timestamp"]
    assert main(args + ["--out", str(a)]) == 0
    assert main(args + ["--out", str(b), "--workers", "2"]) == 0
    assert a.read_bytes() == b.read_bytes()
    rep = json.loads(a.read_text())
    assert rep["ok"] and "oracle" in rep and "timestamp" not in rep
    assert rep["config"]["seed"] == 1


def test_timestamp_present_by_default(tmp_path, inst_file):
    out = tmp_path / "r.json"
    frac = tmp_path / "f.json"
    prep = tmp_path / "p.json"
    main(["solve", "--in", str(inst_file), "--out", str(frac)])
    main(["preprocess", "--in", str(frac), "--out", str(prep)])
    assert main(["round", "--in", str(prep), "--out", str(out)]) == 0
    assert "timestamp" in json.loads(out.read_text())


def test_bound_violation_exit_code(tmp_path, inst_file, monkeypatch):
    import dynfl.cli as cli
    from dynfl.evaluate import BoundCheck, BoundReport

    monkeypatch.setattr(cli, "check_bounds", lambda *a, **k: BoundReport(
        [BoundCheck("opening", 0, 2.0, 1.0, 0.01, False)]))
    assert main(["experiment", "--in", str(inst_file), "--trials", "100"]) == 3
