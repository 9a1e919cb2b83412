import json

import numpy as np
import pytest

from envshape import io as eio
from envshape.abstraction import Abstraction
from envshape.cli import main

from conftest import make_random_mdp


@pytest.fixture
def files(tmp_path, rng):
    m = make_random_mdp(rng, n_states=6, n_actions=2)
    eio.save_mdp(tmp_path / "m.json", m)
    eio.save_abstraction(tmp_path / "a.json", Abstraction.from_map(np.array([0, 0, 1, 1, 2, 2])))
    return tmp_path


def test_shape(files, capsys):
    out = files / "shaped.json"
    code = main(["shape", "--mdp", str(files / "m.json"), "--abstraction", str(files / "a.json"),
                 "--out", str(out), "--delta", "0.05"])
    assert code == 0
    report = json.loads(capsys.readouterr().out)
    assert report["delta"] == 0.05
    assert eio.load_mdp(out).n_states == 6


def test_analyze(files, capsys):
    assert main(["analyze-abstraction", "--mdp", str(files / "m.json"),
                 "--abstraction", str(files / "a.json")]) == 0
    last = capsys.readouterr().out.strip().splitlines()[-1]
    rep = json.loads(last)
    assert {"eps_r", "eps_t", "eps_qstar", "eps_vstar"} <= set(rep)
    assert rep["eps_r"] >= 0


def test_verify_bounds(capsys):
    assert main(["verify-bounds", "--which", "lemma3", "--trials", "20"]) == 0
    assert "lemma3" in capsys.readouterr().out


def test_export_and_run(tmp_path, capsys):
    assert main(["export-mdp", "--env", "catcher", "--n-cells", "4", "--out-dir", str(tmp_path / "ex")]) == 0
    assert eio.load_mdp(tmp_path / "ex" / "mdp.json").n_states == 4 * 12 ** 2
    cfg = {"preset": "gathering-small", "runs": 1, "methods": ["default", "opt"],
           "train": {"iterations": 2, "episodes_per_update": 2, "hidden": 4},
           "output_dir": str(tmp_path / "run")}
    (tmp_path / "cfg.json").write_text(json.dumps(cfg))
    assert main(["run", "--config", str(tmp_path / "cfg.json")]) == 0
    capsys.readouterr()
    assert main(["aggregate", str(tmp_path / "run" / "curves.csv"), "--out", str(tmp_path / "agg.csv")]) == 0
    assert "opt" in capsys.readouterr().out


def test_errors_exit_2(tmp_path, capsys):
    assert main(["analyze-abstraction", "--mdp", str(tmp_path / "missing.json"),
                 "--abstraction", str(tmp_path / "x.json")]) == 2
    assert "error" in capsys.readouterr().err
