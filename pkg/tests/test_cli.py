import csv
import json

import numpy as np
import pytest

from schrodnet import cli, continuum, liouville
from schrodnet.cli import ExperimentConfig, main
from schrodnet.continuum import load_measurements
from schrodnet.netops import upper_entries
from schrodnet.recovery import RecoveryError

SMALL = ["--n", "5", "--grid-a", "40", "40", "--grid-b", "32", "30", "--trials", "0", "0.5", "1"]


def run(tmp_path, *args):
    return main([args[0], *SMALL, "--out", str(tmp_path), *args[1:]])


def test_synth_and_invert(tmp_path):
    assert run(tmp_path, "synth") == 0
    for name in ("M_true.json", "M_zero.json", "M_trials.json", "q_true.csv", "synth.json"):
        assert (tmp_path / name).is_file()
    assert run(tmp_path, "invert") == 0
    rows = list(csv.DictReader(open(tmp_path / "residuals.csv")))
    assert [int(r["k"]) for r in rows] == [0, 1, 2]
    for name in ("q0.csv", "q1.csv", "q2.csv", "reconstruction.png", "sensitivity_grid.csv"):
        assert (tmp_path / name).is_file()
    side = json.loads((tmp_path / "reconstruction.json").read_text())
    assert set(side["panels"]) == {"q_true", "q0", "q1"} and side["vmin"] <= side["vmax"]
    report = json.loads((tmp_path / "report.json").read_text())
    assert report["q_avg"] in (0.0, 0.5, 1.0)


def test_zero_phantom(tmp_path):
    assert run(tmp_path, "synth", "--phantom", "zero") == 0
    M = load_measurements(tmp_path / "M_true.json")
    assert np.abs(M.sum(axis=1)).max() < 1e-14 and np.all(upper_entries(M) < 0)
    M0 = load_measurements(tmp_path / "M_zero.json")
    rel = np.linalg.norm(M - M0) / np.linalg.norm(M0)
    assert 0 < rel < 1e-2
    assert run(tmp_path, "invert", "--phantom", "zero") == 0
    q1 = np.loadtxt(tmp_path / "q1.csv", delimiter=",", skiprows=1)[:, 2]
    assert np.abs(q1).max() < 0.1


def test_deterministic(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for d in (a, b):
        assert run(d, "synth", "--phantom", "pc") == 0
        assert run(d, "invert", "--phantom", "pc") == 0
    for f in a.iterdir():
        if f.name != "synth.json":  # records the output directory
            assert f.read_bytes() == (b / f.name).read_bytes(), f.name


def test_grid_command(tmp_path):
    code = main(["grid", "--n", "17", "--grid-b", "96", "102", "--out", str(tmp_path)])
    assert code == 0
    rep = json.loads((tmp_path / "grid_report.json").read_text())
    assert rep["points"] == {"1": 136, "3": 136}
    assert rep["mean_displacement"]["1-3"] < 0.05
    assert (tmp_path / "sensitivity_grid.png").is_file()
    assert len(np.loadtxt(tmp_path / "grid_q1.csv", delimiter=",", skiprows=1)) == 136


@pytest.mark.parametrize("args", [
    ["synth", "--n", "6"],
    ["synth", "--grid-a", "32", "30", "--grid-b", "32", "30"],
    ["synth", "--trials", "0"],
    ["synth", "--phantom", "no-such-file.json"],
    ["invert", "--n", "5", "--grid-a", "40", "40", "--grid-b", "32", "30"],  # no synth data
])
def test_validation_errors(tmp_path, args):
    assert main([*args, "--out", str(tmp_path / "x")]) == 1


def test_numerical_failure_exit_code(tmp_path, monkeypatch):
    assert run(tmp_path, "synth") == 0

    def boom(*a, **k):
        raise RecoveryError("no positive network")

    monkeypatch.setattr(cli, "invert", boom)
    assert run(tmp_path, "invert") == 2
    err = json.loads((tmp_path / "error.json").read_text())
    assert err["type"] == "RecoveryError"


def test_config_file_overrides_flags(tmp_path):
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps({"n": 7, "seed": 4, "trials": [0, 2]}))
    args = cli.build_parser().parse_args(["synth", "--n", "5", "--config", str(cfg_path)])
    cfg = cli.config_from_args(args)
    assert (cfg.n, cfg.seed, cfg.trials) == (7, 4, [0.0, 2.0])
    cfg_path.write_text(json.dumps({"bogus": 1}))
    assert main(["synth", "--config", str(cfg_path)]) == 1


def test_config_roundtrip(tmp_path):
    cfg = ExperimentConfig(n=11, grid_a=(64, 66), noise=1e-3)
    path = tmp_path / "c.json"
    path.write_text(json.dumps(cli.asdict(cfg)))
    assert ExperimentConfig.from_json(path) == cfg


def test_selftest_passes(capsys):
    assert main(["selftest"]) == 0
    out = capsys.readouterr().out
    assert "FAIL" not in out and out.count("PASS") >= 10


def test_selftest_catches_flipped_weights(monkeypatch, capsys):
    real = liouville.line_weights
    monkeypatch.setattr(liouville, "line_weights", lambda L, g: -real(L, g))
    assert main(["selftest"]) == 2
    assert "FAIL  congruence" in capsys.readouterr().out


def test_selftest_catches_wrong_diagonal(monkeypatch, capsys):
    real = continuum._assemble_measurements

    def wrong(P, check_sign):
        M = real(P, check_sign)
        return M + np.eye(len(M))

    monkeypatch.setattr(continuum, "_assemble_measurements", wrong)
    assert main(["selftest"]) == 2
    assert "FAIL  measurement row sums" in capsys.readouterr().out
