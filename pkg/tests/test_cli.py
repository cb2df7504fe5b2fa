import csv
import subprocess
import sys

import pytest
import yaml

from hybrid_infill import pipeline as pl
from hybrid_infill.cli import main
from hybrid_infill.dehomog.export import read_dxf
from hybrid_infill.evo import PopulationExtinct, load_population, read_ledger
from hybrid_infill.hifi.evaluate import HiFiResult
from hybrid_infill.lowfi.optimize import LowFiError


@pytest.fixture
def tiny_config(tmp_path):
    d = dict(case="smoke", out=str(tmp_path / "run"), max_generations=1,
             case_params=dict(m=2), lowfi=dict(max_iters=4), vae=dict(epochs=2, latent_dim=4, c1=4, c2=4))
    path = tmp_path / "tiny.yaml"
    path.write_text(yaml.safe_dump(d))
    return path


def test_help_via_module():
    r = subprocess.run([sys.executable, "-m", "hybrid_infill.cli", "--help"], capture_output=True, text=True)
    assert r.returncode == 0
    for cmd in ("lowfi", "batch", "evolve", "dehomog", "evaluate", "report"):
        assert cmd in r.stdout


@pytest.mark.parametrize("argv", [
    ["evolve"],
    ["evolve", "--case", "nope"],
    ["report"],
    ["lowfi", "--config", "/nonexistent.yaml"],
])
def test_config_errors_exit_2(argv, capsys):
    assert main(argv) == 2
    assert "error" in capsys.readouterr().err


def test_bad_yaml_exit_2(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text("case: smoke\nwave: {d: [unclosed\n")
    assert main(["batch", "--config", str(p)]) == 2
    p.write_text("case: smoke\nwave: {colour: 1}\n")
    assert main(["batch", "--config", str(p)]) == 2


def test_report_without_ledger_exit_2(tmp_path):
    assert main(["report", str(tmp_path)]) == 2


def test_config_command_prints_defaults(capsys):
    assert main(["config", "--case", "l-bracket", "--seed", "3"]) == 0
    d = yaml.safe_load(capsys.readouterr().out)
    assert d["case"] == "l-bracket" and d["seed"] == 3 and d["case_params"]["m"] == 100


def test_lowfi_batch_dehomog_evaluate(tiny_config, tmp_path, capsys):
    out = tmp_path / "run"
    assert main(["lowfi", "--config", str(tiny_config), "--vb", "0.5"]) == 0
    assert (out / "history.csv").exists() and (out / "lowfi-vb0.5_rho.csv").exists()

    assert main(["batch", "--config", str(tiny_config)]) == 0
    pop = load_population(out / "initial.npz")
    assert pop.ids == ["g000-i000", "g000-i001"]

    geo = tmp_path / "geo"
    assert main(["dehomog", str(out / "initial.npz"), "--config", str(tiny_config), "--id", "g000-i001",
                 "--out", str(geo)]) == 0
    assert (geo / "g000-i001.svg").exists()
    contours = read_dxf(geo / "g000-i001.dxf")
    assert len(contours) >= 1

    capsys.readouterr()
    code = main(["evaluate", str(geo / "g000-i001.dxf"), "--config", str(tiny_config), "--sizing", "coarse",
                 "--out", str(geo)])
    rows = list(csv.DictReader(capsys.readouterr().out.splitlines()))
    assert rows[0]["candidate_id"] == "g000-i001"
    assert code == (3 if rows[0]["anomaly"] == "True" else 0)
    assert (geo / "results.csv").exists()


def test_dehomog_unknown_id_exit_2(tiny_config, tmp_path):
    assert main(["batch", "--config", str(tiny_config)]) == 0
    assert main(["dehomog", str(tmp_path / "run" / "initial.npz"), "--config", str(tiny_config),
                 "--id", "nope"]) == 2


def _proxy_design(c, case, **kw):
    v = float(c.rho.mean())
    return HiFiResult(v, 1.0 / (v + 0.05) + float(c.theta.mean()), 1.0, 1, 1)


def test_evolve_and_report(tiny_config, tmp_path, monkeypatch, capsys):
    monkeypatch.setattr(pl, "evaluate_design", _proxy_design)
    assert main(["evolve", "--config", str(tiny_config), "--seed", "4"]) == 0
    out = tmp_path / "run"
    rows = read_ledger(out / "ledger.csv")
    assert [r["generation"] for r in rows] == [0, 1]
    assert (out / "reports" / "hv_history.svg").exists()
    # a second evolve on the same directory needs --resume
    assert main(["evolve", "--config", str(tiny_config)]) == 2
    assert main(["evolve", "--config", str(tiny_config), "--resume", "--max-generations", "2"]) == 0
    assert [r["generation"] for r in read_ledger(out / "ledger.csv")] == [0, 1, 2]
    assert main(["report", str(out)]) == 0


def test_numerical_failure_exit_3(tiny_config, monkeypatch, capsys):
    def boom(*a, **k):
        raise LowFiError(7, RuntimeError("singular"))
    monkeypatch.setattr(pl, "lowfi_run", boom)
    assert main(["lowfi", "--config", str(tiny_config)]) == 3
    assert "numerical failure" in capsys.readouterr().err


def test_extinction_exit_4(tiny_config, monkeypatch, capsys):
    def extinct(cfg, *a, **k):
        raise PopulationExtinct("population extinct: all 2 members filtered at generation 0")
    monkeypatch.setattr(pl, "run_evolutionary_loop", extinct)
    assert main(["evolve", "--config", str(tiny_config)]) == 4
    assert "extinct" in capsys.readouterr().err
