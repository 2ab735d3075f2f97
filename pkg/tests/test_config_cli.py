import json
import os

import pytest
from hypothesis import given
from hypothesis import strategies as st

from twophase.cli import EXIT_CONFIG, EXIT_GATE, EXIT_OK, main, seed_check
from twophase.config import ConfigError, format_config, parse_config
from twophase.driver import RunConfig
from twophase.grid import Grid
from twophase.plots import emit_plots, line_plot

SMALL = ["grid.M_tan=16", "grid.M_nrm=16", "grid.T_final=0.003"]


def test_empty_file_gives_defaults():
    cfg, prov = parse_config("")
    assert cfg.grid == Grid()
    assert set(prov.values()) == {"default"}


@given(sigma=st.floats(0, 5), eps=st.floats(0, 0.1), M=st.sampled_from([8, 16, 32]))
def test_format_parse_round_trip(sigma, eps, M):
    cfg, _ = parse_config(f"[material]\nsigma = {sigma!r}\n[run]\nepsilon = {eps!r}\n"
                          f"[grid]\nM_tan = {M}\n[initial]\nh0 = eps*cos(x1)\n")
    again, _ = parse_config(format_config(cfg))
    assert format_config(again) == format_config(cfg)
    assert again.material.sigma == sigma and again.epsilon == eps and again.grid.M_tan == M


def test_unknown_key_reports_position():
    with pytest.raises(ConfigError, match="line 3, column"):
        parse_config("[grid]\nM_tan = 16\nbogus = 1\n")
    with pytest.raises(ConfigError, match="line 2: unknown section"):
        parse_config("\n[nowhere]\nx = 1\n")
    with pytest.raises(ConfigError, match="unknown closure"):
        parse_config("[closures]\nnope = const 1\n")


def test_bad_values_rejected():
    for text in ("[material]\nsigma = -1\n", "[grid]\nM_tan = many\n",
                 "[material]\nrho_star_plus = 0\n"):
        with pytest.raises(ConfigError):
            parse_config(text)


def test_override_provenance():
    cfg, prov = parse_config("[grid]\nM_tan = 16\n", ["sigma=0.2", "run.epsilon=0.002"])
    assert prov["grid.M_tan"] == "user"
    assert prov["material.sigma"] == "override" and cfg.material.sigma == 0.2
    assert prov["run.epsilon"] == "override" and cfg.epsilon == 0.002
    assert prov["grid.M_nrm"] == "default"
    with pytest.raises(ConfigError, match="unknown"):
        parse_config("", ["nonexistent=1"])
    with pytest.raises(ConfigError, match="key=value"):
        parse_config("", ["sigma"])


def test_seed_check_passes():
    for name, value, tol in seed_check(RunConfig()):
        assert value <= tol, name


def test_cli_exit_codes(tmp_path, capsys):
    assert main(["check-model"]) == EXIT_OK
    assert main(["--set", "sigma=-1", "check-model"]) == EXIT_CONFIG
    bad = tmp_path / "bad.ini"
    bad.write_text("[grid]\nwhat = 1\n")
    assert main(["--config", str(bad), "simulate"]) == EXIT_CONFIG
    assert "line 2" in capsys.readouterr().err
    out = tmp_path / "gate"
    args = ["simulate", "--out", str(out), "--set", "epsilon=0.5"]
    assert main(args + sum((["--set", s] for s in SMALL), [])) == EXIT_GATE
    term = json.loads((out / "termination.json").read_text())
    assert term["reason"] == "gate:transform"


def test_cli_seed_check_and_print(capsys):
    assert main(["--seed-check", "--print-config"]) == EXIT_OK
    text = capsys.readouterr().out
    assert "[grid]" in text and "FAIL" not in text and text.count("PASS") >= 8


def test_cli_pipeline(tmp_path, capsys):
    run = tmp_path / "run"
    sets = sum((["--set", s] for s in SMALL + ["epsilon=0.001", "output_every=1"]), [])
    assert main(["simulate", "--out", str(run)] + sets) == EXIT_OK
    saved, _ = parse_config((run / "config.ini").read_text())
    assert saved.grid.M_tan == 16 and saved.epsilon == 0.001
    assert main(["diagnose", "--run", str(run)]) == EXIT_OK
    summary = json.loads((run / "diagnostics_summary.json").read_text())
    assert summary["min_viscous_production"] >= -1e-12
    assert main(["plot", "--run", str(run)]) == EXIT_OK
    assert "h_evolution.svg" in os.listdir(run / "plots")
    lin = tmp_path / "lin"
    assert main(["solve-linear", "--out", str(lin)] + sets) == EXIT_OK
    assert json.loads((lin / "linear.json").read_text())["stokes_residual"] < 1e-10
    sw = tmp_path / "sw"
    assert main(["resolvent-sweep", "--out", str(sw), "--n-mag", "2", "--modes", "0,1"]
                + sets) == EXIT_OK
    assert (sw / "sweep.csv").exists()


def test_plots_report_missing_inputs(tmp_path):
    files, messages = emit_plots(str(tmp_path))
    assert files == []
    assert any("snapshots" in m for m in messages)
    assert main(["plot", "--run", str(tmp_path)]) != EXIT_OK


def test_line_plot_is_svg():
    svg = line_plot([([0, 1, 2], [1, 10, 100], "a")], "t", "x", "y", logy=True)
    assert svg.startswith("<svg") and svg.rstrip().endswith("</svg>")
    assert "<polyline" in svg or "<path" in svg
