import json

import pytest

from src.cli import build_parser, main


@pytest.fixture
def experiment_file(tmp_path):
    path = tmp_path / "experiment.json"
    path.write_text(
        json.dumps(
            {
                "name": "tiny",
                "graphs": [{"family": "regular", "n": 4, "degree": 3}],
                "mode": "direct",
                "p_start": 1,
                "p_target": 2,
                "k": ["1"],
                "optimizers": ["nelder-mead"],
                "initializers": ["random"],
            }
        )
    )
    return path


def test_parser_requires_command():
    with pytest.raises(SystemExit):
        build_parser().parse_args([])


def test_config_and_preset_are_exclusive(experiment_file):
    with pytest.raises(SystemExit):
        build_parser().parse_args(
            ["run", "--config", str(experiment_file), "--preset", "desk"]
        )


def test_validate_config_ok(experiment_file, capsys):
    assert main(["validate-config", "--config", str(experiment_file)]) == 0
    assert "ok: tiny, 1 graph specs" in capsys.readouterr().out


def test_validate_config_rejects_bilinear_direct(tmp_path, capsys):
    path = tmp_path / "bad.json"
    path.write_text(
        json.dumps(
            {
                "graphs": [{"family": "regular", "n": 4, "degree": 3}],
                "mode": "direct",
                "p_start": 1,
                "initializers": ["bilinear"],
            }
        )
    )
    assert main(["validate-config", "--config", str(path)]) == 2
    assert "requires progressive mode" in capsys.readouterr().err


@pytest.mark.parametrize("preset", ["paper", "full"])
def test_validate_preset(preset, capsys):
    assert main(["validate-config", "--preset", preset]) == 0
    assert f"ok: {preset}" in capsys.readouterr().out


def test_dry_run_prints_cell_count(experiment_file, tmp_path, capsys):
    out = tmp_path / "results"
    code = main(["run", "--config", str(experiment_file), "--out", str(out), "--dry-run"])
    assert code == 0
    # two depths, each with one FO and one ITLW cell
    assert "4 cells to run (0 already done)" in capsys.readouterr().out
    assert not out.exists()


def test_run_rejects_zero_jobs(experiment_file, tmp_path, capsys):
    code = main(["run", "--config", str(experiment_file), "--out", str(tmp_path), "--jobs", "0"])
    assert code == 2
    assert "--jobs must be >= 1" in capsys.readouterr().err


def test_gen_graphs(experiment_file, tmp_path, capsys):
    out = tmp_path / "results"
    assert main(["gen-graphs", "--config", str(experiment_file), "--out", str(out)]) == 0
    assert "1 graphs written" in capsys.readouterr().out
    assert len(list((out / "graphs").glob("*.json"))) == 1
    assert (out / "cmax.json").exists()


def test_run_then_summarize_and_plotdata(experiment_file, tmp_path, capsys):
    out = tmp_path / "results"
    assert main(["run", "--config", str(experiment_file), "--out", str(out), "--jobs", "1"]) == 0
    assert "4 cells done, 0 failed, 0 skipped" in capsys.readouterr().out

    assert main(["summarize", "--out", str(out)]) == 0
    printed = capsys.readouterr().out
    assert "mean epsilon (alpha_FO - alpha_ITLW)" in printed
    assert "mean r (V_ITLW / V_FO)" in printed
    assert "nelder-mead" in printed

    assert main(["plotdata", "--out", str(out), "--figure", "eps_vs_p"]) == 0
    assert capsys.readouterr().out.strip() == str(out / "plotdata" / "eps_vs_p.csv")

    assert main(["run", "--config", str(experiment_file), "--out", str(out)]) == 0
    assert "0 cells done, 0 failed, 4 skipped" in capsys.readouterr().out


def test_summarize_empty_directory(tmp_path, capsys):
    assert main(["summarize", "--out", str(tmp_path)]) == 0
    assert "(no ITLW/FO pairs)" in capsys.readouterr().out


def test_missing_config_file(tmp_path, capsys):
    assert main(["validate-config", "--config", str(tmp_path / "nope.json")]) == 2
    assert "error: " in capsys.readouterr().err
