import json
import os

import pytest

from conftest import tiny_config_dict
from main import build_parser, main

SUBCOMMANDS = ["train-codec", "train-diffusion", "train-classifier", "attack", "invert", "generate",
               "defend", "evaluate", "sweep", "plot", "schema", "view"]


def _write_config(tmp_path, **changes):
    path = tmp_path / "tiny.json"
    path.write_text(json.dumps(tiny_config_dict(tmp_path / "run", **changes)))
    return str(path)


def test_help_lists_subcommands(capsys):
    with pytest.raises(SystemExit) as info:
        build_parser().parse_args(["--help"])
    assert info.value.code == 0
    out = capsys.readouterr().out
    for name in SUBCOMMANDS:
        assert name in out


def test_attack_help_lists_flags(capsys):
    with pytest.raises(SystemExit):
        build_parser().parse_args(["attack", "--help"])
    out = capsys.readouterr().out
    for flag in ("--config", "--seed", "--output", "--epsilon", "--alpha", "--n-steps", "--attack"):
        assert flag in out


def test_schema_prints_json(capsys):
    assert main(["schema"]) == 0
    schema = json.loads(capsys.readouterr().out)
    assert "attack" in schema and "defenses" in schema


def test_missing_config_exits_2(tmp_path):
    assert main(["evaluate", "--config", str(tmp_path / "none.json5")]) == 2


def test_unknown_key_exits_2(tmp_path):
    path = tmp_path / "bad.json5"
    path.write_text("{attack: {foo: 1}}")
    assert main(["evaluate", "--config", str(path)]) == 2


def test_attack_command_writes_artifacts(tmp_path):
    config = _write_config(tmp_path)
    assert main(["attack", "--config", config, "--label", "1", "--n-steps", "2"]) == 0
    out = tmp_path / "run" / "attack"
    assert (out / "advdm-class1-group0.npy").exists()
    with open(out / "advdm-class1-group0-budget.json") as f:
        assert json.load(f)["passed"]
    assert os.path.exists(tmp_path / "run" / "checkpoints" / "denoiser.ckpt")


def test_evaluate_command_runs_every_cell(tmp_path, capsys):
    config = _write_config(tmp_path, attacks=["none", "advdm"], defenses=[{"kind": "none"}])
    assert main(["evaluate", "--config", config, "--output", str(tmp_path / "elsewhere")]) == 0
    assert "2 cells ok, 0 failed" in capsys.readouterr().out
    assert (tmp_path / "elsewhere" / "metrics.csv").exists()


def test_failed_cells_exit_1(tmp_path):
    config = _write_config(tmp_path, attacks=["none"], defenses=[{"kind": "jpeg_like"}])
    assert main(["evaluate", "--config", config]) == 1


def test_evaluate_applies_defense_flags(tmp_path):
    config = _write_config(tmp_path, attacks=["none"], defenses=[{"kind": "diffpure", "t_star": 5}])
    assert main(["evaluate", "--config", config, "--t-star", "3"]) == 0
    with open(tmp_path / "run" / "config.json") as f:
        assert json.load(f)["defenses"][0]["t_star"] == 3


def test_evaluate_rejects_out_of_range_defense_flag(tmp_path):
    config = _write_config(tmp_path, attacks=["none"], defenses=[{"kind": "diffpure", "t_star": 5}])
    assert main(["evaluate", "--config", config, "--t-star", "500"]) == 2
