import csv
import json
import os

import pytest

os.environ.setdefault("QT_QPA_PLATFORM", "offscreen")
pytest.importorskip("PyQt6.QtWidgets")

from PyQt6.QtWidgets import QApplication, QMessageBox  # noqa: E402

from config import from_dict, to_dict  # noqa: E402
from conftest import tiny_config_dict  # noqa: E402
from config_tab import ConfigTab  # noqa: E402
from harness import METRIC_COLUMNS  # noqa: E402
from manifest_tab import ManifestTab  # noqa: E402
from reports_tab import ReportsTab  # noqa: E402
from viewer_window import ViewerWindow  # noqa: E402


@pytest.fixture(scope="module")
def app():
    return QApplication.instance() or QApplication([])


@pytest.fixture
def quiet_boxes(monkeypatch):
    shown = []
    for name in ("warning", "information", "critical"):
        monkeypatch.setattr(QMessageBox, name, lambda *a, _n=name, **k: shown.append((_n, a[1], a[2])))
    return shown


def _row(attack, defense, seed=0, fid=1.5):
    return {"scenario": "img2img", "attack": attack, "defense": defense, "seed": seed, "n_steps": 40,
            "epsilon": 8 / 255, "fid": fid, "precision": 0.5, "recall": 0.25, "n_real": 100, "n_gen": 50, "k": 3}


@pytest.fixture
def run_dir(tmp_path):
    cfg = to_dict(from_dict(tiny_config_dict(tmp_path)))
    (tmp_path / "config.json").write_text(json.dumps(cfg))
    manifest = {"config_hash": "ab" * 32, "manifest_hash": "cd" * 32,
                "checkpoint_hashes": {"diffusion": "ef" * 32},
                "failures": {"cell-x": "ModeError: boom"},
                "metric_rows": [_row("none", "none"), _row("advdm", "none")],
                "timings": {"prepare_models": 1.25, "cell-y": {"attack": 0.5, "defense": 0.0}}}
    (tmp_path / "manifest.json").write_text(json.dumps(manifest))
    with open(tmp_path / "metrics.csv", "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=METRIC_COLUMNS)
        writer.writeheader()
        writer.writerows(manifest["metric_rows"])
    return tmp_path


def test_config_tab_round_trip(app, tmp_path):
    tab = ConfigTab()
    data = tiny_config_dict(tmp_path)
    tab.load_from_json(data)
    out = tab.apply_to(data)
    assert out["attacks"] == data["attacks"]
    assert out["defenses"] == data["defenses"]
    assert out["attack"]["n_steps"] == 3
    assert out["attack"]["epsilon"] == pytest.approx(0.25)
    assert out["seeds"] == [0]
    assert from_dict(out).name == "tiny"


def test_config_tab_flags_unknown_names(app):
    tab = ConfigTab()
    tab.attacks.setText("advdm, fgsm")
    assert tab.attacks.get_values() == ["advdm", "fgsm"]
    assert tab.attacks.unknown_values() == ["fgsm"]


def test_reports_tab_filter(app):
    tab = ReportsTab()
    tab.load_rows([_row("none", "none"), _row("advdm", "none"), _row("advdm", "tvm")])
    assert tab.rows_list.count() == 3
    tab.filter.setText("advdm")
    assert tab.rows_list.count() == 2
    tab.filter.setText("tvm")
    assert [r["defense"] for r in tab.visible] == ["tvm"]
    assert "FID 1.500" in ReportsTab.describe(tab.visible[0])


def test_manifest_tab(app):
    tab = ManifestTab()
    tab.load_from_json({"config_hash": "x", "manifest_hash": "y", "metric_rows": [{}, {}],
                        "failures": {"c": "E: m"}, "timings": {"prepare_models": 2.0}}, "runs/a")
    assert tab.cell_count.text() == "2"
    assert tab.failures.item(0).text() == "❌ c: E: m"
    assert tab.timings.count() == 1


def test_window_loads_run(app, run_dir):
    window = ViewerWindow(str(run_dir))
    assert window.manifest_tab.manifest_hash.text() == "cd" * 32
    assert window.manifest_tab.failures.count() == 1
    assert window.manifest_tab.timings.count() == 2
    assert window.reports_tab.rows_list.count() == 2
    assert window.config_tab.name.text() == "tiny"
    assert json.loads(window.json_editor.toPlainText())["name"] == "tiny"


def test_generate_full_config(app, run_dir, quiet_boxes):
    window = ViewerWindow(str(run_dir))
    window.config_tab.n_steps.setValue(7)
    cfg = window.generate_full_config(quiet=True)
    assert cfg is not None
    assert cfg.attack.n_steps == 7
    assert json.loads(window.json_editor.toPlainText())["attack"]["n_steps"] == 7
    assert window.validate_json(quiet=True) == cfg
    assert quiet_boxes == []


def test_generate_rejects_unknown_attack(app, run_dir, quiet_boxes):
    window = ViewerWindow(str(run_dir))
    window.config_tab.attacks.setText("advdm, fgsm")
    assert window.generate_full_config(quiet=True) is None
    assert quiet_boxes[0][0] == "warning"
    assert "fgsm" in quiet_boxes[0][2]


def test_invalid_json_reported(app, quiet_boxes):
    window = ViewerWindow()
    window.json_editor.setText("{attack: {n_steps: 0}}")
    assert window.validate_json() is None
    assert quiet_boxes[0][0] == "warning"


def test_load_json5_file(app, tmp_path, quiet_boxes):
    path = tmp_path / "cfg.json5"
    path.write_text("{name: 'from-file', // comment\n seeds: [4, 5]}")
    window = ViewerWindow()
    window.load_json_from_path(str(path))
    assert window.config_tab.name.text() == "from-file"
    assert window.config_tab.seeds.text() == "4, 5"
