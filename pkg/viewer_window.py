import json
import json5
import os

from PyQt6.QtWidgets import (
    QMainWindow, QWidget, QTextEdit, QPushButton,
    QFileDialog, QVBoxLayout, QHBoxLayout, QMessageBox,
    QLabel, QTabWidget
)
from PyQt6.QtGui import QFont

from config import ExperimentConfig, from_dict, to_dict
from config_tab import ConfigTab
from errors import LabError
from harness import read_metrics_csv
from manifest_tab import ManifestTab
from reports_tab import ReportsTab


class ViewerWindow(QMainWindow):
    def __init__(self, run_dir=None):
        super().__init__()
        self.setWindowTitle("AdvDM Lab Run Viewer")
        self.resize(1150, 800)
        self.base_config = to_dict(ExperimentConfig())

        # Main elements
        self.tabs = QTabWidget()
        self.json_editor = QTextEdit()
        self.json_editor.setFont(QFont("Consolas", 11))
        self.json_editor.setPlaceholderText("Paste or type an experiment config (JSON5) here...")

        # Initialize tabs
        self.manifest_tab = ManifestTab()
        self.config_tab = ConfigTab()
        self.reports_tab = ReportsTab()

        self.tabs.addTab(self.manifest_tab, "Run Manifest")
        self.tabs.addTab(self.config_tab, "Configuration")
        self.tabs.addTab(self.reports_tab, "Metric Reports")
        self.tabs.addTab(self.create_json_tab(), "Config JSON")

        self.btn_generate_all = QPushButton("🧪 Generate Full Config")
        self.btn_generate_all.clicked.connect(self.generate_full_config)

        main_layout = QVBoxLayout()
        main_layout.addWidget(self.tabs)
        main_layout.addWidget(self.btn_generate_all)

        container = QWidget()
        container.setLayout(main_layout)
        self.setCentralWidget(container)

        if run_dir and os.path.isdir(run_dir):
            self.load_run(run_dir)

    # ---------------------------------------------------
    def load_run(self, run_dir):
        """Fill every tab from the files of a run directory."""
        manifest_path = os.path.join(run_dir, "manifest.json")
        if os.path.exists(manifest_path):
            with open(manifest_path, "r", encoding="utf-8") as f:
                self.manifest_tab.load_from_json(json.load(f), run_dir)

        config_path = os.path.join(run_dir, "config.json")
        if os.path.exists(config_path):
            with open(config_path, "r", encoding="utf-8") as f:
                self.base_config = json.load(f)
            self.config_tab.load_from_json(self.base_config)
            self.json_editor.setText(json.dumps(self.base_config, indent=2))

        metrics_path = os.path.join(run_dir, "metrics.csv")
        if os.path.exists(metrics_path):
            self.reports_tab.load_rows(read_metrics_csv(metrics_path))

    # ---------------------------------------------------
    def generate_full_config(self, quiet=False):
        """Merge the form into the loaded config and validate the result."""
        unknown = self.config_tab.attacks.unknown_values() + self.config_tab.defenses.unknown_values()
        if unknown:
            QMessageBox.warning(self, "Unknown Names", f"Not registered: {', '.join(unknown)}")
            return None
        data = self.config_tab.apply_to(self.base_config)
        try:
            cfg = from_dict(data)
        except (LabError, ValueError) as e:
            QMessageBox.warning(self, "Invalid Config", str(e))
            return None
        self.json_editor.setText(json.dumps(to_dict(cfg), indent=2))
        if not quiet:
            QMessageBox.information(self, "Config Generated", "Full experiment config has been built successfully!")
        return cfg

    # ---------------------------------------------------
    def create_json_tab(self):
        page = QWidget()
        layout = QVBoxLayout()

        btn_open = QPushButton("📂 Open Config")
        btn_open.clicked.connect(self.load_json)

        btn_save = QPushButton("💾 Save Config")
        btn_save.clicked.connect(self.save_json)

        btn_validate = QPushButton("✅ Validate Config")
        btn_validate.clicked.connect(self.validate_json)

        button_layout = QHBoxLayout()
        button_layout.addWidget(btn_open)
        button_layout.addWidget(btn_save)
        button_layout.addWidget(btn_validate)

        layout.addLayout(button_layout)
        layout.addWidget(QLabel("Config Content:"))
        layout.addWidget(self.json_editor)

        page.setLayout(layout)
        return page

    # ---------------------------------------------------
    def load_json(self):
        file_name, _ = QFileDialog.getOpenFileName(
            self, "Open JSON or JSON5 Config", "", "Config Files (*.json *.json5)"
        )
        if not file_name:
            return
        self.load_json_from_path(file_name)

    def load_json_from_path(self, file_name):
        """Load a config file without a dialog."""
        try:
            with open(file_name, "r", encoding="utf-8") as f:
                data = json5.load(f)
        except Exception as e:
            QMessageBox.critical(self, "Error", f"Could not read file:\n{e}")
            return
        self.base_config = data
        self.json_editor.setText(json.dumps(data, indent=2))
        self.config_tab.load_from_json(data)

    def save_json(self):
        cfg = self.validate_json(quiet=True)
        if cfg is None:
            return
        file_name, _ = QFileDialog.getSaveFileName(self, "Save Config", "", "Config Files (*.json5 *.json)")
        if not file_name:
            return
        with open(file_name, "w", encoding="utf-8") as f:
            json.dump(to_dict(cfg), f, indent=2)
        QMessageBox.information(self, "Saved", "Config file has been saved successfully!")

    def validate_json(self, quiet=False):
        try:
            cfg = from_dict(json5.loads(self.json_editor.toPlainText()))
        except (LabError, ValueError) as e:
            QMessageBox.warning(self, "Invalid", f"❌ {e}")
            return None
        if not quiet:
            QMessageBox.information(self, "Valid", "✅ Config is valid!")
        return cfg
