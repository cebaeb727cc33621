from PyQt6.QtWidgets import (
    QWidget, QVBoxLayout, QFormLayout, QLineEdit, QLabel, QListWidget
)


class ManifestTab(QWidget):
    """Tab showing the hashes, failures and timings of a run manifest."""
    def __init__(self):
        super().__init__()

        main_layout = QVBoxLayout()
        form_layout = QFormLayout()

        # --- Fields (read only) ---
        self.run_dir = QLineEdit()
        self.config_hash = QLineEdit()
        self.manifest_hash = QLineEdit()
        self.cell_count = QLineEdit("0")
        for edit in (self.run_dir, self.config_hash, self.manifest_hash, self.cell_count):
            edit.setReadOnly(True)

        form_layout.addRow("Run Directory:", self.run_dir)
        form_layout.addRow("Config Hash:", self.config_hash)
        form_layout.addRow("Manifest Hash:", self.manifest_hash)
        form_layout.addRow("Metric Rows:", self.cell_count)

        self.checkpoints = QListWidget()
        self.failures = QListWidget()
        self.timings = QListWidget()

        main_layout.addLayout(form_layout)
        main_layout.addWidget(QLabel("Checkpoints:"))
        main_layout.addWidget(self.checkpoints)
        main_layout.addWidget(QLabel("Failed Cells:"))
        main_layout.addWidget(self.failures)
        main_layout.addWidget(QLabel("Timings (seconds, not hashed):"))
        main_layout.addWidget(self.timings)

        self.setLayout(main_layout)

    def load_from_json(self, manifest, run_dir=""):
        self.run_dir.setText(run_dir)
        self.config_hash.setText(manifest.get("config_hash", ""))
        self.manifest_hash.setText(manifest.get("manifest_hash", ""))
        self.cell_count.setText(str(len(manifest.get("metric_rows", []))))

        self.checkpoints.clear()
        for which, digest in sorted(manifest.get("checkpoint_hashes", {}).items()):
            self.checkpoints.addItem(f"{which}: {digest}")

        self.failures.clear()
        for cell_id, message in sorted(manifest.get("failures", {}).items()):
            self.failures.addItem(f"❌ {cell_id}: {message}")

        self.timings.clear()
        for name, value in sorted(manifest.get("timings", {}).items()):
            if isinstance(value, dict):
                stages = ", ".join(f"{k} {v:.2f}" for k, v in value.items())
                self.timings.addItem(f"{name}: {stages}")
            else:
                self.timings.addItem(f"{name}: {value:.2f}")
