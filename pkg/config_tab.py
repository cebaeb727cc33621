from PyQt6.QtWidgets import (
    QWidget, QVBoxLayout, QFormLayout, QLineEdit, QComboBox,
    QLabel, QSpinBox, QDoubleSpinBox, QCompleter
)
from PyQt6.QtCore import QStringListModel, Qt

from attacks import AttackFactory
from config import ExperimentConfig
from defenses import DefenseFactory

SCENARIOS = ["text2img_inversion", "style_transfer", "img2img"]


class RegistryLineEdit(QLineEdit):
    """QLineEdit for comma separated registry names, completing the last one."""
    def __init__(self, names, *args, **kwargs):
        super().__init__(*args, **kwargs)
        self.names = list(names)
        self.model = QStringListModel()
        self.completer = QCompleter(self.model, self)
        self.completer.setCaseSensitivity(Qt.CaseSensitivity.CaseInsensitive)
        self.setCompleter(self.completer)
        self.refresh_suggestions()

    def refresh_suggestions(self):
        self.model.setStringList(self.names)

    def get_values(self):
        return [v.strip() for v in self.text().split(",") if v.strip()]

    def unknown_values(self):
        return [v for v in self.get_values() if v not in self.names]


class ConfigTab(QWidget):
    """Tab for the attack, defense and scenario part of an experiment config."""
    def __init__(self):
        super().__init__()
        defaults = ExperimentConfig()

        self.layout = QVBoxLayout()
        form = QFormLayout()

        self.name = QLineEdit(defaults.name)

        self.scenario = QComboBox()
        self.scenario.addItems(SCENARIOS)
        self.scenario.setCurrentText(defaults.scenario)

        self.attacks = RegistryLineEdit(AttackFactory.names(), ", ".join(defaults.attacks))
        self.defenses = RegistryLineEdit(DefenseFactory.names(), ", ".join(d.kind for d in defaults.defenses))

        # budget in 8-bit levels (k / 255)
        self.epsilon = QDoubleSpinBox()
        self.epsilon.setRange(0.0, 255.0)
        self.epsilon.setDecimals(2)
        self.epsilon.setValue(defaults.attack.epsilon * 255)

        self.alpha = QDoubleSpinBox()
        self.alpha.setRange(0.01, 255.0)
        self.alpha.setDecimals(2)
        self.alpha.setValue(defaults.attack.alpha * 255)

        self.n_steps = QSpinBox()
        self.n_steps.setRange(1, 10000)
        self.n_steps.setValue(defaults.attack.n_steps)

        self.strength = QDoubleSpinBox()
        self.strength.setRange(0.01, 1.0)
        self.strength.setSingleStep(0.05)
        self.strength.setValue(defaults.strength)

        self.seeds = QLineEdit(", ".join(str(s) for s in defaults.seeds))
        self.output_dir = QLineEdit(defaults.output_dir)

        form.addRow("Run Name:", self.name)
        form.addRow("Scenario:", self.scenario)
        form.addRow("Attacks:", self.attacks)
        form.addRow("Defenses:", self.defenses)
        form.addRow("Epsilon (/255):", self.epsilon)
        form.addRow("Alpha (/255):", self.alpha)
        form.addRow("Iterations N:", self.n_steps)
        form.addRow("Strength:", self.strength)
        form.addRow("Seeds:", self.seeds)
        form.addRow("Output Directory:", self.output_dir)

        self.layout.addLayout(form)
        self.layout.addWidget(QLabel("Other sections keep the values of the loaded config."))
        self.setLayout(self.layout)

    # --------------------------------------------------------
    def apply_to(self, data):
        """Return a copy of config dict `data` with the form's fields written in."""
        out = dict(data)
        out["name"] = self.name.text()
        out["scenario"] = self.scenario.currentText()
        out["attacks"] = self.attacks.get_values()
        kept = {d.get("kind"): d for d in data.get("defenses", [])}
        out["defenses"] = [kept.get(kind, {"kind": kind}) for kind in self.defenses.get_values()]
        attack = dict(data.get("attack", {}))
        attack["epsilon"] = self.epsilon.value() / 255
        attack["alpha"] = self.alpha.value() / 255
        attack["n_steps"] = self.n_steps.value()
        out["attack"] = attack
        out["strength"] = self.strength.value()
        out["seeds"] = [int(s) for s in self.seeds.text().replace(" ", "").split(",") if s]
        out["output_dir"] = self.output_dir.text()
        return out

    # --------------------------------------------------------
    def load_from_json(self, data):
        """Restore UI from config data."""
        self.name.setText(data.get("name", ""))
        if data.get("scenario") in SCENARIOS:
            self.scenario.setCurrentText(data["scenario"])
        self.attacks.setText(", ".join(data.get("attacks", [])))
        self.defenses.setText(", ".join(d.get("kind", "none") for d in data.get("defenses", [])))
        attack = data.get("attack", {})
        if "epsilon" in attack:
            self.epsilon.setValue(attack["epsilon"] * 255)
        if "alpha" in attack:
            self.alpha.setValue(attack["alpha"] * 255)
        if "n_steps" in attack:
            self.n_steps.setValue(attack["n_steps"])
        if "strength" in data:
            self.strength.setValue(data["strength"])
        self.seeds.setText(", ".join(str(s) for s in data.get("seeds", [])))
        self.output_dir.setText(data.get("output_dir", ""))
