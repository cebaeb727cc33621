from PyQt6.QtWidgets import (
    QWidget, QVBoxLayout, QFormLayout, QLineEdit, QLabel,
    QListWidget, QDialog, QDialogButtonBox
)

from harness import METRIC_COLUMNS


class ReportDialog(QDialog):
    """Read-only view of one metric row."""

    def __init__(self, row, parent=None):
        super().__init__(parent)
        self.setWindowTitle(f"{row.get('attack', '')} / {row.get('defense', '')} (seed {row.get('seed', '')})")
        self.resize(420, 320)

        form = QFormLayout()
        for column in METRIC_COLUMNS:
            edit = QLineEdit(str(row.get(column, "")))
            edit.setReadOnly(True)
            form.addRow(f"{column}:", edit)

        buttons = QDialogButtonBox(QDialogButtonBox.StandardButton.Ok)
        buttons.accepted.connect(self.accept)
        form.addWidget(buttons)
        self.setLayout(form)


class ReportsTab(QWidget):
    """Tab listing the metric rows of a run, with a text filter."""
    def __init__(self):
        super().__init__()
        self.rows = []
        self.visible = []

        main_layout = QVBoxLayout()
        form_layout = QFormLayout()

        self.filter = QLineEdit()
        self.filter.setPlaceholderText("Filter by attack, defense or scenario (e.g. advdm)")
        self.filter.textChanged.connect(self.refresh)
        form_layout.addRow("Filter:", self.filter)

        self.rows_list = QListWidget()
        self.rows_list.itemDoubleClicked.connect(self.show_details)

        main_layout.addLayout(form_layout)
        main_layout.addWidget(QLabel("Metric Rows (double-click for details):"))
        main_layout.addWidget(self.rows_list)
        self.setLayout(main_layout)

    @staticmethod
    def describe(row):
        return (f"{row['scenario']} | {row['attack']} | {row['defense']} | seed {row['seed']} | "
                f"N={row['n_steps']} eps={row['epsilon'] * 255:.1f}/255 | "
                f"FID {row['fid']:.3f}  prec {row['precision']:.3f}  rec {row['recall']:.3f}")

    def matches(self, row):
        needle = self.filter.text().strip().lower()
        if not needle:
            return True
        return any(needle in str(row[k]).lower() for k in ("scenario", "attack", "defense"))

    def load_rows(self, rows):
        self.rows = list(rows)
        self.refresh()

    def refresh(self):
        self.rows_list.clear()
        self.visible = [r for r in self.rows if self.matches(r)]
        for row in self.visible:
            self.rows_list.addItem(self.describe(row))

    def show_details(self, item):
        row = self.visible[self.rows_list.row(item)]
        ReportDialog(row, parent=self).exec()
