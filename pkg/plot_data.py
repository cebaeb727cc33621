"""
Plot data for the ablation figures: one CSV per figure plus a JSON sidecar
describing the columns, and optional PNG rendering with matplotlib.
"""

import csv
import json
import logging
import os
from collections import defaultdict

import numpy as np

from errors import PreconditionError

logger = logging.getLogger(__name__)

FIGURES = {
    "fid_vs_n_steps": ("n_steps", "fid", "FID of generated samples against attack iterations N"),
    "precision_vs_n_steps": ("n_steps", "precision", "k-NN precision against attack iterations N"),
    "fid_vs_epsilon": ("epsilon", "fid", "FID of generated samples against the L-infinity budget"),
}

COLUMN_DOCS = {
    "scenario": "evaluation scenario of the cell",
    "attack": "attack name",
    "defense": "defense applied before generation",
    "seed": "run seed of the cell",
    "n_steps": "attack iterations N",
    "epsilon": "L-infinity budget",
    "fid": "Frechet distance between generated and clean features",
    "precision": "fraction of generated points inside the clean k-NN manifold",
}

SCHEMA_FILE = "schema.json"


def _columns(x, y):
    return ["scenario", "attack", "defense", x, "seed", y]


def emit_plot_data(reports, out_dir, attacks=None, defenses=None):
    """
    Write the figure CSVs for `reports` (CellReport list), keeping only the
    given attacks/defenses when those filters are set. Rows are sorted by
    the x column. Returns {figure name: path}.
    """
    if not reports:
        raise PreconditionError("no reports to plot")
    os.makedirs(out_dir, exist_ok=True)
    rows = [r.to_row() for r in reports]
    if attacks is not None:
        rows = [r for r in rows if r["attack"] in attacks]
    if defenses is not None:
        rows = [r for r in rows if r["defense"] in defenses]

    paths = {}
    schema = {}
    for name, (x, y, title) in FIGURES.items():
        columns = _columns(x, y)
        ordered = sorted(rows, key=lambda r: (r[x], r["scenario"], r["attack"], r["defense"], r["seed"]))
        path = os.path.join(out_dir, f"{name}.csv")
        with open(path, "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(columns)
            for row in ordered:
                writer.writerow([repr(row[c]) if isinstance(row[c], float) else row[c] for c in columns])
        paths[name] = path
        schema[f"{name}.csv"] = {"title": title, "x": x, "y": y,
                                 "columns": {c: COLUMN_DOCS[c] for c in columns}}
    with open(os.path.join(out_dir, SCHEMA_FILE), "w", encoding="utf-8") as f:
        json.dump(schema, f, indent=2, sort_keys=True)
    logger.info("wrote %d plot data files to %s", len(paths), out_dir)
    return paths


def read_plot_csv(path):
    with open(path, "r", encoding="utf-8", newline="") as f:
        rows = list(csv.DictReader(f))
    ints = {"seed", "n_steps"}
    return [{k: (int(v) if k in ints else float(v) if k in {"epsilon", "fid", "precision"} else v)
             for k, v in row.items()} for row in rows]


def median_curves(rows, x, y):
    """{(attack, defense): (xs, median ys over seeds)}."""
    grouped = defaultdict(lambda: defaultdict(list))
    for row in rows:
        grouped[(row["attack"], row["defense"])][row[x]].append(row[y])
    return {key: (sorted(pts), [float(np.median(pts[v])) for v in sorted(pts)]) for key, pts in grouped.items()}


def render_plots(plot_dir, out_dir=None):
    """Render every figure CSV found in `plot_dir` to PNG (Agg backend)."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out_dir = out_dir or plot_dir
    os.makedirs(out_dir, exist_ok=True)
    written = []
    for name, (x, y, title) in FIGURES.items():
        path = os.path.join(plot_dir, f"{name}.csv")
        if not os.path.exists(path):
            continue
        rows = read_plot_csv(path)
        fig, ax = plt.subplots(figsize=(5, 3.5))
        for (attack, defense), (xs, ys) in sorted(median_curves(rows, x, y).items()):
            ax.plot(xs, ys, marker="o", label=f"{attack} / {defense}")
        ax.set_xlabel(x)
        ax.set_ylabel(y)
        ax.set_title(title, fontsize=9)
        if rows:
            ax.legend(fontsize=7)
        fig.tight_layout()
        target = os.path.join(out_dir, f"{name}.png")
        fig.savefig(target, dpi=120)
        plt.close(fig)
        written.append(target)
    return written
