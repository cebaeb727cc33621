"""
Experiment orchestration: model preparation, the evaluation cells of every
scenario, the run directory and its manifest.

A cell is one (scenario, attack, defense, seed, n_steps, epsilon)
combination. For each image group it attacks the group, applies the
defense, extracts a condition (inversion) or latent, generates, and finally
compares the generated batch with the clean data of the classes used.
"""

import csv
import hashlib
import io
import json
import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from tqdm import tqdm

import tensor_core as tc
from attacks import AttackContext, AttackFactory, verify_budget, write_trace_csv
from checkpoint import load_checkpoint, save_checkpoint
from classifier import train_classifier
from condition_inversion import generate_from_inversion, invert, style_transfer
from config import DefenseConfig, config_hash, to_dict
from data_loader import DatasetCache
from defenses import DefenseContext, DefenseFactory
from diffusion_engine import Denoiser, DiffusionSchedule, img2img, train_denoiser
from errors import PreconditionError
from latent_codec import ModelSpace, train_codec
from metrics import embed, evaluate

logger = logging.getLogger(__name__)

METRIC_COLUMNS = ["scenario", "attack", "defense", "seed", "n_steps", "epsilon",
                  "fid", "precision", "recall", "n_real", "n_gen", "k"]


# ---------------------------------------------------------------------------
# Models
# ---------------------------------------------------------------------------

@dataclass
class LabModels:
    sched: DiffusionSchedule
    denoiser: Denoiser
    space: ModelSpace
    codec: object = None
    classifier: object = None
    checkpoint_hashes: dict = field(default_factory=dict)


def _load_or_train(cfg, which, train):
    path = cfg.checkpoint_path(which)
    if os.path.exists(path):
        loaded = load_checkpoint(path)
        logger.info("loaded %s from %s", which, path)
        return loaded.model, loaded.schedule, None
    if not cfg.train_if_missing:
        raise PreconditionError(f"missing {which} checkpoint {path} and training is disabled")
    result = train()
    return result.model, None, path


def train_stream(cfg, stage):
    return tc.RngStream(cfg.dataset.seed).child("train", stage)


def prepare_codec(cfg, dataset, progress=False):
    def train():
        return train_codec(dataset.flat, cfg.codec, train_stream(cfg, "codec"), pixel=True, progress=progress)

    codec, _, path = _load_or_train(cfg, "codec", train)
    digest = save_checkpoint(path, codec) if path else None
    return codec, digest


def prepare_classifier(cfg, dataset, progress=False):
    def train():
        return train_classifier(dataset.flat, dataset.labels, dataset.class_count, cfg.classifier,
                                train_stream(cfg, "classifier"), progress=progress)

    model, _, path = _load_or_train(cfg, "classifier", train)
    digest = save_checkpoint(path, model) if path else None
    return model, digest


def prepare_denoiser(cfg, dataset, space, progress=False):
    sched = DiffusionSchedule.from_config(cfg.diffusion)

    def train():
        rng = train_stream(cfg, "denoiser")
        model = Denoiser.from_config(rng, cfg.diffusion, space.data_dim, dataset.class_count)
        data = space.to_model(dataset.data).data
        return train_denoiser(model, data, dataset.labels, sched, cfg.diffusion, rng, progress=progress)

    model, loaded_sched, path = _load_or_train(cfg, "diffusion", train)
    sched = loaded_sched or sched
    digest = save_checkpoint(path, model, sched) if path else None
    return model, sched, digest


def prepare_models(cfg, dataset, progress=False, need_classifier=None):
    """Load every model the config needs, training and saving missing ones."""
    hashes = {}
    codec = None
    if cfg.dataset.is_pixel:
        codec, digest = prepare_codec(cfg, dataset, progress)
        hashes["codec"] = digest
    space = ModelSpace.for_config(cfg, dataset.item_shape, codec)
    denoiser, sched, digest = prepare_denoiser(cfg, dataset, space, progress)
    hashes["diffusion"] = digest
    classifier = None
    if need_classifier is None:
        need_classifier = "pgd_classifier" in cfg.attacks
    if need_classifier:
        classifier, digest = prepare_classifier(cfg, dataset, progress)
        hashes["classifier"] = digest
    for which in hashes:
        path = cfg.checkpoint_path(which)
        if hashes[which] is None and os.path.exists(path):
            with open(path, "rb") as f:
                hashes[which] = hashlib.sha256(f.read()).hexdigest()
    return LabModels(sched, denoiser, space, codec, classifier, hashes)


# ---------------------------------------------------------------------------
# Cells
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CellKey:
    scenario: str
    attack: str
    defense: str
    seed: int
    n_steps: int
    epsilon: float

    @property
    def cell_id(self):
        return f"{self.scenario}-{self.attack}-{self.defense}-s{self.seed}-n{self.n_steps}-e{self.epsilon:.6f}"


@dataclass(frozen=True)
class CellSpec:
    attack: str
    defense: DefenseConfig
    seed: int
    attack_cfg: object

    def key(self, scenario):
        return CellKey(scenario, self.attack, self.defense.label, self.seed,
                       self.attack_cfg.n_steps, float(self.attack_cfg.epsilon))


@dataclass
class CellReport:
    key: CellKey
    report: object

    def to_row(self):
        return {**asdict(self.key), **self.report.to_dict()}


@dataclass
class CellResult:
    key: CellKey
    report: object
    adversarial: np.ndarray
    defended: np.ndarray
    generated: np.ndarray
    trace: list
    budget: list
    timings: dict


def select_group(dataset, label, size, rng):
    idx = np.flatnonzero(dataset.labels == label)
    if idx.size < size:
        raise PreconditionError(f"class {label} has {idx.size} examples, group needs {size}")
    return idx[np.sort(rng.permutation(idx.size)[:size])]


def _generate(cfg, models, dataset, label, z_group, root, g):
    model, sched, space = models.denoiser, models.sched, models.space
    count = cfg.samples_per_group
    if cfg.scenario == "img2img":
        z_rep = tc.Tensor(z_group.data[np.arange(count) % z_group.shape[0]])
        return img2img(model, sched, None, z_rep, cfg.strength, root.child("generate", g))
    s_star = invert(model, sched, z_group, cfg.inversion, root.child("invert", g))
    if cfg.scenario == "text2img_inversion":
        return generate_from_inversion(model, sched, s_star, count, root.child("generate", g))
    source_label = (label + 1) % dataset.class_count
    idx = np.flatnonzero(dataset.labels == source_label)
    picks = idx[root.child("source", g).integers(0, idx.size, size=count)]
    z_src = space.to_model(dataset.data[picks])
    return style_transfer(model, sched, s_star, z_src, cfg.strength, root.child("generate", g))


def run_cell(cfg, models, dataset, spec):
    key = spec.key(cfg.scenario)
    root = tc.RngStream(spec.seed)
    attack = AttackFactory.create(spec.attack)
    defend = DefenseFactory.create(spec.defense.kind)
    ctx = AttackContext(models.denoiser, models.sched, models.space, models.codec, models.classifier)
    timings = {"attack": 0.0, "defense": 0.0, "generate": 0.0, "metrics": 0.0}
    adversarial, defended, generated, trace, budget, classes = [], [], [], [], [], set()
    logger.info("cell %s started", key.cell_id)

    for g in range(cfg.groups):
        label = g % dataset.class_count
        classes.add(label)
        idx = select_group(dataset, label, cfg.inversion.group_size, root.child("select", g))
        x0 = tc.Tensor(dataset.data[idx])

        start = time.perf_counter()
        group_trace = []
        x_adv = attack(ctx, x0, dataset.labels[idx], spec.attack_cfg, root.child("attack", g), group_trace)
        timings["attack"] += time.perf_counter() - start
        report = verify_budget(x0, x_adv, spec.attack_cfg.epsilon, models.space.valid_range)
        budget.append(dict(report.to_dict(), group=g))
        trace.extend(group_trace)

        start = time.perf_counter()
        context = DefenseContext(models.denoiser, models.sched, models.space, root.child("defense", g))
        x_def = defend(x_adv, spec.defense, context)
        timings["defense"] += time.perf_counter() - start

        start = time.perf_counter()
        z_group = models.space.to_model(x_def)
        gen = models.space.to_data(_generate(cfg, models, dataset, label, z_group, root, g))
        timings["generate"] += time.perf_counter() - start

        adversarial.append(x_adv.data)
        defended.append(x_def.data)
        generated.append(gen.data)

    timings["attack_per_example"] = timings["attack"] / max(1, cfg.groups * cfg.inversion.group_size)
    start = time.perf_counter()
    generated = np.concatenate(generated)
    reference = dataset.data[np.isin(dataset.labels, sorted(classes))]
    mode = cfg.metric.features if models.codec is not None else "pixel"
    metric = evaluate(embed(models.codec, reference, mode), embed(models.codec, generated, mode, "generated"),
                      cfg.metric.k)
    timings["metrics"] = time.perf_counter() - start
    logger.info("cell %s finished: fid %.4f precision %.3f recall %.3f",
                key.cell_id, metric.fid, metric.precision, metric.recall)
    return CellResult(key, metric, np.concatenate(adversarial), np.concatenate(defended), generated,
                      trace, budget, timings)


def default_cells(cfg, attack_cfg=None):
    attack_cfg = attack_cfg or cfg.attack
    return [CellSpec(a, d, s, attack_cfg) for s in cfg.seeds for a in cfg.attacks for d in cfg.defenses]


# ---------------------------------------------------------------------------
# Run directory
# ---------------------------------------------------------------------------

def _sha256_bytes(data):
    return hashlib.sha256(data).hexdigest()


@dataclass
class RunManifest:
    config_hash: str
    checkpoint_hashes: dict = field(default_factory=dict)
    artifacts: dict = field(default_factory=dict)
    metric_rows: list = field(default_factory=list)
    failures: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)

    def hashed_content(self):
        return {
            "config_hash": self.config_hash,
            "checkpoint_hashes": self.checkpoint_hashes,
            "artifacts": self.artifacts,
            "metric_rows": self.metric_rows,
            "failures": self.failures,
        }

    @property
    def manifest_hash(self):
        canonical = json.dumps(self.hashed_content(), sort_keys=True, separators=(",", ":"))
        return _sha256_bytes(canonical.encode("utf-8"))

    def to_dict(self):
        return dict(self.hashed_content(), timings=self.timings, manifest_hash=self.manifest_hash)


class RunWriter:
    """Only writer of a run directory; every file goes through here and is hashed."""

    def __init__(self, root, manifest):
        self.root = root
        self.manifest = manifest
        os.makedirs(root, exist_ok=True)

    def _write(self, relpath, data):
        path = os.path.join(self.root, relpath)
        os.makedirs(os.path.dirname(path), exist_ok=True)
        tmp = f"{path}.tmp"
        with open(tmp, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
        if relpath != "manifest.json":
            self.manifest.artifacts[relpath.replace(os.sep, "/")] = _sha256_bytes(data)
        return path

    def write_array(self, relpath, array):
        buf = io.BytesIO()
        np.save(buf, np.asarray(array, dtype=np.float32))
        return self._write(relpath, buf.getvalue())

    def write_json(self, relpath, obj):
        return self._write(relpath, json.dumps(obj, indent=2, sort_keys=True).encode("utf-8"))

    def write_trace(self, relpath, trace):
        path = os.path.join(self.root, relpath)
        os.makedirs(os.path.dirname(path), exist_ok=True)
        write_trace_csv(trace, path)
        with open(path, "rb") as f:
            self.manifest.artifacts[relpath.replace(os.sep, "/")] = _sha256_bytes(f.read())
        return path

    def write_cell(self, result):
        cell = f"cells/{result.key.cell_id}"
        self.write_array(f"{cell}/adversarial.npy", result.adversarial)
        self.write_array(f"{cell}/defended.npy", result.defended)
        self.write_array(f"{cell}/generated.npy", result.generated)
        self.write_trace(f"{cell}/trace.csv", result.trace)
        self.write_json(f"{cell}/budget.json", result.budget)
        self.manifest.timings[result.key.cell_id] = result.timings

    def write_metrics(self, reports):
        ordered = sorted(reports, key=lambda r: r.key.cell_id)
        self.manifest.metric_rows = [{k: r.to_row()[k] for k in METRIC_COLUMNS} for r in ordered]
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=METRIC_COLUMNS, lineterminator="\n")
        writer.writeheader()
        for row in self.manifest.metric_rows:
            writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
        return self._write("metrics.csv", buf.getvalue().encode("utf-8"))

    def write_manifest(self):
        return self._write("manifest.json", json.dumps(self.manifest.to_dict(), indent=2, sort_keys=True).encode("utf-8"))


def read_metrics_csv(path):
    """Parse a metrics.csv back into typed rows."""
    types = {"seed": int, "n_steps": int, "n_real": int, "n_gen": int, "k": int,
             "epsilon": float, "fid": float, "precision": float, "recall": float}
    with open(path, "r", encoding="utf-8", newline="") as f:
        return [{k: types.get(k, str)(v) for k, v in row.items()} for row in csv.DictReader(f)]


# ---------------------------------------------------------------------------
# Entry points
# ---------------------------------------------------------------------------

def run_scenario(cfg, cells=None, models=None, progress=False):
    """
    Run every cell, writing artifacts as cells complete. A failing cell is
    logged and recorded in the manifest; the others continue.

    Returns (cell reports sorted by cell id, manifest).
    """
    dataset = DatasetCache.load(cfg.dataset)
    cells = default_cells(cfg) if cells is None else cells
    start = time.perf_counter()
    if models is None:
        models = prepare_models(cfg, dataset, progress,
                                need_classifier=any(c.attack == "pgd_classifier" for c in cells))
    manifest = RunManifest(config_hash(cfg), dict(models.checkpoint_hashes))
    manifest.timings["prepare_models"] = time.perf_counter() - start
    writer = RunWriter(cfg.output_dir, manifest)
    writer.write_json("config.json", to_dict(cfg))
    reports = []

    with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
        futures = {pool.submit(run_cell, cfg, models, dataset, spec): spec.key(cfg.scenario) for spec in cells}
        for future in tqdm(as_completed(futures), total=len(futures), desc="cells", disable=not progress):
            key = futures[future]
            try:
                result = future.result()
            except Exception as exc:
                logger.warning("cell %s failed: %s", key.cell_id, exc, exc_info=True)
                manifest.failures[key.cell_id] = f"{type(exc).__name__}: {exc}"
                continue
            writer.write_cell(result)
            reports.append(CellReport(result.key, result.report))
            writer.write_metrics(reports)

    writer.write_metrics(reports)
    writer.write_manifest()
    reports.sort(key=lambda r: r.key.cell_id)
    logger.info("run finished: %d cells, %d failed, manifest %s", len(reports), len(manifest.failures),
                manifest.manifest_hash[:12])
    return reports, manifest


@dataclass
class DefenseComparison:
    clean: list
    undefended: list
    defended: list
    manifest: RunManifest


def defend_then_evaluate(cfg, defense, attack="advdm", models=None, progress=False):
    """Clean, undefended-adversarial and defended-adversarial cells for every seed."""
    none = DefenseConfig()
    cells = []
    for seed in cfg.seeds:
        cells += [CellSpec("none", none, seed, cfg.attack),
                  CellSpec(attack, none, seed, cfg.attack),
                  CellSpec(attack, defense, seed, cfg.attack)]
    reports, manifest = run_scenario(cfg, cells, models, progress)
    by_key = {r.key: r.report for r in reports}

    def pick(spec):
        return by_key.get(spec.key(cfg.scenario))

    return DefenseComparison(
        [pick(c) for c in cells[0::3]], [pick(c) for c in cells[1::3]], [pick(c) for c in cells[2::3]], manifest
    )


def sweep_cells(cfg):
    parameter = cfg.sweep.parameter
    if not parameter or not cfg.sweep.values:
        raise PreconditionError("sweep needs sweep.parameter and sweep.values")
    cells = []
    for value in cfg.sweep.values:
        value = int(value) if parameter == "n_steps" else float(value)
        attack_cfg = replace(cfg.attack, **{parameter: value})
        cells += default_cells(cfg, attack_cfg)
    return cells


def sweep(cfg, models=None, progress=False):
    from plot_data import emit_plot_data

    reports, manifest = run_scenario(cfg, sweep_cells(cfg), models, progress)
    if reports:
        emit_plot_data(reports, os.path.join(cfg.output_dir, "plots"))
    return reports, manifest
