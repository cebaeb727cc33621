import argparse
import json
import logging
import os
import sys
from dataclasses import replace

import numpy as np

from config import DefenseConfig, ExperimentConfig, config_schema, load_config, with_overrides
from errors import ConfigError

logger = logging.getLogger("main")

LOG_FORMAT = "%(asctime)s - %(levelname)s - %(name)s - %(message)s"
DEFAULT_CONFIG = "lab_config.json5"


def setup_logging(verbose=False):
    logging.basicConfig(level=logging.DEBUG if verbose else logging.INFO, format=LOG_FORMAT)


def _attack_overrides(cfg, args):
    changes = {k: getattr(args, k) for k in ("epsilon", "alpha", "n_steps") if getattr(args, k, None) is not None}
    return replace(cfg, attack=replace(cfg.attack, **changes)) if changes else cfg


DEFENSE_FLAGS = ("quality", "tv_lambda", "tv_iters", "factor", "t_star")


def _defense_flag_values(args):
    return {k: getattr(args, k) for k in DEFENSE_FLAGS if getattr(args, k, None) is not None}


def _defense_from_args(args, kind):
    return DefenseConfig(kind=kind, **_defense_flag_values(args))


def _defense_overrides(cfg, args):
    """Apply the defense flags to every configured defense."""
    changes = _defense_flag_values(args)
    if not changes:
        return cfg
    return replace(cfg, defenses=tuple(replace(d, **changes) for d in cfg.defenses))


def _context(args):
    """Validated config, dataset and models for the single-stage commands."""
    from data_loader import DatasetCache
    from harness import prepare_models

    cfg = _attack_overrides(args.cfg, args)
    dataset = DatasetCache.load(cfg.dataset)
    need_classifier = getattr(args, "attack", None) == "pgd_classifier"
    return cfg, dataset, prepare_models(cfg, dataset, progress=args.progress, need_classifier=need_classifier)


def _group(cfg, dataset, args):
    import tensor_core as tc
    from harness import select_group

    rng = tc.RngStream(cfg.seeds[0]).child("select", args.group)
    idx = select_group(dataset, args.label, cfg.inversion.group_size, rng)
    return tc.Tensor(dataset.data[idx]), dataset.labels[idx]


def _out(cfg, *parts):
    path = os.path.join(cfg.output_dir, *parts)
    os.makedirs(os.path.dirname(path), exist_ok=True)
    return path


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_train_codec(args):
    from data_loader import DatasetCache
    from harness import prepare_codec

    dataset = DatasetCache.load(args.cfg.dataset)
    _, digest = prepare_codec(args.cfg, dataset, args.progress)
    print(f"codec ready at {args.cfg.checkpoint_path('codec')} {digest or ''}".rstrip())
    return 0


def cmd_train_diffusion(args):
    from data_loader import DatasetCache
    from harness import prepare_models

    dataset = DatasetCache.load(args.cfg.dataset)
    models = prepare_models(args.cfg, dataset, args.progress, need_classifier=False)
    print(f"denoiser ready at {args.cfg.checkpoint_path('diffusion')} ({models.space.mode} space, "
          f"dimension {models.space.data_dim})")
    return 0


def cmd_train_classifier(args):
    from data_loader import DatasetCache
    from harness import prepare_classifier

    dataset = DatasetCache.load(args.cfg.dataset)
    model, _ = prepare_classifier(args.cfg, dataset, args.progress)
    print(f"classifier ready, training accuracy {model.accuracy(dataset.flat, dataset.labels):.3f}")
    return 0


def cmd_attack(args):
    import tensor_core as tc
    from attacks import AttackContext, AttackFactory, verify_budget, write_trace_csv

    cfg, dataset, models = _context(args)
    x0, labels = _group(cfg, dataset, args)
    ctx = AttackContext(models.denoiser, models.sched, models.space, models.codec, models.classifier)
    trace = []
    rng = tc.RngStream(cfg.seeds[0]).child("attack", args.group)
    x_adv = AttackFactory.create(args.attack)(ctx, x0, labels, cfg.attack, rng, trace)
    report = verify_budget(x0, x_adv, cfg.attack.epsilon, models.space.valid_range)
    stem = f"{args.attack}-class{args.label}-group{args.group}"
    np.save(_out(cfg, "attack", f"{stem}.npy"), x_adv.data)
    write_trace_csv(trace, _out(cfg, "attack", f"{stem}-trace.csv"))
    with open(_out(cfg, "attack", f"{stem}-budget.json"), "w", encoding="utf-8") as f:
        json.dump(report.to_dict(), f, indent=2)
    print(f"{args.attack}: max |delta| {report.max_deviation:.6f}, budget {'ok' if report.passed else 'VIOLATED'}")
    return 0 if report.passed else 1


def cmd_invert(args):
    import tensor_core as tc
    from checkpoint import save_checkpoint
    from condition_inversion import invert, nearest_class

    cfg, dataset, models = _context(args)
    x, _ = _group(cfg, dataset, args)
    if args.input:
        x = tc.Tensor(np.load(args.input))
    rng = tc.RngStream(cfg.seeds[0]).child("invert", args.group)
    emb = invert(models.denoiser, models.sched, models.space.to_model(x), cfg.inversion, rng, args.progress)
    path = args.save or _out(cfg, "inversion", f"class{args.label}-group{args.group}.ckpt")
    save_checkpoint(path, emb, metadata={"source": args.input or f"class {args.label} group {args.group}"})
    print(f"inverted embedding saved to {path}; nearest class {nearest_class(models.denoiser, emb)}")
    return 0


def cmd_generate(args):
    import tensor_core as tc
    from checkpoint import load_checkpoint
    from condition_inversion import class_embedding, generate_from_inversion

    cfg, dataset, models = _context(args)
    if args.condition:
        emb = load_checkpoint(args.condition).model
    else:
        emb = class_embedding(models.denoiser, args.label)
    rng = tc.RngStream(cfg.seeds[0]).child("generate", 0)
    z = generate_from_inversion(models.denoiser, models.sched, emb, args.count, rng)
    out = models.space.to_data(z)
    path = args.save or _out(cfg, "generated", f"{emb.provenance.replace(':', '')}.npy")
    np.save(path, out.data)
    print(f"{args.count} samples written to {path}")
    return 0


def cmd_defend(args):
    import tensor_core as tc
    from defenses import DefenseContext, DefenseFactory

    cfg, dataset, models = _context(args)
    x = tc.Tensor(np.load(args.input))
    dcfg = _defense_from_args(args, args.defense)
    context = DefenseContext(models.denoiser, models.sched, models.space, tc.RngStream(cfg.seeds[0]).child("defense"))
    y = DefenseFactory.create(args.defense)(x, dcfg, context)
    path = args.save or _out(cfg, "defended", f"{args.defense}-{os.path.basename(args.input)}")
    np.save(path, y.data)
    print(f"{args.defense} output written to {path}")
    return 0


def _summary(reports, manifest):
    for r in reports:
        logger.info("%s fid=%.4f precision=%.3f recall=%.3f", r.key.cell_id, r.report.fid,
                    r.report.precision, r.report.recall)
    print(f"{len(reports)} cells ok, {len(manifest.failures)} failed; manifest {manifest.manifest_hash}")
    return 1 if manifest.failures else 0


def cmd_evaluate(args):
    from harness import defend_then_evaluate, run_scenario

    cfg = _attack_overrides(args.cfg, args)
    if args.compare_defense:
        result = defend_then_evaluate(cfg, _defense_from_args(args, args.compare_defense), args.attack or "advdm",
                                      progress=args.progress)
        for label, reports in (("clean", result.clean), ("undefended", result.undefended),
                               ("defended", result.defended)):
            fids = ", ".join("failed" if r is None else f"{r.fid:.4f}" for r in reports)
            print(f"{label}: fid {fids}")
        return 1 if result.manifest.failures else 0
    reports, manifest = run_scenario(_defense_overrides(cfg, args), progress=args.progress)
    return _summary(reports, manifest)


def cmd_sweep(args):
    from harness import sweep

    reports, manifest = sweep(_attack_overrides(args.cfg, args), progress=args.progress)
    return _summary(reports, manifest)


def cmd_plot(args):
    from plot_data import render_plots

    plot_dir = args.plot_dir or os.path.join(args.cfg.output_dir, "plots")
    written = render_plots(plot_dir)
    print(f"{len(written)} figures written to {plot_dir}")
    return 0


def cmd_schema(args):
    print(json.dumps(config_schema(ExperimentConfig), indent=2))
    return 0


def cmd_view(args):
    from PyQt6.QtWidgets import QApplication

    from viewer_window import ViewerWindow

    app = QApplication(sys.argv[:1])
    window = ViewerWindow(args.run_dir or args.cfg.output_dir)
    window.show()
    return app.exec()


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def _add_common(p):
    p.add_argument("--config", default=DEFAULT_CONFIG, help="JSON5 experiment config (default: %(default)s)")
    p.add_argument("--seed", type=int, help="run a single seed instead of the configured list")
    p.add_argument("--output", help="override output_dir")
    p.add_argument("--verbose", action="store_true", help="DEBUG logging")
    p.add_argument("--progress", action="store_true", help="show progress bars")


def _add_attack_flags(p):
    p.add_argument("--epsilon", type=float, help="override attack.epsilon (L-infinity budget)")
    p.add_argument("--alpha", type=float, help="override attack.alpha (per-step length)")
    p.add_argument("--n-steps", dest="n_steps", type=int, help="override attack.n_steps (iterations N)")


def _add_defense_flags(p):
    p.add_argument("--quality", type=int, help="jpeg_like quality 1..100")
    p.add_argument("--tv-lambda", dest="tv_lambda", type=float, help="tvm TV weight")
    p.add_argument("--tv-iters", dest="tv_iters", type=int, help="tvm iterations")
    p.add_argument("--factor", type=float, help="resample down-up factor (>= 1)")
    p.add_argument("--t-star", dest="t_star", type=int, help="diffpure diffusion depth")


def _add_group(p):
    p.add_argument("--label", type=int, default=0, help="class of the image group (default: %(default)s)")
    p.add_argument("--group", type=int, default=0, help="group index used to draw the images (default: %(default)s)")
    p.add_argument("--save", help="output file")


def build_parser():
    parser = argparse.ArgumentParser(prog="advdm-lab", description="Toy diffusion adversarial-example laboratory")
    sub = parser.add_subparsers(dest="command", required=True)

    for name, func, helptext in (
        ("train-codec", cmd_train_codec, "train (or load) the latent codec"),
        ("train-diffusion", cmd_train_diffusion, "train (or load) the denoiser"),
        ("train-classifier", cmd_train_classifier, "train (or load) the classifier"),
    ):
        p = sub.add_parser(name, help=helptext)
        _add_common(p)
        p.set_defaults(func=func)

    p = sub.add_parser("attack", help="attack one image group and check the budget")
    _add_common(p)
    _add_attack_flags(p)
    _add_group(p)
    p.add_argument("--attack", default="advdm", help="attack name (default: %(default)s)")
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("invert", help="invert a pseudo-word condition from an image group")
    _add_common(p)
    _add_group(p)
    p.add_argument("--input", help=".npy batch to invert instead of a clean group")
    p.set_defaults(func=cmd_invert)

    p = sub.add_parser("generate", help="sample from a condition checkpoint or a class condition")
    _add_common(p)
    _add_group(p)
    p.add_argument("--condition", help="condition checkpoint written by `invert`")
    p.add_argument("--count", type=int, default=50, help="number of samples (default: %(default)s)")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("defend", help="apply a defense to a .npy batch")
    _add_common(p)
    _add_defense_flags(p)
    p.add_argument("--input", required=True, help=".npy batch of images")
    p.add_argument("--defense", default="jpeg_like", help="defense kind (default: %(default)s)")
    p.add_argument("--save", help="output file")
    p.set_defaults(func=cmd_defend)

    p = sub.add_parser("evaluate", help="run every configured cell of the scenario")
    _add_common(p)
    _add_attack_flags(p)
    _add_defense_flags(p)
    p.add_argument("--compare-defense",
                   help="run clean / undefended / defended cells for this defense kind; "
                        "without it the defense flags apply to every configured defense")
    p.add_argument("--attack", help="attack used with --compare-defense (default: advdm)")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("sweep", help="run the configured n_steps or epsilon sweep and emit plot data")
    _add_common(p)
    _add_attack_flags(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("plot", help="render plot-data CSVs to PNG")
    _add_common(p)
    p.add_argument("--plot-dir", help="directory with the CSVs (default: <output_dir>/plots)")
    p.set_defaults(func=cmd_plot)

    p = sub.add_parser("schema", help="print the configuration schema")
    _add_common(p)
    p.set_defaults(func=cmd_schema)

    p = sub.add_parser("view", help="open the run viewer")
    _add_common(p)
    p.add_argument("run_dir", nargs="?", help="run directory (default: output_dir)")
    p.set_defaults(func=cmd_view)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    setup_logging(args.verbose)
    try:
        if args.command == "schema":
            return cmd_schema(args)
        args.cfg = with_overrides(load_config(args.config), seed=args.seed, output=args.output)
        return args.func(args)
    except (ConfigError, FileNotFoundError) as e:
        logger.error("configuration error: %s", e)
        return 2
    except Exception as e:
        logger.error("%s failed: %s", args.command, e, exc_info=args.verbose)
        return 1


if __name__ == "__main__":
    sys.exit(main())
