"""Command-line entry point: ``landsharp <command> [flags]``.

Exit status is 0 on success, 1 for usage errors and 2 for runtime
failures (with a diagnostic on standard error). Machine-readable output
goes under ``--out``; a short human-readable summary goes to stdout.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import optim, plots, study
from .checkpoint import load_checkpoint, save_checkpoint
from .landscape import (DEFAULT_EVAL_SAMPLES, SHARPNESS_POINTS, SHARPNESS_RADIUS, SurfaceGrid,
                        balanced_subset, filter_normalize, sample_directions, scan_surface)
from .nn import ARCHS, ModelSpec
from .sharpness import epsilon_sharpness, sharpness_study, summarize
from .synth import (DEFAULT_SIZES, N_FRAMES, export_dataset, generate_dataset, import_dataset,
                    select, split_iid_ood, stack)
from .trainer import TrainConfig, accuracy, prepare, train

SPLITS = ("train", "test", "iid", "ood")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}")


def _data_flags(p: argparse.ArgumentParser):
    g = p.add_argument_group("data")
    g.add_argument("--data", type=Path, help="dataset directory written by gen-data")
    g.add_argument("--data-seed", type=int, default=0, help="seed for generated data (default 0)")
    g.add_argument("--train-size", type=int, default=DEFAULT_SIZES["train"])
    g.add_argument("--test-size", type=int, default=DEFAULT_SIZES["test"])
    g.add_argument("--frames", type=int, default=N_FRAMES)


def _scan_flags(p: argparse.ArgumentParser, radius: float = SHARPNESS_RADIUS):
    p.add_argument("--radius", type=float, default=radius, help="half-width of the scanned square")
    p.add_argument("--points", type=int, default=SHARPNESS_POINTS, help="lattice points per axis")
    p.add_argument("--split", choices=SPLITS, default="train", help="data the loss is evaluated on")
    p.add_argument("--eval-samples", type=int, default=DEFAULT_EVAL_SAMPLES,
                   help="class-balanced subset size for loss evaluation, 0 = all")
    p.add_argument("--workers", type=int, default=1)


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="landsharp", description="Loss-landscape sharpness toolkit")
    ap.add_argument("-q", "--quiet", action="store_true", help="suppress progress logging")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-data", help="generate and export the synthetic dataset")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--train-size", type=int, default=DEFAULT_SIZES["train"])
    p.add_argument("--test-size", type=int, default=DEFAULT_SIZES["test"])
    p.add_argument("--frames", type=int, default=N_FRAMES)
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("train", help="train one model and save its best-epoch checkpoint")
    p.add_argument("--arch", choices=ARCHS[:2], default="Mini10")
    p.add_argument("--optimiser", choices=optim.KINDS, default="Adam")
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--seed", type=int, default=42)
    _data_flags(p)
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("scan", help="scan the loss surface around a checkpoint")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--seed", type=int, default=0, help="direction seed")
    _scan_flags(p)
    _data_flags(p)
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("sharpness", help="epsilon-sharpness from saved surfaces or a checkpoint")
    p.add_argument("surfaces", nargs="*", type=Path, help="surface CSV files (one per repeat)")
    p.add_argument("--checkpoint", type=Path)
    p.add_argument("--repeats", type=int, default=3)
    p.add_argument("--epsilon", type=float, default=SHARPNESS_RADIUS)
    p.add_argument("--seed", type=int, default=0, help="base direction seed")
    _scan_flags(p)
    _data_flags(p)
    p.add_argument("--out", type=Path)

    p = sub.add_parser("study", help="grid search: train, evaluate, measure sharpness")
    p.add_argument("--arch", nargs="+", choices=ARCHS[:2], default=["Mini10", "Mini14"])
    p.add_argument("--optimiser", nargs="+", choices=optim.KINDS, default=["SGD", "Adam"])
    p.add_argument("--lr", nargs="+", type=float, default=[1e-3, 1e-4, 1e-5])
    p.add_argument("--batch-size", nargs="+", type=int, default=[16, 32])
    p.add_argument("--seed", nargs="+", type=int, default=[42, 43])
    p.add_argument("--exclude", action="append", default=[], metavar="KEY=VALUE[,KEY=VALUE]",
                   help="skip configs matching all pairs, e.g. optimiser=SGD,lr=1e-4")
    p.add_argument("--reference-exclusions", action="store_true",
                   help="skip SGD at lr 1e-4 and all lr 1e-5 configs")
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--repeats", type=int, default=3)
    p.add_argument("--epsilon", type=float, default=SHARPNESS_RADIUS)
    p.add_argument("--points", type=int, default=SHARPNESS_POINTS)
    p.add_argument("--eval-samples", type=int, default=DEFAULT_EVAL_SAMPLES)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--data-seed", type=int, default=0)
    p.add_argument("--train-size", type=int, default=DEFAULT_SIZES["train"])
    p.add_argument("--test-size", type=int, default=DEFAULT_SIZES["test"])
    p.add_argument("--frames", type=int, default=N_FRAMES)
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("report", help="correlations and disaggregation for a study directory")
    p.add_argument("study_dir", type=Path)
    p.add_argument("--out", type=Path, help="output directory (default: the study directory)")

    p = sub.add_parser("plot", help="render a surface CSV or a study directory as SVG")
    p.add_argument("input", type=Path)
    p.add_argument("--kind", choices=plots.KINDS)
    p.add_argument("--group", choices=sorted(study.GROUP_KEYS), default="optimiser",
                   help="hyperparameter for grouped-bars of a study")
    p.add_argument("--out", type=Path, required=True)
    return ap


def _samples(args):
    if args.data is not None:
        return import_dataset(args.data)
    return generate_dataset(args.data_seed, {"train": args.train_size, "test": args.test_size},
                            args.frames)


def _eval_data(args):
    samples = _samples(args)
    if args.split in ("train", "test"):
        chosen = select(samples, args.split)
    else:
        iid, ood = split_iid_ood(select(samples, "test"))
        chosen = iid if args.split == "iid" else ood
    x, y = stack(chosen)
    idx = balanced_subset(y, args.eval_samples)
    return x[idx], y[idx]


def _scan_meta(args) -> dict:
    src = str(args.data) if args.data is not None else f"generated:{args.data_seed}"
    return {"split": args.split, "eval_samples": args.eval_samples, "data": src}


def _write_json(path: Path, obj) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
    return path


def cmd_gen_data(args) -> int:
    samples = generate_dataset(args.seed, {"train": args.train_size, "test": args.test_size},
                               args.frames)
    export_dataset(samples, args.out)
    iid, ood = split_iid_ood(select(samples, "test"))
    print(f"wrote {len(samples)} samples to {args.out} "
          f"(train {len(select(samples, 'train'))}, test IID {len(iid)}, test OOD {len(ood)})")
    return 0


def cmd_train(args) -> int:
    samples = _samples(args)
    data = prepare(samples)
    cfg = TrainConfig(args.epochs, args.batch_size, optim.OptimConfig(args.optimiser, args.lr),
                      args.seed)
    state, logs = train(ModelSpec(args.arch), data, cfg)
    state.info = {"arch": args.arch, "optimiser": args.optimiser, "lr": args.lr,
                  "batch_size": args.batch_size, "seed": args.seed, "epochs": args.epochs}
    iid, ood = split_iid_ood(select(samples, "test"))
    metrics = {"best_epoch": state.epoch,
               "train_accuracy": accuracy(state, (data.x_train, data.y_train)),
               "dev_accuracy": state.metrics["dev_accuracy"],
               "iid_accuracy": accuracy(state, iid), "ood_accuracy": accuracy(state, ood),
               "test_accuracy": accuracy(state, select(samples, "test"))}
    save_checkpoint(state, args.out / "model.mscp")
    study._write_epochs(args.out / "epochs.csv", logs)
    _write_json(args.out / "metrics.json", metrics)
    print(f"best epoch {state.epoch}: train {metrics['train_accuracy']:.4f} "
          f"IID {metrics['iid_accuracy']:.4f} OOD {metrics['ood_accuracy']:.4f}")
    return 0


def cmd_scan(args) -> int:
    state = load_checkpoint(args.checkpoint)
    pair = filter_normalize(sample_directions(state, args.seed), state)
    grid = scan_surface(state, pair, _eval_data(args), (-args.radius, args.radius),
                        points=args.points, workers=args.workers, meta=_scan_meta(args))
    path = grid.save(args.out / "surface.csv")
    print(f"{args.points}x{args.points} surface written to {path}; "
          f"centre loss {grid.center_loss:.6g}")
    return 0


def cmd_sharpness(args) -> int:
    if args.surfaces and args.checkpoint:
        raise UsageError("give either surface files or --checkpoint, not both")
    if args.surfaces:
        grids = [SurfaceGrid.load(p) for p in args.surfaces]
        values = [epsilon_sharpness(g, args.epsilon) for g in grids]
        seeds = [int(g.meta.get("direction_seed", i)) for i, g in enumerate(grids)]
        res = summarize(args.epsilon, values, seeds, grids[0].meta.get("model_hash", ""))
    elif args.checkpoint:
        state = load_checkpoint(args.checkpoint)
        res, grids = sharpness_study(state, _eval_data(args), args.repeats, args.epsilon, args.seed,
                                     args.points, args.radius, args.workers, meta=_scan_meta(args))
        if args.out is not None:
            for g in grids:
                g.save(args.out / f"surface_seed{g.meta['direction_seed']}.csv")
    else:
        raise UsageError("need surface files or --checkpoint")
    if args.out is not None:
        res.save(args.out / "sharpness.json")
    print(res.to_json(), end="")
    return 0


def _parse_exclusion(text: str) -> dict:
    ex = {}
    for part in text.split(","):
        key, sep, value = part.partition("=")
        key = key.strip().replace("-", "_")
        if not sep or key not in ("arch", "optimiser", "lr", "batch_size", "seed"):
            raise UsageError(f"bad --exclude entry {part!r}")
        ex[key] = float(value) if key == "lr" else int(value) if key in ("batch_size", "seed") else value
    return ex


def cmd_study(args) -> int:
    exclusions = [_parse_exclusion(t) for t in args.exclude]
    if args.reference_exclusions:
        exclusions += study.reference_exclusions()
    grid = study.GridSpec(args.arch, args.optimiser, args.lr, args.batch_size, args.seed, exclusions)
    settings = study.StudySettings(args.epochs, args.train_size, args.test_size, args.frames,
                                   args.repeats, args.epsilon, args.points, args.eval_samples,
                                   workers=args.workers)
    n = len(grid.configs())
    logging.getLogger(__name__).info("study: %d configurations", n)
    records = study.run_study(grid, args.data_seed, args.out, settings,
                              progress=logging.getLogger(__name__).info)
    _write_json(args.out / "report.json", study.full_report(records))
    failed = sum(r.error is not None for r in records)
    print(f"{len(records)} records in {args.out} ({failed} failed, "
          f"{sum(r.converged for r in records)} converged)")
    return 0


def _report_plots(records, out: Path):
    usable = sorted((r for r in records if r.usable), key=lambda r: r.config_id)
    if not usable:
        return
    xs = [r.mean_sharpness for r in usable]
    plots.emit_plot("scatter", {"IID": (xs, [r.iid_accuracy for r in usable]),
                                "OOD": (xs, [r.ood_accuracy for r in usable]),
                                "combined": (xs, [r.test_accuracy for r in usable])},
                    out / "sharpness_vs_accuracy.svg")
    plots.emit_plot("grouped-bars", {
        "groups": [r.config_id for r in usable],
        "metrics": {"sharpness": xs},
        "errors": {"sharpness": [float(r.sharpness["std"]) for r in usable]},
        "ylabel": "mean sharpness", "title": "sharpness per model (std over repeats)"},
        out / "sharpness_per_model.svg")
    for key in study.GROUP_KEYS:
        _group_plot(records, key, out / f"groups_{key}.svg")


def _group_plot(records, key: str, path: Path):
    rows = study.disaggregate(records, key)
    plots.emit_plot("grouped-bars", {
        "groups": [str(r["value"]) for r in rows],
        "metrics": {m: [r[m] for r in rows] for m in ("mean_sharpness", "iid_accuracy",
                                                       "ood_accuracy", "test_accuracy")},
        "title": f"grouped by {key}"}, path)


def cmd_report(args) -> int:
    records = study.load_records(args.study_dir)
    if not records:
        raise RuntimeError(f"no records under {args.study_dir / 'records'}")
    out = args.out or args.study_dir
    rep = study.full_report(records)
    _write_json(out / "report.json", rep)
    study.write_summary(records, out / "summary.csv")
    _report_plots(records, out)
    corr = rep["correlation"]
    if "error" in corr:
        print(f"{len(records)} records; correlation unavailable: {corr['error']}")
    else:
        r = corr["correlations"]
        fmt = lambda v: "undefined" if v is None else f"{v:+.3f}"
        print(f"{corr['n']} usable records; r(sharpness, IID) {fmt(r['iid'])}, "
              f"r(sharpness, OOD) {fmt(r['ood'])}, r(sharpness, combined) {fmt(r['test'])}")
    return 0


def cmd_plot(args) -> int:
    if args.input.is_dir():
        records = study.load_records(args.input)
        kind = args.kind or "scatter"
        if kind == "grouped-bars":
            _group_plot(records, args.group, args.out)
        elif kind == "scatter":
            usable = [r for r in records if r.usable]
            xs = [r.mean_sharpness for r in usable]
            plots.emit_plot("scatter", {"IID": (xs, [r.iid_accuracy for r in usable]),
                                        "OOD": (xs, [r.ood_accuracy for r in usable])}, args.out)
        else:
            raise UsageError(f"--kind {kind} needs a surface CSV, not a study directory")
    else:
        kind = args.kind or "surface-heatmap"
        if not kind.startswith("surface"):
            raise UsageError(f"--kind {kind} needs a study directory")
        plots.emit_plot(kind, SurfaceGrid.load(args.input), args.out)
    print(f"wrote {args.out}")
    return 0


COMMANDS = {"gen-data": cmd_gen_data, "train": cmd_train, "scan": cmd_scan,
            "sharpness": cmd_sharpness, "study": cmd_study, "report": cmd_report, "plot": cmd_plot}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                            format="%(message)s", stream=sys.stderr)
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    except KeyboardInterrupt:
        print("interrupted", file=sys.stderr)
        return 2
    except Exception as exc:
        print(f"landsharp: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


def run():
    sys.exit(main())


if __name__ == "__main__":
    run()
