"""Scan a checkpoint on the wide 41 x 41 grid over [-1, 1]^2 and render it.

Usage: python scripts/visualize_surface.py CHECKPOINT [OUT_DIR] [--workers N]
"""
import argparse
import logging
from pathlib import Path

from landsharp.checkpoint import load_checkpoint
from landsharp.landscape import (DEFAULT_EVAL_SAMPLES, VISUAL_POINTS, VISUAL_RANGE, balanced_subset,
                                 filter_normalize, sample_directions, scan_surface)
from landsharp.plots import emit_plot
from landsharp.synth import generate_dataset
from landsharp.trainer import prepare


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("checkpoint")
    ap.add_argument("out", nargs="?", default="runs/surface")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--workers", type=int, default=1)
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    state = load_checkpoint(args.checkpoint)
    data = prepare(generate_dataset(0))
    idx = balanced_subset(data.y_train, DEFAULT_EVAL_SAMPLES)
    pair = filter_normalize(sample_directions(state, args.seed), state)
    grid = scan_surface(state, pair, (data.x_train[idx], data.y_train[idx]), VISUAL_RANGE,
                        points=VISUAL_POINTS, workers=args.workers)
    grid.save(out / "surface.csv")
    emit_plot("surface-heatmap", grid, out / "heatmap.svg")
    emit_plot("surface-contour", grid, out / "contour.svg")
    print(f"centre loss {grid.center_loss:.4f}, wrote {out}")


if __name__ == "__main__":
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    main()
