"""Run a sharpness-vs-generalization study and write its report.

Usage: python scripts/run_study.py [OUT_DIR] [--full]

Without --full the grid is Mini10 x {SGD, Adam} x lr 1e-3 x bs 32 x seeds
{42, 43}, which is four 50-epoch trainings (about an hour on one core).
With --full it runs the reduced reference grid of 24 configurations.
Interrupted runs resume: finished configurations are skipped.
"""
import argparse
import json
import logging
from pathlib import Path

from landsharp import study
from landsharp.plots import emit_plot


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("out", nargs="?", default="runs/study")
    ap.add_argument("--full", action="store_true")
    ap.add_argument("--workers", type=int, default=1)
    args = ap.parse_args()
    out = Path(args.out)
    if args.full:
        grid = study.GridSpec(exclusions=study.reference_exclusions())
    else:
        grid = study.GridSpec(["Mini10"], ["SGD", "Adam"], [1e-3], [32], [42, 43])
    records = study.run_study(grid, 0, out, study.StudySettings(workers=args.workers))
    report = study.full_report(records)
    (out / "report.json").write_text(json.dumps(report, indent=2))

    usable = [r for r in records if r.usable]
    if usable:
        xs = [r.mean_sharpness for r in usable]
        emit_plot("scatter", {"IID": (xs, [r.iid_accuracy for r in usable]),
                              "OOD": (xs, [r.ood_accuracy for r in usable])},
                  out / "sharpness_vs_accuracy.svg")
    shifted, converged = study.shift_fraction(records)
    print(f"{len(usable)}/{len(records)} usable records; OOD < IID on {shifted}/{converged} converged")
    print(json.dumps(report.get("correlation", {}).get("correlations", {}), indent=2))


if __name__ == "__main__":
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    main()
