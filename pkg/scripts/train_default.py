"""Train the default Mini10 model and measure its sharpness.

Usage: python scripts/train_default.py [OUT_DIR]

Writes model.mscp, epochs.csv, sharpness.json and three surface CSVs.
On one CPU core this takes about 20 minutes.
"""
import json
import logging
import sys
from pathlib import Path

from landsharp.checkpoint import save_checkpoint
from landsharp.landscape import DEFAULT_EVAL_SAMPLES, balanced_subset
from landsharp.nn import ModelSpec
from landsharp.sharpness import sharpness_study
from landsharp.synth import generate_dataset, select, split_iid_ood
from landsharp.trainer import TrainConfig, accuracy, prepare, train


def main(out: Path):
    out.mkdir(parents=True, exist_ok=True)
    samples = generate_dataset(0)
    data = prepare(samples)
    state, logs = train(ModelSpec("Mini10"), data, TrainConfig())
    save_checkpoint(state, out / "model.mscp")
    with open(out / "epochs.csv", "w") as fh:
        fh.write("epoch,train_loss,train_accuracy,dev_accuracy\n")
        for e in logs:
            fh.write(f"{e.epoch},{e.train_loss!r},{e.train_accuracy!r},{e.dev_accuracy!r}\n")

    iid, ood = split_iid_ood(select(samples, "test"))
    idx = balanced_subset(data.y_train, DEFAULT_EVAL_SAMPLES)
    result, grids = sharpness_study(state, (data.x_train[idx], data.y_train[idx]))
    for seed, grid in zip(result.seeds, grids):
        grid.save(out / f"surface_seed{seed}.csv")
    summary = {"best_epoch": state.epoch,
               "train_accuracy": accuracy(state, (data.x_train, data.y_train)),
               "iid_accuracy": accuracy(state, iid), "ood_accuracy": accuracy(state, ood),
               "sharpness": json.loads(result.to_json())}
    (out / "sharpness.json").write_text(json.dumps(summary, indent=2))
    print(json.dumps(summary, indent=2))


if __name__ == "__main__":
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    main(Path(sys.argv[1] if len(sys.argv) > 1 else "runs/default"))
