"""Grid-search harness: train every configuration, measure IID/OOD accuracy and
sharpness, then correlate and disaggregate.

A study directory holds::

    records/<config_id>.json      one record per configuration (deterministic)
    checkpoints/<config_id>.mscp  best-epoch model state
    epochs/<config_id>.csv        per-epoch log
    timings.jsonl                 wall-clock times (sidecar, not deterministic)
    summary.csv                   one row per record

Records are written as soon as a configuration finishes, and existing
records are reused, so an interrupted study resumes where it stopped.
"""
from __future__ import annotations

import csv
import itertools
import json
import math
import time
import traceback
from dataclasses import asdict, dataclass, field
from pathlib import Path

from . import optim
from .checkpoint import save_checkpoint
from .landscape import DEFAULT_EVAL_SAMPLES, SHARPNESS_POINTS, SHARPNESS_RADIUS, balanced_subset
from .nn import ModelSpec
from .sharpness import SharpnessResult, ZeroVarianceError, linear_fit, pearson, sharpness_study
from .synth import DEFAULT_SIZES, N_FRAMES, generate_dataset, select, split_iid_ood
from .trainer import TrainConfig, TrainingDiverged, accuracy, prepare, train

GROUP_KEYS = {"architecture": "arch", "optimiser": "optimiser", "learning-rate": "lr",
              "batch-size": "batch_size", "seed": "seed"}
CONVERGED_TRAIN_ACCURACY = 0.99
ACCURACY_FIELDS = ("train_accuracy", "dev_accuracy", "iid_accuracy", "ood_accuracy", "test_accuracy")


@dataclass
class GridSpec:
    architectures: list[str] = field(default_factory=lambda: ["Mini10", "Mini14"])
    optimisers: list[str] = field(default_factory=lambda: ["SGD", "Adam"])
    learning_rates: list[float] = field(default_factory=lambda: [1e-3, 1e-4, 1e-5])
    batch_sizes: list[int] = field(default_factory=lambda: [16, 32])
    seeds: list[int] = field(default_factory=lambda: [42, 43])
    # each entry is a partial config, e.g. {"optimiser": "SGD", "lr": 1e-4}; matching configs are skipped
    exclusions: list[dict] = field(default_factory=list)

    def product(self) -> list[dict]:
        return [dict(arch=a, optimiser=o, lr=float(lr), batch_size=int(b), seed=int(s))
                for a, o, lr, b, s in itertools.product(self.architectures, self.optimisers,
                                                        self.learning_rates, self.batch_sizes,
                                                        self.seeds)]

    def configs(self) -> list[dict]:
        keep = [c for c in self.product()
                if not any(all(c.get(k) == v for k, v in ex.items()) for ex in self.exclusions)]
        if not keep:
            raise ValueError("grid is empty after exclusions")
        return keep


def reference_exclusions() -> list[dict]:
    """The reduced reference grid: SGD is skipped at 1e-4 and 1e-5 is dropped entirely."""
    return [{"optimiser": "SGD", "lr": 1e-4}, {"lr": 1e-5}]


def config_id(cfg: dict) -> str:
    return f"{cfg['arch']}_{cfg['optimiser']}_lr{cfg['lr']:g}_bs{cfg['batch_size']}_seed{cfg['seed']}"


@dataclass
class StudySettings:
    epochs: int = 50
    train_size: int = DEFAULT_SIZES["train"]
    test_size: int = DEFAULT_SIZES["test"]
    frames: int = N_FRAMES
    repeats: int = 3
    epsilon: float = SHARPNESS_RADIUS
    points: int = SHARPNESS_POINTS
    eval_samples: int = DEFAULT_EVAL_SAMPLES
    direction_seed: int = 0
    workers: int = 1


@dataclass
class StudyRecord:
    config_id: str
    arch: str
    optimiser: str
    lr: float
    batch_size: int
    seed: int
    epochs: int
    best_epoch: int = 0
    train_accuracy: float = float("nan")
    dev_accuracy: float = float("nan")
    iid_accuracy: float = float("nan")
    ood_accuracy: float = float("nan")
    test_accuracy: float = float("nan")
    sharpness: dict | None = None
    error: str | None = None
    wall_time: float = field(default=0.0, compare=False)

    @property
    def mean_sharpness(self) -> float:
        if self.sharpness is None:
            return math.nan
        return _as_float(self.sharpness["mean"])

    @property
    def usable(self) -> bool:
        return self.error is None and math.isfinite(self.mean_sharpness)

    @property
    def converged(self) -> bool:
        return self.usable and self.train_accuracy >= CONVERGED_TRAIN_ACCURACY

    def to_json(self) -> str:
        """Deterministic JSON; accuracies of a failed config are written as null."""
        d = asdict(self)
        d.pop("wall_time")
        for k in ACCURACY_FIELDS:
            if not math.isfinite(d[k]):
                d[k] = None
        return json.dumps(d, sort_keys=True, indent=2, allow_nan=False) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "StudyRecord":
        d = json.loads(text)
        for k in ACCURACY_FIELDS:
            if d.get(k) is None:
                d[k] = math.nan
        return cls(**d)


def _as_float(v) -> float:
    return math.inf if v == "inf" else float(v)


def run_config(cfg: dict, samples, settings: StudySettings, out: Path | None) -> StudyRecord:
    cid = config_id(cfg)
    rec = StudyRecord(cid, cfg["arch"], cfg["optimiser"], cfg["lr"], cfg["batch_size"], cfg["seed"],
                      settings.epochs)
    t0 = time.perf_counter()
    try:
        data = prepare(samples)
        tcfg = TrainConfig(settings.epochs, cfg["batch_size"],
                           optim.OptimConfig(cfg["optimiser"], cfg["lr"]), cfg["seed"])
        state, logs = train(ModelSpec(cfg["arch"]), data, tcfg)
        state.info = dict(cfg, epochs=settings.epochs)
        iid, ood = split_iid_ood(select(samples, "test"))
        rec.best_epoch = state.epoch
        rec.train_accuracy = accuracy(state, (data.x_train, data.y_train))
        rec.dev_accuracy = state.metrics["dev_accuracy"]
        rec.iid_accuracy = accuracy(state, iid)
        rec.ood_accuracy = accuracy(state, ood)
        rec.test_accuracy = accuracy(state, select(samples, "test"))
        idx = balanced_subset(data.y_train, settings.eval_samples)
        scan_data = (data.x_train[idx], data.y_train[idx])
        res, _ = sharpness_study(state, scan_data, settings.repeats, settings.epsilon,
                                 settings.direction_seed, settings.points, workers=settings.workers)
        rec.sharpness = json.loads(res.to_json())
        if out is not None:
            save_checkpoint(state, out / "checkpoints" / f"{cid}.mscp")
            _write_epochs(out / "epochs" / f"{cid}.csv", logs)
    except TrainingDiverged as exc:
        rec.error = f"diverged: {exc}"
        if out is not None:
            _write_epochs(out / "epochs" / f"{cid}.csv", exc.logs)
    except Exception as exc:  # recorded per config, the study continues
        rec.error = f"{type(exc).__name__}: {exc}"
        traceback.print_exc()
    rec.wall_time = time.perf_counter() - t0
    return rec


def _write_epochs(path: Path, logs):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "train_loss", "train_accuracy", "dev_accuracy"])
        for e in logs:
            w.writerow([e.epoch, repr(e.train_loss), repr(e.train_accuracy), repr(e.dev_accuracy)])


def run_study(grid: GridSpec, data_seed: int = 0, out_dir=None,
              settings: StudySettings | None = None, progress=None) -> list[StudyRecord]:
    settings = settings or StudySettings()
    samples = generate_dataset(data_seed, {"train": settings.train_size, "test": settings.test_size},
                               settings.frames)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        (out / "records").mkdir(parents=True, exist_ok=True)
        (out / "study.json").write_text(json.dumps(
            {"grid": asdict(grid), "data_seed": data_seed, "settings": asdict(settings)},
            indent=2, sort_keys=True) + "\n")
    records = []
    for cfg in grid.configs():
        cid = config_id(cfg)
        path = out / "records" / f"{cid}.json" if out is not None else None
        if path is not None and path.exists():
            rec = StudyRecord.from_json(path.read_text())
            if progress:
                progress(f"{cid}: reusing existing record")
        else:
            rec = run_config(cfg, samples, settings, out)
            if path is not None:
                path.write_text(rec.to_json())
                with open(out / "timings.jsonl", "a") as fh:
                    fh.write(json.dumps({"config_id": cid, "wall_time": rec.wall_time}) + "\n")
            if progress:
                progress(f"{cid}: train {rec.train_accuracy:.3f} iid {rec.iid_accuracy:.3f} "
                         f"ood {rec.ood_accuracy:.3f} sharpness {rec.mean_sharpness:.4g}"
                         + (f" ERROR {rec.error}" if rec.error else ""))
        records.append(rec)
    if out is not None:
        write_summary(records, out / "summary.csv")
    return records


def load_records(study_dir) -> list[StudyRecord]:
    files = sorted((Path(study_dir) / "records").glob("*.json"))
    return [StudyRecord.from_json(p.read_text()) for p in files]


SUMMARY_COLUMNS = ["config_id", "arch", "optimiser", "lr", "batch_size", "seed", "epochs",
                   "best_epoch", "train_accuracy", "dev_accuracy", "iid_accuracy", "ood_accuracy",
                   "test_accuracy", "mean_sharpness", "std_sharpness", "error"]


def write_summary(records: list[StudyRecord], path) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SUMMARY_COLUMNS)
        for r in sorted(records, key=lambda r: r.config_id):
            std = _as_float(r.sharpness["std"]) if r.sharpness else math.nan
            w.writerow([r.config_id, r.arch, r.optimiser, repr(r.lr), r.batch_size, r.seed, r.epochs,
                        r.best_epoch, repr(r.train_accuracy), repr(r.dev_accuracy),
                        repr(r.iid_accuracy), repr(r.ood_accuracy), repr(r.test_accuracy),
                        repr(r.mean_sharpness), repr(std), r.error or ""])
    return path


def _mean(values) -> float:
    values = list(values)
    return math.fsum(values) / len(values)


def correlation_report(records: list[StudyRecord]) -> dict:
    """Pearson r of mean sharpness against IID, OOD and combined test accuracy."""
    usable = sorted((r for r in records if r.usable), key=lambda r: r.config_id)
    if len(usable) < 3:
        raise ValueError(f"correlation needs at least 3 non-divergent records, got {len(usable)}")
    sharp = [r.mean_sharpness for r in usable]
    report: dict = {"n": len(usable), "degenerate": False, "correlations": {}, "fits": {},
                    "table": [{"config_id": r.config_id, "sharpness": r.mean_sharpness,
                               "iid_accuracy": r.iid_accuracy, "ood_accuracy": r.ood_accuracy,
                               "test_accuracy": r.test_accuracy} for r in usable]}
    for name in ("iid", "ood", "test"):
        acc = [getattr(r, f"{name}_accuracy") for r in usable]
        try:
            report["correlations"][name] = pearson(sharp, acc)
            slope, icpt = linear_fit(sharp, acc)
            report["fits"][name] = {"slope": slope, "intercept": icpt}
        except ZeroVarianceError:
            report["correlations"][name] = None
            report["degenerate"] = True
    return report


def disaggregate(records: list[StudyRecord], key: str) -> list[dict]:
    """Per-group means of mean sharpness and accuracies for one hyperparameter."""
    if key not in GROUP_KEYS:
        raise ValueError(f"unknown group key {key!r}; expected one of {sorted(GROUP_KEYS)}")
    usable = [r for r in records if r.usable]
    if not usable:
        raise ValueError("no usable records to disaggregate")
    attr = GROUP_KEYS[key]
    groups: dict = {}
    for r in usable:
        groups.setdefault(getattr(r, attr), []).append(r)
    out = []
    for value in sorted(groups):
        rs = groups[value]
        out.append({"key": key, "value": value, "size": len(rs),
                    "mean_sharpness": _mean(r.mean_sharpness for r in rs),
                    "iid_accuracy": _mean(r.iid_accuracy for r in rs),
                    "ood_accuracy": _mean(r.ood_accuracy for r in rs),
                    "test_accuracy": _mean(r.test_accuracy for r in rs)})
    return out


def shift_fraction(records: list[StudyRecord]) -> tuple[int, int]:
    """(number of converged records with OOD < IID accuracy, number of converged records)."""
    conv = [r for r in records if r.converged]
    return sum(r.ood_accuracy < r.iid_accuracy for r in conv), len(conv)


def full_report(records: list[StudyRecord]) -> dict:
    rep: dict = {"records": len(records), "usable": sum(r.usable for r in records)}
    try:
        rep["correlation"] = correlation_report(records)
    except ValueError as exc:
        rep["correlation"] = {"error": str(exc)}
    rep["disaggregation"] = {}
    for key in GROUP_KEYS:
        try:
            rep["disaggregation"][key] = disaggregate(records, key)
        except ValueError as exc:
            rep["disaggregation"][key] = {"error": str(exc)}
    below, conv = shift_fraction(records)
    rep["ood_below_iid"] = {"count": below, "converged": conv}
    return rep


def sharpness_of(record: StudyRecord) -> SharpnessResult | None:
    if record.sharpness is None:
        return None
    return SharpnessResult.from_json(json.dumps(record.sharpness))


def global_means(records: list[StudyRecord]) -> dict[str, float]:
    usable = [r for r in records if r.usable]
    return {"mean_sharpness": _mean(r.mean_sharpness for r in usable),
            "test_accuracy": _mean(r.test_accuracy for r in usable),
            "iid_accuracy": _mean(r.iid_accuracy for r in usable),
            "ood_accuracy": _mean(r.ood_accuracy for r in usable)}


__all__ = ["GridSpec", "StudySettings", "StudyRecord", "run_study", "correlation_report",
           "disaggregate", "full_report", "load_records", "write_summary", "config_id",
           "reference_exclusions", "shift_fraction", "global_means", "sharpness_of"]
