"""Synthetic device-shift scene classification data in the log-mel domain.

Every class has a fixed prototype log-energy pattern [bins, frames]: a
sloped background spectrum plus a few class-specific bands, each pulsing
at its own rate and phase. A recording of class ``c`` on device ``d`` is

    prototype[c] + response[d] (per mel bin) + gain[d] + noise[d] * N(0, 1)

with every term in natural-log energy units. Devices A, B, C, S1..S3 are
seen in training (A holds the largest share); S4..S6 only show up in the
test split and draw their frequency responses from a wider distribution,
which is what makes them out-of-distribution.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

DEVICES = ("A", "B", "C", "S1", "S2", "S3", "S4", "S5", "S6")
IID_DEVICES = ("A", "B", "C", "S1", "S2", "S3")
OOD_DEVICES = ("S4", "S5", "S6")
TRAIN_DEVICES = IID_DEVICES

N_CLASSES = 10
N_BINS = 64
N_FRAMES = 101
DEFAULT_SIZES = {"train": 1200, "test": 600}
DEVICE_A_SHARE = 0.4
DB_TO_LOG = np.log(10.0) / 10.0


@dataclass(frozen=True)
class DeviceProfile:
    device: str
    response: np.ndarray  # multiplicative energy gain per mel bin (> 0)
    gain_db: float
    noise: float

    @property
    def log_response(self) -> np.ndarray:
        return np.log(self.response) + self.gain_db * DB_TO_LOG


@dataclass
class Sample:
    features: np.ndarray  # [bins, frames] float32
    label: int
    device: str
    split: str


# spread of the smooth log-response curve, gain offset (dB) and noise per device group
_IID_SPREAD = 0.35
_OOD_SPREAD = 1.2
_IID_GAIN_DB = 2.0
_OOD_GAIN_DB = 6.0


def _smooth_curve(rng: np.random.Generator, bins: int, spread: float) -> np.ndarray:
    pos = np.linspace(0.0, 1.0, bins)
    curve = np.zeros(bins)
    for k in range(1, 5):
        curve += rng.normal(0.0, spread / k) * np.cos(np.pi * k * pos + rng.uniform(0, 2 * np.pi))
    return curve


def device_profiles(seed: int, bins: int = N_BINS, noise: float = 1.0,
                    identity: bool = False) -> dict[str, DeviceProfile]:
    """Fixed per-seed device transforms. ``identity`` gives flat, noiseless devices."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 1]))
    out = {}
    for d in DEVICES:
        ood = d in OOD_DEVICES
        curve = _smooth_curve(rng, bins, _OOD_SPREAD if ood else _IID_SPREAD)
        gain = rng.uniform(-1, 1) * (_OOD_GAIN_DB if ood else _IID_GAIN_DB)
        if d == "A":
            curve *= 0.5
        if identity:
            out[d] = DeviceProfile(d, np.ones(bins), 0.0, 0.0)
        else:
            out[d] = DeviceProfile(d, np.exp(curve), float(gain), float(noise))
    return out


def class_prototypes(seed: int, classes: int = N_CLASSES, bins: int = N_BINS,
                     frames: int = N_FRAMES) -> np.ndarray:
    """[classes, bins, frames] log-energy templates."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 2]))
    f = np.arange(bins)[:, None]
    t = np.arange(frames)[None, :]
    background = -2.0 * f / bins - 1.0
    protos = np.empty((classes, bins, frames))
    for c in range(classes):
        p = np.broadcast_to(background, (bins, frames)).copy()
        for _ in range(3):
            centre = rng.uniform(4, bins - 4)
            width = rng.uniform(1.5, 4.0)
            level = rng.uniform(0.8, 1.6)
            rate = rng.uniform(0.02, 0.15)
            phase = rng.uniform(0, 2 * np.pi)
            band = np.exp(-0.5 * ((f - centre) / width) ** 2)
            pulse = 0.5 + 0.5 * np.cos(2 * np.pi * rate * t + phase)
            p += level * band * pulse
        protos[c] = p
    return protos


def _device_schedule(split: str, n: int) -> list[str]:
    if split == "train":
        n_a = int(round(n * DEVICE_A_SHARE))
        others = [d for d in TRAIN_DEVICES if d != "A"]
        rest = n - n_a
        counts = [rest // len(others) + (i < rest % len(others)) for i in range(len(others))]
        return ["A"] * n_a + [d for d, k in zip(others, counts) for _ in range(k)]
    counts = [n // len(DEVICES) + (i < n % len(DEVICES)) for i in range(len(DEVICES))]
    return [d for d, k in zip(DEVICES, counts) for _ in range(k)]


def generate_dataset(seed: int = 0, sizes: dict[str, int] | None = None,
                     frames: int = N_FRAMES, classes: int = N_CLASSES, bins: int = N_BINS,
                     noise: float = 1.0, identity_devices: bool = False) -> list[Sample]:
    """Deterministic list of samples for the 'train' and 'test' splits."""
    sizes = dict(DEFAULT_SIZES if sizes is None else sizes)
    for split, n in sizes.items():
        if split not in ("train", "test"):
            raise ValueError(f"unknown split {split!r}")
        if n < classes:
            raise ValueError(f"split {split!r} needs at least {classes} samples, got {n}")
    profiles = device_profiles(seed, bins, noise, identity_devices)
    protos = class_prototypes(seed, classes, bins, frames)
    samples = []
    for k, split in enumerate(("train", "test")):
        n = sizes.get(split, 0)
        if not n:
            continue
        rng = np.random.default_rng(np.random.SeedSequence([seed, 3, k]))
        labels = np.arange(n) % classes
        devices = np.array(_device_schedule(split, n))
        devices = devices[rng.permutation(n)]
        for label, dev in zip(labels, devices):
            prof = profiles[dev]
            x = protos[label] + prof.log_response[:, None]
            eps = rng.standard_normal((bins, frames))
            if prof.noise:
                x = x + prof.noise * eps
            samples.append(Sample(x.astype(np.float32), int(label), str(dev), split))
    return samples


def select(samples: list[Sample], split: str) -> list[Sample]:
    return [s for s in samples if s.split == split]


def split_iid_ood(samples: list[Sample]) -> tuple[list[Sample], list[Sample]]:
    """Partition test samples into seen-device (IID) and unseen-device (OOD) lists."""
    iid, ood = [], []
    for s in samples:
        if s.split != "test":
            raise ValueError(f"split_iid_ood expects test samples, got split {s.split!r}")
        if s.device in IID_DEVICES:
            iid.append(s)
        elif s.device in OOD_DEVICES:
            ood.append(s)
        else:
            raise ValueError(f"unknown device id {s.device!r}")
    return iid, ood


def stack(samples: list[Sample]) -> tuple[np.ndarray, np.ndarray]:
    """(inputs [N, bins, frames], labels [N])."""
    if not samples:
        raise ValueError("no samples to stack")
    return (np.stack([s.features for s in samples]).astype(np.float32),
            np.array([s.label for s in samples], dtype=np.int64))


def export_dataset(samples: list[Sample], directory) -> Path:
    """Write one raw little-endian float32 file per sample plus manifest.csv."""
    directory = Path(directory)
    (directory / "features").mkdir(parents=True, exist_ok=True)
    bins, frames = samples[0].features.shape
    with open(directory / "manifest.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["filename", "label", "device", "split"])
        for i, s in enumerate(samples):
            name = f"features/{s.split}_{i:05d}.f32"
            s.features.astype("<f4").tofile(directory / name)
            w.writerow([name, s.label, s.device, s.split])
    (directory / "dataset.json").write_text(json.dumps({"bins": bins, "frames": frames}, indent=2) + "\n")
    return directory


def import_dataset(directory) -> list[Sample]:
    directory = Path(directory)
    meta = json.loads((directory / "dataset.json").read_text())
    shape = (meta["bins"], meta["frames"])
    samples = []
    with open(directory / "manifest.csv", newline="") as fh:
        for row in csv.DictReader(fh):
            x = np.fromfile(directory / row["filename"], dtype="<f4")
            if x.size != shape[0] * shape[1]:
                raise ValueError(f"{row['filename']}: expected {shape[0] * shape[1]} values, got {x.size}")
            samples.append(Sample(x.reshape(shape).astype(np.float32), int(row["label"]),
                                  row["device"], row["split"]))
    return samples
