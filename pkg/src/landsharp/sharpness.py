"""Epsilon-sharpness of a scanned surface and its stability across directions.

For a scanned grid with centre loss L* the sharpness is

    s_eps = 100 * (max_{a^2 + b^2 <= eps^2} f(a, b) - L*) / (1 + L*)

where the maximum runs over lattice points inside the (a, b) disc of
radius eps, centre included. Membership uses a relative tolerance of
1e-9 on eps^2 so points lying on the circle (e.g. (0.15, 0.2) for
eps = 0.25) count as inside despite rounding in their coordinates.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .landscape import (SHARPNESS_POINTS, SHARPNESS_RADIUS, SurfaceGrid, filter_normalize,
                        sample_directions, scan_surface)
from .nn import ModelState

BALL_TOL = 1e-9


class ZeroVarianceError(ValueError):
    """Pearson correlation is undefined because one input is constant."""


def ball_mask(grid: SurfaceGrid, epsilon: float) -> np.ndarray:
    a2 = grid.alphas[:, None] ** 2
    b2 = grid.betas[None, :] ** 2
    return a2 + b2 <= epsilon ** 2 * (1 + BALL_TOL)


def epsilon_sharpness(grid: SurfaceGrid, epsilon: float, full_square: bool = False) -> float:
    """Sharpness in percent; +inf if a non-finite loss lies inside the neighbourhood.

    ``full_square=True`` maximizes over the whole [-eps, eps]^2 square of
    lattice points instead of the disc.
    """
    if not epsilon > 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    reach = min(np.abs(grid.alphas).max(), np.abs(grid.betas).max())
    if epsilon > reach * (1 + BALL_TOL):
        raise ValueError(f"epsilon {epsilon} exceeds the radius covered by the grid ({reach})")
    ci, cj = grid.center_index()
    center = float(grid.losses[ci, cj])
    if full_square:
        tol = epsilon * (1 + BALL_TOL)
        mask = (np.abs(grid.alphas)[:, None] <= tol) & (np.abs(grid.betas)[None, :] <= tol)
    else:
        mask = ball_mask(grid, epsilon)
    peak = float(grid.losses[mask].max())
    if math.isinf(peak) or math.isinf(center):
        return math.inf
    return (peak - center) / (1.0 + center) * 100.0


@dataclass
class SharpnessResult:
    epsilon: float
    values: list[float]
    seeds: list[int]
    mean: float = 0.0
    std: float = 0.0
    single_repeat: bool = False
    divergent: list[int] = field(default_factory=list)  # repeat indices with +inf sharpness
    model_hash: str = ""

    def to_json(self) -> str:
        d = asdict(self)
        d["values"] = [v if math.isfinite(v) else "inf" for v in self.values]
        for k in ("mean", "std"):
            if not math.isfinite(d[k]):
                d[k] = "inf" if d[k] > 0 else "nan"
        return json.dumps(d, indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "SharpnessResult":
        d = json.loads(text)
        d["values"] = [math.inf if v == "inf" else float(v) for v in d["values"]]
        for k in ("mean", "std"):
            d[k] = float(d[k])
        return cls(**d)

    def save(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_json())
        return path


def summarize(epsilon: float, values: list[float], seeds: list[int], model_hash: str = "") -> SharpnessResult:
    """Mean and sample (n-1) standard deviation over the finite repeats."""
    finite = [v for v in values if math.isfinite(v)]
    divergent = [i for i, v in enumerate(values) if not math.isfinite(v)]
    res = SharpnessResult(epsilon, list(values), list(seeds), divergent=divergent,
                          model_hash=model_hash)
    if not finite:
        res.mean = res.std = math.inf
        return res
    arr = np.array(finite, dtype=np.float64)
    res.mean = float(arr.mean())
    if len(arr) == 1:
        res.std, res.single_repeat = 0.0, True
    else:
        res.std = float(arr.std(ddof=1))
    return res


def direction_seeds(base_seed: int, repeats: int) -> list[int]:
    return [base_seed + r for r in range(repeats)]


def sharpness_study(state: ModelState, data, repeats: int = 3, epsilon: float = SHARPNESS_RADIUS,
                    base_seed: int = 0, points: int = SHARPNESS_POINTS, radius: float | None = None,
                    workers: int = 1, orthogonal: bool = False, full_square: bool = False,
                    meta: dict | None = None) -> tuple[SharpnessResult, list[SurfaceGrid]]:
    """Scan ``repeats`` independently seeded direction pairs and aggregate their sharpness."""
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    radius = epsilon if radius is None else radius
    seeds = direction_seeds(base_seed, repeats)
    grids, values = [], []
    for seed in seeds:
        pair = filter_normalize(sample_directions(state, seed), state, orthogonal=orthogonal)
        grid = scan_surface(state, pair, data, (-radius, radius), points=points, workers=workers,
                            meta=meta)
        grids.append(grid)
        values.append(epsilon_sharpness(grid, epsilon, full_square))
    return summarize(epsilon, values, seeds, state.fingerprint()), grids


def pearson(xs, ys) -> float:
    """Pearson product-moment correlation, clipped to [-1, 1]."""
    x = np.asarray(xs, dtype=np.float64)
    y = np.asarray(ys, dtype=np.float64)
    if x.ndim != 1 or x.shape != y.shape:
        raise ValueError(f"need two equally long 1-D sequences, got {x.shape} and {y.shape}")
    if len(x) < 3:
        raise ValueError(f"need at least 3 points, got {len(x)}")
    dx = x - x.mean()
    dy = y - y.mean()
    sxx, syy = float(dx @ dx), float(dy @ dy)
    if sxx == 0.0 or syy == 0.0:
        raise ZeroVarianceError("correlation undefined: an input has zero variance")
    return float(np.clip((dx @ dy) / math.sqrt(sxx * syy), -1.0, 1.0))


def linear_fit(xs, ys) -> tuple[float, float]:
    """Least-squares (slope, intercept)."""
    x = np.asarray(xs, dtype=np.float64)
    y = np.asarray(ys, dtype=np.float64)
    dx = x - x.mean()
    sxx = float(dx @ dx)
    if sxx == 0.0:
        raise ZeroVarianceError("fit undefined: x has zero variance")
    slope = float(dx @ (y - y.mean())) / sxx
    return slope, float(y.mean() - slope * x.mean())
