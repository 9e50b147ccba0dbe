"""Random directions, filter normalization and 2-D loss-surface scans.

A scan evaluates f(a, b) = L(theta* + a*delta + b*eta) on a rectangular
lattice, where delta and eta are Gaussian directions rescaled filter by
filter so that ||delta_ij|| = ||theta_ij||. Non-filter parameters (biases,
batchnorm affine terms) get zero direction entries; batchnorm running
statistics are buffers and are never perturbed, and every evaluation runs
in eval mode, so f is a pure function of (a, b).
"""
from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from .nn import ModelState, is_filter_param, model_loss

SHARPNESS_RADIUS = 0.25
SHARPNESS_POINTS = 11  # 11 x 11 = 121 evaluations, step 0.05
VISUAL_RANGE = (-1.0, 1.0)
VISUAL_POINTS = 41
DEFAULT_EVAL_SAMPLES = 256


@dataclass
class DirectionPair:
    delta: dict[str, np.ndarray]
    eta: dict[str, np.ndarray]
    seed: int
    normalized: bool = False


def _stream(seed: int, which: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, which]))


def sample_directions(state: ModelState, seed: int) -> DirectionPair:
    """Standard-normal directions shaped like the parameters; delta and eta use disjoint streams."""
    rd, re = _stream(seed, 0), _stream(seed, 1)
    delta = {k: rd.standard_normal(v.shape) for k, v in state.params.items()}
    eta = {k: re.standard_normal(v.shape) for k, v in state.params.items()}
    return DirectionPair(delta, eta, seed)


def _normalize_one(d: dict[str, np.ndarray], state: ModelState, seed: int, which: int,
                   reference: dict[str, np.ndarray] | None = None) -> dict[str, np.ndarray]:
    out = {}
    for name, theta in state.params.items():
        raw = np.array(d[name], dtype=np.float64)
        if not is_filter_param(name, theta):
            out[name] = np.zeros_like(raw)
            continue
        for j in range(theta.shape[0]):
            tn = float(np.linalg.norm(theta[j].astype(np.float64)))
            if tn == 0.0:
                raw[j] = 0.0
                continue
            fil = raw[j]
            if reference is not None:
                ref = reference[name][j]
                rr = float(np.vdot(ref, ref))
                if rr > 0:
                    fil -= (np.vdot(fil, ref) / rr) * ref
            dn = float(np.linalg.norm(fil))
            retry = 0
            while dn == 0.0:
                # probability-zero event; draw a replacement slice deterministically
                retry += 1
                fil[...] = _stream(seed, 100 + 2 * retry + which).standard_normal(fil.shape)
                dn = float(np.linalg.norm(fil))
            raw[j] = fil / dn * tn
        out[name] = raw
    return out


def filter_normalize(pair: DirectionPair, state: ModelState, orthogonal: bool = False) -> DirectionPair:
    """Rescale every filter slice of delta and eta to the norm of the matching theta filter.

    With ``orthogonal=True`` each eta filter is first made orthogonal to the
    matching raw delta filter (Gram-Schmidt), which makes delta and eta
    exactly orthogonal filter by filter after rescaling.
    """
    for name, theta in state.params.items():
        if pair.delta[name].shape != theta.shape or pair.eta[name].shape != theta.shape:
            raise ValueError(f"direction shape mismatch for {name!r}")
    delta = _normalize_one(pair.delta, state, pair.seed, 0)
    eta = _normalize_one(pair.eta, state, pair.seed, 1, reference=delta if orthogonal else None)
    return DirectionPair(delta, eta, pair.seed, normalized=True)


def perturb(state: ModelState, pair: DirectionPair, alpha: float, beta: float) -> ModelState:
    """State with parameters theta + alpha*delta + beta*eta (same dtype as theta)."""
    params = {}
    for k, theta in state.params.items():
        if alpha == 0.0 and beta == 0.0:
            params[k] = theta
        else:
            params[k] = (theta.astype(np.float64) + alpha * pair.delta[k]
                         + beta * pair.eta[k]).astype(theta.dtype)
    return state.with_params(params)


def axis(lo: float, hi: float, points: int) -> np.ndarray:
    """Evenly spaced coordinates; a symmetric range with odd ``points`` has an exact 0 in the middle."""
    if points < 2:
        raise ValueError("need at least 2 points per axis")
    if not lo < hi:
        raise ValueError(f"empty range [{lo}, {hi}]")
    n = points - 1
    return np.array([((n - i) * lo + i * hi) / n for i in range(points)])


@dataclass
class SurfaceGrid:
    alphas: np.ndarray
    betas: np.ndarray
    losses: np.ndarray  # [len(alphas), len(betas)], +inf marks a non-finite evaluation
    center_loss: float
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.alphas = np.asarray(self.alphas, dtype=np.float64)
        self.betas = np.asarray(self.betas, dtype=np.float64)
        self.losses = np.asarray(self.losses, dtype=np.float64)
        if self.losses.shape != (len(self.alphas), len(self.betas)):
            raise ValueError(f"losses shape {self.losses.shape} does not match "
                             f"{len(self.alphas)} x {len(self.betas)} coordinates")

    def center_index(self) -> tuple[int, int]:
        ia = np.flatnonzero(self.alphas == 0.0)
        ib = np.flatnonzero(self.betas == 0.0)
        if not len(ia) or not len(ib):
            raise ValueError("grid does not contain (0, 0)")
        return int(ia[0]), int(ib[0])

    def save(self, path) -> Path:
        """Write ``path`` (CSV: alpha, beta, loss) and the JSON sidecar next to it."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["alpha", "beta", "loss"])
            for i, a in enumerate(self.alphas):
                for j, b in enumerate(self.betas):
                    w.writerow([repr(float(a)), repr(float(b)), repr(float(self.losses[i, j]))])
        center = self.center_loss if math.isfinite(self.center_loss) else "inf"
        meta = dict(self.meta, center_loss=center, points=[len(self.alphas), len(self.betas)])
        sidecar_path(path).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
        return path

    @classmethod
    def load(cls, path) -> "SurfaceGrid":
        path = Path(path)
        rows = []
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            if [h.strip() for h in header] != ["alpha", "beta", "loss"]:
                raise ValueError(f"{path}: expected header alpha,beta,loss, got {header}")
            for row in reader:
                rows.append(tuple(float(v) for v in row))
        alphas = sorted({r[0] for r in rows})
        betas = sorted({r[1] for r in rows})
        ia = {a: i for i, a in enumerate(alphas)}
        ib = {b: j for j, b in enumerate(betas)}
        losses = np.full((len(alphas), len(betas)), np.nan)
        for a, b, v in rows:
            losses[ia[a], ib[b]] = v
        if np.isnan(losses).any():
            raise ValueError(f"{path}: rows do not form a full rectangular grid")
        meta = {}
        side = sidecar_path(path)
        if side.exists():
            meta = json.loads(side.read_text())
        grid = cls(np.array(alphas), np.array(betas), losses, 0.0, meta)
        grid.center_loss = float(meta.get("center_loss", losses[grid.center_index()]))
        return grid


def sidecar_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.stem + ".json")


def balanced_subset(y: np.ndarray, n: int) -> np.ndarray:
    """First ``n`` indices taken round-robin over classes in order of appearance."""
    if n <= 0 or n >= len(y):
        return np.arange(len(y))
    per_class = [np.flatnonzero(y == c) for c in np.unique(y)]
    picked = []
    depth = 0
    while len(picked) < n:
        for idx in per_class:
            if depth < len(idx) and len(picked) < n:
                picked.append(int(idx[depth]))
        depth += 1
    return np.array(sorted(picked))


def _eval_point(state: ModelState, pair: DirectionPair, data, a: float, b: float) -> float:
    v = model_loss(perturb(state, pair, a, b), data, "eval")
    return v if math.isfinite(v) else math.inf


_WORKER: dict = {}


def _worker_init(state, pair, data):
    _WORKER.update(state=state, pair=pair, data=data)


def _worker_eval(job: tuple[float, float]) -> float:
    with threadpool_limits(1):
        return _eval_point(_WORKER["state"], _WORKER["pair"], _WORKER["data"], *job)


def scan_surface(state: ModelState, pair: DirectionPair, data,
                 alpha_range: tuple[float, float] = (-SHARPNESS_RADIUS, SHARPNESS_RADIUS),
                 beta_range: tuple[float, float] | None = None,
                 points: int = SHARPNESS_POINTS, workers: int = 1,
                 meta: dict | None = None) -> SurfaceGrid:
    """Evaluate the eval-mode loss on a ``points`` x ``points`` lattice around theta*.

    ``data`` is an (inputs, labels) pair (ignored for the quadratic model).
    Points are evaluated independently; with ``workers > 1`` they are spread
    over processes and reassembled by index, so the result does not depend
    on the worker count.
    """
    if not pair.normalized:
        raise ValueError("directions must be filter-normalized before scanning")
    beta_range = alpha_range if beta_range is None else beta_range
    alphas = axis(*alpha_range, points)
    betas = axis(*beta_range, points)
    if 0.0 not in alphas or 0.0 not in betas:
        raise ValueError("scan range must put (0, 0) on the lattice (use a symmetric range "
                         "with an odd number of points)")
    jobs = [(float(a), float(b)) for a in alphas for b in betas]
    with threadpool_limits(1):
        center = model_loss(state, data, "eval")
        if workers <= 1:
            values = [_eval_point(state, pair, data, a, b) for a, b in jobs]
        else:
            with ProcessPoolExecutor(workers, initializer=_worker_init,
                                     initargs=(state, pair, data)) as ex:
                values = list(ex.map(_worker_eval, jobs, chunksize=max(1, len(jobs) // (4 * workers))))
    info = {"model_hash": state.fingerprint(), "direction_seed": pair.seed,
            "alpha_range": list(alpha_range), "beta_range": list(beta_range),
            "resolution": float(alphas[1] - alphas[0])}
    info.update(meta or {})
    return SurfaceGrid(alphas, betas, np.array(values).reshape(points, points), center, info)
