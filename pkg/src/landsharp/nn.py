"""Desk-scale CNN classifiers (Mini10 / Mini14) and a quadratic oracle model.

Mini10 and Mini14 are narrow VGG-style audio CNNs:
each block is (conv3x3 -> batchnorm -> relu) twice followed by 2x2 mean
pooling; the head averages over frequency, takes max + mean over time and
applies one linear layer.

    Mini10: 2 blocks, channels [16, 32]
    Mini14: 3 blocks, channels [16, 32, 64]

Parameter layout (in this order, per block b and conv k in {0, 1}):

    block{b}.conv{k}.weight   [out, in, 3, 3]   filter param, no bias
    block{b}.bn{k}.gamma      [out]
    block{b}.bn{k}.beta       [out]
    fc.weight                 [classes, last_width]   filter param
    fc.bias                   [classes]

so the parameter count of a Mini net with widths w_1..w_B, one input
channel and K classes is

    sum_b 9*w_{b-1}*w_b + 9*w_b*w_b + 4*w_b   (w_0 = 1)  +  K*w_B + K.

The quadratic model has a single filter-structured parameter ``weight`` of
shape ``channel_widths`` ([filters, filter_size]) and loss
sum_i c_i (theta_i - center_i)^2, with center and curvature kept as
buffers so that landscape perturbations never touch them.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T

ARCHS = ("Mini10", "Mini14", "Quadratic")
DEFAULT_WIDTHS = {"Mini10": [16, 32], "Mini14": [16, 32, 64]}
EVAL_CHUNK = 64
HEAD_GAIN = 0.1


@dataclass
class ModelSpec:
    arch: str = "Mini10"
    class_count: int = 10
    input_bins: int = 64
    channel_widths: list[int] = field(default_factory=list)

    def __post_init__(self):
        if self.arch not in ARCHS:
            raise ValueError(f"unknown architecture {self.arch!r}; expected one of {ARCHS}")
        if not self.channel_widths and self.arch in DEFAULT_WIDTHS:
            self.channel_widths = list(DEFAULT_WIDTHS[self.arch])
        if self.class_count < 2:
            raise ValueError("class_count must be >= 2")
        if not self.channel_widths:
            raise ValueError("channel_widths must be nonempty")
        self.channel_widths = [int(w) for w in self.channel_widths]

    def to_dict(self) -> dict:
        return {"arch": self.arch, "class_count": self.class_count,
                "input_bins": self.input_bins, "channel_widths": list(self.channel_widths)}

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        return cls(d["arch"], int(d["class_count"]), int(d["input_bins"]), list(d["channel_widths"]))


@dataclass
class ModelState:
    """A parameter snapshot theta plus batchnorm buffers."""

    spec: ModelSpec
    params: dict[str, np.ndarray]
    buffers: dict[str, np.ndarray]
    epoch: int = 0
    metrics: dict[str, float] = field(default_factory=dict)
    info: dict = field(default_factory=dict)  # hyperparameters, seed

    def copy(self) -> "ModelState":
        return ModelState(self.spec, {k: v.copy() for k, v in self.params.items()},
                          {k: v.copy() for k, v in self.buffers.items()}, self.epoch,
                          dict(self.metrics), dict(self.info))

    def with_params(self, params: dict[str, np.ndarray]) -> "ModelState":
        """Share buffers and metadata, swap in ``params`` (used for perturbed evaluations)."""
        return ModelState(self.spec, params, self.buffers, self.epoch, self.metrics, self.info)

    def num_params(self) -> int:
        return sum(int(v.size) for v in self.params.values())

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(repr(self.spec.to_dict()).encode())
        for store in (self.params, self.buffers):
            for k in sorted(store):
                h.update(k.encode())
                h.update(np.ascontiguousarray(store[k]).tobytes())
        return h.hexdigest()[:16]


def is_filter_param(name: str, value: np.ndarray) -> bool:
    """Conv and linear weights are split into filters; biases and BN affine terms are not."""
    return name.endswith("weight") and value.ndim >= 2


def iter_filters(state: ModelState):
    """Yield (layer_index, filter_index, name, slice view) over filter parameters."""
    layer = 0
    for name, value in state.params.items():
        if not is_filter_param(name, value):
            continue
        for j in range(value.shape[0]):
            yield layer, j, name, value[j]
        layer += 1


def param_shapes(spec: ModelSpec) -> dict[str, tuple[int, ...]]:
    if spec.arch == "Quadratic":
        return {"weight": tuple(spec.channel_widths)}
    shapes: dict[str, tuple[int, ...]] = {}
    c_in = 1
    for b, w in enumerate(spec.channel_widths):
        for k in range(2):
            shapes[f"block{b}.conv{k}.weight"] = (w, c_in if k == 0 else w, 3, 3)
            shapes[f"block{b}.bn{k}.gamma"] = (w,)
            shapes[f"block{b}.bn{k}.beta"] = (w,)
        c_in = w
    shapes["fc.weight"] = (spec.class_count, c_in)
    shapes["fc.bias"] = (spec.class_count,)
    return shapes


def count_params(spec: ModelSpec) -> int:
    return sum(int(np.prod(s)) for s in param_shapes(spec).values())


def build_model(spec: ModelSpec, seed: int) -> ModelState:
    """Initialize a model: He fan-in normal weights, zero biases, unit BN scale.

    The classifier weights get an extra factor HEAD_GAIN. Before training the
    batchnorm running statistics are (0, 1), so eval mode does not normalize
    and full-scale head weights would produce logits with a standard deviation
    of several units; the small gain keeps initial predictions near uniform.
    """
    if spec.arch == "Quadratic":
        raise ValueError("use QuadraticModel to construct a quadratic oracle")
    rng = np.random.default_rng(seed)
    params: dict[str, np.ndarray] = {}
    buffers: dict[str, np.ndarray] = {}
    for name, shape in param_shapes(spec).items():
        if name.endswith("weight"):
            fan_in = int(np.prod(shape[1:]))
            gain = HEAD_GAIN if name == "fc.weight" else 1.0
            params[name] = (rng.standard_normal(shape) * gain * np.sqrt(2.0 / fan_in)).astype(np.float32)
        elif name.endswith("gamma"):
            params[name] = np.ones(shape, np.float32)
        else:
            params[name] = np.zeros(shape, np.float32)
        if name.endswith(".gamma"):
            stem = name[: -len(".gamma")]
            buffers[stem + ".running_mean"] = np.zeros(shape, np.float32)
            buffers[stem + ".running_var"] = np.ones(shape, np.float32)
    return ModelState(spec, params, buffers)


@dataclass
class QuadraticModel:
    """L(theta) = sum_i curvature_i * (theta_i - center_i)^2."""

    center: np.ndarray
    curvature: np.ndarray

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=np.float64)
        if self.center.ndim == 1:
            self.center = self.center[None, :]
        self.curvature = np.broadcast_to(np.asarray(self.curvature, np.float64),
                                         self.center.shape).copy()
        if np.any(self.curvature <= 0):
            raise ValueError("all curvature coefficients must be positive")

    def state(self) -> ModelState:
        spec = ModelSpec("Quadratic", 2, self.center.shape[1], list(self.center.shape))
        return ModelState(spec, {"weight": self.center.copy()},
                          {"center": self.center.copy(), "curvature": self.curvature.copy()})

    def loss_at(self, theta: np.ndarray) -> float:
        d = np.asarray(theta, np.float64) - self.center
        return float(np.sum(self.curvature * d * d))


def _quadratic_loss(state: ModelState, track: bool):
    w = T.Tensor(state.params["weight"], requires_grad=track, name="weight")
    d = T.add(w, T.Tensor(-state.buffers["center"]))
    return T.tsum(T.mul(T.Tensor(state.buffers["curvature"]), T.mul(d, d))), {"weight": w}


def forward(state: ModelState, x: np.ndarray, training: bool, track: bool = False):
    """Run the network on inputs [N, bins, frames]; returns (logits Tensor, param Tensors)."""
    spec = state.spec
    if x.ndim != 3 or x.shape[1] != spec.input_bins:
        raise T.ShapeError(f"expected inputs [N, {spec.input_bins}, frames], got {x.shape}")
    p = {k: T.Tensor(v, requires_grad=track, name=k) for k, v in state.params.items()}
    h = T.Tensor(np.ascontiguousarray(x[:, :, :, None], dtype=np.float32))
    for b in range(len(spec.channel_widths)):
        for k in range(2):
            h = T.conv2d(h, p[f"block{b}.conv{k}.weight"])
            stem = f"block{b}.bn{k}"
            h = T.batchnorm2d(h, p[stem + ".gamma"], p[stem + ".beta"],
                              state.buffers[stem + ".running_mean"],
                              state.buffers[stem + ".running_var"], training)
            h = T.relu(h)
        h = T.mean_pool2x2(h)
    h = T.global_pool(h)
    return T.linear(h, p["fc.weight"], p["fc.bias"]), p


def _check_labels(state: ModelState, labels: np.ndarray):
    if labels.size and (labels.min() < 0 or labels.max() >= state.spec.class_count):
        raise ValueError(f"labels must lie in [0, {state.spec.class_count}), "
                         f"got [{labels.min()}, {labels.max()}]")


def predict_logits(state: ModelState, x: np.ndarray) -> np.ndarray:
    """Eval-mode logits, computed in fixed chunks of EVAL_CHUNK samples."""
    with T.no_grad():
        return np.concatenate([forward(state, x[i:i + EVAL_CHUNK], False)[0].data
                               for i in range(0, len(x), EVAL_CHUNK)])


def model_loss(state: ModelState, batch, mode: str = "eval") -> float:
    """Mean softmax cross-entropy of ``state`` on ``batch = (inputs, labels)``.

    Eval mode uses running BN statistics and has no side effects; train mode
    uses batch statistics and updates the running buffers in place.
    """
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    if state.spec.arch == "Quadratic":
        with T.no_grad():
            return float(_quadratic_loss(state, False)[0].data)
    x, y = batch
    y = np.asarray(y)
    if len(y) == 0:
        raise ValueError("empty batch")
    _check_labels(state, y)
    if mode == "eval":
        per = T.per_sample_cross_entropy(predict_logits(state, x), y)
        return float(np.add.reduce(per) / per.shape[0])
    with T.no_grad():
        logits, _ = forward(state, x, True)
        return float(T.softmax_cross_entropy(logits, y).data)


def loss_and_grads(state: ModelState, batch, training: bool = True):
    """Forward + backward on one batch; returns (loss, logits array, grads by name)."""
    if state.spec.arch == "Quadratic":
        loss, p = _quadratic_loss(state, True)
        T.backward(loss)
        return float(loss.data), None, {k: t.grad for k, t in p.items()}
    x, y = batch
    y = np.asarray(y)
    _check_labels(state, y)
    logits, p = forward(state, x, training, track=True)
    loss = T.softmax_cross_entropy(logits, y)
    T.backward(loss)
    return float(loss.data), logits.data, {k: t.grad for k, t in p.items()}
