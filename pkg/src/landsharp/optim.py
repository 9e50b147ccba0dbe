"""SGD with momentum and Adam.

SGD uses the accumulate-then-apply form without dampening or Nesterov:

    v <- mu * v + g
    theta <- theta - lr * v

Adam is the usual bias-corrected update. Neither applies weight decay.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .nn import ModelState

KINDS = ("SGD", "Adam")


@dataclass(frozen=True)
class OptimConfig:
    kind: str = "Adam"
    lr: float = 1e-3
    momentum: float = 0.9
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown optimiser {self.kind!r}; expected one of {KINDS}")
        if not self.lr > 0:
            raise ValueError(f"learning rate must be positive, got {self.lr}")
        if not 0 <= self.momentum < 1:
            raise ValueError(f"momentum must lie in [0, 1), got {self.momentum}")


@dataclass
class OptimState:
    steps: int = 0
    buf1: dict[str, np.ndarray] = field(default_factory=dict)  # SGD velocity / Adam first moment
    buf2: dict[str, np.ndarray] = field(default_factory=dict)  # Adam second moment


class NonFiniteGradient(FloatingPointError):
    def __init__(self, name: str):
        super().__init__(f"non-finite gradient in parameter {name!r}")
        self.param = name


def step(state: ModelState, grads: dict[str, np.ndarray], cfg: OptimConfig,
         opt: OptimState | None = None) -> tuple[ModelState, OptimState]:
    """Apply one update to ``state.params`` in place and return (state, opt)."""
    if opt is None:
        opt = OptimState()
    for name, g in grads.items():
        if name not in state.params:
            raise KeyError(f"gradient for unknown parameter {name!r}")
        if g.shape != state.params[name].shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape "
                             f"{state.params[name].shape} for {name!r}")
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradient(name)
    opt.steps += 1
    t = opt.steps
    for name, g in grads.items():
        p = state.params[name]
        g = g.astype(p.dtype, copy=False)
        if cfg.kind == "SGD":
            v = opt.buf1.setdefault(name, np.zeros_like(p))
            v *= cfg.momentum
            v += g
            p -= p.dtype.type(cfg.lr) * v
        else:
            m = opt.buf1.setdefault(name, np.zeros_like(p))
            v = opt.buf2.setdefault(name, np.zeros_like(p))
            m *= cfg.beta1
            m += (1 - cfg.beta1) * g
            v *= cfg.beta2
            v += (1 - cfg.beta2) * (g * g)
            mhat = m / (1 - cfg.beta1 ** t)
            vhat = v / (1 - cfg.beta2 ** t)
            p -= (cfg.lr * mhat / (np.sqrt(vhat) + cfg.eps)).astype(p.dtype)
    return state, opt
