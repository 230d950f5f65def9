"""SGD, Adam and RMSprop over named parameter arrays."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .errors import ConfigError, ShapeError

OPTIMIZERS = ("sgd", "adam", "rmsprop")


@dataclass
class OptimizerState:
    kind: str
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    decay: float = 0.9
    eps: float = 1e-8
    step: int = 0
    first_moment: dict[str, np.ndarray] = field(default_factory=dict)
    second_moment: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in OPTIMIZERS:
            raise ConfigError(f"unknown optimizer {self.kind!r}; expected one of {OPTIMIZERS}")
        if self.lr <= 0:
            raise ConfigError("learning rate must be positive")


def make_optimizer(kind: str, lr: float | None = None, **hyper) -> OptimizerState:
    """Build a fresh optimizer state. ``lr=None`` keeps the 1e-3 default."""
    if lr is not None:
        hyper["lr"] = lr
    return OptimizerState(kind=kind, **hyper)


def apply_update(state: OptimizerState, params: Mapping[str, np.ndarray],
                 grads: Mapping[str, np.ndarray]) -> dict[str, np.ndarray]:
    """One optimizer step. Returns new arrays; ``params`` is left untouched.

    Moment buffers are created lazily on first sight of a parameter name and
    ``state.step`` advances by one per call.
    """
    for name, p in params.items():
        g = grads[name]
        if np.shape(g) != np.shape(p):
            raise ShapeError(f"gradient for {name!r} has shape {np.shape(g)}, parameter {np.shape(p)}")
    state.step += 1
    t = state.step
    out = {}
    for name, p in params.items():
        g = np.asarray(grads[name], dtype=np.float64)
        if state.kind == "sgd":
            out[name] = p - state.lr * g
        elif state.kind == "adam":
            m = state.first_moment.get(name)
            v = state.second_moment.get(name)
            if m is None:
                m = np.zeros_like(p)
                v = np.zeros_like(p)
            m = state.beta1 * m + (1.0 - state.beta1) * g
            v = state.beta2 * v + (1.0 - state.beta2) * g * g
            state.first_moment[name] = m
            state.second_moment[name] = v
            m_hat = m / (1.0 - state.beta1 ** t)
            v_hat = v / (1.0 - state.beta2 ** t)
            out[name] = p - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
        else:
            v = state.second_moment.get(name)
            if v is None:
                v = np.zeros_like(p)
            v = state.decay * v + (1.0 - state.decay) * g * g
            state.second_moment[name] = v
            out[name] = p - state.lr * g / (np.sqrt(v) + state.eps)
    return out
