"""Multilayer-perceptron encoder with optional classification heads."""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, ShapeError, TransferIncompatibleError

ACTIVATIONS = ("relu", "none")


@dataclass(frozen=True)
class LayerSpec:
    in_width: int
    out_width: int
    activation: str = "relu"


@dataclass(frozen=True)
class EncoderSpec:
    input_dim: int
    hidden: tuple[int, ...] = (64, 64)
    embedding_dim: int = 32
    activation: str = "relu"
    output_activation: str = "none"

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        widths = (self.input_dim, *self.hidden, self.embedding_dim)
        if any(w <= 0 for w in widths):
            raise ConfigError(f"layer widths must be positive, got {widths}")
        for act in (self.activation, self.output_activation):
            if act not in ACTIVATIONS:
                raise ConfigError(f"unknown activation {act!r}")

    def layers(self) -> list[LayerSpec]:
        widths = (self.input_dim, *self.hidden, self.embedding_dim)
        n = len(widths) - 1
        return [
            LayerSpec(widths[i], widths[i + 1],
                      self.output_activation if i == n - 1 else self.activation)
            for i in range(n)
        ]

    def to_dict(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "hidden": list(self.hidden),
            "embedding_dim": self.embedding_dim,
            "activation": self.activation,
            "output_activation": self.output_activation,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "EncoderSpec":
        return cls(
            input_dim=int(d["input_dim"]),
            hidden=tuple(d.get("hidden", (64, 64))),
            embedding_dim=int(d.get("embedding_dim", 32)),
            activation=d.get("activation", "relu"),
            output_activation=d.get("output_activation", "none"),
        )

    def fingerprint(self) -> str:
        """Hash of the body architecture; heads are not part of it."""
        layers = [[l.in_width, l.out_width, l.activation] for l in self.layers()]
        return hashlib.sha256(json.dumps(layers).encode()).hexdigest()[:16]


@dataclass
class ArcfaceHead:
    """Class-centre weights (d x c, no bias) plus the scale and angular margin."""

    weight: np.ndarray
    scale: float = 64.0
    margin: float = 0.5

    def __post_init__(self):
        if self.scale <= 0:
            raise ConfigError("arcface scale must be positive")
        if not 0 <= self.margin < np.pi / 2:
            raise ConfigError("arcface margin must lie in [0, pi/2)")


@dataclass
class EncoderModel:
    spec: EncoderSpec
    params: dict[str, np.ndarray] = field(default_factory=dict)
    num_classes: int | None = None
    arcface: ArcfaceHead | None = None

    @property
    def has_head(self) -> bool:
        return "head.weight" in self.params

    def body_names(self) -> list[str]:
        names = []
        for i in range(len(self.spec.layers())):
            names += [f"layer{i}.weight", f"layer{i}.bias"]
        return names

    def trainable(self) -> dict[str, np.ndarray]:
        """Every parameter updated by training, including heads."""
        out = dict(self.params)
        if self.arcface is not None:
            out["arcface.weight"] = self.arcface.weight
        return out

    def load_trainable(self, values: Mapping[str, np.ndarray]) -> None:
        for name, value in values.items():
            if name == "arcface.weight":
                self.arcface.weight = value
            else:
                self.params[name] = value

    def copy(self) -> "EncoderModel":
        arc = None
        if self.arcface is not None:
            arc = ArcfaceHead(self.arcface.weight.copy(), self.arcface.scale, self.arcface.margin)
        return EncoderModel(self.spec, {k: v.copy() for k, v in self.params.items()},
                            self.num_classes, arc)

    def _tensors(self, params: Mapping[str, Tensor] | None) -> Mapping:
        return params if params is not None else self.params

    def embed(self, batch, params: Mapping[str, Tensor] | None = None) -> Tensor:
        """Map an N x input_dim batch to N x d embeddings.

        Pass ``params`` (name -> Tensor) to differentiate with respect to the
        weights; by default the stored arrays are used as constants.
        """
        p = self._tensors(params)
        x = ad.as_tensor(batch)
        if x.ndim != 2 or x.shape[1] != self.spec.input_dim:
            raise ShapeError(f"encoder expects N x {self.spec.input_dim} input, got {x.shape}")
        for i, layer in enumerate(self.spec.layers()):
            x = x @ p[f"layer{i}.weight"] + p[f"layer{i}.bias"]
            if layer.activation == "relu":
                x = ad.relu(x)
        return x

    def logits(self, embeddings, params: Mapping[str, Tensor] | None = None) -> Tensor:
        if not self.has_head:
            raise ConfigError("model has no classification head")
        p = self._tensors(params)
        return ad.as_tensor(embeddings) @ p["head.weight"] + p["head.bias"]


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def init_parameters(spec: EncoderSpec, seed: int, scheme: str = "random", *,
                    head: str | None = None, num_classes: int | None = None,
                    checkpoint=None, arcface_scale: float = 64.0,
                    arcface_margin: float = 0.5) -> EncoderModel:
    """Create an encoder with deterministic parameters.

    ``head`` is ``"linear"`` (cross-entropy), ``"arcface"`` or ``None``.
    With ``scheme="from_checkpoint"`` the body is copied from ``checkpoint``
    and any head is drawn fresh from ``seed``.
    """
    if head is not None and head not in ("linear", "arcface"):
        raise ConfigError(f"unknown head {head!r}")
    if head is not None and (num_classes is None or num_classes < 2):
        raise ConfigError("a head needs num_classes >= 2")
    rng = np.random.default_rng(seed)
    params: dict[str, np.ndarray] = {}
    for i, layer in enumerate(spec.layers()):
        params[f"layer{i}.weight"] = glorot_uniform(rng, layer.in_width, layer.out_width)
        params[f"layer{i}.bias"] = np.zeros(layer.out_width)
    if scheme == "from_checkpoint":
        if checkpoint is None:
            raise ConfigError("from_checkpoint requires a checkpoint")
        _copy_body(spec, checkpoint, params)
    elif scheme != "random":
        raise ConfigError(f"unknown initialisation scheme {scheme!r}")

    d = spec.embedding_dim
    model = EncoderModel(spec, params, num_classes)
    if head == "linear":
        params["head.weight"] = glorot_uniform(rng, d, num_classes)
        params["head.bias"] = np.zeros(num_classes)
    elif head == "arcface":
        model.arcface = ArcfaceHead(glorot_uniform(rng, d, num_classes), arcface_scale, arcface_margin)
    return model


def _copy_body(spec: EncoderSpec, checkpoint, params: dict[str, np.ndarray]) -> None:
    if checkpoint.fingerprint != spec.fingerprint():
        raise TransferIncompatibleError(
            f"checkpoint encoder {checkpoint.fingerprint} does not match target {spec.fingerprint()}")
    for name, target in params.items():
        source = checkpoint.params.get(name)
        if source is None:
            raise TransferIncompatibleError(f"checkpoint is missing parameter {name!r}")
        if source.shape != target.shape:
            raise TransferIncompatibleError(
                f"parameter {name!r}: checkpoint shape {source.shape} != target shape {target.shape}")
        params[name] = source.copy()
