"""Cross-entropy, triplet, contrastive and ArcFace losses on the autodiff engine."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, NumericError, ShapeError

LOSS_KINDS = ("cross_entropy", "triplet", "contrastive", "arcface")
DEFAULT_MARGINS = {"cross_entropy": 0.0, "triplet": 0.2, "contrastive": 1.0, "arcface": 0.5}
COS_EPS = 1e-7


@dataclass(frozen=True)
class LossConfig:
    kind: str = "cross_entropy"
    margin: float | None = None
    scale: float = 64.0
    normalize: bool = False  # l2-normalise embeddings for triplet/contrastive

    def __post_init__(self):
        if self.kind not in LOSS_KINDS:
            raise ConfigError(f"unknown loss {self.kind!r}; expected one of {LOSS_KINDS}")
        if self.margin is None:
            object.__setattr__(self, "margin", DEFAULT_MARGINS[self.kind])
        if self.margin < 0:
            raise ConfigError("margin must be non-negative")
        if self.scale <= 0:
            raise ConfigError("scale must be positive")
        if self.kind == "arcface" and self.margin >= np.pi / 2:
            raise ConfigError("arcface margin must be below pi/2")

    @property
    def is_metric(self) -> bool:
        return self.kind != "cross_entropy"


def _check_labels(labels, n: int, c: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.intp)
    if labels.shape != (n,):
        raise ShapeError(f"expected {n} labels, got shape {labels.shape}")
    if n and (labels.min() < 0 or labels.max() >= c):
        raise ValueError(f"labels must lie in [0, {c})")
    return labels


def cross_entropy_loss(logits, labels) -> Tensor:
    """Mean negative log-softmax probability of the true class."""
    logits = ad.as_tensor(logits)
    if logits.ndim != 2:
        raise ShapeError(f"logits must be N x c, got {logits.shape}")
    n, c = logits.shape
    labels = _check_labels(labels, n, c)
    logp = ad.log_softmax(logits, axis=1)
    return -ad.mean(ad.take_elements(logp, np.arange(n), labels))


def triplet_loss(anchor, positive, negative, margin: float) -> Tensor:
    """``max(d(a, p) - d(a, n) + margin, 0)`` with Euclidean ``d``."""
    dap = ad.euclidean_distance(anchor, positive)
    dan = ad.euclidean_distance(anchor, negative)
    return ad.relu(dap - dan + margin)


def batch_triplet_loss(embeddings, triplets: np.ndarray, margin: float) -> Tensor:
    """Mean triplet loss over rows ``(anchor, positive, negative)`` of ``triplets``."""
    emb = ad.as_tensor(embeddings)
    triplets = np.asarray(triplets, dtype=np.intp).reshape(-1, 3)
    if len(triplets) == 0:
        raise ValueError("no triplets given")
    dist = ad.pairwise_distances(emb)
    a, p, n = triplets.T
    dap = ad.take_elements(dist, a, p)
    dan = ad.take_elements(dist, a, n)
    return ad.mean(ad.relu(dap - dan + margin))


def contrastive_loss(x1, x2, y: int, margin: float) -> Tensor:
    """``y * d + (1 - y) * max(0, margin - d)`` with Euclidean ``d``."""
    if y not in (0, 1):
        raise ValueError(f"similarity flag must be 0 or 1, got {y!r}")
    d = ad.euclidean_distance(x1, x2)
    if y == 1:
        return d
    return ad.relu(margin - d)


def batch_contrastive_loss(embeddings, pairs: np.ndarray, margin: float) -> Tensor:
    """Mean contrastive loss over rows ``(first, second, y)`` of ``pairs``."""
    emb = ad.as_tensor(embeddings)
    pairs = np.asarray(pairs, dtype=np.intp).reshape(-1, 3)
    if len(pairs) == 0:
        raise ValueError("no pairs given")
    first, second, y = pairs.T
    if np.any((y != 0) & (y != 1)):
        raise ValueError("similarity flags must be 0 or 1")
    d = ad.take_elements(ad.pairwise_distances(emb), first, second)
    yf = y.astype(np.float64)
    return ad.mean(yf * d + (1.0 - yf) * ad.relu(margin - d))


def arcface_cosines(embeddings, weight) -> Tensor:
    """Cosine between every l2-normalised embedding row and weight column."""
    emb, zero = ad.l2_normalize(embeddings, axis=1, return_mask=True)
    if np.any(zero):
        raise NumericError(f"zero embedding rows at {np.flatnonzero(zero).tolist()}")
    w, wzero = ad.l2_normalize(weight, axis=0, return_mask=True)
    if np.any(wzero):
        raise NumericError("zero class-centre column in arcface weights")
    return emb @ w


def arcface_logits(embeddings, labels, weight, scale: float, margin: float) -> Tensor:
    """``s * cos(theta_y + m)`` for the true class and ``s * cos(theta_j)`` elsewhere."""
    cosines = arcface_cosines(embeddings, weight)
    n, c = cosines.shape
    labels = _check_labels(labels, n, c)
    onehot = np.zeros((n, c))
    onehot[np.arange(n), labels] = 1.0
    theta = ad.arccos(ad.clip(cosines, -1.0 + COS_EPS, 1.0 - COS_EPS))
    target = ad.cos(theta + margin * onehot)
    # Non-target entries keep the unclamped cosine exactly.
    return scale * (onehot * target + (1.0 - onehot) * cosines)


def arcface_loss(embeddings, labels, weight, scale: float = 64.0, margin: float = 0.5) -> Tensor:
    return cross_entropy_loss(arcface_logits(embeddings, labels, weight, scale, margin), labels)
