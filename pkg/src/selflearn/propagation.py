"""Pseudo-labelling: predictors, confidence-ranked selection and pool updates."""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .autodiff import pairwise_sq_diff
from .errors import ConfigError

SEED, PSEUDO = 0, 1


@dataclass(frozen=True)
class DataPools:
    """Labelled pool L, unlabelled pool U and a held-out test set.

    ``*_ids`` are row numbers in the original dataset and give every example
    an identity. ``audit_labels`` holds the withheld ground truth of U; it is
    used for reporting pseudo-label accuracy and never for training.
    """

    labeled_x: np.ndarray
    labeled_y: np.ndarray
    labeled_origin: np.ndarray
    labeled_ids: np.ndarray
    unlabeled_x: np.ndarray
    unlabeled_ids: np.ndarray
    test_x: np.ndarray
    test_y: np.ndarray
    audit_labels: np.ndarray | None = None

    @property
    def n_labeled(self) -> int:
        return len(self.labeled_y)

    @property
    def n_unlabeled(self) -> int:
        return len(self.unlabeled_ids)

    def seed_mask(self) -> np.ndarray:
        return self.labeled_origin == SEED


@dataclass(frozen=True)
class ScoredPredictions:
    """Row ``i``: unlabelled example ``index[i]`` predicted ``label[i]``."""

    index: np.ndarray
    label: np.ndarray
    confidence: np.ndarray

    def __len__(self) -> int:
        return len(self.index)

    def subset(self, rows) -> "ScoredPredictions":
        rows = np.asarray(rows, dtype=np.intp)
        return ScoredPredictions(self.index[rows], self.label[rows], self.confidence[rows])


def nearest_distances(reference: np.ndarray, queries: np.ndarray, chunk: int = 256) -> np.ndarray:
    """Q x R Euclidean distances, computed in query blocks to bound memory."""
    reference = np.asarray(reference, dtype=np.float64)
    queries = np.asarray(queries, dtype=np.float64)
    out = np.empty((len(queries), len(reference)))
    for start in range(0, len(queries), chunk):
        block = queries[start:start + chunk]
        out[start:start + chunk] = np.sqrt(pairwise_sq_diff(block, reference))
    return out


def knn_predict(labeled_embeddings, labeled_labels, query_embeddings, k: int = 1) -> ScoredPredictions:
    """k-nearest-neighbour labels with confidence ``-mean distance``.

    For ``k == 1`` the confidence is minus the distance to the nearest
    labelled point. For larger ``k`` the majority class among the neighbours
    wins; ties go to the class whose voters are closer on average, then to
    the smaller class id. Equidistant neighbours are ordered by index.
    """
    ref = np.asarray(labeled_embeddings, dtype=np.float64)
    ref_y = np.asarray(labeled_labels, dtype=np.intp)
    if len(ref) == 0:
        raise ValueError("knn_predict needs a non-empty labelled reference set")
    if not 1 <= k <= len(ref):
        raise ConfigError(f"k must lie in [1, {len(ref)}], got {k}")
    dist = nearest_distances(ref, query_embeddings)
    q = len(dist)
    if k == 1:
        nearest = np.argmin(dist, axis=1)
        d = dist[np.arange(q), nearest]
        return ScoredPredictions(np.arange(q), ref_y[nearest], -d)

    order = np.argsort(dist, axis=1, kind="stable")[:, :k]
    labels = np.empty(q, dtype=np.intp)
    conf = np.empty(q)
    for row in range(q):
        nb = order[row]
        nd = dist[row, nb]
        ny = ref_y[nb]
        classes, counts = np.unique(ny, return_counts=True)
        mean_d = np.array([nd[ny == c].mean() for c in classes])
        # primary key is the last one: vote count, then mean distance, then class id
        best = np.lexsort((classes, mean_d, -counts))[0]
        labels[row] = classes[best]
        conf[row] = -nd.mean()
    return ScoredPredictions(np.arange(q), labels, conf)


def softmax_predict(logit_rows) -> ScoredPredictions:
    """Argmax class with the maximum softmax probability as confidence."""
    z = np.asarray(logit_rows, dtype=np.float64)
    if z.ndim != 2 or z.shape[1] < 2:
        raise ValueError(f"softmax_predict expects N x c logits with c >= 2, got {z.shape}")
    z = z - z.max(axis=1, keepdims=True)
    prob = np.exp(z)
    prob /= prob.sum(axis=1, keepdims=True)
    label = np.argmax(prob, axis=1)
    return ScoredPredictions(np.arange(len(z)), label, prob[np.arange(len(z)), label])


def selection_count(p: float, n: int) -> int:
    if not 0 < p <= 1:
        raise ConfigError(f"selection fraction must lie in (0, 1], got {p}")
    # round away float noise such as 0.07 * 100 = 7.000000000000001
    return min(n, math.ceil(round(p * n, 9)))


def rank_by_confidence(preds: ScoredPredictions) -> np.ndarray:
    """Row order from most to least confident; ties by lower unlabelled index."""
    return np.lexsort((preds.index, -preds.confidence))


def select_top(preds: ScoredPredictions, p: float, class_balanced: bool = False) -> ScoredPredictions:
    """The ``ceil(p * len(preds))`` most confident predictions.

    ``class_balanced`` fills the quota round-robin over predicted classes,
    each class contributing its own best remaining prediction in turn.
    """
    if len(preds) == 0:
        raise ValueError("select_top needs at least one prediction")
    n = selection_count(p, len(preds))
    ranked = rank_by_confidence(preds)
    if not class_balanced:
        return preds.subset(ranked[:n])
    queues = {}
    for row in ranked:
        queues.setdefault(int(preds.label[row]), []).append(row)
    picked = []
    heads = {c: 0 for c in queues}
    while len(picked) < n:
        for c in sorted(queues):
            if heads[c] < len(queues[c]) and len(picked) < n:
                picked.append(queues[c][heads[c]])
                heads[c] += 1
    picked = np.array(picked, dtype=np.intp)
    return preds.subset(picked[rank_by_confidence(preds.subset(picked))])


def promote(pools: DataPools, selected: ScoredPredictions) -> DataPools:
    """Move selected unlabelled examples into L with ``origin=PSEUDO``."""
    idx = np.asarray(selected.index, dtype=np.intp)
    if len(np.unique(idx)) != len(idx):
        raise ValueError("duplicate indices in selection")
    if len(idx) == 0:
        return pools
    if idx.min() < 0 or idx.max() >= pools.n_unlabeled:
        raise IndexError("selection index outside the unlabelled pool")
    keep = np.ones(pools.n_unlabeled, dtype=bool)
    keep[idx] = False
    audit = None if pools.audit_labels is None else pools.audit_labels[keep]
    return replace(
        pools,
        labeled_x=np.concatenate([pools.labeled_x, pools.unlabeled_x[idx]]),
        labeled_y=np.concatenate([pools.labeled_y, np.asarray(selected.label, dtype=pools.labeled_y.dtype)]),
        labeled_origin=np.concatenate([pools.labeled_origin, np.full(len(idx), PSEUDO, dtype=pools.labeled_origin.dtype)]),
        labeled_ids=np.concatenate([pools.labeled_ids, pools.unlabeled_ids[idx]]),
        unlabeled_x=pools.unlabeled_x[keep],
        unlabeled_ids=pools.unlabeled_ids[keep],
        audit_labels=audit,
    )
