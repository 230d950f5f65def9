"""Triplet and pair construction from a labelled batch."""
from __future__ import annotations

import warnings

import numpy as np

from .autodiff import pairwise_sq_diff
from .errors import MiningWarning

EASY, SEMI_HARD, HARD = "easy", "semi_hard", "hard"


def classify_triplet(dap: float, dan: float, margin: float) -> str:
    if dap < 0 or dan < 0:
        raise ValueError("distances must be non-negative")
    if dan < dap:
        return HARD
    # same expression as the hinge, so EASY <=> zero loss exactly
    if dap - dan + margin > 0:
        return SEMI_HARD
    return EASY


def distance_matrix(embeddings: np.ndarray) -> np.ndarray:
    e = np.asarray(embeddings, dtype=np.float64)
    return np.sqrt(pairwise_sq_diff(e, e))


def anchor_positive_pairs(labels: np.ndarray) -> np.ndarray:
    """All ordered ``(anchor, positive)`` index pairs, anchor-major."""
    labels = np.asarray(labels)
    same = labels[:, None] == labels[None, :]
    np.fill_diagonal(same, False)
    return np.argwhere(same)


def mine_semi_hard(embeddings, labels, margin: float, fallback: str = "nearest") -> np.ndarray:
    """One triplet per ordered (anchor, positive) pair, as a K x 3 index array.

    The negative is the closest semi-hard candidate. Without one, the
    ``"nearest"`` fallback takes the farthest hard negative if any exist and
    otherwise the closest easy one; ``fallback="skip"`` drops the pair.
    Equal distances resolve to the lower batch index.
    """
    if fallback not in ("nearest", "skip"):
        raise ValueError(f"unknown fallback {fallback!r}")
    labels = np.asarray(labels)
    if len(np.unique(labels)) < 2:
        warnings.warn("batch has a single class; no triplets mined", MiningWarning, stacklevel=2)
        return np.empty((0, 3), dtype=np.intp)
    ap = anchor_positive_pairs(labels)
    if len(ap) == 0:
        warnings.warn("no class has two samples; no triplets mined", MiningWarning, stacklevel=2)
        return np.empty((0, 3), dtype=np.intp)

    dist = distance_matrix(embeddings)
    a, p = ap[:, 0], ap[:, 1]
    dap = dist[a, p][:, None]
    dan = dist[a]                                   # K x N
    negative = labels[None, :] != labels[a][:, None]

    slack = dap - dan + margin
    hard = negative & (dan < dap)
    semi = negative & (dan >= dap) & (slack > 0)
    easy = negative & (slack <= 0)

    inf = np.inf
    semi_pick = np.argmin(np.where(semi, dan, inf), axis=1)
    hard_pick = np.argmax(np.where(hard, dan, -inf), axis=1)
    easy_pick = np.argmin(np.where(easy, dan, inf), axis=1)

    has_semi = semi.any(axis=1)
    if fallback == "skip":
        choice = semi_pick
        keep = has_semi
    else:
        choice = np.where(has_semi, semi_pick, np.where(hard.any(axis=1), hard_pick, easy_pick))
        keep = negative.any(axis=1)
    return np.column_stack([a, p, choice])[keep].astype(np.intp)


def mine_pairs(labels, seed, max_pairs: int | None = None) -> np.ndarray:
    """Sample a balanced set of similar/dissimilar pairs as a K x 3 array.

    Rows are ``(first, second, y)`` with ``first < second`` and ``y = 1`` for
    same-class pairs. Each kind gets ``min(similar, dissimilar, batch size)``
    pairs drawn without replacement; if one kind is absent the other is
    returned alone (with a warning).
    """
    labels = np.asarray(labels)
    n = len(labels)
    if n < 2:
        raise ValueError("need at least two samples to form pairs")
    limit = n if max_pairs is None else max_pairs
    i, j = np.triu_indices(n, k=1)
    same = labels[i] == labels[j]
    sim = np.flatnonzero(same)
    dis = np.flatnonzero(~same)
    rng = np.random.default_rng(seed)
    if len(sim) == 0 or len(dis) == 0:
        warnings.warn("batch lacks similar or dissimilar pairs; returning one kind only",
                      MiningWarning, stacklevel=2)
        pool = sim if len(sim) else dis
        chosen = np.sort(rng.choice(pool, size=min(len(pool), limit), replace=False))
    else:
        count = min(len(sim), len(dis), limit)
        chosen = np.concatenate([
            np.sort(rng.choice(sim, size=count, replace=False)),
            np.sort(rng.choice(dis, size=count, replace=False)),
        ])
    return np.column_stack([i[chosen], j[chosen], same[chosen].astype(np.intp)]).astype(np.intp)
