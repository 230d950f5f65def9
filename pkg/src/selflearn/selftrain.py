"""Meta-iteration engine: train, pseudo-label, select, promote, repeat."""
from __future__ import annotations

import logging
import warnings
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Mapping

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor
from .checkpoint import Checkpoint, load_checkpoint, model_to_checkpoint
from .data import Dataset
from .encoder import EncoderModel, EncoderSpec, init_parameters
from .errors import ConfigError, MiningError, MiningWarning
from .losses import (LossConfig, arcface_loss, batch_contrastive_loss, batch_triplet_loss,
                     cross_entropy_loss)
from .mining import mine_pairs, mine_semi_hard
from .optim import OPTIMIZERS, apply_update, make_optimizer
from .propagation import (DataPools, ScoredPredictions, knn_predict, promote, select_top,
                          softmax_predict)

log = logging.getLogger(__name__)


@dataclass
class ExperimentConfig:
    loss: LossConfig = field(default_factory=LossConfig)
    hidden: tuple[int, ...] = (64, 64)
    embedding_dim: int = 32
    output_activation: str = "none"
    optimizer: str | None = None
    learning_rate: float = 1e-3
    batch_size: int = 100
    epochs: int = 20
    pretrain_epochs: int | None = None
    meta_iterations: int = 25
    selection_fraction: float = 0.05
    k: int = 1
    seed: int = 0
    init: str = "random"
    class_balanced: bool = False
    cold_start: bool = False
    triplet_fallback: str = "nearest"

    def __post_init__(self):
        if isinstance(self.loss, Mapping):
            self.loss = LossConfig(**self.loss)
        self.hidden = tuple(int(h) for h in self.hidden)
        if self.meta_iterations < 0:
            raise ConfigError("meta_iterations must be >= 0")
        if self.batch_size < 2:
            raise ConfigError("batch_size must be >= 2")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if not 0 < self.selection_fraction <= 1:
            raise ConfigError("selection_fraction must lie in (0, 1]")
        if self.k < 1:
            raise ConfigError("k must be >= 1")
        if self.optimizer is not None and self.optimizer not in OPTIMIZERS:
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")

    @property
    def optimizer_kind(self) -> str:
        if self.optimizer is not None:
            return self.optimizer
        return "rmsprop" if self.loss.kind == "contrastive" else "adam"

    @property
    def head(self) -> str | None:
        return {"cross_entropy": "linear", "arcface": "arcface"}.get(self.loss.kind)

    def encoder_spec(self, input_dim: int) -> EncoderSpec:
        return EncoderSpec(input_dim=input_dim, hidden=self.hidden, embedding_dim=self.embedding_dim,
                           output_activation=self.output_activation)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown experiment fields: {sorted(extra)}")
        return cls(**d)


@dataclass(frozen=True)
class MetaIterationReport:
    iteration: int
    labeled_count: int
    selected_count: int
    mean_confidence: float | None
    selected_pseudo_accuracy: float | None
    train_loss: float
    test_accuracy: float


@dataclass
class TrainResult:
    model: EncoderModel
    final_loss: float
    epoch_losses: list[float]


@dataclass
class SelfLearningResult:
    model: EncoderModel
    reports: list[MetaIterationReport]
    pools: DataPools


def _stream(seed: int, *keys: int) -> np.random.Generator:
    return np.random.default_rng([seed, *keys])


def build_model(config: ExperimentConfig, input_dim: int, num_classes: int,
                checkpoint: Checkpoint | None = None) -> EncoderModel:
    """Initial model per ``config.init``: ``"random"`` or a checkpoint path."""
    spec = config.encoder_spec(input_dim)
    if checkpoint is None and config.init != "random":
        checkpoint = load_checkpoint(config.init)
    if checkpoint is not None:
        return fine_tune_from(checkpoint, config, input_dim, num_classes)
    return init_parameters(spec, config.seed, "random", head=config.head, num_classes=num_classes,
                           arcface_scale=config.loss.scale, arcface_margin=config.loss.margin)


def fine_tune_from(checkpoint: Checkpoint, config: ExperimentConfig, input_dim: int,
                   num_classes: int) -> EncoderModel:
    """Body from ``checkpoint``, freshly seeded head for the target classes."""
    spec = config.encoder_spec(input_dim)
    return init_parameters(spec, config.seed, "from_checkpoint", checkpoint=checkpoint,
                           head=config.head, num_classes=num_classes,
                           arcface_scale=config.loss.scale, arcface_margin=config.loss.margin)


def embed(model: EncoderModel, x, config: ExperimentConfig, params=None) -> Tensor:
    emb = model.embed(x, params)
    if config.loss.normalize and config.loss.kind in ("triplet", "contrastive"):
        emb = ad.l2_normalize(emb, axis=1)
    return emb


def batch_loss(model: EncoderModel, params: Mapping[str, Tensor], xb, yb,
               config: ExperimentConfig, pair_seed: int) -> Tensor | None:
    """Loss of one mini-batch, or ``None`` when mining found nothing usable."""
    cfg = config.loss
    emb = embed(model, xb, config, params)
    if cfg.kind == "cross_entropy":
        return cross_entropy_loss(model.logits(emb, params), yb)
    if cfg.kind == "arcface":
        return arcface_loss(emb, yb, params["arcface.weight"], model.arcface.scale, model.arcface.margin)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", MiningWarning)
        if cfg.kind == "triplet":
            triplets = mine_semi_hard(emb.data, yb, cfg.margin, fallback=config.triplet_fallback)
            if len(triplets) == 0:
                return None
            return batch_triplet_loss(emb, triplets, cfg.margin)
        pairs = mine_pairs(yb, pair_seed, max_pairs=config.batch_size)
    if len(pairs) == 0 or not (np.any(pairs[:, 2] == 0) and np.any(pairs[:, 2] == 1)):
        return None
    return batch_contrastive_loss(emb, pairs, cfg.margin)


def train_supervised(model: EncoderModel, x, y, config: ExperimentConfig, *, seed: int | None = None,
                     epochs: int | None = None) -> TrainResult:
    """Mini-batch training on a labelled set; returns a trained copy of ``model``.

    Batches come from a seeded shuffle each epoch. A metric loss that yields
    no usable triplets/pairs over a whole epoch raises :class:`MiningError`.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if len(y) == 0:
        raise ValueError("cannot train on an empty labelled pool")
    seed = config.seed if seed is None else seed
    epochs = config.epochs if epochs is None else epochs
    model = model.copy()
    opt = make_optimizer(config.optimizer_kind, config.learning_rate)
    epoch_losses: list[float] = []
    for epoch in range(epochs):
        rng = _stream(seed, epoch)
        order = rng.permutation(len(y))
        losses = []
        for start in range(0, len(y), config.batch_size):
            idx = order[start:start + config.batch_size]
            if len(idx) < 2 and len(y) >= 2:
                continue
            values = model.trainable()
            params = {k: Tensor(v, requires_grad=True) for k, v in values.items()}
            with Tape() as tape:
                loss = batch_loss(model, params, x[idx], y[idx], config, int(rng.integers(2**32)))
            if loss is None:
                continue
            names = list(params)
            grads = tape.gradient(loss, [params[n] for n in names])
            model.load_trainable(apply_update(opt, values, dict(zip(names, grads))))
            losses.append(float(loss.data))
        if not losses:
            raise MiningError(f"epoch {epoch}: no usable triplets/pairs; the labelled pool "
                              f"needs at least two classes ({len(np.unique(y))} present)")
        epoch_losses.append(float(np.mean(losses)))
    final = epoch_losses[-1] if epoch_losses else float("nan")
    return TrainResult(model, final, epoch_losses)


def predict(model: EncoderModel, config: ExperimentConfig, reference_x, reference_y, query_x) -> ScoredPredictions:
    """Pseudo-labels for ``query_x``: softmax for cross-entropy, kNN otherwise."""
    query_x = np.asarray(query_x, dtype=np.float64)
    if config.loss.kind == "cross_entropy":
        return softmax_predict(model.logits(model.embed(query_x)).data)
    ref = prediction_embeddings(model, config, reference_x)
    q = prediction_embeddings(model, config, query_x)
    return knn_predict(ref, reference_y, q, k=min(config.k, len(ref)))


def prediction_embeddings(model: EncoderModel, config: ExperimentConfig, x) -> np.ndarray:
    emb = embed(model, np.asarray(x, dtype=np.float64), config)
    if config.loss.kind == "arcface":
        emb = ad.l2_normalize(emb, axis=1)
    return emb.data


def accuracy(model: EncoderModel, config: ExperimentConfig, reference_x, reference_y, x, y) -> float:
    if len(y) == 0:
        return float("nan")
    pred = predict(model, config, reference_x, reference_y, x)
    return float(np.mean(pred.label == np.asarray(y)))


def test_accuracy(model: EncoderModel, config: ExperimentConfig, pools: DataPools) -> float:
    return accuracy(model, config, pools.labeled_x, pools.labeled_y, pools.test_x, pools.test_y)


test_accuracy.__test__ = False  # not a pytest test


def run_self_learning(config: ExperimentConfig, pools: DataPools, model: EncoderModel | None = None,
                      num_classes: int | None = None, on_iteration=None) -> SelfLearningResult:
    """Train on the seed labels, then run ``config.meta_iterations`` rounds of
    predict -> select -> promote -> retrain. Stops early once U is empty.

    Returns the final model, one report per completed round plus the initial
    (iteration 0) report, and the final pools. ``on_iteration(report, pools)``
    is called after every report if given.
    """
    if num_classes is None:
        num_classes = int(max(pools.labeled_y.max(), pools.test_y.max() if len(pools.test_y) else 0)) + 1
    if model is None:
        model = build_model(config, pools.labeled_x.shape[1], num_classes)
    initial = model.copy()

    trained = train_supervised(model, pools.labeled_x, pools.labeled_y, config, seed=_stage_seed(config, 0))
    model = trained.model
    reports = [MetaIterationReport(0, pools.n_labeled, 0, None, None, trained.final_loss,
                                   test_accuracy(model, config, pools))]
    log.info("iteration 0: labeled=%d acc=%.4f", pools.n_labeled, reports[0].test_accuracy)
    if on_iteration is not None:
        on_iteration(reports[0], pools)

    for it in range(1, config.meta_iterations + 1):
        if pools.n_unlabeled == 0:
            break
        preds = predict(model, config, pools.labeled_x, pools.labeled_y, pools.unlabeled_x)
        chosen = select_top(preds, config.selection_fraction, class_balanced=config.class_balanced)
        pseudo_acc = None
        if pools.audit_labels is not None:
            pseudo_acc = float(np.mean(pools.audit_labels[chosen.index] == chosen.label))
        pools = promote(pools, chosen)
        start = initial if config.cold_start else model
        trained = train_supervised(start, pools.labeled_x, pools.labeled_y, config,
                                   seed=_stage_seed(config, it))
        model = trained.model
        reports.append(MetaIterationReport(
            it, pools.n_labeled, len(chosen), float(np.mean(chosen.confidence)), pseudo_acc,
            trained.final_loss, test_accuracy(model, config, pools)))
        log.info("iteration %d: labeled=%d selected=%d acc=%.4f", it, pools.n_labeled,
                 len(chosen), reports[-1].test_accuracy)
        if on_iteration is not None:
            on_iteration(reports[-1], pools)
    return SelfLearningResult(model, reports, pools)


def _stage_seed(config: ExperimentConfig, iteration: int, stage: int = 7919) -> int:
    return int(_stream(config.seed, stage, iteration).integers(2**32))


def pretrain_source(source: Dataset, config: ExperimentConfig, source_task: str = "source") -> tuple[Checkpoint, EncoderModel]:
    """Supervised training on a fully labelled source task, packaged as a checkpoint."""
    epochs = config.pretrain_epochs if config.pretrain_epochs is not None else config.epochs
    model = init_parameters(config.encoder_spec(source.features.shape[1]), config.seed, "random",
                            head=config.head, num_classes=source.num_classes,
                            arcface_scale=config.loss.scale, arcface_margin=config.loss.margin)
    trained = train_supervised(model, source.features, source.labels, config,
                               seed=_stage_seed(config, 0, stage=104729), epochs=epochs)
    ckpt = model_to_checkpoint(trained.model, source_task=source_task, seed=config.seed,
                               epochs=epochs, loss=config.loss.kind, final_loss=trained.final_loss)
    return ckpt, trained.model


def report_rows(reports) -> list[dict]:
    return [asdict(r) for r in reports]


def ensure_dir(path) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    return path
