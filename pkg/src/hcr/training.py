"""Mini-batch multi-task training with Adam and validation early stopping."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .core import DatasetSplit, InteractionLog
from .evaluation import validation_ndcg
from .inference import Variant
from .model import HcrModel, loss_gradients

logger = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    beta: float = 1.0
    learning_rate: float = 1e-3
    l2: float = 1e-4
    batch_size: int = 1024
    max_epochs: int = 100
    patience: int = 10
    eval_k: int = 50
    seed: int = 0
    mode: str = "hcr"
    share_embeddings: bool = True
    exposure_factor: bool = False
    negative_sampling_ratio: int = 4
    embed_dim: int = 16

    def validate(self):
        if self.mode not in ("hcr", "ct"):
            raise ValueError(f"mode must be 'hcr' or 'ct', got {self.mode!r}")
        if self.beta < 0 or self.l2 < 0:
            raise ValueError("beta and l2 must be non-negative")
        if self.learning_rate <= 0 or self.batch_size < 1 or self.embed_dim < 1:
            raise ValueError("learning_rate, batch_size and embed_dim must be positive")
        if self.patience < 1 or self.max_epochs < 0 or self.eval_k < 1:
            raise ValueError("patience and eval_k must be >= 1, max_epochs >= 0")
        if self.negative_sampling_ratio < 0:
            raise ValueError("negative_sampling_ratio must be >= 0")

    @property
    def variant(self) -> Variant:
        return Variant.CT if self.mode == "ct" else Variant.HCR


@dataclass
class TrainHistory:
    eval_k: int = 50
    per_epoch: list[tuple[int, float, float]] = field(default_factory=list)
    best_epoch: int | None = None

    @property
    def best_metric(self) -> float | None:
        if self.best_epoch is None:
            return None
        return next(m for e, _, m in self.per_epoch if e == self.best_epoch)

    def format_epoch(self, epoch: int, loss: float, metric: float) -> str:
        return f"epoch={epoch} loss={loss:.6f} valid_ndcg@{self.eval_k}={metric:.6f}"

    def lines(self) -> list[str]:
        return [self.format_epoch(*row) for row in self.per_epoch]


def build_model(split: DatasetSplit, cfg: TrainConfig) -> HcrModel:
    return HcrModel.initialize(split.num_users, split.num_items, cfg.embed_dim, seed=cfg.seed,
                               share_embeddings=cfg.share_embeddings,
                               exposure_factor=cfg.exposure_factor, mode=cfg.mode)


def _sample_negatives(train: InteractionLog, ratio: int, rng: np.random.Generator):
    n = ratio * len(train)
    users = train.users[rng.integers(0, len(train), n)]
    items = rng.integers(0, train.num_items, n)
    observed = set(zip(train.users.tolist(), train.items.tolist()))
    keep = np.array([(u, i) not in observed for u, i in zip(users.tolist(), items.tolist())], dtype=bool)
    return users[keep], items[keep]


def make_batches(train: InteractionLog, batch_size: int, seed: int, epoch: int,
                 negative_ratio: int = 0):
    """Shuffled click batches over all records and like batches over clicked ones.

    When the log has no non-click records and ``negative_ratio > 0``, uniform
    negatives (label 0) are added to the click task. Shuffling depends only
    on ``(seed, epoch)``.
    """
    if len(train) == 0:
        raise ValueError("empty training log")
    clicked = np.flatnonzero(train.clicks == 1)
    if clicked.size == 0:
        raise ValueError("no clicked records for the like task")
    rng = np.random.default_rng([seed, epoch])

    cu, ci, cl = train.users, train.items, train.clicks.astype(float)
    if negative_ratio > 0 and np.all(train.clicks == 1):
        nu, ni = _sample_negatives(train, negative_ratio, rng)
        cu, ci = np.concatenate([cu, nu]), np.concatenate([ci, ni])
        cl = np.concatenate([cl, np.zeros(len(nu))])

    def chunks(users, items, labels):
        order = rng.permutation(len(labels))
        return [(users[order[s:s + batch_size]], items[order[s:s + batch_size]], labels[order[s:s + batch_size]])
                for s in range(0, len(order), batch_size)]

    click_batches = chunks(cu, ci, cl)
    like_batches = chunks(train.users[clicked], train.items[clicked], train.likes[clicked].astype(float))
    return click_batches, like_batches


# embedding tables indexed by user or item; everything else is a dense weight
_USER_TABLES = ("user_base", "h2_user", "user_base_like")
_ITEM_TABLES = ("item_base", "h2_item", "item_base_like", "item_exposure")


def add_l2(model: HcrModel, grads: dict[str, np.ndarray], l2: float, click_batch, like_batch) -> None:
    """Add the gradient of the batch L2 penalty.

    Each record contributes ``l2/2 * ||row||^2`` for every embedding row it
    reads, averaged over its batch (the same normalisation as the loss).
    Dense weights and biases get the plain ``l2/2 * ||w||^2`` term.
    """
    if not l2:
        return
    for batch in (click_batch, like_batch):
        if batch is None:
            continue
        users, items = np.asarray(batch[0]), np.asarray(batch[1])
        scale = l2 / len(users)
        for name, value in model.params.items():
            if name in _USER_TABLES:
                np.add.at(grads[name], users, scale * value[users])
            elif name in _ITEM_TABLES:
                np.add.at(grads[name], items, scale * value[items])
    for name, value in model.params.items():
        if name not in _USER_TABLES and name not in _ITEM_TABLES:
            grads[name] += l2 * value


class Adam:
    def __init__(self, params: dict[str, np.ndarray], lr: float,
                 betas=(0.9, 0.999), eps: float = 1e-8):
        self.lr, self.eps = lr, eps
        self.b1, self.b2 = betas
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]):
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for name, value in params.items():
            g = grads[name]
            m, v = self.m[name], self.v[name]
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            value -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def _steps(click_batches, like_batches, mode):
    if mode == "ct":
        return [(None, lb) for lb in like_batches]
    return [(cb, like_batches[k % len(like_batches)]) for k, cb in enumerate(click_batches)]


def train(model: HcrModel, split: DatasetSplit, cfg: TrainConfig, on_epoch=None):
    """Optimise the multi-task loss; return the best-validation model and the history.

    Stops after ``cfg.patience`` epochs without a strict improvement of
    validation NDCG@``eval_k``. ``on_epoch`` receives each formatted epoch line.
    """
    cfg.validate()
    if model.mode != cfg.mode:
        raise ValueError(f"model mode {model.mode!r} does not match config mode {cfg.mode!r}")
    if (model.num_users, model.num_items) != (split.num_users, split.num_items):
        raise ValueError("model dimensions do not match the dataset")

    history = TrainHistory(eval_k=cfg.eval_k)
    best = model.copy()
    if cfg.max_epochs == 0:
        return best, history

    model = model.copy()
    optimizer = Adam(model.params, cfg.learning_rate)
    best_metric, stale = -np.inf, 0
    for epoch in range(1, cfg.max_epochs + 1):
        click_batches, like_batches = make_batches(split.train, cfg.batch_size, cfg.seed, epoch,
                                                   cfg.negative_sampling_ratio)
        losses = []
        for cb, lb in _steps(click_batches, like_batches, cfg.mode):
            loss, grads = loss_gradients(model, cb, lb, cfg.beta)
            if not np.isfinite(loss):
                raise TrainingDiverged(f"non-finite loss at epoch {epoch} (lr={cfg.learning_rate})")
            losses.append(loss)
            add_l2(model, grads, cfg.l2, cb, lb)
            optimizer.step(model.params, grads)
        metric = validation_ndcg(model, split, cfg.variant, cfg.eval_k)
        mean_loss = float(np.mean(losses))
        history.per_epoch.append((epoch, mean_loss, metric))
        line = history.format_epoch(epoch, mean_loss, metric)
        logger.info(line)
        if on_epoch is not None:
            on_epoch(line)
        if metric > best_metric:
            best_metric, stale = metric, 0
            history.best_epoch = epoch
            best = model.copy()
        else:
            stale += 1
            if stale >= cfg.patience:
                break
    return best, history


def train_ct(model: HcrModel, split: DatasetSplit, cfg: TrainConfig, on_epoch=None):
    """Clean-training baseline: one logistic head fit to likes on clicked records."""
    if cfg.mode != "ct":
        raise ValueError("train_ct requires mode='ct'")
    return train(model, split, cfg, on_epoch)
