"""Adam training loop for vanilla, Mixup and MixAugment modes with early stopping."""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import network
from .augment import Batch, make_mixup_batch, random_hflip_batch
from .errors import ArgumentError, DimensionError, DomainError, NumericError
from .metrics import MetricsReport, evaluate
from .network import GradientSet, NetworkParams, init_params
from .numerics import Rng

log = logging.getLogger(__name__)

MODES = ("vanilla", "mixup", "mixaugment")
MONITORS = ("accuracy", "macro_f1", "average_accuracy")
LEARNING_RATES = (1e-3, 1e-4)


@dataclass(frozen=True)
class TrainConfig:
    mode: str = "vanilla"
    alpha: float | None = None
    dropout_rate: float = 0.0
    flip_prob: float = 0.0
    batch_size: int = 32
    learning_rate: float = 1e-3
    max_epochs: int = 100
    patience: int | None = 15  # None: never stop early
    monitor_metric: str = "accuracy"
    seed: int = 0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ArgumentError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.mode == "vanilla":
            if self.alpha is not None:
                raise ArgumentError("alpha is only meaningful for mixup/mixaugment")
        elif self.alpha is None or not self.alpha > 0:
            raise DomainError(f"{self.mode} needs a positive alpha, got {self.alpha}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise DomainError(f"dropout_rate must lie in [0, 1), got {self.dropout_rate}")
        if not 0.0 <= self.flip_prob <= 1.0:
            raise DomainError(f"flip_prob must lie in [0, 1], got {self.flip_prob}")
        if self.batch_size < 2:
            raise ArgumentError("batch_size must be at least 2")
        if not self.learning_rate > 0:
            raise DomainError("learning_rate must be positive")
        if self.max_epochs < 1:
            raise ArgumentError("max_epochs must be positive")
        if self.patience is not None and self.patience < 1:
            raise ArgumentError("patience must be positive (or None to disable early stopping)")
        if self.monitor_metric not in MONITORS:
            raise ArgumentError(f"monitor_metric must be one of {MONITORS}")

    @property
    def underfit_risk(self) -> bool:
        return self.alpha is not None and self.alpha >= 4


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, params: NetworkParams) -> "AdamState":
        return cls({k: np.zeros_like(t) for k, t in params.items()},
                   {k: np.zeros_like(t) for k, t in params.items()})


def adam_step(params: NetworkParams, grads: GradientSet, state: AdamState, lr: float = 1e-3):
    """Bias-corrected Adam; returns new (params, state) and leaves the inputs untouched."""
    if grads.arch != params.arch or set(state.m) != set(params.tensors):
        raise DimensionError("adam_step: params, grads and state are not congruent")
    t = state.step + 1
    b1, b2 = state.beta1, state.beta2
    new_p, new_m, new_v = {}, {}, {}
    for k, p in params.items():
        g = grads[k]
        if g.shape != p.shape or state.m[k].shape != p.shape:
            raise DimensionError(f"adam_step: {k} has shape {p.shape}, grad {g.shape}")
        m = b1 * state.m[k] + (1 - b1) * g
        v = b2 * state.v[k] + (1 - b2) * g * g
        m_hat = m / (1 - b1 ** t)
        v_hat = v / (1 - b2 ** t)
        new_p[k] = p - lr * m_hat / (np.sqrt(v_hat) + state.eps)
        new_m[k], new_v[k] = m, v
    return params.like(new_p), AdamState(new_m, new_v, t, b1, b2, state.eps)


@dataclass
class EpochLog:
    epoch: int
    loss: float
    accuracy: float
    average_accuracy: float
    macro_f1: float


@dataclass
class TrainRecord:
    config: TrainConfig
    epochs: list[EpochLog] = field(default_factory=list)
    best_epoch: int = 0
    stop_epoch: int = 0
    stopped_early: bool = False

    def metric(self, epoch_log: EpochLog) -> float:
        return getattr(epoch_log, self.config.monitor_metric)

    @property
    def best(self) -> EpochLog:
        return self.epochs[self.best_epoch - 1]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["epoch", "loss", "accuracy", "average_accuracy", "macro_f1", "best"])
        for e in self.epochs:
            w.writerow([e.epoch, repr(e.loss), repr(e.accuracy), repr(e.average_accuracy), repr(e.macro_f1),
                        int(e.epoch == self.best_epoch)])
        return buf.getvalue()

    def summary(self) -> dict:
        return {
            "config": asdict(self.config),
            "best_epoch": self.best_epoch,
            "stop_epoch": self.stop_epoch,
            "stopped_early": self.stopped_early,
            "best": asdict(self.best),
        }


def _batches(n: int, batch_size: int, order: np.ndarray) -> list[np.ndarray]:
    chunks = [order[s:s + batch_size] for s in range(0, n, batch_size)]
    if len(chunks) > 1 and len(chunks[-1]) < 2:
        # a lone leftover sample cannot be mixed; fold it into the previous batch
        chunks[-2] = np.concatenate([chunks[-2], chunks.pop()])
    return chunks


def train_step(params, batch: Batch, config: TrainConfig, data_rng: Rng, drop_rng: Rng):
    """One loss/gradient evaluation for the configured mode."""
    if config.flip_prob > 0:
        batch = random_hflip_batch(batch, config.flip_prob, data_rng)
    if config.mode == "vanilla":
        return network.cce_loss_and_grad(params, batch, "train", config.dropout_rate, drop_rng)
    mix = make_mixup_batch(batch, config.alpha, data_rng)
    if config.mode == "mixup":
        return network.mixup_only_loss_and_grad(params, mix, "train", config.dropout_rate, drop_rng)
    return network.mixaugment_loss_and_grad(params, mix, "train", config.dropout_rate, drop_rng)


def evaluate_params(params: NetworkParams, data: Batch) -> MetricsReport:
    return evaluate(network.predict(params, data.images), data.labels)


def run_training(config: TrainConfig, train_set: Batch, eval_set: Batch, init: NetworkParams | None = None,
                 on_epoch=None) -> tuple[NetworkParams, TrainRecord]:
    """Train from a seeded init and return the parameters of the best monitored epoch."""
    if len(train_set) < 2 or len(eval_set) == 0:
        raise ArgumentError("training needs >= 2 train samples and a non-empty eval set")
    if train_set.labels.shape[1] != eval_set.labels.shape[1] or train_set.images.shape[1:] != eval_set.images.shape[1:]:
        raise DimensionError("train and eval sets disagree on image shape or class count")
    _, h, w, c = train_set.images.shape
    k = train_set.labels.shape[1]
    root = Rng(config.seed)
    params = init if init is not None else init_params(h, w, c, k, root.spawn(0))
    data_rng, drop_rng = root.spawn(1), root.spawn(2)
    state = AdamState.zeros(params)
    record = TrainRecord(config)
    best_params, best_value, since_best = params, -math.inf, 0

    for epoch in range(1, config.max_epochs + 1):
        losses = []
        for idx in _batches(len(train_set), config.batch_size, data_rng.permutation(len(train_set))):
            try:
                loss, grads = train_step(params, train_set.take(idx), config, data_rng, drop_rng)
            except NumericError as exc:
                raise NumericError(f"epoch {epoch}: {exc}") from exc
            if not math.isfinite(loss):
                raise NumericError(f"epoch {epoch}: non-finite training loss")
            params, state = adam_step(params, grads, state, config.learning_rate)
            losses.append(loss)
        report = evaluate_params(params, eval_set)
        entry = EpochLog(epoch, float(np.mean(losses)), report.accuracy, report.average_accuracy, report.macro_f1)
        record.epochs.append(entry)
        value = record.metric(entry)
        if value > best_value:
            best_value, best_params, since_best = value, params, 0
            record.best_epoch = epoch
        else:
            since_best += 1
        record.stop_epoch = epoch
        log.debug("epoch %d loss %.4f %s %.4f", epoch, entry.loss, config.monitor_metric, value)
        if on_epoch is not None:
            on_epoch(entry)
        if config.patience is not None and since_best >= config.patience:
            record.stopped_early = epoch < config.max_epochs
            break
    return best_params, record
