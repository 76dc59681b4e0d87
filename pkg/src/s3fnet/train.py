"""Training loop: class-weighted cross entropy, Adam with bias correction,
reduce-on-plateau learning-rate scheduling, and best-model selection by
validation weighted F1.

Reproducibility contract: with a fixed (config, seed) the epoch log and the
saved checkpoint are bitwise identical across runs.  Batch order comes from
a per-epoch generator seeded with [seed, epoch]; Adam walks parameters in
sorted-name order; all arithmetic is float64 single-threaded.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .errors import ConfigError, DataError, StateError, TrainingDivergedError
from .metrics import MetricsReport, metrics_report
from .models import Model, save_checkpoint
from .ops import log_softmax, softmax


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    batch_size: int = 32
    max_epochs: int = 100
    patience: int = 5
    factor: float = 0.5
    min_delta: float = 1e-4
    min_lr: float = 1e-6
    seed: int = 0
    class_weighting: bool = True
    selection_metric: str = "weighted_f1"
    weight_decay: float = 0.0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be > 0")
        if not 0 < self.factor < 1:
            raise ConfigError("factor must be in (0,1)")
        if self.patience < 1:
            raise ConfigError("patience must be >= 1")
        if self.batch_size < 1 or self.max_epochs < 1:
            raise ConfigError("batch_size and max_epochs must be >= 1")
        if not 0 <= self.beta1 < 1 or not 0 <= self.beta2 < 1:
            raise ConfigError("betas must be in [0,1)")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be >= 0")
        if self.selection_metric not in ("weighted_f1", "accuracy"):
            raise ConfigError(f"unknown selection metric {self.selection_metric!r}")

    def to_dict(self) -> dict:
        return asdict(self)

    @staticmethod
    def from_dict(d: dict) -> "TrainConfig":
        known = set(TrainConfig.__dataclass_fields__)
        bad = set(d) - known
        if bad:
            raise ConfigError(f"unknown train config field(s): {sorted(bad)}")
        return TrainConfig(**d)

    def merged(self, overrides: dict | None) -> "TrainConfig":
        if not overrides:
            return self
        bad = set(overrides) - set(self.__dataclass_fields__)
        if bad:
            raise ConfigError(f"unknown train config field(s): {sorted(bad)}")
        return replace(self, **overrides)


# ---- loss -------------------------------------------------------------------


def weighted_cross_entropy(
    logits: np.ndarray, labels: np.ndarray, class_weights: np.ndarray | None = None
) -> tuple[float, np.ndarray]:
    """Mean of w[y] * (-log softmax[y]); returns (loss, dloss/dlogits)."""
    n, k = logits.shape
    labels = np.asarray(labels)
    if labels.shape != (n,):
        raise DataError(f"labels must be [{n}], got {labels.shape}")
    if n and (labels.min() < 0 or labels.max() >= k):
        raise DataError(f"label outside [0,{k})")
    if class_weights is None:
        class_weights = np.ones(k)
    class_weights = np.asarray(class_weights, dtype=float)
    if class_weights.shape != (k,):
        raise DataError(f"class_weights must be [{k}], got {class_weights.shape}")
    sample_w = class_weights[labels]
    logp = log_softmax(logits)
    loss = float(np.mean(sample_w * -logp[np.arange(n), labels]))
    grad = softmax(logits)
    grad[np.arange(n), labels] -= 1.0
    grad *= (sample_w / n)[:, None]
    return loss, grad


def balanced_class_weights(label_counts) -> np.ndarray:
    """w[c] = N / (K * count[c]); satisfies sum_c w[c]*count[c] == N."""
    counts = np.asarray(label_counts, dtype=float)
    if counts.ndim != 1 or len(counts) == 0:
        raise DataError("label_counts must be a non-empty vector")
    if np.any(counts < 1):
        raise DataError("every class needs at least one sample")
    return counts.sum() / (len(counts) * counts)


# ---- optimizer --------------------------------------------------------------


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0


def adam_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: AdamState,
    config: TrainConfig,
    learning_rate: float | None = None,
) -> None:
    """One bias-corrected Adam update, in place, in sorted-name order."""
    lr = config.learning_rate if learning_rate is None else learning_rate
    state.t += 1
    t = state.t
    for name in sorted(params):
        p = params[name]
        g = grads[name]
        if g.shape != p.shape:
            raise StateError(f"{name}: grad shape {g.shape} != param shape {p.shape}")
        if config.weight_decay:
            g = g + config.weight_decay * p
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        m = state.m[name]
        v = state.v[name]
        if m.shape != p.shape:
            raise StateError(f"{name}: optimizer state shape {m.shape} != {p.shape}")
        m *= config.beta1
        m += (1 - config.beta1) * g
        v *= config.beta2
        v += (1 - config.beta2) * g * g
        m_hat = m / (1 - config.beta1**t)
        v_hat = v / (1 - config.beta2**t)
        p -= lr * m_hat / (np.sqrt(v_hat) + config.epsilon)


# ---- learning-rate schedule -------------------------------------------------


@dataclass
class PlateauState:
    lr: float
    best: float = -np.inf
    bad_epochs: int = 0


def reduce_lr_on_plateau(state: PlateauState, value: float, config: TrainConfig) -> float:
    """Maximize-mode plateau rule; halts decay at min_lr.  Returns the lr to
    use for the next epoch and mutates the state."""
    if value > state.best + config.min_delta:
        state.best = value
        state.bad_epochs = 0
    else:
        state.bad_epochs += 1
        if state.bad_epochs >= config.patience:
            state.lr = max(state.lr * config.factor, config.min_lr)
            state.bad_epochs = 0
    return state.lr


# ---- evaluation -------------------------------------------------------------


def predict_in_batches(model: Model, x: np.ndarray, batch_size: int = 256) -> np.ndarray:
    outs = [
        model.predict(x[i : i + batch_size]) for i in range(0, len(x), batch_size)
    ]
    return np.concatenate(outs, axis=0)


def evaluate(model: Model, x: np.ndarray, y: np.ndarray, batch_size: int = 256) -> MetricsReport:
    return metrics_report(predict_in_batches(model, x, batch_size), y)


# ---- training loop ----------------------------------------------------------


@dataclass
class TrainResult:
    best_epoch: int
    best_metric: float
    history: list[dict]
    checkpoint_path: str | None


def _as_xy(dataset) -> tuple[np.ndarray, np.ndarray]:
    if hasattr(dataset, "images") and hasattr(dataset, "labels"):
        return dataset.images, dataset.labels
    x, y = dataset
    return np.asarray(x), np.asarray(y)


def train_loop(
    model: Model,
    train_data,
    val_data,
    config: TrainConfig,
    checkpoint_path: str | None = None,
    log_path: str | None = None,
) -> TrainResult:
    x_train, y_train = _as_xy(train_data)
    x_val, y_val = _as_xy(val_data)
    y_train = np.asarray(y_train, dtype=np.int64)
    n_classes = model.spec.n_classes
    if len(x_train) == 0:
        raise DataError("empty training set")
    if y_train.max() >= n_classes or y_train.min() < 0:
        raise DataError(f"training labels outside [0,{n_classes})")

    if config.class_weighting:
        counts = np.bincount(y_train, minlength=n_classes)
        class_weights = balanced_class_weights(counts)
    else:
        class_weights = np.ones(n_classes)

    adam = AdamState()
    plateau = PlateauState(lr=config.learning_rate)
    lr = config.learning_rate
    history: list[dict] = []
    best_metric = -np.inf
    best_epoch = -1
    log_file = open(log_path, "w") if log_path else None
    try:
        for epoch in range(config.max_epochs):
            order = np.random.default_rng([config.seed, epoch]).permutation(len(x_train))
            batch_losses = []
            for b, start in enumerate(range(0, len(order), config.batch_size)):
                idx = order[start : start + config.batch_size]
                logits = model.forward(x_train[idx], train=True)
                loss, dlogits = weighted_cross_entropy(
                    logits, y_train[idx], class_weights
                )
                if not np.isfinite(loss):
                    raise TrainingDivergedError(epoch, b, lr)
                model.backward(dlogits)
                trainable = set(model.trainable_names())
                params = {k: v for k, v in model.param_store().items() if k in trainable}
                grads = model.grad_store()
                adam_step(params, grads, adam, config, learning_rate=lr)
                batch_losses.append(loss)

            report = evaluate(model, x_val, y_val)
            metric = getattr(report, config.selection_metric)
            record = {
                "epoch": epoch,
                "lr": lr,
                "train_loss": float(np.mean(batch_losses)),
                "val_accuracy": report.accuracy,
                "val_weighted_f1": report.weighted_f1,
                "val_auc_roc": report.auc_roc,
                "val_mcc": report.mcc,
            }
            history.append(record)
            if log_file:
                log_file.write(json.dumps(record, sort_keys=True) + "\n")
                log_file.flush()
            if metric > best_metric:
                best_metric = metric
                best_epoch = epoch
                if checkpoint_path:
                    save_checkpoint(checkpoint_path, model)
            lr = reduce_lr_on_plateau(plateau, metric, config)
    finally:
        if log_file:
            log_file.close()
    return TrainResult(
        best_epoch=best_epoch,
        best_metric=float(best_metric),
        history=history,
        checkpoint_path=checkpoint_path,
    )
