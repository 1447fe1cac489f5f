"""MSE training with Adam, plus RMSE / MAE / R^2 evaluation."""

from __future__ import annotations

import json
import math
import time
from dataclasses import asdict, dataclass, field, fields
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .data import WindowedDataset
from .errors import ConfigError, ContractError, DataError, DivergedError, ShapeError
from .models import Forecaster


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.001
    batch_size: int = 256
    epochs: int = 50
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    shuffle: bool = True
    clip_norm: float | None = None  # max global gradient norm; None = off

    def __post_init__(self):
        problems = []
        if not self.learning_rate > 0:
            problems.append(f"train.learning_rate must be > 0 (got {self.learning_rate!r})")
        if not isinstance(self.batch_size, int) or self.batch_size < 1:
            problems.append(f"train.batch_size must be an integer >= 1 (got {self.batch_size!r})")
        if not isinstance(self.epochs, int) or self.epochs < 1:
            problems.append(f"train.epochs must be an integer >= 1 (got {self.epochs!r})")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1 and self.eps > 0):
            problems.append("train.beta1/beta2 must lie in [0, 1) and eps must be > 0")
        if self.clip_norm is not None and not self.clip_norm > 0:
            problems.append(f"train.clip_norm must be > 0 or null (got {self.clip_norm!r})")
        if problems:
            raise ConfigError(problems)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError([f"train.{k} is not a known field" for k in unknown])
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(f"train: {exc}") from None


# ---------------------------------------------------------------------------
# loss and optimiser


def mse_loss(pred: Tensor, target) -> Tensor:
    """Mean of squared differences over every entry (all windows, all steps)."""
    target = target if isinstance(target, Tensor) else Tensor._wrap(np.asarray(target, dtype=np.float64))
    if pred.shape != target.shape:
        raise ShapeError(f"mse_loss: prediction {pred.shape} vs target {target.shape}")
    diff = ad.sub(pred, target)
    return ad.mean(ad.mul(diff, diff))


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0

    @classmethod
    def init(cls, params: Sequence[Tensor]) -> "AdamState":
        return cls([np.zeros_like(p.data) for p in params], [np.zeros_like(p.data) for p in params])


def adam_step(state: AdamState, params: Sequence[Tensor], grads: Sequence[np.ndarray], cfg: TrainConfig) -> None:
    """One bias-corrected Adam update, in place."""
    if not (len(params) == len(grads) == len(state.m)):
        raise ShapeError(f"adam_step: {len(params)} params, {len(grads)} grads, {len(state.m)} moments")
    state.t += 1
    b1, b2 = cfg.beta1, cfg.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g.shape != m.shape:
            raise ShapeError(f"adam_step: gradient {g.shape} vs moment {m.shape}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.data -= cfg.learning_rate * (m / c1) / (np.sqrt(v / c2) + cfg.eps)


def clip_global_norm(grads: list[np.ndarray], max_norm: float) -> float:
    norm = math.sqrt(sum(float((g * g).sum()) for g in grads))
    if norm > max_norm:
        scale = max_norm / norm
        for g in grads:
            g *= scale
    return norm


# ---------------------------------------------------------------------------
# metrics


@dataclass(frozen=True)
class Metrics:
    rmse: float
    mae: float
    r2: float

    def to_dict(self) -> dict:
        return asdict(self)


def compute_metrics(pred, target) -> Metrics:
    """Pooled over every entry.  R^2 uses the mean of ``target``."""
    pred = np.asarray(pred, dtype=np.float64).ravel()
    target = np.asarray(target, dtype=np.float64).ravel()
    if pred.shape != target.shape or pred.size == 0:
        raise ShapeError(f"metrics: prediction {pred.shape} vs target {target.shape}")
    err = pred - target
    ss_res = float((err * err).sum())
    ss_tot = float(((target - target.mean()) ** 2).sum())
    if ss_tot == 0.0:
        raise DataError("R^2 is undefined: targets have zero variance")
    return Metrics(
        rmse=math.sqrt(ss_res / err.size),
        mae=float(np.abs(err).mean()),
        r2=1.0 - ss_res / ss_tot,
    )


def predict_dataset(model: Forecaster, dataset: WindowedDataset, batch_size: int = 1024) -> np.ndarray:
    """Eval-mode predictions in original target units."""
    if len(dataset) == 0:
        raise ContractError("cannot evaluate on an empty dataset")
    return dataset.targets_original_units(model.predict(dataset.X, batch_size))


def evaluate(model: Forecaster, dataset: WindowedDataset) -> Metrics:
    """Eval-mode metrics in original target units, pooled over windows and steps."""
    pred = predict_dataset(model, dataset)
    return compute_metrics(pred, dataset.targets_original_units())


# ---------------------------------------------------------------------------
# training loop


@dataclass
class TrainingLog:
    records: list[dict] = field(default_factory=list)

    def to_jsonl(self, with_seconds: bool = True) -> str:
        lines = []
        for r in self.records:
            rec = dict(r) if with_seconds else {k: v for k, v in r.items() if k != "seconds"}
            lines.append(json.dumps(rec, sort_keys=False))
        return "\n".join(lines) + ("\n" if lines else "")

    @property
    def train_losses(self) -> list[float]:
        return [r["train_loss"] for r in self.records]


def fit(
    model: Forecaster,
    train_set: WindowedDataset,
    val_set: WindowedDataset | None,
    cfg: TrainConfig,
    on_epoch: Callable[[dict], None] | None = None,
) -> TrainingLog:
    """Train for exactly ``cfg.epochs`` epochs; the final weights are kept.

    Each epoch shuffles (own seeded generator), runs train-mode forward
    passes per mini-batch (the last partial batch is kept), backpropagates
    the batch-mean MSE and applies Adam.
    """
    if len(train_set) == 0:
        raise ContractError("training set is empty")
    if val_set is not None and len(val_set) == 0:
        raise ContractError("validation set is empty")
    params = model.param_tensors()
    state = AdamState.init(params)
    shuffle_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0x5EED]))
    n = len(train_set)
    log = TrainingLog()
    for epoch in range(1, cfg.epochs + 1):
        started = time.perf_counter()
        order = shuffle_rng.permutation(n) if cfg.shuffle else np.arange(n)
        total = 0.0
        for lo in range(0, n, cfg.batch_size):
            idx = order[lo:lo + cfg.batch_size]
            try:
                with ad.Graph() as graph:
                    y_hat, _ = model.forward(train_set.X[idx], mode="train")
                    loss = mse_loss(y_hat, train_set.y[idx])
            except DivergedError as exc:
                raise DivergedError(f"training diverged in epoch {epoch}: {exc}") from None
            value = loss.item()
            if not math.isfinite(value):
                raise DivergedError(f"training diverged in epoch {epoch}: loss is {value}")
            graph.backward(loss)
            grads = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in params]
            if cfg.clip_norm is not None:
                clip_global_norm(grads, cfg.clip_norm)
            adam_step(state, params, grads, cfg)
            model.zero_grad()
            total += value * len(idx)
        record = {"epoch": epoch, "train_loss": total / n}
        if val_set is not None:
            m = evaluate(model, val_set)
            record.update(val_rmse=m.rmse, val_mae=m.mae, val_r2=m.r2)
        record["seconds"] = time.perf_counter() - started
        log.records.append(record)
        if on_epoch is not None:
            on_epoch(record)
    return log
