"""Loss, MPJPE, Adam with step decay, and the mini-batch training loop."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import autodiff as ad
from ._fileio import atomic_write
from .network import ModelConfig, SPGSNParams, save_checkpoint, spgsn_forward

logger = logging.getLogger(__name__)


class NonFiniteGradientError(FloatingPointError):
    """Raised by :meth:`Adam.step` when a gradient holds NaN or Inf."""


def motion_loss(pred: ad.Tensor, target) -> ad.Tensor:
    """Mean over samples of the squared error norm, divided by ``dT * M``.

    ``pred`` and ``target`` are ``(N, dT, M, 3)``.
    """
    target = ad.as_tensor(target)
    if pred.shape != target.shape or pred.ndim != 4:
        raise ValueError(f"loss needs matching (N, dT, M, 3) arrays, got {pred.shape} and {target.shape}")
    n, dt, m, _ = pred.shape
    diff = ad.sub(pred, target)
    return ad.scale(ad.sum_of_squares(diff), 1.0 / (n * dt * m))


def mpjpe(pred, target, at_frame: int | None = None) -> float:
    """Mean per-joint position error over samples and joints.

    ``at_frame`` is a 1-based index into the prediction horizon; ``None``
    averages over every frame.
    """
    pred, target = np.asarray(pred, dtype=np.float64), np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {target.shape}")
    if pred.ndim == 3:
        pred, target = pred[None], target[None]
    dist = np.linalg.norm(pred - target, axis=-1)  # (N, dT, M)
    if at_frame is None:
        return float(dist.mean())
    if not 1 <= at_frame <= dist.shape[1]:
        raise ValueError(f"frame {at_frame} outside horizon 1..{dist.shape[1]}")
    return float(dist[:, at_frame - 1].mean())


@dataclass
class Schedule:
    base_lr: float = 0.001
    decay: float = 0.96
    decay_every: int = 2

    def lr(self, epoch: int) -> float:
        return self.base_lr * self.decay ** (epoch // self.decay_every)


class Adam:
    def __init__(self, params: Sequence[ad.Tensor], beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.step_count = 0
        self.m = [np.zeros(p.shape) for p in self.params]
        self.v = [np.zeros(p.shape) for p in self.params]

    def step(self, lr: float) -> None:
        grads = [np.zeros(p.shape) if p.grad is None else p.grad for p in self.params]
        bad = [p.name or str(i) for i, (p, g) in enumerate(zip(self.params, grads)) if not np.isfinite(g).all()]
        if bad:
            raise NonFiniteGradientError(f"non-finite gradient in {len(bad)} parameter(s): {', '.join(bad[:5])}")
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1 ** t
        bc2 = 1.0 - self.beta2 ** t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


def adam_step(params: Sequence[ad.Tensor], grads: Sequence[np.ndarray], state: Adam, lr: float) -> None:
    """Functional form: load ``grads`` into ``params`` and apply one update."""
    for p, g in zip(params, grads):
        p.grad = np.asarray(g, dtype=np.float64)
    state.step(lr)


# -- data ------------------------------------------------------------------
@dataclass
class MotionDataset:
    """Paired histories ``(N, T, M, 3)`` and futures ``(N, dT, M, 3)``."""

    history: np.ndarray
    future: np.ndarray
    clip_ids: np.ndarray = field(default=None)

    def __post_init__(self):
        self.history = np.asarray(self.history, dtype=np.float64)
        self.future = np.asarray(self.future, dtype=np.float64)
        if self.history.shape[0] != self.future.shape[0]:
            raise ValueError("history and future counts differ")
        if self.clip_ids is None:
            self.clip_ids = np.arange(len(self.history))
        self.clip_ids = np.asarray(self.clip_ids)

    def __len__(self) -> int:
        return len(self.history)

    def subset(self, mask) -> "MotionDataset":
        return MotionDataset(self.history[mask], self.future[mask], self.clip_ids[mask])

    def split(self, train_fraction: float = 0.8) -> tuple["MotionDataset", "MotionDataset"]:
        """Deterministic split by clip index: the first clips train, the rest validate."""
        clips = np.unique(self.clip_ids)
        n_train = int(round(train_fraction * len(clips)))
        train_clips = clips[:n_train]
        mask = np.isin(self.clip_ids, train_clips)
        return self.subset(mask), self.subset(~mask)


def check_dataset(data: MotionDataset, cfg: ModelConfig) -> None:
    from .parts import ConfigError

    if len(data) == 0:
        raise ConfigError("empty dataset")
    if data.history.shape[1:] != (cfg.history, cfg.joints, 3):
        raise ConfigError(f"histories {data.history.shape[1:]} do not match config ({cfg.history}, {cfg.joints}, 3)")
    if data.future.shape[1:] != (cfg.horizon, cfg.joints, 3):
        raise ConfigError(f"futures {data.future.shape[1:]} do not match config ({cfg.horizon}, {cfg.joints}, 3)")


def batches(n: int, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]


def predict_batched(history, params: SPGSNParams, cfg: ModelConfig, batch_size: int = 256) -> np.ndarray:
    history = np.asarray(history, dtype=np.float64)
    out = [spgsn_forward(history[i:i + batch_size], params, cfg).data for i in range(0, len(history), batch_size)]
    return np.concatenate(out, axis=0)


def evaluate(params: SPGSNParams, cfg: ModelConfig, data: MotionDataset, horizons: Sequence[int]) -> dict[int, float]:
    """MPJPE per horizon frame, one full-sequence prediction per sample."""
    for h in horizons:
        if not 1 <= h <= cfg.horizon:
            raise ValueError(f"horizon {h} outside 1..{cfg.horizon}")
    pred = predict_batched(data.history, params, cfg)
    return {int(h): mpjpe(pred, data.future, h) for h in horizons}


def zero_velocity(history) -> np.ndarray:
    """Last observed pose, as a per-sample ``(N, 1, M, 3)`` array."""
    return np.asarray(history, dtype=np.float64)[:, -1:]


def zero_velocity_mpjpe(data: MotionDataset, horizons: Sequence[int]) -> dict[int, float]:
    hold = np.repeat(zero_velocity(data.history), data.future.shape[1], axis=1)
    return {int(h): mpjpe(hold, data.future, h) for h in horizons}


@dataclass
class TrainConfig:
    epochs: int = 50
    seed: int = 0
    batch_size: int = 32
    lr: float = 0.001
    lr_decay: float = 0.96
    decay_every: int = 2
    stride: int = 1
    train_fraction: float = 0.8

    @property
    def schedule(self) -> Schedule:
        return Schedule(self.lr, self.lr_decay, self.decay_every)


@dataclass
class TrainResult:
    params: SPGSNParams
    log: list[dict]


def _log_line(record: dict) -> str:
    return json.dumps(record, sort_keys=False)


def train(
    train_data: MotionDataset,
    cfg: ModelConfig,
    tcfg: TrainConfig,
    val_data: MotionDataset | None = None,
    params: SPGSNParams | None = None,
    checkpoint: str | None = None,
    log_path: str | None = None,
) -> TrainResult:
    """End-to-end Adam training; one JSON log record per epoch."""
    check_dataset(train_data, cfg)
    if val_data is not None and len(val_data):
        check_dataset(val_data, cfg)
    if params is None:
        params = SPGSNParams.init(cfg, seed=tcfg.seed)
    plist = params.parameters()
    opt = Adam(plist)
    rng = np.random.default_rng(tcfg.seed)
    frames = list(range(1, cfg.horizon + 1))
    log: list[dict] = []
    for epoch in range(tcfg.epochs):
        lr = tcfg.schedule.lr(epoch)
        total, count = 0.0, 0
        for idx in batches(len(train_data), tcfg.batch_size, rng):
            params.zero_grad()
            pred = spgsn_forward(train_data.history[idx], params, cfg)
            loss = motion_loss(pred, train_data.future[idx])
            loss.backward()
            opt.step(lr)
            total += loss.item() * len(idx)
            count += len(idx)
        record = {"epoch": epoch, "lr": lr, "train_loss": total / count}
        if val_data is not None and len(val_data):
            record["val_mpjpe"] = {str(k): v for k, v in evaluate(params, cfg, val_data, frames).items()}
        log.append(record)
        logger.info("epoch %d lr %.6g loss %.6g", epoch, lr, record["train_loss"])
    if log_path is not None:
        atomic_write(log_path, "".join(_log_line(r) + "\n" for r in log))
    if checkpoint is not None:
        save_checkpoint(checkpoint, params, cfg, extra={"train": tcfg.__dict__})
    return TrainResult(params, log)
