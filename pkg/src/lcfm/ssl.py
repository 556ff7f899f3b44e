"""Self-supervised objective and the pre-training loop.

Each batch is pushed through the shared encoder three times (whole curve,
curve with a random block hidden, curve with its tail hidden).  The three
copies are stacked into one batch, so a single graph carries all four loss
terms::

    total = recon + alpha * kl + mask + forecast
"""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import asdict, dataclass, field, fields
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .encoding import SEQ_LEN, EncodingConfig, build_input
from .errors import (BadFraction, BadMaskKind, EmptyDataset, EmptyMask, NonFiniteLoss,
                     ShapeMismatch)
from .model import ModelConfig, ModelParams, init_model, run
from .optim import AdamState, PlateauScheduler, adam_step, clip_global_norm, early_stop

log = logging.getLogger(__name__)

PROB_FLOOR = 1e-12


@dataclass
class TrainConfig:
    lr: float = 1e-3
    batch: int = 32
    alpha: float = 0.001
    clip: float = 0.5
    sched_factor: float = 0.5
    sched_patience: int = 5
    early_patience: int = 50
    max_epochs: int = 200
    mask_fraction: float = 0.25
    forecast_fraction: float = 0.25
    val_fraction: float = 0.1


@dataclass
class MaskSpec:
    kind: str
    fraction: float
    indices: np.ndarray

    def __post_init__(self):
        self.indices = np.asarray(self.indices, dtype=int)

    def as_bool(self, n: int = SEQ_LEN) -> np.ndarray:
        m = np.zeros(n, dtype=bool)
        m[self.indices] = True
        return m


@dataclass
class LossBreakdown:
    total: float
    recon: float
    mask: float
    forecast: float
    kl: float
    alpha: float = 0.001


@dataclass
class EpochRecord:
    epoch: int
    train: LossBreakdown
    val_total: float
    lr: float


# -- masks ---------------------------------------------------------------------------

def block_length(fraction: float, n: int = SEQ_LEN) -> int:
    if not 0.0 < fraction < 1.0:
        raise BadFraction(f"mask fraction must lie in (0, 1), got {fraction}")
    return int(np.floor(fraction * n + 0.5))


def forecast_mask(fraction: float = 0.25, n: int = SEQ_LEN) -> MaskSpec:
    k = block_length(fraction, n)
    return MaskSpec("forecast_tail", fraction, np.arange(n - k, n))


def mask_random(curve, fraction: float = 0.25, rng: np.random.Generator | None = None
                ) -> tuple[np.ndarray, MaskSpec]:
    """Zero one contiguous block of ``round(fraction * 128)`` samples."""
    values = np.array(getattr(curve, "values", curve), dtype=np.float64)
    n = values.shape[-1]
    k = block_length(fraction, n)
    rng = rng if rng is not None else np.random.default_rng()
    start = int(rng.integers(0, n - k + 1))
    spec = MaskSpec("random_block", fraction, np.arange(start, start + k))
    values[spec.indices] = 0.0
    return values, spec


def _random_block_masks(n_rows: int, fraction: float, rng: np.random.Generator) -> np.ndarray:
    k = block_length(fraction)
    starts = rng.integers(0, SEQ_LEN - k + 1, size=n_rows)
    cols = np.arange(SEQ_LEN)
    return (cols >= starts[:, None]) & (cols < starts[:, None] + k)


# -- losses --------------------------------------------------------------------------

def _check_pair(x, xhat):
    xs = xhat.shape if isinstance(xhat, Tensor) else np.shape(xhat)
    if np.shape(x) != xs:
        raise ShapeMismatch(f"shapes differ: {np.shape(x)} vs {xs}")


def loss_recon(x, xhat):
    """Mean squared error over every sample.  Tensor in, Tensor out."""
    _check_pair(x, xhat)
    if isinstance(xhat, Tensor):
        return (xhat - np.asarray(x)).square().mean()
    d = np.asarray(xhat, dtype=np.float64) - np.asarray(x, dtype=np.float64)
    return float(np.mean(d * d))


def loss_masked(x, xhat, mask: MaskSpec):
    """Mean squared error restricted to ``mask.indices``."""
    _check_pair(x, xhat)
    if len(mask.indices) == 0:
        raise EmptyMask("mask selects no samples")
    idx = mask.indices
    if isinstance(xhat, Tensor):
        return (xhat[..., idx] - np.asarray(x)[..., idx]).square().mean()
    d = np.asarray(xhat, dtype=np.float64)[..., idx] - np.asarray(x, dtype=np.float64)[..., idx]
    return float(np.mean(d * d))


def loss_forecast(x, xhat, mask: MaskSpec):
    if mask.kind != "forecast_tail":
        raise BadMaskKind(f"forecast loss needs a forecast_tail mask, got {mask.kind}")
    return loss_masked(x, xhat, mask)


def loss_kl(mu, logvar):
    """``-0.5 * sum(1 + logvar - mu^2 - exp(logvar))`` over the last axis.

    Evaluated as ``0.5 * sum(mu^2 + (expm1(logvar) - logvar))``: both terms
    are non-negative after rounding, so the result never dips below zero."""
    if isinstance(mu, Tensor) or isinstance(logvar, Tensor):
        mu, logvar = ad.as_tensor(mu), ad.as_tensor(logvar)
        return (mu.square() + (logvar.expm1() - logvar)).sum(axis=-1) * 0.5
    mu = np.asarray(mu, dtype=np.float64)
    logvar = np.asarray(logvar, dtype=np.float64)
    return 0.5 * np.sum(mu * mu + (np.expm1(logvar) - logvar), axis=-1)


def loss_class_binary(y, yhat):
    """Binary cross-entropy with probabilities clamped away from 0 and 1."""
    y = np.asarray(y, dtype=np.float64)
    if isinstance(yhat, Tensor):
        if yhat.shape != y.shape:
            raise ShapeMismatch(f"labels {y.shape} vs probabilities {yhat.shape}")
        p = yhat.clamp(PROB_FLOOR, 1.0 - PROB_FLOOR)
        return -((p.log() * y) + ((1.0 - p).log() * (1.0 - y))).mean()
    yhat = np.asarray(yhat, dtype=np.float64)
    if yhat.shape != y.shape:
        raise ShapeMismatch(f"labels {y.shape} vs probabilities {yhat.shape}")
    p = np.clip(yhat, PROB_FLOOR, 1.0 - PROB_FLOOR)
    return float(-np.mean(y * np.log(p) + (1.0 - y) * np.log(1.0 - p)))


def loss_class_categorical(y_onehot, yhat):
    """Mean negative log-probability of the true class."""
    y = np.asarray(y_onehot, dtype=np.float64)
    if isinstance(yhat, Tensor):
        if yhat.shape != y.shape:
            raise ShapeMismatch(f"labels {y.shape} vs probabilities {yhat.shape}")
        p = yhat.clamp(PROB_FLOOR, 1.0)
        return -(p.log() * y).sum() * (1.0 / y.shape[0])
    yhat = np.asarray(yhat, dtype=np.float64)
    if yhat.shape != y.shape:
        raise ShapeMismatch(f"labels {y.shape} vs probabilities {yhat.shape}")
    p = np.clip(yhat, PROB_FLOOR, 1.0)
    return float(-np.sum(y * np.log(p)) / y.shape[0])


# -- batched objective ---------------------------------------------------------------

@dataclass
class BatchResult:
    total: Tensor
    parts: LossBreakdown
    full_logits: Tensor | None = None


def ssl_batch(params: ModelParams, values: np.ndarray, cfg: TrainConfig,
              mask_rng: np.random.Generator, eps_rng: np.random.Generator | None) -> BatchResult:
    """Four-term loss for one batch; ``eps_rng=None`` runs in eval mode."""
    values = np.asarray(values, dtype=np.float64)
    B = len(values)
    block = _random_block_masks(B, cfg.mask_fraction, mask_rng)
    tail = forecast_mask(cfg.forecast_fraction).as_bool()
    masked = np.where(block, 0.0, values)
    truncated = np.where(tail, 0.0, values)
    x = build_input(np.concatenate([values, masked, truncated]), params.enc)
    eps = None if eps_rng is None else eps_rng.standard_normal((3 * B, params.config.z_dim))
    out = run(params, x, eps)

    target = np.concatenate([values, values, values])
    sq = (out.recon - target).square()
    zeros = np.zeros((B, SEQ_LEN))
    w_recon = np.concatenate([np.full((B, SEQ_LEN), 1.0 / (B * SEQ_LEN)), zeros, zeros])
    w_mask = np.concatenate([zeros, block / (B * block.sum(axis=1, keepdims=True)), zeros])
    w_fc = np.concatenate([zeros, zeros, np.broadcast_to(tail / (B * tail.sum()), (B, SEQ_LEN))])
    recon = (sq * w_recon).sum()
    mask = (sq * w_mask).sum()
    forecast = (sq * w_fc).sum()
    w_kl = np.concatenate([np.full(B, 1.0 / B), np.zeros(2 * B)])
    kl = (loss_kl(out.mu, out.logvar) * w_kl).sum()
    total = recon + kl * cfg.alpha + mask + forecast
    parts = LossBreakdown(total.item(), recon.item(), mask.item(), forecast.item(), kl.item(),
                          cfg.alpha)
    logits = None
    if out.logits is not None:
        logits = out.logits
    return BatchResult(total, parts, logits)


def check_finite(value: float, where: str) -> None:
    if not np.isfinite(value):
        raise NonFiniteLoss(f"non-finite loss ({value}) at {where}")


def optimise(params: ModelParams, loss: Tensor, state: AdamState, lr: float, clip: float) -> float:
    """Backprop ``loss``, clip, take an Adam step.  Returns the clip scale."""
    params.zero_grad()
    loss.backward()
    scale = clip_global_norm(params, clip)
    adam_step(params, state, lr)
    params.zero_grad()
    return scale


def _weighted_mean(parts: list[tuple[int, LossBreakdown]], alpha: float) -> LossBreakdown:
    n = sum(k for k, _ in parts)
    avg = {f: sum(k * getattr(p, f) for k, p in parts) / n
           for f in ("recon", "mask", "forecast", "kl")}
    total = avg["recon"] + alpha * avg["kl"] + avg["mask"] + avg["forecast"]
    return LossBreakdown(total, avg["recon"], avg["mask"], avg["forecast"], avg["kl"], alpha)


def evaluate_ssl(params: ModelParams, values: np.ndarray, cfg: TrainConfig, seed: int,
                 batch: int = 256) -> LossBreakdown:
    """Eval-mode (eps = 0) loss with masks drawn from a fixed seed."""
    rng = np.random.default_rng([seed, 0x5EED])
    parts = []
    for s in range(0, len(values), batch):
        chunk = values[s:s + batch]
        parts.append((len(chunk), ssl_batch(params, chunk, cfg, rng, None).parts))
    return _weighted_mean(parts, cfg.alpha)


def _as_values(dataset) -> np.ndarray:
    if isinstance(dataset, np.ndarray):
        return np.atleast_2d(dataset).astype(np.float64)
    return np.stack([np.asarray(getattr(c, "values", c), dtype=np.float64) for c in dataset])


def streams(seed: int) -> tuple[np.random.Generator, np.random.Generator, np.random.Generator]:
    """Independent (shuffle, mask, eps) generators derived from one seed."""
    return tuple(np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(3))


def pretrain(dataset, cfg: TrainConfig = TrainConfig(), seed: int = 0,
             model: ModelConfig | ModelParams = ModelConfig(),
             enc: EncodingConfig = EncodingConfig()) -> tuple[ModelParams, list[EpochRecord]]:
    """Self-supervised training; returns the best-validation parameters and
    the per-epoch history."""
    values = _as_values(dataset) if len(dataset) else np.empty((0, SEQ_LEN))
    if len(values) < 2:
        raise EmptyDataset("pre-training needs at least two curves")
    params = model.copy() if isinstance(model, ModelParams) else init_model(model, seed, enc)

    split_rng = np.random.default_rng([seed, 1])
    order = split_rng.permutation(len(values))
    n_val = int(round(cfg.val_fraction * len(values))) if cfg.val_fraction > 0 else 0
    n_val = min(max(n_val, 1 if cfg.val_fraction > 0 else 0), len(values) - 1)
    val_idx, train_idx = np.sort(order[:n_val]), np.sort(order[n_val:])
    train_vals = values[train_idx]
    val_vals = values[val_idx] if n_val else None

    shuffle_rng, mask_rng, eps_rng = streams(seed)
    state = AdamState()
    sched = PlateauScheduler(cfg.lr, cfg.sched_factor, cfg.sched_patience)
    history: list[EpochRecord] = []
    val_hist: list[float] = []
    best_val, best_arrays = np.inf, None

    for epoch in range(cfg.max_epochs):
        lr = sched.lr
        perm = shuffle_rng.permutation(len(train_vals))
        parts = []
        for s in range(0, len(perm), cfg.batch):
            batch = train_vals[perm[s:s + cfg.batch]]
            res = ssl_batch(params, batch, cfg, mask_rng, eps_rng)
            check_finite(res.parts.total, f"epoch {epoch}")
            optimise(params, res.total, state, lr, cfg.clip)
            parts.append((len(batch), res.parts))
        train = _weighted_mean(parts, cfg.alpha)
        # without a held-out split the monitor is the deterministic eval-mode
        # loss on the training curves; the running train mean is too noisy
        monitor = val_vals if val_vals is not None else train_vals
        val_total = evaluate_ssl(params, monitor, cfg, seed).total
        check_finite(val_total, f"epoch {epoch} validation")
        history.append(EpochRecord(epoch, train, val_total, lr))
        val_hist.append(val_total)
        log.info("epoch %d train %.6f val %.6f lr %.2e", epoch, train.total, val_total, lr)
        if val_total < best_val:
            best_val = val_total
            best_arrays = {k: v.copy() for k, v in params.arrays().items()}
        sched.step(val_total)
        if early_stop(val_hist, cfg.early_patience):
            break

    for k, arr in best_arrays.items():
        params[k].data = arr
    return params, history


HISTORY_COLUMNS = ("epoch", "train_total", "val_total", "recon", "mask", "forecast", "kl", "lr")


def history_csv(history: Sequence[EpochRecord]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(HISTORY_COLUMNS)
    for r in history:
        t = r.train
        w.writerow([r.epoch] + [repr(float(v)) for v in
                                (t.total, r.val_total, t.recon, t.mask, t.forecast, t.kl, r.lr)])
    return buf.getvalue()


def config_fields(cfg) -> dict:
    return {f.name: getattr(cfg, f.name) for f in fields(cfg)}
