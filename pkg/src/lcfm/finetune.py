"""Supervised fine-tuning: the self-supervised objective plus a classification
term, for binary anomaly detection or multi-class motion prediction."""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .dataio import LightCurve, Splits, split_dataset
from .errors import EmptyDataset, UnlabelledData, VocabMismatch
from .metrics import MetricsReport, build_report
from .model import ModelParams, add_classifier, logits_to_probs, predict
from .optim import AdamState, PlateauScheduler
from .ssl import (LossBreakdown, TrainConfig, _weighted_mean, check_finite, evaluate_ssl,
                  loss_class_binary, loss_class_categorical, optimise, ssl_batch, streams)

log = logging.getLogger(__name__)


@dataclass
class FinetuneConfig:
    lr: float = 1e-4
    batch: int = 32
    max_epochs: int = 100
    mode: str = "motion"               # motion halves lr on a validation plateau
    sched_factor: float = 0.5
    sched_patience: int = 10
    class_weight: float = 1.0
    alpha: float = 0.001
    clip: float = 0.5
    mask_fraction: float = 0.25
    forecast_fraction: float = 0.25
    ratios: tuple[float, float, float] = (0.7, 0.15, 0.15)

    def ssl_config(self) -> TrainConfig:
        return TrainConfig(lr=self.lr, batch=self.batch, alpha=self.alpha, clip=self.clip,
                           mask_fraction=self.mask_fraction,
                           forecast_fraction=self.forecast_fraction)


@dataclass
class FinetuneEpoch:
    epoch: int
    train: LossBreakdown
    train_class: float
    train_total: float
    val_total: float
    val_class: float
    report: MetricsReport
    lr: float


@dataclass
class FinetuneResult:
    params: ModelParams
    history: list[FinetuneEpoch]
    splits: Splits
    best_epoch: int
    test_report: MetricsReport | None = None
    classes: list[str] = field(default_factory=list)


def _round_quotas(sizes: Sequence[int], counts: Sequence[int], rng: np.random.Generator
                  ) -> np.ndarray:
    """Integer batch-by-class table with each cell the floor or ceiling of
    ``size_j * count_k / N`` and exact row and column sums.

    Such a rounding always exists for a table with integer margins; it is
    found as a max flow where every fractional cell may take one extra item.
    """
    sizes, counts = np.asarray(sizes), np.asarray(counts)
    n = int(counts.sum())
    prod = np.outer(sizes, counts)
    table = prod // n
    frac = prod % n != 0
    row_need = sizes - table.sum(axis=1)
    col_need = counts - table.sum(axis=0)
    extra = np.zeros_like(table)
    for j in rng.permutation(len(sizes)):
        while row_need[j] > 0:
            # breadth-first search for an augmenting path from row j to a
            # column that still needs items, alternating along used cells
            prev_col: dict[int, int] = {}
            prev_row: dict[int, int] = {}
            frontier, seen_rows, found = [j], {j}, None
            while frontier and found is None:
                nxt = []
                for r in frontier:
                    for k in np.flatnonzero(frac[r] & (extra[r] == 0)):
                        k = int(k)
                        if k in prev_col:
                            continue
                        prev_col[k] = r
                        if col_need[k] > 0:
                            found = k
                            break
                        for r2 in np.flatnonzero(extra[:, k] == 1):
                            r2 = int(r2)
                            if r2 not in seen_rows:
                                seen_rows.add(r2)
                                prev_row[r2] = k
                                nxt.append(r2)
                    if found is not None:
                        break
                frontier = nxt
            if found is None:
                raise RuntimeError("no balanced batch table")  # cannot happen for integer margins
            col_need[found] -= 1
            row_need[j] -= 1
            k = found
            while True:
                r = prev_col[k]
                extra[r, k] = 1
                if r == j:
                    break
                k = prev_row[r]
                extra[r, k] = 0
    return table + extra


def stratified_batches(labels: Sequence[int], batch: int, rng: np.random.Generator
                       ) -> list[np.ndarray]:
    """Shuffled mini-batches whose class counts each sit within one sample
    of the batch's share of the global class histogram."""
    labels = np.asarray(labels)
    n = len(labels)
    sizes = [min(batch, n - s) for s in range(0, n, batch)]
    classes = np.unique(labels)
    pools = [list(np.flatnonzero(labels == k)[rng.permutation(int((labels == k).sum()))])
             for k in classes]
    table = _round_quotas(sizes, [len(p) for p in pools], rng)
    batches = []
    for j in range(len(sizes)):
        idx = []
        for pool, take in zip(pools, table[j]):
            idx += pool[:take]
            del pool[:take]
        batches.append(np.asarray(idx)[rng.permutation(len(idx))])
    return batches


def class_loss(params: ModelParams, logits, labels: np.ndarray):
    """Binary or categorical cross-entropy; accepts a Tensor or an array."""
    labels = np.asarray(labels, dtype=int)
    if params.config.binary:
        y = labels.astype(np.float64)
        if isinstance(logits, ad.Tensor):
            return loss_class_binary(y, logits[:, 0].sigmoid())
        return loss_class_binary(y, logits_to_probs(params, logits)[:, 1])
    onehot = np.eye(params.config.n_classes)[labels]
    if isinstance(logits, ad.Tensor):
        return loss_class_categorical(onehot, ad.softmax(logits))
    return loss_class_categorical(onehot, logits_to_probs(params, logits))


@dataclass
class StepResult:
    total: float
    parts: LossBreakdown
    cls: float


def finetune_step(params: ModelParams, values: np.ndarray, labels: np.ndarray,
                  cfg: FinetuneConfig, state: AdamState, lr: float,
                  mask_rng: np.random.Generator, eps_rng: np.random.Generator) -> StepResult:
    """One optimisation step on L_total + class_weight * L_class.  The
    classifier reads the sampled z of the unmasked pass."""
    res = ssl_batch(params, values, cfg.ssl_config(), mask_rng, eps_rng)
    loss = res.total
    cls_value = 0.0
    if cfg.class_weight != 0:
        B = len(values)
        cls = class_loss(params, res.full_logits[:B], labels)
        cls_value = cls.item()
        loss = loss + cls * cfg.class_weight
    total = loss.item()
    check_finite(total, "fine-tune step")
    optimise(params, loss, state, lr, cfg.clip)
    return StepResult(total, res.parts, cls_value)


def evaluate(params: ModelParams, curves: Sequence[LightCurve], cfg: FinetuneConfig, seed: int
             ) -> tuple[float, float, MetricsReport]:
    """Eval-mode total loss (SSL plus weighted class term), class loss and metrics."""
    values = np.stack([c.values for c in curves])
    labels = np.array([c.label for c in curves])
    ssl_total = evaluate_ssl(params, values, cfg.ssl_config(), seed).total
    probs = predict(params, values)["probs"]
    if params.config.binary:
        cls = loss_class_binary(labels.astype(np.float64), probs[:, 1])
    else:
        cls = loss_class_categorical(np.eye(probs.shape[1])[labels], probs)
    report = build_report(labels, probs, params.classes)
    return ssl_total + cfg.class_weight * cls, cls, report


def _check_labels(curves: Sequence[LightCurve], classes: Sequence[str]) -> None:
    if not curves:
        raise EmptyDataset("fine-tuning needs labelled curves")
    missing = [c.id for c in curves if c.label is None]
    if missing:
        raise UnlabelledData(f"{len(missing)} curves lack labels, e.g. {missing[0]}")
    bad = [c.id for c in curves if not 0 <= c.label < len(classes)]
    if bad:
        raise VocabMismatch(f"label index outside the {len(classes)}-class vocabulary: {bad[0]}")


def prepare(params: ModelParams, classes: Sequence[str], seed: int = 0) -> ModelParams:
    """Attach a fresh head, or reuse the existing one if its vocabulary matches."""
    classes = list(classes)
    if params.has_head:
        if list(params.classes) != classes:
            raise VocabMismatch(f"checkpoint classes {params.classes} differ from {classes}")
        return params.copy()
    return add_classifier(params, classes, seed)


def finetune(params: ModelParams, curves: Sequence[LightCurve], classes: Sequence[str],
             cfg: FinetuneConfig = FinetuneConfig(), seed: int = 0) -> FinetuneResult:
    """Fine-tune a pre-trained model on a stratified 70/15/15 split.

    Returns the parameters of the best epoch (highest validation accuracy,
    ties to the lower validation loss) and a per-epoch history with metrics.
    """
    _check_labels(curves, classes)
    params = prepare(params, classes, seed)
    splits = split_dataset(curves, cfg.ratios, seed, stratify=True)
    train = [curves[i] for i in splits.train]
    val = [curves[i] for i in splits.val] or train
    values = np.stack([c.values for c in train])
    labels = np.array([c.label for c in train])

    shuffle_rng, mask_rng, eps_rng = streams(seed)
    state = AdamState()
    sched = PlateauScheduler(cfg.lr, cfg.sched_factor, cfg.sched_patience)
    history: list[FinetuneEpoch] = []
    best_key, best_arrays, best_epoch = None, None, -1

    for epoch in range(cfg.max_epochs):
        lr = sched.lr
        parts, cls_sum = [], 0.0
        for idx in stratified_batches(labels, cfg.batch, shuffle_rng):
            step = finetune_step(params, values[idx], labels[idx], cfg, state, lr,
                                 mask_rng, eps_rng)
            parts.append((len(idx), step.parts))
            cls_sum += len(idx) * step.cls
        n = sum(k for k, _ in parts)
        train_parts = _weighted_mean(parts, cfg.alpha)
        val_total, val_cls, report = evaluate(params, val, cfg, seed)
        check_finite(val_total, f"fine-tune epoch {epoch} validation")
        train_cls = cls_sum / n
        history.append(FinetuneEpoch(epoch, train_parts, train_cls,
                                     train_parts.total + cfg.class_weight * train_cls,
                                     val_total, val_cls, report, lr))
        log.info("epoch %d train %.5f val %.5f acc %.4f lr %.1e", epoch, train_parts.total,
                 val_total, report.accuracy, lr)
        key = (-report.accuracy, val_total)
        if best_key is None or key < best_key:
            best_key, best_epoch = key, epoch
            best_arrays = {k: v.copy() for k, v in params.arrays().items()}
        if cfg.mode == "motion":
            sched.step(val_total)

    for k, arr in best_arrays.items():
        params[k].data = arr
    test_report = None
    if splits.test:
        test = [curves[i] for i in splits.test]
        _, _, test_report = evaluate(params, test, cfg, seed)
    return FinetuneResult(params, history, splits, best_epoch, test_report, list(classes))


FINETUNE_COLUMNS = ("epoch", "train_total", "train_class", "val_total", "val_class",
                    "val_accuracy", "val_roc_auc", "recon", "mask", "forecast", "kl", "lr")


def finetune_history_csv(history: Sequence[FinetuneEpoch]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(FINETUNE_COLUMNS)
    for h in history:
        t = h.train
        auc = "" if h.report.roc_auc is None else repr(float(h.report.roc_auc))
        w.writerow([h.epoch, repr(h.train_total), repr(h.train_class), repr(h.val_total),
                    repr(h.val_class), repr(h.report.accuracy), auc, repr(t.recon), repr(t.mask),
                    repr(t.forecast), repr(t.kl), repr(h.lr)])
    return buf.getvalue()
