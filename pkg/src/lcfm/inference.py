"""Reconstruction-error anomaly ranking and tail forecasting."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .dataio import LightCurve
from .encoding import build_input
from .errors import EmptySet
from .model import ModelParams, logits_to_probs, run
from .ssl import forecast_mask, loss_forecast, loss_recon


@dataclass
class AnomalyRecord:
    id: str
    error: float
    prob_anomaly: float | None = None
    meta: dict = field(default_factory=dict)


@dataclass
class Ranking:
    ranked: list[AnomalyRecord]
    top: list[AnomalyRecord]
    bottom: list[AnomalyRecord]


def _score(params: ModelParams, curve):
    values = np.asarray(getattr(curve, "values", curve), dtype=np.float64)
    out = run(params, build_input(values, params.enc))
    return loss_recon(values, out.recon.data), out.logits


def recon_error(params: ModelParams, curve) -> float:
    """Eval-mode reconstruction MSE against the input."""
    return _score(params, curve)[0]


def _anomaly_column(params: ModelParams) -> int | None:
    if not params.has_head or params.classes is None:
        return None
    return params.classes.index("ANOMALY") if "ANOMALY" in params.classes else None


def score_curves(params: ModelParams, curves: Sequence[LightCurve]) -> list[AnomalyRecord]:
    """One record per curve, in input order.

    Curves are scored one at a time so every error is exactly
    :func:`recon_error` (batched matmuls round differently).
    """
    col = _anomaly_column(params)
    records = []
    for c in curves:
        err, logits = _score(params, c)
        prob = float(logits_to_probs(params, logits.data)[col]) if col is not None else None
        records.append(AnomalyRecord(c.id, err, prob, dict(c.meta)))
    return records


def rank_anomalies(params: ModelParams, curves: Sequence[LightCurve], k: int) -> Ranking:
    """Sort by descending error (ties by id).  ``top`` holds the k highest
    errors, ``bottom`` the k lowest with the lowest first."""
    if not curves:
        raise EmptySet("nothing to rank")
    k = min(int(k), len(curves))
    ranked = sorted(score_curves(params, curves), key=lambda r: (-r.error, r.id))
    return Ranking(ranked, ranked[:k], ranked[::-1][:k])


def ranking_csv(ranked: Sequence[AnomalyRecord]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["rank", "id", "error", "prob_anomaly", "name", "norad"])
    for i, r in enumerate(ranked, start=1):
        prob = "" if r.prob_anomaly is None else repr(r.prob_anomaly)
        w.writerow([i, r.id, repr(r.error), prob, r.meta.get("name", ""), r.meta.get("norad", "")])
    return buf.getvalue()


@dataclass
class Forecast:
    id: str
    indices: np.ndarray
    predicted: np.ndarray
    error: float


def forecast(params: ModelParams, curve, fraction: float = 0.25) -> Forecast:
    """Hide the final ``fraction`` of the curve and read the tail off the
    eval-mode reconstruction."""
    values = np.asarray(getattr(curve, "values", curve), dtype=np.float64)
    mask = forecast_mask(fraction, len(values))
    masked = values.copy()
    masked[mask.indices] = 0.0
    recon = run(params, build_input(masked, params.enc)).recon.data
    err = loss_forecast(values, recon, mask)
    return Forecast(getattr(curve, "id", ""), mask.indices, recon[mask.indices].copy(), err)


def forecast_many(params: ModelParams, curves: Sequence[LightCurve],
                  fraction: float = 0.25) -> list[Forecast]:
    return [forecast(params, c, fraction) for c in curves]
