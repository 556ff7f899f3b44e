"""Text tables and SVG line plots for history CSVs and metrics JSON."""

from __future__ import annotations

import csv
import io
import math
from typing import Sequence
from xml.sax.saxutils import escape

from .errors import InputError
from .metrics import MetricsReport, report_table

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf")


def read_history(text: str) -> dict[str, list[float]]:
    """Columns of a history CSV as float lists (blank cells become NaN)."""
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or "epoch" not in rows[0]:
        raise InputError("history CSV needs a header with an 'epoch' column")
    header = rows[0]
    cols: dict[str, list[float]] = {h: [] for h in header}
    for row in rows[1:]:
        if not row:
            continue
        for h, cell in zip(header, row):
            cols[h].append(float(cell) if cell != "" else math.nan)
    return cols


def _nice(lo: float, hi: float) -> tuple[float, float]:
    if not math.isfinite(lo) or not math.isfinite(hi):
        return 0.0, 1.0
    if hi - lo < 1e-12:
        pad = abs(hi) * 0.05 or 0.5
        return lo - pad, hi + pad
    return lo, hi


def line_plot(x: Sequence[float], series: dict[str, Sequence[float]], title: str = "",
              log_y: bool = False, width: int = 640, height: int = 360) -> str:
    """A minimal SVG line chart.  Non-finite points (and non-positive ones on a
    log axis) are skipped."""
    ml, mr, mt, mb = 64, 150, 32, 40
    pw, ph = width - ml - mr, height - mt - mb

    def tf(v):
        if log_y:
            return math.log10(v) if v > 0 else math.nan
        return v

    ys = [tf(v) for s in series.values() for v in s]
    ys = [v for v in ys if math.isfinite(v)]
    y0, y1 = _nice(min(ys, default=0.0), max(ys, default=1.0))
    x0, x1 = _nice(min(x, default=0.0), max(x, default=1.0))

    def px(v):
        return ml + (v - x0) / (x1 - x0) * pw

    def py(v):
        return mt + ph - (v - y0) / (y1 - y0) * ph

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">',
           f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
           f'<text x="{ml}" y="18" font-size="13">{escape(title)}</text>',
           f'<rect x="{ml}" y="{mt}" width="{pw}" height="{ph}" fill="none" stroke="#444"/>']
    for i in range(5):
        fy = y0 + (y1 - y0) * i / 4
        label = f"{10 ** fy:.3g}" if log_y else f"{fy:.4g}"
        out.append(f'<text x="{ml - 6}" y="{py(fy) + 4:.1f}" text-anchor="end">{label}</text>')
        fx = x0 + (x1 - x0) * i / 4
        out.append(f'<text x="{px(fx):.1f}" y="{mt + ph + 16}" text-anchor="middle">{fx:.4g}</text>')
    for k, (name, s) in enumerate(series.items()):
        colour = PALETTE[k % len(PALETTE)]
        pts = [(px(a), py(tf(b))) for a, b in zip(x, s) if math.isfinite(tf(b))]
        if pts:
            d = " ".join(f"{a:.2f},{b:.2f}" for a, b in pts)
            out.append(f'<polyline fill="none" stroke="{colour}" stroke-width="1.5" points="{d}"/>')
        ly = mt + 12 + 16 * k
        out.append(f'<line x1="{ml + pw + 10}" y1="{ly}" x2="{ml + pw + 28}" y2="{ly}" '
                   f'stroke="{colour}" stroke-width="2"/>')
        out.append(f'<text x="{ml + pw + 32}" y="{ly + 4}">{escape(name)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


LOSS_COLUMNS = ("train_total", "val_total", "recon", "mask", "forecast")


def history_plots(cols: dict[str, list[float]]) -> dict[str, str]:
    """One SVG per panel: losses (log scale), KL, learning rate and, for
    fine-tune histories, validation accuracy / ROC-AUC."""
    x = cols["epoch"]
    plots = {}
    losses = {c: cols[c] for c in LOSS_COLUMNS + ("train_class", "val_class") if c in cols}
    if losses:
        plots["losses.svg"] = line_plot(x, losses, "losses", log_y=True)
    if "kl" in cols:
        plots["kl.svg"] = line_plot(x, {"kl": cols["kl"]}, "KL divergence")
    if "lr" in cols:
        plots["lr.svg"] = line_plot(x, {"lr": cols["lr"]}, "learning rate", log_y=True)
    quality = {c: cols[c] for c in ("val_accuracy", "val_roc_auc") if c in cols}
    if quality:
        plots["accuracy.svg"] = line_plot(x, quality, "validation metrics")
    return plots


def history_summary(cols: dict[str, list[float]]) -> str:
    lines = [f"epochs: {len(cols['epoch'])}"]
    for name, values in cols.items():
        if name == "epoch" or not values:
            continue
        finite = [v for v in values if math.isfinite(v)]
        if finite:
            lines.append(f"{name}: first {values[0]:.6g}  last {values[-1]:.6g}  min {min(finite):.6g}")
    return "\n".join(lines) + "\n"


def metrics_summary(doc: dict) -> str:
    """Tables for a metrics JSON written by ``finetune`` (or a bare report)."""
    parts = []
    if "best" in doc:
        parts.append(f"best epoch: {doc.get('best_epoch')}\n")
        parts.append("validation (best epoch)\n")
        parts.append(report_table(MetricsReport.from_dict(doc["best"]), "Class"))
        if doc.get("test"):
            parts.append("\ntest\n")
            parts.append(report_table(MetricsReport.from_dict(doc["test"]), "Class"))
    else:
        parts.append(report_table(MetricsReport.from_dict(doc), "Class"))
    return "".join(parts)
