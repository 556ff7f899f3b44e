"""Reading, resampling, standardising and splitting light curves.

Three on-disk formats are understood:

* MMT-style text tracks: ``#`` comments, whitespace columns (time in seconds,
  magnitude, anything else ignored), blank lines between tracks.  Comment
  lines of the form ``# key: value`` with key ``id``, ``name``, ``norad`` or
  ``label`` attach metadata to the next track.
* JSON-lines: one object per curve with ``id``, ``values`` and optional
  ``label``, ``norad``, ``name`` and ``meta``.
* CSV: header ``id,label,v0,...,v127``.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO, Iterable, Sequence

import numpy as np

from .encoding import SEQ_LEN
from .errors import (BadRatios, EmptyFile, InputError, MissingLabels, NonMonotonicTime,
                     TooFewPoints, VocabMismatch)

log = logging.getLogger(__name__)

META_KEYS = ("id", "name", "norad", "label")


@dataclass
class RawCurve:
    id: str
    timestamps: np.ndarray
    magnitudes: np.ndarray
    object_name: str | None = None
    norad: int | None = None
    label: str | None = None

    def __post_init__(self):
        self.timestamps = np.asarray(self.timestamps, dtype=np.float64)
        self.magnitudes = np.asarray(self.magnitudes, dtype=np.float64)
        if self.timestamps.shape != self.magnitudes.shape or self.timestamps.ndim != 1:
            raise InputError(f"{self.id}: timestamps and magnitudes differ in shape")
        if not (np.all(np.isfinite(self.timestamps)) and np.all(np.isfinite(self.magnitudes))):
            raise InputError(f"{self.id}: non-finite values")
        if np.any(np.diff(self.timestamps) <= 0):
            raise NonMonotonicTime(f"{self.id}: timestamps must be strictly increasing")

    def __len__(self) -> int:
        return len(self.timestamps)


@dataclass
class LightCurve:
    id: str
    values: np.ndarray
    label: int | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != (SEQ_LEN,):
            raise InputError(f"{self.id}: expected {SEQ_LEN} values, got {self.values.shape}")
        if not np.all(np.isfinite(self.values)) or self.values.min() < 0 or self.values.max() > 1:
            raise InputError(f"{self.id}: values must be finite and within [0, 1]")
        if self.label is not None:
            self.label = int(self.label)


@dataclass
class ParseReport:
    curves: list[RawCurve]
    records: int = 0
    skipped: int = 0
    tracks: int = 0
    warnings: list[str] = field(default_factory=list)


@dataclass
class Splits:
    train: list[int]
    val: list[int]
    test: list[int]
    seed: int
    ratios: tuple[float, float, float]


# -- MMT-style text -----------------------------------------------------------------

def scan_tracks(stream: str | IO[str], source: str = "track") -> ParseReport:
    """Parse track text, keeping the bookkeeping needed for ingest summaries.

    Every non-blank, non-comment line is either a record or a skipped line.
    """
    text = stream if isinstance(stream, str) else stream.read()
    report = ParseReport(curves=[])
    times: list[float] = []
    mags: list[float] = []
    meta: dict[str, str] = {}

    def flush():
        nonlocal times, mags, meta
        if times:
            report.tracks += 1
            cid = meta.get("id") or f"{source}:{report.tracks - 1}"
            if len(times) < 2:
                report.warnings.append(f"{cid}: single-point track dropped")
            else:
                t = np.asarray(times)
                norad = meta.get("norad")
                report.curves.append(RawCurve(
                    id=cid, timestamps=t - t[0], magnitudes=np.asarray(mags),
                    object_name=meta.get("name"),
                    norad=int(norad) if norad not in (None, "") else None,
                    label=meta.get("label")))
        times, mags, meta = [], [], {}

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            flush()
            continue
        if line.startswith("#"):
            body = line[1:].strip()
            key, sep, value = body.partition(":")
            if sep and key.strip().lower() in META_KEYS:
                if times:
                    flush()
                meta[key.strip().lower()] = value.strip()
            continue
        cols = line.split()
        try:
            t, m = float(cols[0]), float(cols[1])
            if not (math.isfinite(t) and math.isfinite(m)):
                raise ValueError
        except (ValueError, IndexError):
            report.skipped += 1
            report.warnings.append(f"line {lineno}: unparseable record skipped")
            continue
        if times and t <= times[-1]:
            raise NonMonotonicTime(f"{source} line {lineno}: time {t} does not increase")
        times.append(t)
        mags.append(m)
        report.records += 1
    flush()
    for w in report.warnings:
        log.warning("%s: %s", source, w)
    return report


def parse_track_file(stream: str | IO[str], source: str = "track") -> list[RawCurve]:
    """One :class:`RawCurve` per contiguous track block."""
    report = scan_tracks(stream, source)
    if not report.curves:
        raise EmptyFile(f"{source}: no parseable records")
    return report.curves


# -- preprocessing -------------------------------------------------------------------

def resample(curve: RawCurve, n: int = SEQ_LEN) -> np.ndarray:
    """Linear interpolation onto ``n`` evenly spaced times over the track."""
    if len(curve.timestamps) < 2:
        raise TooFewPoints(f"{curve.id}: need at least 2 samples")
    t = curve.timestamps
    grid = np.linspace(t[0], t[-1], n)
    return np.interp(grid, t, curve.magnitudes)


def standardize(values) -> np.ndarray:
    """Min-max rescale to [0, 1]; a flat curve maps to 0.5."""
    v = np.asarray(values, dtype=np.float64)
    lo, hi = v.min(), v.max()
    if hi == lo:
        return np.full_like(v, 0.5)
    return np.clip((v - lo) / (hi - lo), 0.0, 1.0)


def to_light_curve(curve: RawCurve, classes: Sequence[str] | None = None) -> LightCurve:
    meta = {"source": "track", "n_raw": len(curve)}
    if curve.object_name:
        meta["name"] = curve.object_name
    if curve.norad is not None:
        meta["norad"] = curve.norad
    label = _label_index(curve.label, classes, curve.id) if curve.label else None
    return LightCurve(curve.id, standardize(resample(curve)), label, meta)


def _label_index(label, classes: Sequence[str] | None, cid: str) -> int:
    if isinstance(label, (int, np.integer)) and not isinstance(label, bool):
        idx = int(label)
        if classes is not None and not 0 <= idx < len(classes):
            raise VocabMismatch(f"{cid}: label index {idx} outside vocabulary")
        return idx
    if classes is None:
        raise VocabMismatch(f"{cid}: named label {label!r} needs a class vocabulary")
    try:
        return list(classes).index(str(label))
    except ValueError:
        raise VocabMismatch(f"{cid}: label {label!r} not in {list(classes)}") from None


# -- JSON-lines / CSV ------------------------------------------------------------------

def curve_to_record(curve: LightCurve, classes: Sequence[str] | None = None) -> dict:
    rec: dict = {"id": curve.id, "values": [float(v) for v in curve.values]}
    if curve.label is not None:
        rec["label"] = classes[curve.label] if classes is not None else curve.label
    meta = dict(curve.meta)
    for key in ("norad", "name"):
        if key in meta:
            rec[key] = meta.pop(key)
    if meta:
        rec["meta"] = meta
    return rec


def dumps_jsonl(curves: Iterable[LightCurve], classes: Sequence[str] | None = None) -> str:
    return "".join(json.dumps(curve_to_record(c, classes)) + "\n" for c in curves)


def write_jsonl(path, curves: Iterable[LightCurve], classes: Sequence[str] | None = None) -> None:
    atomic_write_text(path, dumps_jsonl(curves, classes))


def read_jsonl(path_or_stream, classes: Sequence[str] | None = None) -> list[LightCurve]:
    if hasattr(path_or_stream, "read"):
        lines = path_or_stream.read().splitlines()
    else:
        lines = Path(path_or_stream).read_text().splitlines()
    curves = []
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise InputError(f"line {lineno}: {exc}") from None
        meta = dict(rec.get("meta") or {})
        for key in ("norad", "name"):
            if rec.get(key) is not None:
                meta[key] = rec[key]
        label = rec.get("label")
        if label is not None:
            label = _label_index(label, classes, rec.get("id", f"line {lineno}"))
        curves.append(LightCurve(str(rec["id"]), np.asarray(rec["values"], dtype=np.float64),
                                 label, meta))
    return curves


def dumps_csv(curves: Iterable[LightCurve], classes: Sequence[str] | None = None) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["id", "label"] + [f"v{i}" for i in range(SEQ_LEN)])
    for c in curves:
        label = "" if c.label is None else (classes[c.label] if classes is not None else c.label)
        w.writerow([c.id, label] + [repr(float(v)) for v in c.values])
    return buf.getvalue()


def write_csv(path, curves: Iterable[LightCurve], classes: Sequence[str] | None = None) -> None:
    atomic_write_text(path, dumps_csv(curves, classes))


def read_csv(path_or_stream, classes: Sequence[str] | None = None) -> list[LightCurve]:
    if hasattr(path_or_stream, "read"):
        text = path_or_stream.read()
    else:
        text = Path(path_or_stream).read_text()
    rows = csv.reader(io.StringIO(text))
    header = next(rows, None)
    expected = ["id", "label"] + [f"v{i}" for i in range(SEQ_LEN)]
    if header != expected:
        raise InputError("CSV header must be id,label,v0..v127")
    curves = []
    for row in rows:
        if not row:
            continue
        label = None
        if row[1] != "":
            label = _label_index(int(row[1]) if row[1].lstrip("-").isdigit() else row[1],
                                 classes, row[0])
        curves.append(LightCurve(row[0], np.array([float(v) for v in row[2:]]), label))
    return curves


def read_curves(path, classes: Sequence[str] | None = None) -> list[LightCurve]:
    """Dispatch on extension: ``.csv`` or JSON-lines (anything else)."""
    if str(path).endswith(".csv"):
        return read_csv(path, classes)
    return read_jsonl(path, classes)


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode())


def atomic_write_bytes(path, data: bytes) -> None:
    """Write via a temporary sibling and rename, so readers never see a partial file."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(f".{path.name}.tmp{os.getpid()}")
    try:
        with open(tmp, "wb") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    finally:
        if tmp.exists():
            tmp.unlink()


# -- splitting ---------------------------------------------------------------------------

def _allocate(n: int, ratios: Sequence[float]) -> tuple[int, int, int]:
    n_train = int(round(ratios[0] * n))
    n_val = min(int(round(ratios[1] * n)), n - n_train)
    return n_train, n_val, n - n_train - n_val


def split_dataset(curves: Sequence[LightCurve], ratios=(0.8, 0.1, 0.1), seed: int = 0,
                  stratify: bool = False) -> Splits:
    """Deterministic train/val/test index split, optionally stratified by label."""
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or any(r < 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise BadRatios(f"ratios must be three non-negative fractions summing to 1: {ratios}")
    rng = np.random.default_rng(seed)
    if stratify:
        labels = [c.label for c in curves]
        if any(lbl is None for lbl in labels):
            raise MissingLabels("stratified split requested on unlabelled curves")
        groups = [np.flatnonzero(np.asarray(labels) == k) for k in sorted(set(labels))]
    else:
        groups = [np.arange(len(curves))]
    train, val, test = [], [], []
    for idx in groups:
        idx = idx[rng.permutation(len(idx))]
        a, b, _ = _allocate(len(idx), ratios)
        train += idx[:a].tolist()
        val += idx[a:a + b].tolist()
        test += idx[a + b:].tolist()
    return Splits(sorted(train), sorted(val), sorted(test), seed, ratios)
