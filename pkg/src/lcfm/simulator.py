"""Parametric labelled light-curve simulator.

A statistical stand-in for physics-based simulators: every family draws a
clean waveform in the standardised-magnitude frame, adds Gaussian observation
noise (sigma 0.02 by default) and clips to [0, 1].  Time is measured in
samples ``s = 0..127``.

Motion families: INERTIAL, SAFE, SPIN, SUN, TUMBLING, YAW.
Anomaly families: NORMAL (bell / monotonic / wander profiles) and ANOMALY
(a normal profile plus a step change, a glint spike or an abrupt periodic
onset).  PERIODIC is a high-frequency sinusoid used as an injected outlier.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .dataio import LightCurve
from .encoding import SEQ_LEN
from .errors import BadFamily

MOTION_CLASSES = ("INERTIAL", "SAFE", "SPIN", "SUN", "TUMBLING", "YAW")
ANOMALY_CLASSES = ("NORMAL", "ANOMALY")
OBS_NOISE = 0.02

S = np.arange(SEQ_LEN, dtype=np.float64)
T = S / (SEQ_LEN - 1)

# documented parameter ranges; overrides must stay inside them
RANGES: dict[str, dict[str, tuple[float, float]]] = {
    "INERTIAL": {"level": (0.35, 0.65), "drift": (-0.08, 0.08)},
    "SUN": {"base": (0.15, 0.3), "amplitude": (0.45, 0.6), "sharpness": (1.0, 2.0),
            "trend": (-0.1, 0.1)},
    "SAFE": {"amplitude": (0.25, 0.35), "cycles": (1.5, 2.5), "trend": (-0.1, 0.1)},
    "SPIN": {"amplitude": (0.3, 0.4), "period": (14.0, 20.0)},
    "TUMBLING": {"amplitude": (0.1, 0.16), "period": (5.0, 12.0)},
    "YAW": {"amplitude": (0.5, 0.7), "period": (24.0, 40.0), "rise": (0.75, 0.85)},
    "NORMAL": {"amplitude": (0.4, 0.7), "width": (0.12, 0.25), "centre": (0.3, 0.7)},
    "ANOMALY": {"onset": (0.3, 0.75), "jump": (0.25, 0.4), "spike": (0.4, 0.6),
                "period": (6.0, 10.0)},
    "PERIODIC": {"amplitude": (0.3, 0.45), "period": (6.0, 12.0)},
}
FAMILY_CLASS = {**{m: m for m in MOTION_CLASSES}, "NORMAL": "NORMAL", "ANOMALY": "ANOMALY",
                "PERIODIC": "ANOMALY"}
KINDS = {"NORMAL": ("bell", "monotonic", "wander"), "ANOMALY": ("step", "glint", "onset")}


@dataclass(frozen=True)
class MotionFamily:
    name: str
    kind: str | None = None
    params: dict = field(default_factory=dict, hash=False)

    def __post_init__(self):
        if self.name not in RANGES:
            raise BadFamily(f"unknown family {self.name!r}; choose from {sorted(RANGES)}")
        if self.kind is not None and self.kind not in KINDS.get(self.name, ()):
            raise BadFamily(f"family {self.name} has no kind {self.kind!r}")
        for key, value in self.params.items():
            if key not in RANGES[self.name]:
                raise BadFamily(f"family {self.name} has no parameter {key!r}")
            lo, hi = RANGES[self.name][key]
            vals = value if isinstance(value, (tuple, list)) else (value, value)
            if not lo <= min(vals) <= max(vals) <= hi:
                raise BadFamily(f"{self.name}.{key}={value} outside documented range [{lo}, {hi}]")

    @property
    def class_name(self) -> str:
        return FAMILY_CLASS[self.name]

    @property
    def classes(self) -> tuple[str, ...]:
        return MOTION_CLASSES if self.name in MOTION_CLASSES else ANOMALY_CLASSES


class _Draw:
    """Parameter sampler honouring fixed-value or range overrides."""

    def __init__(self, family: MotionFamily, rng: np.random.Generator):
        self.family, self.rng = family, rng

    def __call__(self, key: str) -> float:
        value = self.family.params.get(key, RANGES[self.family.name][key])
        if isinstance(value, (tuple, list)):
            return float(self.rng.uniform(value[0], value[1]))
        return float(value)


def _phase(rng) -> float:
    return float(rng.uniform(0.0, 2.0 * np.pi))


def _inertial(d, rng):
    return d("level") + d("drift") * (T - 0.5)


def _sun(d, rng):
    arch = np.sin(np.pi * T) ** d("sharpness")
    return d("base") + d("amplitude") * arch + d("trend") * (T - 0.5)


def _safe(d, rng):
    return 0.5 + d("amplitude") * np.sin(2 * np.pi * d("cycles") * T + _phase(rng)) \
        + d("trend") * (T - 0.5)


def _spin(d, rng):
    return 0.5 + d("amplitude") * np.sin(2 * np.pi * S / d("period") + _phase(rng))


def _tumbling(d, rng):
    y = np.full(SEQ_LEN, 0.5)
    for _ in range(3):
        y += d("amplitude") * np.sin(2 * np.pi * S / d("period") + _phase(rng))
    return y


def _yaw(d, rng):
    u = (S / d("period") + rng.uniform()) % 1.0
    w = d("rise")
    ramp = np.where(u < w, u / w, (1.0 - u) / (1.0 - w))
    return 0.5 + d("amplitude") * (ramp - 0.5)


def _normal_profile(kind: str, d, rng) -> np.ndarray:
    if kind == "bell":
        return 0.2 + d("amplitude") * np.exp(-0.5 * ((T - d("centre")) / d("width")) ** 2)
    if kind == "monotonic":
        lo = rng.uniform(0.1, 0.3)
        shape = T ** rng.uniform(0.6, 1.8)
        y = lo + d("amplitude") * shape
        return y if rng.uniform() < 0.5 else y[::-1].copy()
    y = np.full(SEQ_LEN, 0.5)
    for cyc in (0.5, 1.0, 1.5):
        y += rng.uniform(0.05, 0.12) * np.cos(2 * np.pi * cyc * T + _phase(rng))
    return y


def _normal(d, rng, kind):
    return _normal_profile(kind, d, rng)


def _anomaly(d, rng, kind):
    base_kind = KINDS["NORMAL"][int(rng.integers(0, 3))]
    base_draw = _Draw(MotionFamily("NORMAL"), rng)
    y = 0.8 * _normal_profile(base_kind, base_draw, rng)
    onset = int(d("onset") * SEQ_LEN)
    if kind == "step":
        sign = 1.0 if y[onset:].mean() < 0.45 else -1.0
        y[onset:] += sign * d("jump")
    elif kind == "glint":
        centre = rng.uniform(10, SEQ_LEN - 10)
        y += d("spike") * np.exp(-0.5 * ((S - centre) / rng.uniform(1.0, 2.0)) ** 2)
    else:
        dip = min(onset + 12, SEQ_LEN)
        y[onset:dip] = 0.05
        y[dip:] = 0.5 + 0.3 * np.sin(2 * np.pi * (S[dip:] - dip) / d("period"))
    return y


def _periodic(d, rng):
    return 0.5 + d("amplitude") * np.sin(2 * np.pi * S / d("period") + _phase(rng))


_GENERATORS: dict[str, Callable] = {
    "INERTIAL": _inertial, "SUN": _sun, "SAFE": _safe, "SPIN": _spin, "TUMBLING": _tumbling,
    "YAW": _yaw, "PERIODIC": _periodic,
}


def clean_curve(family: MotionFamily, rng: np.random.Generator) -> np.ndarray:
    d = _Draw(family, rng)
    if family.name in KINDS:
        kinds = KINDS[family.name]
        kind = family.kind or kinds[int(rng.integers(0, len(kinds)))]
        fn = _normal if family.name == "NORMAL" else _anomaly
        return fn(d, rng, kind)
    return _GENERATORS[family.name](d, rng)


def _family_key(family: MotionFamily) -> int:
    return zlib.crc32(f"{family.name}/{family.kind}".encode())


def simulate_labeled(family: MotionFamily | str, n: int, seed: int = 0,
                     noise: float = OBS_NOISE) -> list[LightCurve]:
    """``n`` curves of one family, labelled with the family's class index."""
    if isinstance(family, str):
        family = MotionFamily(family)
    rng = np.random.default_rng([seed, _family_key(family)])
    label = family.classes.index(family.class_name)
    tag = family.name if family.kind is None else f"{family.name}.{family.kind}"
    curves = []
    for i in range(n):
        drawn = family
        if family.name in KINDS and family.kind is None:
            # same draw clean_curve would make first, done here so it can be recorded
            kinds = KINDS[family.name]
            drawn = MotionFamily(family.name, kinds[int(rng.integers(0, len(kinds)))],
                                 family.params)
        y = clean_curve(drawn, rng)
        if noise > 0:
            y = y + rng.normal(0.0, noise, SEQ_LEN)
        meta = {"generator": "sim", "family": tag}
        if drawn.kind is not None:
            meta["kind"] = drawn.kind
        curves.append(LightCurve(f"{tag}-{seed}-{i:05d}", np.clip(y, 0.0, 1.0), label, meta))
    return curves


def simulate_corpus(task: str, n: int, seed: int = 0, noise: float = OBS_NOISE
                    ) -> tuple[list[LightCurve], tuple[str, ...]]:
    """Balanced labelled corpus for ``task`` in {motion, anomaly, smooth}.

    ``smooth`` draws NORMAL profiles only.  Returns (curves, class names).
    """
    if task == "motion":
        names, classes = MOTION_CLASSES, MOTION_CLASSES
    elif task == "anomaly":
        names, classes = ("NORMAL", "ANOMALY"), ANOMALY_CLASSES
    elif task == "smooth":
        names, classes = ("NORMAL",), ANOMALY_CLASSES
    else:
        raise BadFamily(f"unknown corpus task {task!r}")
    counts = [n // len(names) + (1 if i < n % len(names) else 0) for i in range(len(names))]
    curves: list[LightCurve] = []
    for name, k in zip(names, counts):
        curves += simulate_labeled(MotionFamily(name), k, seed, noise)
    order = np.random.default_rng([seed, 99]).permutation(len(curves))
    return [curves[i] for i in order], classes


def total_variation(values) -> float:
    return float(np.abs(np.diff(np.asarray(values, dtype=np.float64))).sum())
