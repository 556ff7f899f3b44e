"""Flat ``key=value`` run configuration.

Every accepted key is declared once in :data:`KEYS` with a type, default and
help line.  Files hold one ``key = value`` per line; ``#`` starts a comment.
Command-line ``--set key=value`` pairs override the file.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Iterable

from .errors import BadConfig
from .simulator import RANGES


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _ratios(text: str) -> tuple[float, float, float]:
    parts = tuple(float(p) for p in text.split(","))
    if len(parts) != 3:
        raise ValueError("expected three comma-separated fractions")
    return parts


def _opt_float(text: str) -> float | None:
    return None if text.strip() in ("", "none") else float(text)


@dataclass(frozen=True)
class Key:
    name: str
    parse: Callable[[str], Any]
    default: Any
    help: str

    def render(self, value) -> str:
        if value is None:
            return ""
        if isinstance(value, bool):
            return "true" if value else "false"
        if isinstance(value, tuple):
            return ",".join(repr(v) for v in value)
        if isinstance(value, float):
            return repr(value)
        return str(value)


_KEYS = [
    Key("seed", int, 0, "master random seed"),
    Key("data.classes", str, "", "comma-separated class vocabulary (default: from task or checkpoint)"),
    Key("model.preset", str, "small", "small | default architecture sizes"),
    Key("model.n_latents", int, None, "override: number of latent vectors"),
    Key("model.latent_dim", int, None, "override: latent width"),
    Key("model.z_dim", int, None, "override: size of z"),
    Key("model.self_attn_blocks", int, None, "override: latent self-attention blocks"),
    Key("model.heads", int, None, "override: attention heads"),
    Key("model.ff_mult", int, None, "override: feed-forward expansion"),
    Key("enc.bands", int, 32, "Fourier bands K"),
    Key("enc.max_freq", float, 64.0, "highest encoded frequency"),
    Key("enc.include_raw", _bool, True, "append the raw position column"),
    Key("pretrain.lr", float, 1e-3, "Adam learning rate"),
    Key("pretrain.batch", int, 32, "batch size"),
    Key("pretrain.alpha", float, 0.001, "KL weight"),
    Key("pretrain.clip", float, 0.5, "global gradient-norm clip"),
    Key("pretrain.sched_factor", float, 0.5, "lr multiplier on plateau"),
    Key("pretrain.sched_patience", int, 5, "plateau patience in epochs"),
    Key("pretrain.early_patience", int, 50, "early-stop patience in epochs"),
    Key("pretrain.max_epochs", int, 200, "epoch cap"),
    Key("pretrain.mask_fraction", float, 0.25, "masked block fraction"),
    Key("pretrain.forecast_fraction", float, 0.25, "hidden tail fraction"),
    Key("pretrain.val_fraction", float, 0.1, "held-out fraction (0: monitor the training curves)"),
    Key("finetune.task", str, "motion", "motion | anomaly (sets the default vocabulary)"),
    Key("finetune.lr", float, 1e-4, "Adam learning rate"),
    Key("finetune.batch", int, 32, "batch size"),
    Key("finetune.max_epochs", int, 100, "epoch cap"),
    Key("finetune.sched_patience", int, 10, "plateau patience (motion only)"),
    Key("finetune.sched_factor", float, 0.5, "lr multiplier on plateau (motion only)"),
    Key("finetune.class_weight", float, 1.0, "weight of the classification term"),
    Key("finetune.ratios", _ratios, (0.7, 0.15, 0.15), "train,val,test fractions"),
    Key("score.k", int, 10, "size of the top and bottom lists"),
    Key("forecast.fraction", float, 0.25, "hidden tail fraction"),
    Key("gen.target", str, "", "class to generate"),
    Key("gen.threshold", float, 0.9, "reference confidence threshold"),
    Key("gen.noise_scale", float, 0.5, "latent noise standard deviation (0..1.5)"),
    Key("gen.top_fraction", float, 0.25, "fraction of z coordinates perturbed"),
    Key("gen.count", int, 10, "curves per reference"),
    Key("gen.sigma", float, 2.0, "smoothing width in samples"),
    Key("gen.max_refs", int, 0, "cap on references used (0: all)"),
    Key("sim.task", str, "", "motion | anomaly | smooth balanced corpus"),
    Key("sim.family", str, "", "single family (overrides sim.task)"),
    Key("sim.kind", str, "", "sub-kind for NORMAL / ANOMALY families"),
    Key("sim.n", int, 100, "number of curves"),
    Key("sim.seed", int, None, "simulator seed (default: seed)"),
    Key("sim.noise", float, 0.02, "observation noise standard deviation"),
]
_PARAMS = sorted({p for ranges in RANGES.values() for p in ranges})
_KEYS += [Key(f"sim.param.{p}", _opt_float, None, "fixed family parameter override")
          for p in _PARAMS]
KEYS: dict[str, Key] = {k.name: k for k in _KEYS}


def parse_text(text: str, source: str = "config") -> dict[str, str]:
    raw: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise BadConfig(f"{source}:{lineno}: expected key=value, got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        raw[key] = value
    return raw


class RunConfig:
    """Typed, validated view over the merged key=value pairs."""

    def __init__(self, raw: dict[str, str] | None = None):
        self.values = {k.name: k.default for k in _KEYS}
        self.explicit: set[str] = set()
        self.update(raw or {})

    def update(self, raw: dict[str, str]) -> None:
        for name, text in raw.items():
            if name not in KEYS:
                raise BadConfig(f"unknown config key {name!r} (see --help for the list)")
            key = KEYS[name]
            if text == "" and key.default is None:
                self.values[name] = None
                self.explicit.add(name)
                continue
            try:
                self.values[name] = key.parse(text)
            except ValueError as exc:
                raise BadConfig(f"bad value for {name}: {text!r} ({exc})") from None
            self.explicit.add(name)

    @classmethod
    def load(cls, path: str | Path | None = None, overrides: Iterable[str] = ()) -> "RunConfig":
        cfg = cls()
        if path is not None:
            try:
                text = Path(path).read_text()
            except OSError as exc:
                raise BadConfig(f"cannot read config {path}: {exc}") from None
            cfg.update(parse_text(text, str(path)))
        cfg.update(parse_text("\n".join(overrides), "--set"))
        return cfg

    def __getitem__(self, name: str):
        return self.values[name]

    def group(self, prefix: str) -> dict[str, Any]:
        """Non-None values under ``prefix.`` with the prefix stripped."""
        n = len(prefix) + 1
        return {k[n:]: v for k, v in self.values.items()
                if k.startswith(prefix + ".") and v is not None}

    def echo(self) -> str:
        return "".join(f"{name} = {KEYS[name].render(self.values[name])}\n" for name in KEYS)


def help_text() -> str:
    width = max(len(k) for k in KEYS)
    lines = ["config keys (set in --config files or with --set key=value):"]
    for k in _KEYS:
        default = k.render(k.default) or "-"
        lines.append(f"  {k.name:<{width}}  {k.help} [default: {default}]")
    return "\n".join(lines)
