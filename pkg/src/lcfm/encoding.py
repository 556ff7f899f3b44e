"""Fourier positional features and the model's input array."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import BadConfig, PositionOutOfRange, ShapeMismatch

SEQ_LEN = 128


@dataclass(frozen=True)
class EncodingConfig:
    bands: int = 32
    max_freq: float = 64.0
    include_raw: bool = True

    def __post_init__(self):
        if int(self.bands) < 1:
            raise BadConfig("enc.bands must be >= 1")
        if float(self.max_freq) < 1:
            raise BadConfig("enc.max_freq must be >= 1")

    @property
    def n_features(self) -> int:
        return 2 * self.bands + (1 if self.include_raw else 0)

    @property
    def channels(self) -> int:
        return 1 + self.n_features

    def frequencies(self) -> np.ndarray:
        return np.logspace(0.0, np.log10(self.max_freq / 2.0), self.bands)


def fourier_encode(p, cfg: EncodingConfig = EncodingConfig()) -> np.ndarray:
    """``[sin(pi f_k p)]_k ++ [cos(pi f_k p)]_k (++ [p])`` for log-spaced ``f_k``.

    ``p`` may be a scalar or an array of positions; the features go on a new
    last axis.
    """
    p = np.asarray(p, dtype=np.float64)
    if np.any(np.abs(p) > 1.0) or not np.all(np.isfinite(p)):
        raise PositionOutOfRange("positions must lie in [-1, 1]")
    arg = np.pi * p[..., None] * cfg.frequencies()
    parts = [np.sin(arg), np.cos(arg)]
    if cfg.include_raw:
        parts.append(p[..., None])
    return np.concatenate(parts, axis=-1)


@lru_cache(maxsize=16)
def _positional_block(cfg: EncodingConfig, n: int) -> np.ndarray:
    block = fourier_encode(np.linspace(-1.0, 1.0, n), cfg)
    block.setflags(write=False)
    return block


def positional_block(cfg: EncodingConfig, n: int = SEQ_LEN) -> np.ndarray:
    """The (n, n_features) positional columns shared by every curve."""
    return _positional_block(cfg, n)


def build_input(values, cfg: EncodingConfig = EncodingConfig()) -> np.ndarray:
    """Stack magnitudes with positional features.

    ``values`` is one curve of 128 values (or a batch ``(B, 128)``); the
    result is ``(128, C)`` (or ``(B, 128, C)``) with the magnitude in column 0.
    """
    v = np.asarray(getattr(values, "values", values), dtype=np.float64)
    if v.shape[-1] != SEQ_LEN:
        raise ShapeMismatch(f"curves must have {SEQ_LEN} samples, got {v.shape[-1]}")
    pos = positional_block(cfg, SEQ_LEN)
    pos = np.broadcast_to(pos, v.shape + (pos.shape[-1],))
    return np.concatenate([v[..., None], pos], axis=-1)
