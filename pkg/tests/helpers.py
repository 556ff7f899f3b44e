"""Shared fixtures-in-code for the test modules."""

import numpy as np

from lcfm.encoding import EncodingConfig
from lcfm.model import ModelConfig, ModelParams, init_model

TINY = ModelConfig(n_latents=4, latent_dim=8, z_dim=4, self_attn_blocks=1, heads=2, ff_mult=2)
TINY_ENC = EncodingConfig(bands=4)


def tiny_model(seed=0, classes=None, live_heads=True):
    """Tiny model; with ``live_heads`` the zero-initialised heads get small
    random weights so gradients reach the encoder."""
    cfg = TINY if classes is None else ModelConfig(**{**TINY.to_dict(), "n_classes": len(classes)})
    p = init_model(cfg, seed, TINY_ENC, classes)
    if live_heads:
        rng = np.random.default_rng(seed + 100)
        for name in p:
            if name.startswith(("head.", "cls.")):
                p[name].data = 0.3 * rng.standard_normal(p[name].shape)
    return p


def rebuild(params: ModelParams, names, tensors) -> ModelParams:
    return ModelParams(params.config, params.enc, dict(zip(names, tensors)), params.classes)


def key_bias_names(params):
    return [n for n in params if n.endswith("attn.k.b")]


class ReluRecorder:
    """Records every ReLU activation pattern produced while active, so a
    finite-difference probe that flips a unit across the kink can be vetoed."""

    def __init__(self):
        self.patterns = None

    def __enter__(self):
        from lcfm import autodiff as ad
        self._ad, self._orig = ad, ad.relu

        def relu(x):
            out = self._orig(x)
            if self.patterns is not None:
                self.patterns.append((x.data > 0).tobytes())
            return out
        ad.relu = relu
        return self

    def __exit__(self, *exc):
        self._ad.relu = self._orig

    def pattern(self, fn):
        self.patterns = []
        fn()
        pats, self.patterns = self.patterns, None
        return pats


def kink_filter(fn, arrays, h=1e-5):
    """``exclude`` callback for grad_check: skip coordinates whose +-h
    perturbation changes any ReLU sign pattern.  Returns (callback, stats)."""
    from lcfm.autodiff import Tensor
    rec = ReluRecorder()
    stats = {"probed": 0, "skipped": 0}

    def run(arrs):
        return rec.pattern(lambda: fn(*[Tensor(a) for a in arrs]))

    def exclude(i, idx):
        with rec:
            base = run(arrays)
            orig = arrays[i][idx]
            arrays[i][idx] = orig + h
            up = run(arrays)
            arrays[i][idx] = orig - h
            down = run(arrays)
            arrays[i][idx] = orig
        stats["probed"] += 1
        flip = up != base or down != base
        stats["skipped"] += flip
        return flip

    return exclude, stats


# criterion number -> PASS/FAIL line, repeated in the terminal summary
ACCEPTANCE: dict[int, str] = {}
