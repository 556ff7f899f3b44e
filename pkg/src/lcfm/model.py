"""Perceiver-VAE: latent-array encoder, Gaussian heads, MLP decoder,
optional classifier head."""

from __future__ import annotations

from collections.abc import Mapping
from dataclasses import asdict, dataclass, field
from typing import Iterator, NamedTuple, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .encoding import SEQ_LEN, EncodingConfig, build_input
from .errors import BadConfig, NoHead, ShapeMismatch

LOGVAR_MIN, LOGVAR_MAX = -10.0, 10.0
DECODER_DIMS = (512, 1024)
OUT_GAIN = 30.0            # initial gain of the LayerNorm feeding the pooled heads


@dataclass(frozen=True)
class ModelConfig:
    n_latents: int = 64
    latent_dim: int = 128
    z_dim: int = 64
    self_attn_blocks: int = 4
    heads: int = 4
    ff_mult: int = 2
    output_len: int = SEQ_LEN
    n_classes: int | None = None

    def __post_init__(self):
        dims = (self.n_latents, self.latent_dim, self.z_dim, self.heads, self.ff_mult)
        if any(int(d) < 1 for d in dims) or self.self_attn_blocks < 0:
            raise BadConfig(f"model dimensions must be positive: {self}")
        if self.latent_dim % self.heads:
            raise BadConfig(f"latent_dim {self.latent_dim} not divisible by heads {self.heads}")
        if self.output_len != SEQ_LEN:
            raise BadConfig(f"output_len must be {SEQ_LEN}")
        if self.n_classes is not None and self.n_classes < 2:
            raise BadConfig("n_classes must be >= 2 when a classifier head is requested")

    @classmethod
    def small(cls, **overrides) -> "ModelConfig":
        """Desk-scale preset used by the convergence tests."""
        base = dict(n_latents=16, latent_dim=32, z_dim=16, self_attn_blocks=2, heads=4, ff_mult=2)
        base.update(overrides)
        return cls(**base)

    @property
    def binary(self) -> bool:
        return self.n_classes == 2

    def to_dict(self) -> dict:
        return asdict(self)


class ModelParams(Mapping):
    """Named parameter tensors plus the configuration they were built for."""

    def __init__(self, config: ModelConfig, enc: EncodingConfig, tensors: dict[str, Tensor],
                 classes: Sequence[str] | None = None):
        self.config = config
        self.enc = enc
        self.tensors = tensors
        self.classes = tuple(classes) if classes is not None else None

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self.tensors)

    def __len__(self) -> int:
        return len(self.tensors)

    @property
    def n_params(self) -> int:
        return int(sum(t.data.size for t in self.tensors.values()))

    @property
    def has_head(self) -> bool:
        return "cls.W" in self.tensors

    def copy(self) -> "ModelParams":
        fresh = {k: ad.parameter(t.data, name=k) for k, t in self.tensors.items()}
        return ModelParams(self.config, self.enc, fresh, self.classes)

    def arrays(self) -> dict[str, np.ndarray]:
        return {k: t.data for k, t in self.tensors.items()}

    def zero_grad(self) -> None:
        ad.zero_grads(self.tensors.values())


class Pass(NamedTuple):
    recon: Tensor
    mu: Tensor
    logvar: Tensor
    z: Tensor
    logits: Tensor | None


@dataclass
class ForwardOut:
    recon: np.ndarray
    mu: np.ndarray
    logvar: np.ndarray
    z: np.ndarray
    class_probs: np.ndarray | None = None


# -- initialisation -------------------------------------------------------------

def _declare(cfg: ModelConfig, enc: EncodingConfig) -> list[tuple[str, tuple[int, ...], str]]:
    """(name, shape, initialiser) for every parameter of the model."""
    D, C, F = cfg.latent_dim, enc.channels, cfg.latent_dim * cfg.ff_mult
    shapes: list[tuple[str, tuple[int, ...], str]] = [("latents", (cfg.n_latents, D), "latent")]

    def lin(name, n_in, n_out, init="uniform"):
        shapes.append((f"{name}.W", (n_in, n_out), init))
        shapes.append((f"{name}.b", (n_out,), "zeros" if init != "uniform" else "bias"))

    def ln(name, d):
        shapes.append((f"{name}.g", (d,), "ones"))
        shapes.append((f"{name}.b", (d,), "zeros"))

    def block(prefix, kv_dim):
        ln(f"{prefix}.ln_q", D)
        if kv_dim is not None:
            ln(f"{prefix}.ln_kv", kv_dim)
        src = D if kv_dim is None else kv_dim
        lin(f"{prefix}.attn.q", D, D)
        lin(f"{prefix}.attn.k", src, D)
        lin(f"{prefix}.attn.v", src, D)
        lin(f"{prefix}.attn.o", D, D)
        ln(f"{prefix}.ln_ff", D)
        lin(f"{prefix}.ff.1", D, F)
        lin(f"{prefix}.ff.2", F, D)

    block("cross", C)
    for i in range(cfg.self_attn_blocks):
        block(f"self.{i}", None)
    ln("out_ln", D)
    lin("head.mu", D, cfg.z_dim, "zeros")
    lin("head.logvar", D, cfg.z_dim, "zeros")
    h1, h2 = DECODER_DIMS
    lin("dec.1", cfg.z_dim, h1)
    ln("dec.ln1", h1)
    lin("dec.2", h1, h2)
    ln("dec.ln2", h2)
    lin("dec.3", h2, cfg.output_len)
    if cfg.n_classes is not None:
        lin("cls", cfg.z_dim, 1 if cfg.binary else cfg.n_classes, "zeros")
    return shapes


def init_model(cfg: ModelConfig = ModelConfig(), seed: int = 0,
               enc: EncodingConfig = EncodingConfig(),
               classes: Sequence[str] | None = None) -> ModelParams:
    """Fresh parameters.  Weights are uniform in +-1/sqrt(fan_in), the latent
    array is N(0, 0.02^2), the Gaussian heads and classifier start at zero.
    The magnitude column's key/value weights get a gain of sqrt(2K+1) and the
    final LayerNorm before pooling starts with gain ``OUT_GAIN``."""
    if not isinstance(cfg, ModelConfig):
        raise BadConfig("cfg must be a ModelConfig")
    if classes is not None and cfg.n_classes != len(classes):
        raise BadConfig(f"{len(classes)} class names for n_classes={cfg.n_classes}")
    rng = np.random.default_rng(seed)
    tensors: dict[str, Tensor] = {}
    fan_in = 1
    for name, shape, init in _declare(cfg, enc):
        if init == "latent":
            data = 0.02 * rng.standard_normal(shape)
        elif init == "uniform":
            fan_in = shape[0]
            data = rng.uniform(-1.0, 1.0, shape) / np.sqrt(fan_in)
        elif init == "bias":
            data = rng.uniform(-1.0, 1.0, shape) / np.sqrt(fan_in)
        elif init == "ones":
            data = np.ones(shape)
        else:
            data = np.zeros(shape)
        tensors[name] = ad.parameter(data, name=name)
    # the magnitude is one column against 2K+1 positional ones; give its
    # key/value row the same variance as the whole positional block
    for name in ("cross.attn.k.W", "cross.attn.v.W"):
        tensors[name].data[0] *= np.sqrt(enc.n_features)
    # pooled latents differ little between curves at first; a large final
    # gain lets the zero-initialised heads see that difference at all
    tensors["out_ln.g"].data[:] = OUT_GAIN
    return ModelParams(cfg, enc, tensors, classes)


def add_classifier(params: ModelParams, classes: Sequence[str], seed: int = 0) -> ModelParams:
    """Copy of ``params`` with a fresh zero-initialised head for ``classes``."""
    cfg = ModelConfig(**{**params.config.to_dict(), "n_classes": len(classes)})
    fresh = init_model(cfg, seed, params.enc, classes)
    tensors = {k: (ad.parameter(params[k].data, name=k) if k in params and not k.startswith("cls")
                   else t) for k, t in fresh.tensors.items()}
    return ModelParams(cfg, params.enc, tensors, classes)


# -- network pieces ---------------------------------------------------------------

def _ff(p, prefix: str, x: Tensor) -> Tensor:
    h = ad.layer_norm(x, p[f"{prefix}.ln_ff.g"], p[f"{prefix}.ln_ff.b"])
    h = ad.relu(ad.linear(h, p[f"{prefix}.ff.1.W"], p[f"{prefix}.ff.1.b"]))
    return x + ad.linear(h, p[f"{prefix}.ff.2.W"], p[f"{prefix}.ff.2.b"])


def encode(params: ModelParams, x) -> tuple[Tensor, Tensor]:
    """Input array ``(B, 128, C)`` (or ``(128, C)``) -> (mu, logvar).

    One cross-attention block lets the latent array read the input, then
    ``self_attn_blocks`` self-attention blocks refine the latents; the latents
    are mean-pooled and fed to two linear heads.
    """
    cfg, p = params.config, params
    x = ad.as_tensor(x)
    single = x.ndim == 2
    if single:
        x = x.reshape(1, *x.shape)
    if x.ndim != 3 or x.shape[1:] != (cfg.output_len, params.enc.channels):
        raise ShapeMismatch(f"encoder input must be (B, {cfg.output_len}, {params.enc.channels}), "
                            f"got {x.shape}")
    lat = p["latents"]
    q_in = ad.layer_norm(lat, p["cross.ln_q.g"], p["cross.ln_q.b"])
    kv_in = ad.layer_norm(x, p["cross.ln_kv.g"], p["cross.ln_kv.b"])
    h = lat + ad.multihead_attention(q_in, kv_in, p, "cross.attn", cfg.heads)
    h = _ff(p, "cross", h)
    for i in range(cfg.self_attn_blocks):
        pre = f"self.{i}"
        hn = ad.layer_norm(h, p[f"{pre}.ln_q.g"], p[f"{pre}.ln_q.b"])
        h = h + ad.multihead_attention(hn, hn, p, f"{pre}.attn", cfg.heads)
        h = _ff(p, pre, h)
    h = ad.layer_norm(h, p["out_ln.g"], p["out_ln.b"])
    pooled = h.mean(axis=1)
    mu = ad.linear(pooled, p["head.mu.W"], p["head.mu.b"])
    logvar = ad.linear(pooled, p["head.logvar.W"], p["head.logvar.b"]).clamp(LOGVAR_MIN, LOGVAR_MAX)
    if single:
        mu, logvar = mu.reshape(cfg.z_dim), logvar.reshape(cfg.z_dim)
    return mu, logvar


def reparameterize(mu, logvar, eps) -> Tensor:
    """``z = mu + eps * exp(0.5 * logvar)``."""
    mu, logvar = ad.as_tensor(mu), ad.as_tensor(logvar)
    eps = np.asarray(eps, dtype=np.float64)
    if mu.shape != logvar.shape or mu.shape != eps.shape:
        raise ShapeMismatch(f"reparameterize shapes differ: {mu.shape}, {logvar.shape}, {eps.shape}")
    if not np.any(eps):
        return mu
    return mu + (logvar * 0.5).exp() * eps


def decode(params: ModelParams, z) -> Tensor:
    z = ad.as_tensor(z)
    if z.shape[-1] != params.config.z_dim:
        raise ShapeMismatch(f"decoder expects z of length {params.config.z_dim}, got {z.shape}")
    p = params
    h = ad.linear(z, p["dec.1.W"], p["dec.1.b"])
    h = ad.relu(ad.layer_norm(h, p["dec.ln1.g"], p["dec.ln1.b"]))
    h = ad.linear(h, p["dec.2.W"], p["dec.2.b"])
    h = ad.relu(ad.layer_norm(h, p["dec.ln2.g"], p["dec.ln2.b"]))
    return ad.linear(h, p["dec.3.W"], p["dec.3.b"])


def class_logits(params: ModelParams, z) -> Tensor:
    if not params.has_head:
        raise NoHead("model has no classifier head")
    return ad.linear(ad.as_tensor(z), params["cls.W"], params["cls.b"])


def logits_to_probs(params: ModelParams, logits: np.ndarray) -> np.ndarray:
    logits = np.asarray(logits, dtype=np.float64)
    if params.config.binary:
        p1 = ad._stable_sigmoid(logits[..., 0])
        return np.stack([1.0 - p1, p1], axis=-1)
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def classify(params: ModelParams, z) -> np.ndarray:
    """Class probabilities; a single sigmoid logit in the two-class case."""
    return logits_to_probs(params, class_logits(params, z).data)


def run(params: ModelParams, x, eps: np.ndarray | None = None) -> Pass:
    """Differentiable pass over a batch of input arrays."""
    mu, logvar = encode(params, x)
    z = mu if eps is None else reparameterize(mu, logvar, eps)
    recon = decode(params, z)
    logits = class_logits(params, z) if params.has_head else None
    return Pass(recon, mu, logvar, z, logits)


def forward(params: ModelParams, curve, rng: np.random.Generator | None = None) -> ForwardOut:
    """Single-curve forward pass; ``rng=None`` selects eval mode (eps = 0)."""
    x = build_input(curve, params.enc)
    eps = None if rng is None else rng.standard_normal(params.config.z_dim)
    out = run(params, x, eps)
    probs = None
    if out.logits is not None:
        probs = logits_to_probs(params, out.logits.data)
    return ForwardOut(out.recon.data.copy(), out.mu.data.copy(), out.logvar.data.copy(),
                      out.z.data.copy(), probs)


def predict(params: ModelParams, values: np.ndarray, batch: int = 256) -> dict[str, np.ndarray]:
    """Eval-mode outputs for a stack of curves ``(n, 128)``."""
    values = np.atleast_2d(np.asarray(values, dtype=np.float64))
    recon, mu, probs = [], [], []
    for s in range(0, len(values), batch):
        out = run(params, build_input(values[s:s + batch], params.enc))
        recon.append(out.recon.data)
        mu.append(out.mu.data)
        if out.logits is not None:
            probs.append(logits_to_probs(params, out.logits.data))
    result = {"recon": np.concatenate(recon), "mu": np.concatenate(mu)}
    if probs:
        result["probs"] = np.concatenate(probs)
    return result
