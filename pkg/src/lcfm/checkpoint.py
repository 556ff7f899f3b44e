"""Checkpoint files.

Layout: the magic line ``LCFM1\\n``, one line of JSON header, then the raw
little-endian float64 payload.  The header lists every tensor with its shape
and byte offset (relative to the payload start) and echoes the model and
encoding configuration, the class vocabulary, the seed and any extra config.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .dataio import atomic_write_bytes
from .encoding import EncodingConfig
from .errors import IncompatibleCheckpoint, InputError
from .model import ModelConfig, ModelParams

MAGIC = b"LCFM1\n"
LE_F64 = np.dtype("<f8")


def dumps_checkpoint(params: ModelParams, seed: int | None = None,
                     extra: dict | None = None) -> bytes:
    tensors, chunks, offset = [], [], 0
    for name, t in params.items():
        arr = np.ascontiguousarray(t.data, dtype=LE_F64)
        tensors.append({"name": name, "shape": list(arr.shape), "offset": offset})
        chunks.append(arr.tobytes())
        offset += arr.nbytes
    header = {
        "tensors": tensors,
        "seed": seed,
        "model": params.config.to_dict(),
        "enc": {"bands": params.enc.bands, "max_freq": params.enc.max_freq,
                "include_raw": params.enc.include_raw},
        "classes": list(params.classes) if params.classes is not None else None,
        "config": extra or {},
    }
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode() + b"\n"
    return MAGIC + head + b"".join(chunks)


def save_checkpoint(path, params: ModelParams, seed: int | None = None,
                    extra: dict | None = None) -> None:
    atomic_write_bytes(path, dumps_checkpoint(params, seed, extra))


def read_header(path) -> dict:
    with open(path, "rb") as fh:
        if fh.read(len(MAGIC)) != MAGIC:
            raise InputError(f"{path}: not an LCFM1 checkpoint")
        return json.loads(fh.readline())


def loads_checkpoint(blob: bytes, expect: ModelConfig | None = None
                     ) -> tuple[ModelParams, dict]:
    if not blob.startswith(MAGIC):
        raise InputError("not an LCFM1 checkpoint")
    end = blob.index(b"\n", len(MAGIC))
    header = json.loads(blob[len(MAGIC):end])
    payload = memoryview(blob)[end + 1:]
    cfg = ModelConfig(**header["model"])
    if expect is not None and (expect.output_len != cfg.output_len or expect.z_dim != cfg.z_dim):
        raise IncompatibleCheckpoint(
            f"checkpoint has output_len={cfg.output_len}, z_dim={cfg.z_dim}; runtime expects "
            f"output_len={expect.output_len}, z_dim={expect.z_dim}")
    tensors = {}
    for entry in header["tensors"]:
        n = int(np.prod(entry["shape"], dtype=np.int64))
        arr = np.frombuffer(payload, dtype=LE_F64, count=n, offset=entry["offset"])
        tensors[entry["name"]] = ad.parameter(arr.reshape(entry["shape"]).astype(np.float64),
                                              name=entry["name"])
    enc = EncodingConfig(**header["enc"])
    return ModelParams(cfg, enc, tensors, header.get("classes")), header


def load_checkpoint(path, expect: ModelConfig | None = None) -> tuple[ModelParams, dict]:
    """Parameters and header; ``expect`` guards output length and latent size."""
    return loads_checkpoint(Path(path).read_bytes(), expect)
