import numpy as np
import pytest

from lcfm.checkpoint import MAGIC, dumps_checkpoint, load_checkpoint, loads_checkpoint, \
    read_header, save_checkpoint
from lcfm.errors import IncompatibleCheckpoint, InputError
from lcfm.model import ModelConfig, add_classifier, predict

from helpers import TINY, tiny_model


def test_roundtrip_bit_identical(tmp_path):
    p = add_classifier(tiny_model(), ["NORMAL", "ANOMALY"])
    p["cls.W"].data[:] = 0.3
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, p, seed=7, extra={"lr": 0.001})
    q, header = load_checkpoint(path, expect=p.config)
    assert list(q) == list(p)
    for k in p:
        assert q[k].data.tobytes() == p[k].data.tobytes()
    vals = np.random.default_rng(0).random((3, 128))
    a, b = predict(p, vals), predict(q, vals)
    for key in a:
        assert a[key].tobytes() == b[key].tobytes()
    assert header["seed"] == 7 and header["config"] == {"lr": 0.001}
    assert q.classes == ("NORMAL", "ANOMALY") and q.enc == p.enc


def test_layout(tmp_path):
    p = tiny_model()
    blob = dumps_checkpoint(p, seed=1)
    assert blob.startswith(MAGIC)
    path = tmp_path / "m.ckpt"
    path.write_bytes(blob)
    h = read_header(path)
    payload = blob[blob.index(b"\n", len(MAGIC)) + 1:]
    first = h["tensors"][0]
    n = int(np.prod(first["shape"]))
    arr = np.frombuffer(payload, dtype="<f8", count=n, offset=first["offset"])
    assert arr.tobytes() == p[first["name"]].data.astype("<f8").tobytes()
    assert len(payload) == 8 * p.n_params
    assert dumps_checkpoint(p, seed=1) == blob


def test_incompatible_and_corrupt():
    blob = dumps_checkpoint(tiny_model())
    with pytest.raises(IncompatibleCheckpoint):
        loads_checkpoint(blob, ModelConfig(**{**TINY.to_dict(), "z_dim": 8}))
    with pytest.raises(InputError):
        loads_checkpoint(b"NOPE\n{}\n")


def test_atomic_write_leaves_no_temp(tmp_path):
    save_checkpoint(tmp_path / "a.ckpt", tiny_model())
    assert [f.name for f in tmp_path.iterdir()] == ["a.ckpt"]
