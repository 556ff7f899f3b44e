import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lcfm import autodiff as ad
from lcfm.autodiff import Tensor
from lcfm.encoding import build_input
from lcfm.errors import BadConfig, NoHead, ShapeMismatch
from lcfm.gradcheck import grad_check
from lcfm.model import (ModelConfig, ModelParams, add_classifier, classify, decode, encode,
                        forward, init_model, logits_to_probs, predict, reparameterize, run)
from lcfm.ssl import loss_kl

from helpers import TINY, TINY_ENC, key_bias_names, rebuild, tiny_model

rng = np.random.default_rng(42)


def test_parameter_counts():
    # summed over declared shapes; see the README table
    assert init_model(ModelConfig(), 0).n_params == 1_364_484
    assert init_model(ModelConfig.small(), 0).n_params == 697_860


def test_parameter_count_matches_shape_sum():
    p = init_model(ModelConfig.small(), 0)
    assert p.n_params == sum(int(np.prod(t.shape)) for t in p.tensors.values())


def test_init_deterministic():
    a, b = init_model(TINY, 3, TINY_ENC), init_model(TINY, 3, TINY_ENC)
    for k in a:
        assert a[k].data.tobytes() == b[k].data.tobytes()
    c = init_model(TINY, 4, TINY_ENC)
    assert any(not np.array_equal(a[k].data, c[k].data) for k in a)


def test_zero_heads_give_zero_kl_at_init():
    p = init_model(TINY, 0, TINY_ENC)
    mu, logvar = encode(p, build_input(rng.random((5, 128)), TINY_ENC))
    assert np.all(mu.data == 0.0) and np.all(logvar.data == 0.0)
    assert np.all(loss_kl(mu.data, logvar.data) == 0.0)


def test_reparameterize_examples():
    mu = rng.standard_normal(6)
    z = reparameterize(mu, rng.standard_normal(6), np.zeros(6))
    assert z.data.tobytes() == mu.tobytes()
    e = rng.standard_normal(6)
    np.testing.assert_allclose(reparameterize(mu, np.zeros(6), e).data, mu + e, atol=1e-15)
    z2 = reparameterize(np.zeros(1), np.array([2 * np.log(2)]), np.ones(1)).data[0]
    assert abs(z2 - 2.0) < 1e-12


def test_encode_pure_and_finite():
    p = tiny_model()
    x = build_input(rng.random(128), TINY_ENC)
    a, b = encode(p, x), encode(p, x)
    assert a[0].data.tobytes() == b[0].data.tobytes()
    assert np.all(np.isfinite(a[0].data)) and np.all(np.abs(a[0].data) < 1e3)


def test_encode_invariant_to_input_row_permutation():
    p = tiny_model()
    x = build_input(rng.random(128), TINY_ENC)
    perm = rng.permutation(128)
    np.testing.assert_allclose(encode(p, x[perm])[0].data, encode(p, x)[0].data, atol=1e-12)


def test_encode_invariant_to_latent_row_permutation():
    p = tiny_model()
    x = build_input(rng.random(128), TINY_ENC)
    q = p.copy()
    q["latents"].data = q["latents"].data[rng.permutation(TINY.n_latents)]
    for a, b in zip(encode(p, x), encode(q, x)):
        np.testing.assert_allclose(a.data, b.data, atol=1e-12)


def test_logvar_is_clamped():
    p = tiny_model()
    x = build_input(rng.random(128), TINY_ENC)
    for bias, bound in ((1e3, 10.0), (-1e3, -10.0)):
        p["head.logvar.b"].data[:] = bias
        _, lv = encode(p, x)
        assert np.all(lv.data == bound)


def test_decode_shapes_and_purity():
    p = tiny_model()
    z = rng.standard_normal(4)
    r1, r2 = decode(p, z).data, decode(p, z).data
    assert r1.shape == (128,) and r1.tobytes() == r2.tobytes()
    z2 = z.copy()
    z2[0] += 0.5
    assert not np.allclose(decode(p, z2).data, r1)
    with pytest.raises(ShapeMismatch):
        decode(p, np.zeros(5))


def test_decoder_gradient():
    p = tiny_model()
    names = [n for n in p if n.startswith("dec.")]

    def fn(z, *ws):
        q = ModelParams(p.config, p.enc, {**p.tensors, **dict(zip(names, ws))})
        return decode(q, z)

    inputs = [rng.standard_normal((3, 4))] + [p[n].data for n in names]
    assert grad_check(fn, inputs) < 1e-5


def test_classifier_head():
    p = tiny_model(classes=list("ABCDEF"), live_heads=False)
    probs = classify(p, rng.standard_normal((7, 4)))
    np.testing.assert_allclose(probs, 1 / 6, atol=1e-15)
    p["cls.W"].data = rng.standard_normal(p["cls.W"].shape)
    probs = classify(p, rng.standard_normal((50, 4)))
    np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-9)
    with pytest.raises(NoHead):
        classify(tiny_model(), np.zeros(4))


@settings(max_examples=100, deadline=None)
@given(st.floats(-30, 30, allow_nan=False))
def test_binary_threshold_matches_two_class_softmax(logit):
    p = tiny_model(classes=["NORMAL", "ANOMALY"], live_heads=False)
    pb = logits_to_probs(p, np.array([logit]))
    # the single-logit sigmoid equals a softmax over the logits (0, l)
    e = np.exp(np.array([0.0, logit]) - max(0.0, logit))
    soft = e / e.sum()
    np.testing.assert_allclose(pb, soft, atol=1e-12)
    if abs(logit) > 1e-9:
        assert (pb[1] > 0.5) == (np.argmax(soft) == 1)


def test_add_classifier_keeps_backbone():
    p = tiny_model()
    q = add_classifier(p, ["X", "Y", "Z"], seed=1)
    assert q.has_head and q.classes == ("X", "Y", "Z")
    for k in p:
        assert q[k].data.tobytes() == p[k].data.tobytes()
    assert np.all(q["cls.W"].data == 0)


def test_forward_modes():
    p = tiny_model()
    v = rng.random(128)
    a, b = forward(p, v), forward(p, v)
    assert a.recon.tobytes() == b.recon.tobytes() and a.z.tobytes() == a.mu.tobytes()
    c, d = forward(p, v, np.random.default_rng(9)), forward(p, v, np.random.default_rng(9))
    assert c.z.tobytes() == d.z.tobytes() and c.recon.tobytes() == d.recon.tobytes()
    assert not np.array_equal(c.z, a.z)
    assert a.recon.shape == (128,)


def test_predict_matches_forward():
    p = tiny_model()
    vals = rng.random((5, 128))
    out = predict(p, vals, batch=2)
    for i in range(5):
        np.testing.assert_allclose(out["recon"][i], forward(p, vals[i]).recon, atol=1e-12)


def test_bad_config():
    with pytest.raises(BadConfig):
        ModelConfig(latent_dim=10, heads=4)
    with pytest.raises(BadConfig):
        ModelConfig(output_len=100)
    with pytest.raises(BadConfig):
        ModelConfig(z_dim=0)


def test_encoder_gradient_end_to_end():
    p = tiny_model()
    names = sorted(p)
    x = build_input(rng.random((2, 128)), TINY_ENC)

    def fn(*ws):
        mu, lv = encode(rebuild(p, names, ws), x)
        return ad.concat([mu, lv], axis=-1)

    skip = set(key_bias_names(p))
    wrt = [i for i, n in enumerate(names) if n in p and not n.startswith("dec.") and n not in skip]
    assert grad_check(fn, [p[n].data for n in names], wrt=wrt, n_probe=8) < 1e-4
