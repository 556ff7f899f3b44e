import numpy as np
import pytest

from lcfm.dataio import LightCurve
from lcfm.errors import EmptySet
from lcfm.inference import (forecast, forecast_many, rank_anomalies, ranking_csv, recon_error,
                            score_curves)
from lcfm.model import add_classifier, forward
from lcfm.ssl import loss_recon

from helpers import tiny_model

rng = np.random.default_rng(5)


def _curves(n):
    return [LightCurve(f"c{i:02d}", rng.random(128), meta={"norad": 1000 + i}) for i in range(n)]


def test_recon_error_is_eval_mode_mse():
    p = tiny_model()
    c = _curves(1)[0]
    assert recon_error(p, c) == loss_recon(c.values, forward(p, c.values).recon)
    assert recon_error(p, c) == recon_error(p, c)


def test_identity_reconstruction_scores_zero():
    p = tiny_model(live_heads=False)
    # a decoder that outputs 0.5 everywhere
    for name in ("dec.3.W",):
        p[name].data[:] = 0.0
    p["dec.3.b"].data[:] = 0.5
    assert recon_error(p, np.full(128, 0.5)) == 0.0


def test_score_records_match_recon_error():
    p = tiny_model()
    curves = _curves(6)
    for c, r in zip(curves, score_curves(p, curves)):
        assert r.error == recon_error(p, c) and r.id == c.id and r.prob_anomaly is None


def test_rank_is_sorted_permutation():
    p = tiny_model()
    curves = _curves(9)
    rk = rank_anomalies(p, curves, 3)
    errs = [r.error for r in rk.ranked]
    assert errs == sorted(errs, reverse=True)
    assert sorted(r.id for r in rk.ranked) == sorted(c.id for c in curves)
    assert rk.top == rk.ranked[:3] and rk.bottom == rk.ranked[::-1][:3]
    full = rank_anomalies(p, curves, 9)
    assert full.top == full.ranked


def test_rank_ties_by_id():
    p = tiny_model()
    v = rng.random(128)
    curves = [LightCurve(i, v.copy()) for i in ("b", "c", "a")]
    assert [r.id for r in rank_anomalies(p, curves, 3).ranked] == ["a", "b", "c"]


def test_rank_empty():
    with pytest.raises(EmptySet):
        rank_anomalies(tiny_model(), [], 3)


def test_anomaly_probability_column():
    p = add_classifier(tiny_model(), ["NORMAL", "ANOMALY"])
    p["cls.b"].data[:] = 2.0
    r = score_curves(p, _curves(1))[0]
    assert r.prob_anomaly == pytest.approx(1 / (1 + np.exp(-2.0)))


def test_ranking_csv_columns():
    p = tiny_model()
    text = ranking_csv(rank_anomalies(p, _curves(3), 2).ranked)
    lines = text.splitlines()
    assert lines[0] == "rank,id,error,prob_anomaly,name,norad"
    assert lines[1].startswith("1,") and len(lines) == 4


def test_forecast_tail_indices_and_poisoned_tail():
    p = tiny_model()
    c = _curves(1)[0]
    f = forecast(p, c)
    np.testing.assert_array_equal(f.indices, np.arange(96, 128))
    poisoned = c.values.copy()
    poisoned[96:] = 1.0 - poisoned[96:]
    g = forecast(p, poisoned)
    assert g.predicted.tobytes() == f.predicted.tobytes()
    assert g.error != f.error
    many = forecast_many(p, [c])
    assert many[0].predicted.tobytes() == f.predicted.tobytes() and many[0].error == f.error
