import io
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lcfm.dataio import (LightCurve, RawCurve, dumps_csv, dumps_jsonl, parse_track_file, read_csv,
                         read_jsonl, resample, scan_tracks, split_dataset, standardize,
                         to_light_curve)
from lcfm.errors import (BadRatios, EmptyFile, InputError, MissingLabels, NonMonotonicTime,
                         TooFewPoints, VocabMismatch)


def test_three_line_track():
    (c,) = parse_track_file("0.0 7.1\n0.5 7.2\n1.0 7.0\n")
    np.testing.assert_array_equal(c.timestamps, [0.0, 0.5, 1.0])
    np.testing.assert_array_equal(c.magnitudes, [7.1, 7.2, 7.0])


def test_comment_only_file_is_empty():
    with pytest.raises(EmptyFile):
        parse_track_file("# nothing\n# here\n")


def test_decreasing_time_rejected():
    with pytest.raises(NonMonotonicTime):
        parse_track_file("0.0 1\n1.0 2\n0.5 3\n")


def test_blank_lines_separate_tracks_and_metadata_attaches():
    text = ("# id: a\n# norad: 123\n# label: SPIN\n0 1 99\n1 2 99\n\n"
            "# name: B-SAT\n0 5\n2 6\n3 7\n")
    tracks = parse_track_file(io.StringIO(text))
    assert len(tracks) == 2
    assert tracks[0].id == "a" and tracks[0].norad == 123 and tracks[0].label == "SPIN"
    assert tracks[1].object_name == "B-SAT" and len(tracks[1]) == 3


def test_bad_magnitudes_are_counted():
    text = "# hdr\n0 1\n1 nan?\n2 x\n3 4\n\n"
    rep = scan_tracks(text)
    assert rep.records == 2 and rep.skipped == 2
    assert rep.records + rep.skipped == 4


@settings(max_examples=40, deadline=None)
@given(st.lists(st.one_of(st.just("ok"), st.just("bad"), st.just("#"), st.just("")), max_size=40))
def test_records_plus_skipped_is_line_count(kinds):
    lines, t = [], 0.0
    for k in kinds:
        if k == "ok":
            t += 1.0
            lines.append(f"{t} {t % 3}")
        elif k == "bad":
            lines.append(f"{t + 0.5} ??")
        else:
            lines.append(k)
    rep = scan_tracks("\n".join(lines))
    assert rep.records + rep.skipped == kinds.count("ok") + kinds.count("bad")


def test_resample_two_points_closed_form():
    v = resample(RawCurve("x", [0.0, 1.0], [0.0, 1.0]))
    for k in (0, 64, 127):
        assert v[k] == pytest.approx(k / 127, abs=1e-15)


def test_resample_constant_and_linear():
    t = np.sort(np.random.default_rng(3).random(40)) * 100
    np.testing.assert_array_equal(resample(RawCurve("c", t, np.full(40, 7.0))), 7.0)
    v = resample(RawCurve("l", t, 0.3 * t - 2))
    grid = np.linspace(t[0], t[-1], 128)
    np.testing.assert_allclose(v, 0.3 * grid - 2, atol=1e-9)
    assert v[0] == 0.3 * t[0] - 2 and v[-1] == 0.3 * t[-1] - 2


def test_resample_needs_two_points():
    with pytest.raises(TooFewPoints):
        resample(RawCurve("x", [0.0], [1.0]))


def test_standardize_examples():
    np.testing.assert_array_equal(standardize([2, 4, 6]), [0, 0.5, 1])
    np.testing.assert_array_equal(standardize([3, 3, 3]), [0.5] * 3)
    v = np.linspace(0, 1, 11)
    np.testing.assert_allclose(standardize(v), v, atol=1e-12)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-1e6, 1e6, allow_nan=False), min_size=2, max_size=60))
def test_resampled_standardised_values_in_unit_interval(mags):
    t = np.arange(len(mags), dtype=float)
    lc = to_light_curve(RawCurve("h", t, mags))
    assert lc.values.min() >= 0.0 and lc.values.max() <= 1.0


def _curves(n, k=2, seed=0):
    rng = np.random.default_rng(seed)
    return [LightCurve(f"c{i}", rng.random(128), i % k, {"norad": i}) for i in range(n)]


def test_jsonl_roundtrip_bit_identical():
    curves = _curves(5)
    curves[0].values[3] = 0.1 + 0.2  # awkward binary fraction
    back = read_jsonl(io.StringIO(dumps_jsonl(curves, ["A", "B"])), ["A", "B"])
    for a, b in zip(curves, back):
        assert a.values.tobytes() == b.values.tobytes()
        assert (a.id, a.label, a.meta) == (b.id, b.label, b.meta)


def test_csv_roundtrip_bit_identical():
    curves = _curves(4)
    back = read_csv(io.StringIO(dumps_csv(curves, ["A", "B"])), ["A", "B"])
    assert [c.label for c in back] == [c.label for c in curves]
    for a, b in zip(curves, back):
        assert a.values.tobytes() == b.values.tobytes()


def test_unknown_label_is_vocab_mismatch():
    line = '{"id": "a", "values": [0.5], "label": "X"}'.replace("[0.5]", str([0.5] * 128))
    with pytest.raises(VocabMismatch):
        read_jsonl(io.StringIO(line), ["A", "B"])


def test_lightcurve_rejects_out_of_range():
    with pytest.raises(InputError):
        LightCurve("x", np.full(128, 1.5))
    with pytest.raises(InputError):
        LightCurve("x", np.zeros(100))


def test_split_deterministic_and_disjoint():
    curves = _curves(10)
    a = split_dataset(curves, (0.8, 0.1, 0.1), seed=7)
    b = split_dataset(curves, (0.8, 0.1, 0.1), seed=7)
    assert a == b
    assert sorted(a.train + a.val + a.test) == list(range(10))


@settings(max_examples=30, deadline=None)
@given(st.lists(st.integers(0, 3), min_size=12, max_size=200), st.integers(0, 10_000))
def test_stratified_split_within_one(labels, seed):
    curves = [LightCurve(f"c{i}", np.zeros(128), lbl) for i, lbl in enumerate(labels)]
    ratios = (0.7, 0.15, 0.15)
    s = split_dataset(curves, ratios, seed=seed, stratify=True)
    assert sorted(s.train + s.val + s.test) == list(range(len(labels)))
    total = Counter(labels)
    for part, r in zip((s.train, s.val, s.test), ratios):
        got = Counter(labels[i] for i in part)
        for k, n in total.items():
            assert abs(got[k] - r * n) <= 1.0


def test_fifty_fifty_stratified():
    curves = _curves(100)
    s = split_dataset(curves, (0.8, 0.1, 0.1), seed=1, stratify=True)
    for part in (s.train, s.val, s.test):
        c = Counter(curves[i].label for i in part)
        assert abs(c[0] - c[1]) <= 1


def test_split_errors():
    with pytest.raises(BadRatios):
        split_dataset(_curves(4), (0.5, 0.5, 0.5))
    with pytest.raises(MissingLabels):
        split_dataset([LightCurve("u", np.zeros(128))] * 3, stratify=True)
