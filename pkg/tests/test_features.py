import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from onlineglda.features import (BandSpec, FeatureVector, RawWindow, active_power,
                                 assemble_pattern_windows, feature_names, features_of,
                                 iter_raw_csv, make_feature_stream, reactive_power,
                                 rms_band_spectrum, samples_per_window, write_raw_csv)

RATE = 1000.0


def sinusoids(lag, f=50.0, seconds=1.0, rate=RATE):
    t = np.arange(int(seconds * rate)) / rate
    v = math.sqrt(2) * np.cos(2 * np.pi * f * t)
    i = math.sqrt(2) * np.cos(2 * np.pi * f * t - lag)
    return RawWindow(v, i, rate)


def test_raw_window_validation():
    with pytest.raises(ValueError, match="samples"):
        RawWindow([1.0, 2.0], [1.0], RATE)
    with pytest.raises(ValueError, match="at least 2"):
        RawWindow([1.0], [1.0], RATE)
    with pytest.raises(ValueError, match="rate"):
        RawWindow([1.0, 1.0], [1.0, 1.0], 0.0)


def test_active_power_examples():
    assert active_power(RawWindow(np.ones(8), np.ones(8), RATE)) == 1.0
    assert abs(active_power(sinusoids(np.pi / 2))) < 1e-12
    assert active_power(sinusoids(np.pi / 3)) == pytest.approx(0.5, abs=1e-12)


def test_reactive_power_examples():
    assert abs(reactive_power(sinusoids(0.0))) < 1e-9
    assert reactive_power(sinusoids(np.pi / 2)) == pytest.approx(1.0, abs=1e-9)
    assert reactive_power(sinusoids(np.pi / 3)) == pytest.approx(math.sin(math.pi / 3), abs=1e-9)


def test_power_triangle_identity():
    rng = np.random.default_rng(0)
    for _ in range(50):
        w = RawWindow(rng.normal(size=200), rng.normal(size=200), RATE)
        P, Q = active_power(w), reactive_power(w)
        S = math.sqrt(np.mean(w.voltage ** 2)) * math.sqrt(np.mean(w.current ** 2))
        assert P * P + Q * Q == pytest.approx(S * S, rel=1e-9)
        assert Q >= 0


@pytest.mark.parametrize("c", [2.0, 10.0])
def test_current_scaling(c):
    rng = np.random.default_rng(1)
    v, i = rng.normal(size=500), rng.normal(size=500)
    bands = BandSpec.default(RATE)
    a = features_of(RawWindow(v, i, RATE), bands)
    b = features_of(RawWindow(v, c * i, RATE), bands)
    assert b.active_power == pytest.approx(c * a.active_power, rel=1e-12)
    assert b.reactive_power == pytest.approx(c * a.reactive_power, rel=1e-12)
    np.testing.assert_allclose(b.band_rms, c * a.band_rms, rtol=1e-12)


def test_band_spec_validation_and_default():
    with pytest.raises(ValueError, match="ascending"):
        BandSpec((0.0, 100.0, 100.0))
    with pytest.raises(ValueError, match=">= 0"):
        BandSpec((-1.0, 10.0))
    with pytest.raises(ValueError, match="two edges"):
        BandSpec((1.0,))
    with pytest.raises(ValueError, match="Nyquist"):
        BandSpec((0.0, 600.0)).check(RATE)
    d = BandSpec.default(RATE)
    assert d.count == 8 and d.edges[0] == 0.0 and d.edges[-1] == 500.0
    ratios = np.array(d.edges[2:]) / np.array(d.edges[1:-1])
    np.testing.assert_allclose(ratios, 2.0)


def test_band_rms_dc_and_sine():
    bands = BandSpec((0.0, 100.0, 200.0))
    dc = rms_band_spectrum(RawWindow(np.ones(400), np.ones(400), 400.0), bands)
    np.testing.assert_allclose(dc, [1.0, 0.0], atol=1e-12)
    t = np.arange(400) / 400.0
    sine = rms_band_spectrum(RawWindow(np.ones(400), math.sqrt(2) * np.sin(2 * np.pi * 50 * t), 400.0), bands)
    np.testing.assert_allclose(sine, [1.0, 0.0], atol=1e-12)


def test_band_rms_bin_on_edge_goes_to_upper_band():
    t = np.arange(400) / 400.0
    x = math.sqrt(2) * np.cos(2 * np.pi * 100 * t)  # exactly on the 100 Hz edge
    out = rms_band_spectrum(RawWindow(np.ones(400), x, 400.0), BandSpec((0.0, 100.0, 200.0)))
    np.testing.assert_allclose(out, [0.0, 1.0], atol=1e-12)


def test_band_rms_parseval_random_windows():
    rng = np.random.default_rng(2)
    for _ in range(100):
        N = int(rng.integers(2, 600))
        rate = float(rng.choice([100.0, 1000.0, 8000.0]))
        inner = np.sort(rng.uniform(0, rate / 2, size=int(rng.integers(0, 6))))
        bands = BandSpec((0.0, *np.unique(inner[inner > 0]), rate / 2))
        x = rng.normal(size=N) * rng.uniform(0.1, 10) + rng.normal()
        out = rms_band_spectrum(RawWindow(np.ones(N), x, rate), bands)
        assert np.all(out >= 0)
        assert np.sum(out ** 2) == pytest.approx(np.mean(x ** 2), rel=1e-9)


def test_band_rms_partial_coverage_is_a_lower_bound():
    rng = np.random.default_rng(3)
    x = rng.normal(size=256)
    out = rms_band_spectrum(RawWindow(np.ones(256), x, RATE), BandSpec((100.0, 200.0)))
    assert out.shape == (1,) and 0 < out[0] ** 2 < np.mean(x ** 2)


def test_samples_per_window():
    assert samples_per_window(1000.0, 1.0) == 1000
    with pytest.raises(ValueError):
        samples_per_window(1000.0, 0.0)
    with pytest.raises(ValueError, match="whole number"):
        samples_per_window(3.0, 0.5)


def _stream(seconds, rate=100.0, v=None, i=None):
    n = int(round(seconds * rate))
    rng = np.random.default_rng(4)
    vv = rng.normal(size=n) if v is None else np.full(n, v)
    ii = rng.normal(size=n) if i is None else np.full(n, i)
    return [(k / rate, vv[k], ii[k]) for k in range(n)]


def test_feature_stream_counts():
    bands = BandSpec.default(100.0)
    assert len(list(make_feature_stream(_stream(10.0), 100.0, 1.0, bands))) == 10
    assert len(list(make_feature_stream(_stream(10.5), 100.0, 1.0, bands))) == 10
    assert list(make_feature_stream([], 100.0, 1.0, bands)) == []


def test_feature_stream_dc_and_timestamps():
    feats = list(make_feature_stream(_stream(3.0, v=1.0, i=1.0), 100.0, 1.0, BandSpec.default(100.0)))
    assert [f.timestamp for f in feats] == [0.0, 1.0, 2.0]
    for f in feats:
        assert f.active_power == 1.0 and f.reactive_power == 0.0


def test_feature_stream_is_pure():
    bands = BandSpec.default(100.0)
    a = [f.as_row() for f in make_feature_stream(_stream(5.0), 100.0, 1.0, bands)]
    b = [f.as_row() for f in make_feature_stream(_stream(5.0), 100.0, 1.0, bands)]
    assert all(np.array_equal(x, y) for x, y in zip(a, b)) and len(a) == 5


def test_feature_names():
    assert feature_names(BandSpec((0.0, 10.0, 50.0))) == ["real_power", "reactive_power", "rms_0", "rms_1"]


def test_assemble_pattern_windows_examples():
    rows = [FeatureVector(float(t), 1.0, 0.0, np.zeros(2), np.array([5.0])) for t in range(1800)]
    assert len(list(assemble_pattern_windows(rows[:900], 900))) == 1
    wins = list(assemble_pattern_windows(rows, 900))
    assert len(wins) == 2
    assert [w.start_time for w in wins] == [0.0, 900.0]
    assert all(w.observations.shape == (900, 5) for w in wins)
    assert wins[0].span == 900.0
    assert len(list(assemble_pattern_windows(rows[:1799], 900))) == 1  # trailing part dropped


def test_assemble_pattern_windows_plain_rows_and_errors():
    wins = list(assemble_pattern_windows(np.arange(12.0).reshape(6, 2), 3, feature_seconds=2.0))
    assert [w.start_time for w in wins] == [0.0, 6.0]
    np.testing.assert_array_equal(wins[1].observations, [[6, 7], [8, 9], [10, 11]])
    with pytest.raises(ValueError, match=">= 1"):
        list(assemble_pattern_windows([], 0))
    with pytest.raises(ValueError, match="columns"):
        list(assemble_pattern_windows([np.zeros(2), np.zeros(3)], 2))


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 40), st.integers(1, 8))
def test_assemble_pattern_windows_partition(count, n):
    rows = np.arange(count * 2.0).reshape(count, 2)
    wins = list(assemble_pattern_windows(rows, n))
    assert len(wins) == count // n
    if wins:
        np.testing.assert_array_equal(np.vstack([w.observations for w in wins]), rows[: len(wins) * n])


def test_raw_csv_round_trip_and_header(tmp_path):
    t = 1_500_000_000 * 10**9 + np.arange(5) * 1_000_000
    v = np.array([0.1, -2.5, 3.0, 1e-17, 230.123456789])
    i = np.array([1.0, 2.0, 3.0, 4.0, 5.0]) / 3
    p = tmp_path / "raw.csv"
    write_raw_csv(p, t, v, i)
    rows = list(iter_raw_csv(p))
    assert [r[0] for r in rows] == list(t)
    np.testing.assert_array_equal([r[1] for r in rows], v)
    np.testing.assert_array_equal([r[2] for r in rows], i)
    bad = tmp_path / "bad.csv"
    bad.write_text("time,v,i\n")
    with pytest.raises(ValueError, match="line 1"):
        list(iter_raw_csv(bad))
    bad.write_text("timestamp,voltage,current\n0,1,2\n1,x,2\n")
    with pytest.raises(ValueError, match="line 3"):
        list(iter_raw_csv(bad))
