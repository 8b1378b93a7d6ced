import numpy as np
import pytest

from mtlf.autodiff import Tape
from mtlf.dataset import MonthlySeries, synthesize
from mtlf.ets import EtsParams, init_params, register_ets, run_smoother
from mtlf.windowing import (
    build_series_samples,
    build_training_set,
    forecast_inputs,
    postprocess_forecast,
    preprocess_value,
)


def test_preprocess_values():
    assert preprocess_value(200.0, 100.0, 2.0) == 0.0
    assert preprocess_value(100.0 * np.e, 100.0, 1.0) == pytest.approx(1.0, abs=1e-15)
    assert preprocess_value(150.0, 100.0, 1.2) == pytest.approx(np.log(1.25), abs=1e-15)
    with pytest.raises(ValueError):
        preprocess_value(-1.0, 100.0, 1.0)
    with pytest.raises(ValueError):
        preprocess_value(1.0, 0.0, 1.0)


def test_postprocess_values():
    np.testing.assert_allclose(postprocess_forecast(np.zeros(12), 100.0, np.ones(12)), 100.0)
    out = postprocess_forecast(np.array([1.0] + [0.0] * 11), 100.0, np.array([2.0] + [1.0] * 11))
    assert out[0] == pytest.approx(200.0 * np.e, rel=1e-14)
    with pytest.raises(ValueError, match="non-finite"):
        postprocess_forecast(np.array([np.nan] * 12), 100.0, np.ones(12))


def test_round_trip_identity():
    rng = np.random.default_rng(2)
    for _ in range(50):
        y = rng.uniform(10.0, 1e4)
        level = rng.uniform(10.0, 1e4)
        s = rng.uniform(0.5, 2.0)
        x = preprocess_value(y, level, s)
        back = postprocess_forecast(np.array([x]), level, np.array([s]))[0]
        assert back == pytest.approx(y, rel=1e-12)


def test_scale_invariance():
    rng = np.random.default_rng(3)
    for _ in range(20):
        y, level, s = rng.uniform(1.0, 100.0, size=3)
        c = rng.uniform(1.5, 50.0)
        assert preprocess_value(c * y, c * level, s) == pytest.approx(
            preprocess_value(y, level, s), abs=1e-12
        )


def sample_counts(series):
    params = init_params(series)
    trace = run_smoother(series, params)
    return len(build_series_samples(series, trace))


def test_sample_counts():
    flat = lambda n: MonthlySeries("A", (2000, 1), np.full(n, 5.0))
    assert sample_counts(flat(24)) == 1
    assert sample_counts(flat(288)) == 265
    with pytest.raises(ValueError, match="24 months"):
        sample_counts(flat(23))


def test_anchors_are_consecutive_and_fields_positive():
    coll = synthesize(1, 4, seed=4)
    series = coll.series[0]
    trace = run_smoother(series, init_params(series))
    samples = build_series_samples(series, trace)
    anchors = [s.t_anchor for s in samples]
    assert anchors == list(range(11, len(series) - 12))
    for s in samples:
        assert float(s.level_star) > 0
        assert np.all(np.asarray(s.horizon_seasonals) > 0)
        assert np.all(np.isfinite(np.asarray(s.x_in)))
        assert np.all(np.isfinite(np.asarray(s.x_out)))


def test_perfect_multiplicative_series_gives_zero_patterns():
    rng = np.random.default_rng(5)
    season = rng.uniform(0.7, 1.3, size=12)
    season /= season.mean()
    y = 300.0 * np.tile(season, 3)
    series = MonthlySeries("A", (2000, 1), y)
    params = EtsParams(np.zeros(()), np.zeros(()), np.log(season))
    trace = run_smoother(series, params)
    for sample in build_series_samples(series, trace):
        np.testing.assert_allclose(np.asarray(sample.x_in), 0.0, atol=1e-10)
        np.testing.assert_allclose(np.asarray(sample.x_out), 0.0, atol=1e-10)


def test_build_training_set_groups_per_series():
    coll = synthesize(3, 3, seed=6)
    traces = {s.id: run_smoother(s, init_params(s)) for s in coll}
    ts = build_training_set(coll, traces)
    assert set(ts.per_series) == set(coll.ids)
    assert len(ts) == 3 * (36 - 23)


def test_dynamic_set_isolation_between_series():
    """Perturbing one series' raw parameters moves its own patterns only."""
    coll = synthesize(2, 3, seed=7)
    params = {s.id: init_params(s) for s in coll}

    def patterns(p):
        traces = {s.id: run_smoother(s, p[s.id]) for s in coll}
        ts = build_training_set(coll, traces)
        return {
            sid: np.concatenate([np.asarray(s.x_in) for s in samples])
            for sid, samples in ts.per_series.items()
        }

    before = patterns(params)
    a, b = coll.ids
    bumped = {a: params[a].copy(), b: params[b].copy()}
    bumped[a].alpha_raw = np.asarray(float(bumped[a].alpha_raw) + 0.3)
    after = patterns(bumped)
    assert not np.array_equal(before[a], after[a])
    np.testing.assert_array_equal(before[b], after[b])


def test_forecast_inputs_alignment():
    coll = synthesize(1, 4, seed=8)
    series = coll.series[0]
    trace = run_smoother(series, init_params(series))
    xs, level_star, horizon_seasonals = forecast_inputs(series, trace)
    assert len(xs) == len(series) - 11
    assert float(level_star) == pytest.approx(float(np.asarray(trace.levels)[-1]))
    np.testing.assert_array_equal(
        np.asarray(horizon_seasonals), np.asarray(trace.seasonals)[len(series):]
    )
    # final window is the last 12 observations
    np.testing.assert_allclose(
        np.asarray(xs[-1]),
        np.log(series.values[-12:])
        - np.log(np.asarray(trace.seasonals)[len(series) - 12 : len(series)])
        - np.log(float(level_star)),
        rtol=1e-12,
    )


def test_tape_mode_patterns_match_numpy_mode():
    coll = synthesize(1, 3, seed=9)
    series = coll.series[0]
    params = init_params(series)
    plain_trace = run_smoother(series, params)
    plain = build_series_samples(series, plain_trace)

    tape = Tape()
    leaves = register_ets(tape, params)
    rec_trace = run_smoother(series, leaves)
    recorded = build_series_samples(series, rec_trace)

    assert len(plain) == len(recorded)
    for p, r in zip(plain, recorded):
        np.testing.assert_array_equal(np.asarray(p.x_in), r.x_in.value)
        np.testing.assert_array_equal(np.asarray(p.x_out), r.x_out.value)
