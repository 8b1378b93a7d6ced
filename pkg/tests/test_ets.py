import numpy as np
import pytest

from mtlf.autodiff import Tape, check_gradients, vmean, log as vlog
from mtlf.dataset import MonthlySeries, synthesize
from mtlf.ets import EtsParams, init_params, register_ets, run_smoother


def make_series(values, sid="A"):
    return MonthlySeries(sid, (2000, 1), np.asarray(values, dtype=float))


def raw(alpha, beta, seasonals):
    """Raw parameters for given effective alpha/beta/initial seasonals."""
    logit = lambda p: np.log(p / (1.0 - p))
    return EtsParams(
        alpha_raw=np.asarray(logit(alpha)),
        beta_raw=np.asarray(logit(beta)),
        init_season_raw=np.log(np.asarray(seasonals, dtype=float)),
    )


TWO_STEP_Y = [100.0, 110.0, 90.0, 95.0, 105.0, 100.0, 98.0, 102.0, 97.0, 103.0, 96.0, 104.0]
assert np.mean(TWO_STEP_Y) == 100.0  # initial level must be exactly 100


def test_constant_series_is_fixed_point():
    series = make_series(np.full(30, 7.5))
    for alpha, beta in [(0.1, 0.9), (0.5, 0.5), (0.95, 0.05)]:
        trace = run_smoother(series, raw(alpha, beta, np.ones(12)))
        np.testing.assert_allclose(trace.levels, 7.5, rtol=1e-12)
        np.testing.assert_allclose(trace.seasonals, 1.0, rtol=1e-12)
    assert trace.initial_level == 7.5


def test_two_step_hand_unroll():
    # alpha = beta = 0.5, unit seasonals, initial level 100:
    #   l1 = 0.5 * 100 + 0.5 * 100 = 100
    #   l2 = 0.5 * 110 + 0.5 * 100 = 105
    #   s13 = 0.5 * (100 / 100) + 0.5 = 1
    #   s14 = 0.5 * (110 / 105) + 0.5 = 1.0238095...
    trace = run_smoother(make_series(TWO_STEP_Y), raw(0.5, 0.5, np.ones(12)))
    assert float(trace.levels[0]) == pytest.approx(100.0, abs=1e-12)
    assert float(trace.levels[1]) == pytest.approx(105.0, abs=1e-12)
    assert float(trace.seasonals[12]) == pytest.approx(1.0, abs=1e-12)
    assert float(trace.seasonals[13]) == pytest.approx(0.5 * (110.0 / 105.0) + 0.5, abs=1e-12)


def test_alpha_zero_freezes_level():
    series = make_series(np.linspace(50, 150, 36))
    params = raw(0.5, 0.5, np.ones(12))
    params.alpha_raw = np.asarray(-40.0)  # logistic(-40) ~ 0
    trace = run_smoother(series, params)
    l0 = series.values[:12].mean()
    np.testing.assert_allclose(trace.levels, l0, rtol=1e-12)


def test_trace_lengths_and_min_length():
    series = make_series(np.full(27, 3.0))
    trace = run_smoother(series, raw(0.3, 0.3, np.ones(12)))
    assert len(trace.levels) == 27
    assert len(trace.seasonals) == 27 + 12
    with pytest.raises(ValueError, match="at least 12"):
        run_smoother(make_series(np.ones(11)), raw(0.3, 0.3, np.ones(12)))


def test_multiplicative_fixed_point_any_coefficients():
    rng = np.random.default_rng(8)
    season = rng.uniform(0.6, 1.4, size=12)
    season /= season.mean()  # arithmetic mean 1 so the initial level equals c
    c = 250.0
    y = c * np.tile(season, 4)
    series = make_series(y)
    for alpha, beta in [(0.2, 0.7), (0.8, 0.1)]:
        trace = run_smoother(series, raw(alpha, beta, season))
        np.testing.assert_allclose(trace.levels, c, rtol=1e-10)
        np.testing.assert_allclose(trace.seasonals, np.tile(season, 5), rtol=1e-10)


def test_positivity_for_any_raw_parameters():
    rng = np.random.default_rng(21)
    coll = synthesize(3, 4, seed=17)
    for series in coll:
        for _ in range(5):
            params = EtsParams(
                alpha_raw=rng.uniform(-4, 4, size=()),
                beta_raw=rng.uniform(-4, 4, size=()),
                init_season_raw=rng.uniform(-1.5, 1.5, size=12),
            )
            trace = run_smoother(series, params)
            assert np.all(np.asarray(trace.levels) > 0)
            assert np.all(np.asarray(trace.seasonals) > 0)


def test_smaller_alpha_gives_smoother_levels():
    coll = synthesize(2, 6, seed=33, noise=0.05)
    wiggle = lambda lv: float(np.sum(np.diff(np.log(np.asarray(lv))) ** 2))
    for series in coll:
        low = run_smoother(series, raw(0.1, 0.3, np.ones(12)))
        high = run_smoother(series, raw(0.9, 0.3, np.ones(12)))
        assert wiggle(low.levels) <= wiggle(high.levels)


def test_init_params_flat_series():
    series = make_series(np.full(36, 42.0))
    p = init_params(series)
    np.testing.assert_allclose(p.init_season_raw, 0.0, atol=1e-12)
    assert float(1.0 / (1.0 + np.exp(-p.alpha_raw))) == 0.5
    assert float(1.0 / (1.0 + np.exp(-p.beta_raw))) == 0.5


def test_init_params_month_ratio():
    # month 7 carries exactly twice the two-year mean in both years
    y = np.full(24, 100.0)
    y[6] = y[18] = 220.0
    assert y[6] == 2 * y.mean()
    p = init_params(make_series(y))
    assert float(np.exp(p.init_season_raw[6])) == pytest.approx(2.0, rel=1e-12)


def test_init_params_needs_two_years():
    with pytest.raises(ValueError, match="24 months"):
        init_params(make_series(np.ones(23)))


def test_tape_mode_matches_numpy_mode():
    coll = synthesize(1, 4, seed=55)
    series = coll.series[0]
    params = init_params(series)
    plain = run_smoother(series, params)
    tape = Tape()
    leaves = register_ets(tape, params)
    recorded = run_smoother(series, leaves)
    np.testing.assert_array_equal(np.asarray(plain.levels), recorded.levels.value)
    np.testing.assert_array_equal(np.asarray(plain.seasonals), recorded.seasonals.value)


def test_gradients_through_smoother():
    series = make_series(np.tile(TWO_STEP_Y, 2) * np.linspace(1.0, 1.3, 24))
    base = init_params(series)

    def builder(tape, leaves):
        params = EtsParams(leaves["alpha_raw"], leaves["beta_raw"], leaves["init_season_raw"])
        trace = run_smoother(series, params)
        rel = trace.levels / trace.initial_level
        return vmean(vlog(rel) * vlog(rel)) + vmean(vlog(trace.seasonals) * vlog(trace.seasonals))

    res = check_gradients(builder, dict(base.named()), step=1e-5)
    assert res.max_error < 1e-4, res
