import math

import numpy as np
import pytest

import oracles
from shb.decay import (
    DecayCurve,
    ExpComponent,
    FitReport,
    MultiExpModel,
    eval_multiexp,
    fit_multiexp,
    select_components,
    weight_stats,
)
from shb.errors import ValidationError
from shb.model import Condition
from shb import rng as shbrng

N_PROPERTY_CASES = 1000

FIG3_MODEL = MultiExpModel(
    components=(ExpComponent(0.52, 6.3), ExpComponent(0.31, 395.7), ExpComponent(0.17, 33961.8))
)
FIG2_MODEL = MultiExpModel(components=(ExpComponent(0.62, 8.4), ExpComponent(0.38, 591.4)))


def random_model(rng, n, ratio_min=10.0, baseline=0.0):
    taus = [10 ** rng.uniform(-1, 1)]
    for _ in range(n - 1):
        taus.append(taus[-1] * ratio_min * 10 ** rng.uniform(0, 1))
    amps = rng.uniform(0.2, 1.0, n)
    return MultiExpModel(
        components=tuple(ExpComponent(float(a), float(t)) for a, t in zip(amps, taus)),
        baseline=baseline,
    )


def curve_from_model(model, n_points=40, t_lo=None, t_hi=None, condition=None):
    taus = model.lifetimes()
    t_lo = 0.01 * taus[0] if t_lo is None else t_lo
    t_hi = 10.0 * taus[-1] if t_hi is None else t_hi
    t = np.geomspace(t_lo, t_hi, n_points)
    return DecayCurve(times=t, areas=eval_multiexp(model, t), condition=condition)


# ---------------------------------------------------------------------------
# eval_multiexp


def test_eval_at_zero_is_total_amplitude():
    model = MultiExpModel(
        components=(ExpComponent(0.4, 2.0), ExpComponent(0.6, 50.0)), baseline=0.25
    )
    assert eval_multiexp(model, 0.0) == pytest.approx(0.25 + 1.0, rel=1e-15)


def test_eval_asymptote_reaches_baseline():
    model = MultiExpModel(
        components=(ExpComponent(0.4, 2.0), ExpComponent(0.6, 50.0)), baseline=0.75
    )
    t = 51.0 * 50.0  # beyond 50 lifetimes of the slowest component
    assert abs(eval_multiexp(model, t) - 0.75) <= 0.75 * 1e-20


def test_eval_reference_point_matches_oracle():
    # value at t = 6.3 s for the published three-component parameters,
    # frozen from the arbitrary-precision evaluation
    got = eval_multiexp(FIG3_MODEL, 6.3)
    assert got == pytest.approx(0.666369301856, rel=1e-11)
    assert got == pytest.approx(
        float(oracles.multiexp([0.52, 0.31, 0.17], [6.3, 395.7, 33961.8], 6.3)), rel=1e-13
    )


def test_eval_rejects_negative_time():
    with pytest.raises(ValidationError):
        eval_multiexp(FIG2_MODEL, -1.0)


def test_model_validation():
    with pytest.raises(ValidationError):
        MultiExpModel(components=(ExpComponent(0.5, 10.0), ExpComponent(0.5, 2.0)))
    with pytest.raises(ValidationError):
        MultiExpModel(components=())
    with pytest.raises(ValidationError):
        ExpComponent(0.5, -2.0)


def test_curve_validation():
    t = np.geomspace(0.1, 10, 12)
    y = np.ones(12)
    DecayCurve(times=t, areas=y)
    with pytest.raises(ValidationError):
        DecayCurve(times=t[::-1], areas=y)
    with pytest.raises(ValidationError):
        DecayCurve(times=t, areas=y, sigmas=np.zeros(12))


# ---------------------------------------------------------------------------
# fit_multiexp


def test_fit_recovers_three_component_reference():
    curve = curve_from_model(FIG3_MODEL, n_points=60, t_lo=0.1, t_hi=1e5)
    report = fit_multiexp(curve, 3)
    np.testing.assert_allclose(report.model.lifetimes(), [6.3, 395.7, 33961.8], rtol=1e-6)
    np.testing.assert_allclose(report.model.amplitudes(), [0.52, 0.31, 0.17], rtol=1e-6)
    np.testing.assert_allclose(report.weights, [0.52, 0.31, 0.17], rtol=1e-6)
    assert report.converged and not report.degenerate


def test_fit_recovers_two_component_reference():
    curve = curve_from_model(FIG2_MODEL, n_points=40, t_lo=0.1, t_hi=1e4)
    report = fit_multiexp(curve, 2)
    np.testing.assert_allclose(report.model.lifetimes(), [8.4, 591.4], rtol=1e-6)
    np.testing.assert_allclose(report.weights, [0.62, 0.38], rtol=1e-6)


def test_fit_single_component_identity():
    model = MultiExpModel(components=(ExpComponent(1.7, 42.0),))
    curve = curve_from_model(model)
    report = fit_multiexp(curve, 1)
    assert report.model.lifetimes()[0] == pytest.approx(42.0, rel=1e-8)
    assert report.weights[0] == 1.0


def test_fit_weights_normalized_and_cov_shape():
    curve = curve_from_model(FIG2_MODEL, n_points=40, t_lo=0.1, t_hi=1e4)
    report = fit_multiexp(curve, 2)
    assert math.fsum(report.weights) == pytest.approx(1.0, abs=1e-12)
    assert report.param_cov.shape == (4, 4)
    assert report.n_params == 4


def test_fit_respects_sample_minimums():
    t = np.geomspace(0.1, 100, 10)
    curve = DecayCurve(times=t, areas=np.exp(-t / 5.0))
    with pytest.raises(ValidationError):
        fit_multiexp(curve, 3)  # needs 12
    fit_multiexp(curve, 2)  # 8 suffice


def test_weighted_fit_uses_sigmas():
    curve = curve_from_model(FIG2_MODEL, n_points=40, t_lo=0.1, t_hi=1e4)
    noisy = DecayCurve(
        times=curve.times,
        areas=curve.areas * (1 + 0.02 * shbrng.normal_stream(5, 0, len(curve))),
        sigmas=0.02 * np.abs(curve.areas),
        condition=Condition(0.18, 0.05),
    )
    report = fit_multiexp(noisy, 2)
    # chi-square per dof should be O(1) when sigmas are honest
    assert report.rss / (len(noisy) - report.n_params) < 3.0
    assert report.condition == noisy.condition


# ---------------------------------------------------------------------------
# select_components


def test_select_single_exponential():
    model = MultiExpModel(components=(ExpComponent(2.0, 5.0),))
    sel = select_components(curve_from_model(model), 3)
    assert sel.chosen_n == 1


def test_select_three_components_monte_carlo():
    t = np.geomspace(0.1, 1e5, 60)
    clean = eval_multiexp(FIG3_MODEL, t)
    hits = 0
    trials = 100
    for seed in range(trials):
        sig = 0.01 * np.abs(clean)
        y = clean + sig * shbrng.normal_stream(seed, 0, t.size)
        sel = select_components(DecayCurve(times=t, areas=y, sigmas=sig), 3)
        hits += sel.chosen_n == 3
    assert hits >= 0.95 * trials


def test_select_two_components_monte_carlo():
    t = np.geomspace(0.1, 1e4, 60)
    clean = eval_multiexp(FIG2_MODEL, t)
    hits = 0
    trials = 100
    for seed in range(trials):
        sig = 0.01 * np.abs(clean)
        y = clean + sig * shbrng.normal_stream(seed, 0, t.size)
        sel = select_components(DecayCurve(times=t, areas=y, sigmas=sig), 3)
        hits += sel.chosen_n == 2
    assert hits >= 0.95 * trials


def test_select_records_infeasible_counts():
    t = np.geomspace(0.1, 100, 10)  # too few samples for a 3-component fit
    curve = DecayCurve(times=t, areas=np.exp(-t / 5.0) + 0.4 * np.exp(-t / 60.0))
    sel = select_components(curve, 3)
    assert 3 in sel.failures and 3 not in sel.reports
    assert sel.chosen_n in (1, 2)


def test_select_reports_f_tests():
    curve = curve_from_model(FIG2_MODEL, n_points=40, t_lo=0.1, t_hi=1e4)
    sel = select_components(curve, 3)
    assert sel.chosen_n == 2
    pairs = {(t.n_low, t.n_high) for t in sel.f_tests}
    assert (1, 2) in pairs
    one_two = next(t for t in sel.f_tests if (t.n_low, t.n_high) == (1, 2))
    assert one_two.p_value < 1e-6  # the second component is overwhelmingly needed


# ---------------------------------------------------------------------------
# weight statistics


def _report_with_weights(weights):
    weights = np.asarray(weights, dtype=float)
    comps = tuple(
        ExpComponent(float(w), 10.0 ** (i + 1)) for i, w in enumerate(weights)
    )
    n = len(weights)
    return FitReport(
        model=MultiExpModel(components=comps),
        weights=weights / weights.sum(),
        param_cov=np.full((2 * n, 2 * n), np.nan),
        rss=0.0,
        aicc=0.0,
        n_params=2 * n,
        converged=True,
        degenerate=False,
    )


def test_weight_stats_identical_reports():
    reports = [_report_with_weights([0.62, 0.38])] * 2
    stats = weight_stats(reports)
    np.testing.assert_allclose(stats.means, [0.62, 0.38], rtol=1e-12)
    np.testing.assert_array_equal(stats.stds, [0.0, 0.0])
    assert stats.count == 2


def test_weight_stats_high_temp_ensemble():
    # weights drawn around the published two-component averages (62/38,
    # spread 6%); anticorrelated draws keep each report summing to one
    rng = np.random.default_rng(42)
    reports = []
    for _ in range(40):
        wa = np.clip(rng.normal(0.62, 0.06), 0.05, 0.95)
        reports.append(_report_with_weights([wa, 1.0 - wa]))
    stats = weight_stats(reports)
    assert stats.means[0] == pytest.approx(0.62, abs=0.03)
    assert stats.means[1] == pytest.approx(0.38, abs=0.03)
    assert stats.stds[0] == pytest.approx(0.06, abs=0.02)
    assert math.fsum(stats.means) == pytest.approx(1.0, abs=1e-9)


def test_weight_stats_rejects_mixed_counts():
    with pytest.raises(ValidationError):
        weight_stats([_report_with_weights([0.6, 0.4]), _report_with_weights([0.5, 0.3, 0.2])])
    with pytest.raises(ValidationError):
        weight_stats([_report_with_weights([0.6, 0.4])])


# ---------------------------------------------------------------------------
# invariants & properties (randomized)


def test_property_rss_non_increasing_in_n():
    rng = np.random.default_rng(31)
    for _ in range(N_PROPERTY_CASES):
        n_true = int(rng.integers(1, 4))
        model = random_model(rng, n_true, ratio_min=8.0)
        curve = curve_from_model(model, n_points=30)
        noisy = DecayCurve(
            times=curve.times,
            areas=curve.areas
            + 0.01 * curve.areas.max() * rng.standard_normal(len(curve)),
        )
        rss = []
        for n in (1, 2, 3):
            rss.append(fit_multiexp(noisy, n).rss)
        assert rss[1] <= rss[0] * (1 + 1e-12)
        assert rss[2] <= rss[1] * (1 + 1e-12)


def test_property_weights_invariant_under_area_scaling():
    rng = np.random.default_rng(32)
    for _ in range(N_PROPERTY_CASES):
        model = random_model(rng, 2)
        curve = curve_from_model(model, n_points=30)
        c = 10 ** rng.uniform(-3, 3)
        scaled = DecayCurve(times=curve.times, areas=c * curve.areas)
        r1 = fit_multiexp(curve, 2)
        r2 = fit_multiexp(scaled, 2)
        np.testing.assert_allclose(r2.weights, r1.weights, rtol=1e-9)
        np.testing.assert_allclose(r2.model.lifetimes(), r1.model.lifetimes(), rtol=1e-9)
        np.testing.assert_allclose(r2.model.amplitudes(), c * r1.model.amplitudes(), rtol=1e-9)


def test_property_lifetimes_invariant_under_baseline_with_free_baseline():
    rng = np.random.default_rng(33)
    for _ in range(N_PROPERTY_CASES):
        model = random_model(rng, 2)
        curve = curve_from_model(model, n_points=40)
        offset = rng.uniform(0.1, 2.0)
        shifted = DecayCurve(times=curve.times, areas=curve.areas + offset)
        r1 = fit_multiexp(curve, 2)
        r2 = fit_multiexp(shifted, 2, free_baseline=True)
        np.testing.assert_allclose(r2.model.lifetimes(), r1.model.lifetimes(), rtol=1e-5)
        assert r2.model.baseline == pytest.approx(offset, rel=1e-4)


def test_property_eval_monotone_decreasing():
    rng = np.random.default_rng(34)
    for _ in range(N_PROPERTY_CASES):
        model = random_model(rng, int(rng.integers(1, 4)))
        t = np.sort(10 ** rng.uniform(-2, 6, 20))
        vals = eval_multiexp(model, t)
        assert np.all(np.diff(vals) <= 0.0)


def test_property_noiseless_round_trip():
    rng = np.random.default_rng(35)
    for _ in range(N_PROPERTY_CASES):
        n = int(rng.integers(1, 4))
        model = random_model(rng, n, ratio_min=10.0)
        curve = curve_from_model(model, n_points=40)
        report = fit_multiexp(curve, n)
        np.testing.assert_allclose(report.model.lifetimes(), model.lifetimes(), rtol=1e-4)
        np.testing.assert_allclose(report.model.amplitudes(), model.amplitudes(), rtol=1e-4)
