"""Acceptance suite: one test per criterion, each printing a PASS line.

Run with `pytest tests/test_acceptance.py -v -s` to see the per-criterion
lines.  Tolerances are pinned here and nowhere else.
"""

import json
import math
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

import oracles
from conftest import reference_rate_datasets
from shb import io, rng as shbrng
from shb.decay import (
    DecayCurve,
    ExpComponent,
    FitReport,
    MultiExpModel,
    eval_multiexp,
    select_components,
    weight_stats,
)
from shb.globalfit import GlobalFitConfig, fit_global
from shb.lineshape import (
    GAUSSIAN_AREA_FACTOR,
    ShapeKind,
    classify_shape,
    eval_profile,
    fit_hole,
)
from shb.model import (
    Condition,
    find_rate_minimum_over_field,
    rate_breakdown,
    reference_high_temp_model,
    reference_low_temp_model,
)
from shb.pipeline import PipelineConfig, persist_report, run_pipeline
from shb.simulate import ExperimentPlan, NoiseSpec, simulate_decay, simulate_trace, wait_schedule

LOW = reference_low_temp_model()
HIGH = reference_high_temp_model()


def _announce(n, text):
    print(f"ACCEPTANCE {n:02d} PASS - {text}")


# ---------------------------------------------------------------------------


def test_criterion_01_forward_model_oracle_equivalence():
    """Forward rates match the arbitrary-precision oracle to 1e-12 relative."""
    temps = np.geomspace(0.005, 2.4, 10)
    fields = np.linspace(0.0, 0.2, 10)
    cases = [(LOW, cid) for cid in "ABC"] + [(HIGH, cid) for cid in "AB"]

    # oracle values first (not part of the timed package evaluation)
    expected = {}
    for model, cid in cases:
        for t in temps:
            for b in fields:
                terms = oracles.rate_terms_for(model, cid, t, b)
                expected[(model.regime_label, cid, t, b)] = tuple(float(v) for v in terms)

    start = time.perf_counter()
    worst = 0.0
    for model, cid in cases:
        for t in temps:
            for b in fields:
                br = rate_breakdown(model, cid, Condition(float(t), float(b)))
                ff, tls, raman, total = expected[(model.regime_label, cid, t, b)]
                for got, ref in ((br.flip_flop, ff), (br.tls_direct, tls),
                                 (br.raman, raman), (br.total, total)):
                    if ref != 0.0:
                        worst = max(worst, abs(got - ref) / abs(ref))
                    else:
                        assert got == 0.0
    elapsed = time.perf_counter() - start
    assert worst < 1e-12
    assert elapsed < 1.0
    _announce(1, f"500-point grid vs oracle, worst rel err {worst:.2e}, {elapsed * 1e3:.0f} ms")


def test_criterion_02_noiseless_round_trip():
    """Global fit recovers the generating parameters to 1e-3 relative."""
    start = time.perf_counter()
    datasets = reference_rate_datasets(LOW, HIGH, points_per_sweep=64)
    res = fit_global(datasets, GlobalFitConfig())
    elapsed = time.perf_counter() - start
    assert res.converged
    assert res.parameter_value("g_factor") == pytest.approx(0.50, rel=1e-3)
    assert res.parameter_value("tls_field_exp") == pytest.approx(1.35, rel=1e-3)
    assert res.parameter_value("tls_temp_exp") == pytest.approx(0.20, rel=1e-3)
    assert res.parameter_value("raman_temp_exp") == pytest.approx(3.0, rel=1e-3)
    fitted = {m.regime_label: m for m in res.models}
    for truth in (LOW, HIGH):
        got = fitted[truth.regime_label]
        for cls in truth.classes:
            fit_cls = got.class_params(cls.class_id)
            assert fit_cls.alpha_ff == pytest.approx(cls.alpha_ff, rel=1e-3)
            assert fit_cls.alpha_tls == pytest.approx(cls.alpha_tls, rel=1e-3)
            if cls.alpha_raman > 0:
                assert fit_cls.alpha_raman == pytest.approx(cls.alpha_raman, rel=1e-3)
            else:
                assert fit_cls.alpha_raman <= 1e-6
    assert elapsed < 60.0
    _announce(2, f"noiseless joint round trip in {elapsed:.1f} s, exponents at truth to 1e-3")


def test_criterion_03_noisy_round_trip():
    """5% rate noise: exponents inside the quoted one-sigma boxes >= 90% of seeds."""
    tolerances = {
        "g_factor": (0.50, 0.05),
        "tls_field_exp": (1.35, 0.05),
        "tls_temp_exp": (0.20, 0.02),
        "raman_temp_exp": (3.0, 0.1),
    }
    n_seeds = 50
    start = time.perf_counter()
    hits = 0
    for seed in range(n_seeds):
        datasets = reference_rate_datasets(
            LOW, HIGH, points_per_sweep=64, noise_frac=0.05, seed=seed
        )
        res = fit_global(datasets, GlobalFitConfig())
        hits += all(
            abs(res.parameter_value(name) - truth) <= tol
            for name, (truth, tol) in tolerances.items()
        )
    elapsed = time.perf_counter() - start
    assert hits >= math.ceil(0.9 * n_seeds)
    assert elapsed < 600.0
    _announce(3, f"{hits}/{n_seeds} seeds inside the quoted uncertainties, {elapsed:.0f} s")


def test_criterion_04_component_count_selection():
    """AICc + guards pick the published component counts >= 95% of seeds."""
    fig3 = MultiExpModel(
        components=(
            ExpComponent(0.52, 6.3),
            ExpComponent(0.31, 395.7),
            ExpComponent(0.17, 33961.8),
        )
    )
    fig2 = MultiExpModel(components=(ExpComponent(0.62, 8.4), ExpComponent(0.38, 591.4)))
    start = time.perf_counter()
    results = {}
    for name, model, horizon, expected in (
        ("three-component", fig3, 1e5, 3),
        ("two-component", fig2, 1e4, 2),
    ):
        t = np.geomspace(0.1, horizon, 60)
        clean = eval_multiexp(model, t)
        hits = 0
        for seed in range(100):
            sig = 0.01 * np.abs(clean)
            areas = clean + sig * shbrng.normal_stream(seed, 0, t.size)
            sel = select_components(DecayCurve(times=t, areas=areas, sigmas=sig), 3)
            hits += sel.chosen_n == expected
        results[name] = hits
        assert hits >= 95
    elapsed = time.perf_counter() - start
    assert elapsed < 300.0
    _announce(
        4,
        f"selection {results['three-component']}/100 (n=3) and "
        f"{results['two-component']}/100 (n=2), {elapsed:.0f} s",
    )


def _report_with_weights(weights):
    weights = np.asarray(weights, dtype=float)
    comps = tuple(ExpComponent(float(w), 10.0 ** (i + 1)) for i, w in enumerate(weights))
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


def test_criterion_05_weight_statistics_reproduction():
    """Constant-fit means and spreads match the published ensembles."""
    rng = np.random.default_rng(19)

    high_reports = []
    for _ in range(20):
        wa = float(np.clip(rng.normal(0.62, 0.06), 0.05, 0.95))
        high_reports.append(_report_with_weights([wa, 1.0 - wa]))
    stats_high = weight_stats(high_reports)
    np.testing.assert_allclose(stats_high.means, [0.62, 0.38], atol=0.02)
    np.testing.assert_allclose(stats_high.stds, [0.06, 0.06], atol=0.02)

    # three-class draws under a singular covariance (rows sum to zero) keep
    # each report's weights summing to one while matching the target spreads
    targets = np.array([0.52, 0.26, 0.22])
    spreads = np.array([0.07, 0.05, 0.05])
    sa2, sb2, sc2 = spreads**2
    coupling = np.linalg.solve(
        np.array([[1, 1, 0], [1, 0, 1], [0, 1, 1]], float), -np.array([sa2, sb2, sc2])
    )
    cov = np.array(
        [
            [sa2, coupling[0], coupling[1]],
            [coupling[0], sb2, coupling[2]],
            [coupling[1], coupling[2], sc2],
        ]
    )
    chol = np.linalg.cholesky(cov + 1e-12 * np.eye(3))
    low_reports = []
    for _ in range(20):
        draw = targets + chol @ rng.standard_normal(3)
        draw = np.clip(draw, 0.01, 0.97)
        low_reports.append(_report_with_weights(draw / draw.sum()))
    stats_low = weight_stats(low_reports)
    np.testing.assert_allclose(stats_low.means, targets, atol=0.02)
    np.testing.assert_allclose(stats_low.stds, spreads, atol=0.02)
    assert stats_high.count == stats_low.count == 20
    _announce(
        5,
        f"weight means {np.round(stats_high.means, 3)} / {np.round(stats_low.means, 3)}, "
        f"stds {np.round(stats_high.stds, 3)} / {np.round(stats_low.stds, 3)}",
    )


def test_criterion_06_shape_classification():
    """>= 95% correct shape verdicts at SNR 20; 100% on noiseless traces."""
    for shape in (ShapeKind.LORENTZIAN, ShapeKind.GAUSSIAN):
        clean = simulate_trace(shape, 400e6, 60e6, 0.9, 1.0, points=128)
        assert classify_shape(clean).shape is shape  # noiseless: always right
    scores = {}
    for shape in (ShapeKind.LORENTZIAN, ShapeKind.GAUSSIAN):
        hits = 0
        for seed in range(200):
            trace = simulate_trace(
                shape,
                400e6,
                60e6,
                0.9,
                1.0,
                points=128,
                noise=NoiseSpec(sigma_abs=0.9 / 20.0, seed=seed),
            )
            hits += classify_shape(trace).shape is shape
        scores[str(shape)] = hits
        assert hits >= 190  # 95% of 200
    _announce(6, f"classification {scores} out of 200 each at SNR 20")


def test_criterion_07_hole_metric_reproduction():
    """The reference 7.5 MHz / 92.5% hole is recovered at SNR 50."""
    depth, baseline, fwhm = 0.925, 1.0, 7.5e6
    trace = simulate_trace(
        ShapeKind.GAUSSIAN,
        400e6,
        fwhm,
        depth,
        baseline,
        points=4096,  # the narrow hole needs a dense scan, as the detector had
        noise=NoiseSpec(sigma_abs=depth / 50.0, seed=7),
    )
    fit = fit_hole(trace, ShapeKind.GAUSSIAN)
    assert fit.fwhm == pytest.approx(fwhm, rel=0.01)
    assert fit.transfer_efficiency == pytest.approx(0.925, abs=0.005)

    # analytic area against wide-grid quadrature of the fitted profile
    grid = 400e6 + np.concatenate(
        [
            -np.geomspace(20 * fit.fwhm, 5000 * fit.fwhm, 2000)[::-1],
            np.linspace(-20 * fit.fwhm, 20 * fit.fwhm, 8001),
            np.geomspace(20 * fit.fwhm, 5000 * fit.fwhm, 2000),
        ]
    )
    dip = fit.baseline - eval_profile(
        fit.shape, fit.center, fit.fwhm, fit.depth, fit.baseline, grid
    )
    quad = np.trapezoid(dip, grid)
    assert fit.area == pytest.approx(quad, rel=1e-3)
    assert fit.area == pytest.approx(depth * fwhm * GAUSSIAN_AREA_FACTOR, rel=0.02)
    _announce(
        7,
        f"fitted fwhm {fit.fwhm / 1e6:.3f} MHz, efficiency {fit.transfer_efficiency:.4f}, "
        f"area vs quadrature rel err {abs(fit.area - quad) / quad:.2e}",
    )


def test_criterion_08_field_minimum_location():
    """Golden-section minimizer agrees with the dense-grid oracle within 1 mT."""
    b_fit, r_fit = find_rate_minimum_over_field(HIGH, "A", 0.800, (0.001, 0.2))
    b_oracle, r_oracle = oracles.dense_grid_field_minimum(HIGH, "A", 0.800, 0.001, 0.2)
    assert 0.030 <= b_fit <= 0.120  # interior minimum in the expected window
    assert abs(b_fit - b_oracle) < 1e-3
    assert r_fit <= r_oracle * (1 + 1e-9)
    _announce(
        8,
        f"rate minimum at {b_fit * 1e3:.2f} mT (oracle {b_oracle * 1e3:.2f} mT), "
        f"rate {r_fit:.4f} 1/s",
    )


def test_criterion_09_property_suites():
    """Every module's invariant bullets pass as randomized property tests."""
    start = time.perf_counter()
    proc = subprocess.run(
        [
            sys.executable,
            "-m",
            "pytest",
            "-q",
            "-p",
            "no:cacheprovider",
            "-k",
            "test_property",
            str(Path(__file__).parent),
        ],
        capture_output=True,
        text=True,
        cwd=Path(__file__).parent.parent,
    )
    elapsed = time.perf_counter() - start
    tail = proc.stdout.strip().splitlines()[-1] if proc.stdout.strip() else ""
    assert proc.returncode == 0, proc.stdout + proc.stderr
    assert "failed" not in tail
    assert elapsed < 300.0
    _announce(9, f"property suites green in {elapsed:.0f} s ({tail})")


def test_criterion_10_pipeline_determinism(tmp_path):
    """Two identical end-to-end synthetic runs give byte-identical reports."""

    def one_run(outdir):
        # trace stage: one high-temperature condition read out over its decay
        waits = wait_schedule(0.1, 1e4, 4)
        cond_tr = Condition(0.8, 0.05)
        rates = {cid: rate_breakdown(HIGH, cid, cond_tr).total for cid in HIGH.class_ids()}
        traces = []
        for j, wait in enumerate(waits):
            remaining = 0.62 * math.exp(-wait * rates[HIGH.class_ids()[0]]) + 0.38 * math.exp(
                -wait * rates[HIGH.class_ids()[1]]
            )
            traces.append(
                simulate_trace(
                    ShapeKind.LORENTZIAN,
                    400e6,
                    40e6,
                    0.85 * remaining,
                    1.0,
                    points=128,
                    noise=NoiseSpec(sigma_abs=0.01, seed=shbrng.derive_seed(7, j)),
                    condition=cond_tr,
                    wait_time=float(wait),
                )
            )
        # decay stage: both regimes on field sweeps
        curves = []
        for k, b in enumerate((0.01, 0.03, 0.05, 0.1, 0.2)):
            plan_hi = ExperimentPlan(
                conditions=(Condition(0.8, b),),
                class_weights={"A": 0.62, "B": 0.38},
                horizon=1e4,
                reads_per_decade=10,
            )
            plan_lo = ExperimentPlan(
                conditions=(Condition(0.007, b),),
                class_weights={"A": 0.52, "B": 0.26, "C": 0.22},
                horizon=1e5,
                reads_per_decade=10,
            )
            curves += list(
                simulate_decay(HIGH, plan_hi, NoiseSpec(0.01, 1e-5, seed=100 + k)).curves
            )
            curves += list(
                simulate_decay(LOW, plan_lo, NoiseSpec(0.01, 1e-5, seed=200 + k)).curves
            )
        report = run_pipeline(traces=traces, curves=curves, config=PipelineConfig())
        persist_report(report, outdir)
        return report, outdir

    r1, d1 = one_run(tmp_path / "run1")
    r2, d2 = one_run(tmp_path / "run2")
    body1, body2 = r1.body_json(), r2.body_json()
    assert body1 == body2  # byte-identical report bodies

    doc1 = json.loads((d1 / "report.json").read_text())
    doc2 = json.loads((d2 / "report.json").read_text())
    assert io.canonical_json(doc1["body"]) == io.canonical_json(doc2["body"])
    # stage files are byte-identical as well
    for name in sorted(p.name for p in d1.iterdir() if p.suffix == ".csv"):
        assert (d1 / name).read_bytes() == (d2 / name).read_bytes()
    _announce(10, f"two runs, {len(body1)} byte report bodies identical")
