import math

import numpy as np
import pytest

from shb.decay import eval_multiexp, ExpComponent, MultiExpModel
from shb.errors import ValidationError
from shb.lineshape import ShapeKind, eval_profile, recenter
from shb.model import Condition, IonClass, rate_breakdown
from shb.simulate import (
    ExperimentPlan,
    NoiseSpec,
    simulate_decay,
    simulate_trace,
    wait_schedule,
)

N_PROPERTY_CASES = 1000


# ---------------------------------------------------------------------------
# wait_schedule


def test_schedule_one_decade():
    times = wait_schedule(0.1, 1.0, 12)
    assert times.size == 13
    assert times[0] == 0.1 and times[-1] == 1.0
    assert np.all(np.diff(times) > 0)


def test_schedule_six_decades():
    times = wait_schedule(0.1, 1e5, 12)
    assert times.size == 73


def test_schedule_partial_decade_rounds_up():
    times = wait_schedule(0.1, 500.0, 12)
    decades = math.log10(500.0 / 0.1)
    assert times.size == math.ceil(decades * 12) + 1
    assert times[0] == 0.1
    assert times[-1] >= 500.0 / 1.0001


def test_schedule_first_element_exact():
    for first in (0.1, 0.37, 2.0):
        assert wait_schedule(first, first * 123.4, 7)[0] == first


def test_schedule_validation():
    with pytest.raises(ValidationError):
        wait_schedule(1.0, 0.5, 12)
    with pytest.raises(ValidationError):
        wait_schedule(0.0, 1.0, 12)
    with pytest.raises(ValidationError):
        wait_schedule(0.1, 1.0, 0)


# ---------------------------------------------------------------------------
# plans and validation


def test_plan_weight_validation(low_model):
    cond = (Condition(0.007, 0.05),)
    with pytest.raises(ValidationError):
        ExperimentPlan(conditions=cond, class_weights={"A": 0.5, "B": 0.6}, horizon=10.0)
    with pytest.raises(ValidationError):
        ExperimentPlan(conditions=cond, class_weights={"A": 1.2, "B": -0.2}, horizon=10.0)
    plan = ExperimentPlan(conditions=cond, class_weights={"A": 1.0, "B": 0.0}, horizon=10.0)
    assert plan.class_weights[IonClass.A] == 1.0


def test_simulate_decay_requires_matching_classes(low_model):
    plan = ExperimentPlan(
        conditions=(Condition(0.007, 0.05),),
        class_weights={"A": 0.5, "B": 0.5},  # model has A, B and C
        horizon=100.0,
    )
    with pytest.raises(ValidationError):
        simulate_decay(low_model, plan, NoiseSpec())


# ---------------------------------------------------------------------------
# simulate_decay


def reference_plan(noiseless_conditions, **kw):
    defaults = dict(
        conditions=noiseless_conditions,
        class_weights={"A": 0.52, "B": 0.26, "C": 0.22},
        first_read=0.1,
        horizon=1e5,
        reads_per_decade=12,
        initial_area=1.0,
    )
    defaults.update(kw)
    return ExperimentPlan(**defaults)


def test_noiseless_samples_equal_implied_multiexp(low_model):
    cond = Condition(0.007, 0.05)
    plan = reference_plan((cond,))
    ds = simulate_decay(low_model, plan, NoiseSpec())
    curve = ds.curves[0]
    comps = []
    for cid, w in sorted(plan.class_weights.items(), key=lambda kv: kv[0].value):
        rate = rate_breakdown(low_model, cid, cond).total
        comps.append((w, 1.0 / rate))
    implied = MultiExpModel(
        components=tuple(
            ExpComponent(w, tau) for w, tau in sorted(comps, key=lambda p: p[1])
        )
    )
    np.testing.assert_allclose(curve.areas, eval_multiexp(implied, curve.times), rtol=1e-12)
    assert curve.sigmas is None


def test_implied_lifetimes_at_reference_condition(low_model):
    # frozen from the arbitrary-precision oracle at 7 mK, 50 mT
    cond = Condition(0.007, 0.05)
    lifetimes = {
        cid: rate_breakdown(low_model, cid, cond).lifetime for cid in low_model.class_ids()
    }
    assert lifetimes[IonClass.A] == pytest.approx(8.3782380809, rel=1e-9)
    assert lifetimes[IonClass.B] == pytest.approx(387.9600748, rel=1e-9)
    assert lifetimes[IonClass.C] == pytest.approx(2.8408515447e4, rel=1e-9)
    # the class-B mechanism split at the same point
    br = rate_breakdown(low_model, "B", cond)
    assert br.flip_flop == pytest.approx(6.938181370e-4, rel=1e-9)
    assert br.tls_direct == pytest.approx(1.883766684e-3, rel=1e-9)
    assert br.total == pytest.approx(2.577584821e-3, rel=1e-9)


def test_same_seed_is_bit_identical(low_model):
    plan = reference_plan((Condition(0.007, 0.05), Condition(0.007, 0.1)))
    noise = NoiseSpec(sigma_rel=0.02, sigma_abs=0.001, seed=12345)
    a = simulate_decay(low_model, plan, noise)
    b = simulate_decay(low_model, plan, noise)
    for ca, cb in zip(a.curves, b.curves):
        np.testing.assert_array_equal(ca.areas, cb.areas)
        np.testing.assert_array_equal(ca.sigmas, cb.sigmas)


def test_different_seed_changes_noise_only(low_model):
    plan = reference_plan((Condition(0.007, 0.05),))
    clean = simulate_decay(low_model, plan, NoiseSpec()).curves[0]
    a = simulate_decay(low_model, plan, NoiseSpec(sigma_abs=0.01, seed=1)).curves[0]
    b = simulate_decay(low_model, plan, NoiseSpec(sigma_abs=0.01, seed=2)).curves[0]
    assert not np.array_equal(a.areas, b.areas)
    np.testing.assert_array_equal(a.sigmas, b.sigmas)  # sigma depends on clean curve only
    np.testing.assert_allclose(a.areas - clean.areas, a.areas - clean.areas)


def test_negative_areas_are_kept(low_model):
    plan = reference_plan((Condition(0.007, 0.05),), horizon=1e6, reads_per_decade=6)
    ds = simulate_decay(low_model, plan, NoiseSpec(sigma_abs=0.05, seed=9))
    assert np.any(ds.curves[0].areas < 0)  # late-time noise dips below zero


# ---------------------------------------------------------------------------
# simulate_trace


def test_trace_zero_noise_matches_profile():
    tr = simulate_trace(ShapeKind.LORENTZIAN, 400e6, 25e6, 0.7, 1.0, points=201)
    expected = eval_profile(ShapeKind.LORENTZIAN, 400e6, 25e6, 0.7, 1.0, tr.freq)
    np.testing.assert_array_equal(tr.signal, expected)


def test_trace_drift_then_recenter():
    drifted = simulate_trace(
        ShapeKind.GAUSSIAN, 400e6, 30e6, 0.8, 1.0, points=401, drift=23e6
    )
    out = recenter(drifted)
    step = drifted.freq[1] - drifted.freq[0]
    assert abs(out.freq[np.argmin(out.signal)] - 400e6) < step
    assert abs(out.meta.recenter_shift + 23e6) <= step


def test_trace_validation():
    with pytest.raises(ValidationError):
        simulate_trace(ShapeKind.GAUSSIAN, 400e6, 30e6, 0.8, 1.0, points=8)
    with pytest.raises(ValidationError):
        simulate_trace(ShapeKind.GAUSSIAN, 400e6, 30e6, 0.8, 1.0, scan=(600e6, 200e6))


def test_trace_noise_std_matches_spec():
    # empirical std of the additive noise across seeds approaches
    # sigma_abs = 0.01 * depth within a few percent
    depth = 0.8
    sigma = 0.01 * depth
    points = 64
    devs = []
    clean = simulate_trace(ShapeKind.GAUSSIAN, 400e6, 40e6, depth, 1.0, points=points)
    for seed in range(1000):
        noisy = simulate_trace(
            ShapeKind.GAUSSIAN,
            400e6,
            40e6,
            depth,
            1.0,
            points=points,
            noise=NoiseSpec(sigma_abs=sigma, seed=seed),
        )
        devs.append(noisy.signal - clean.signal)
    measured = np.std(np.concatenate(devs))
    assert measured == pytest.approx(sigma, rel=0.05)


# ---------------------------------------------------------------------------
# invariants & properties


def test_property_determinism(low_model):
    rng = np.random.default_rng(51)
    for _ in range(200):  # full double simulation per case
        seed = int(rng.integers(0, 2**63))
        plan = reference_plan(
            (Condition(10 ** rng.uniform(-2.2, 0), 10 ** rng.uniform(-3, -0.7)),),
            horizon=10 ** rng.uniform(2, 5),
            reads_per_decade=int(rng.integers(4, 16)),
        )
        noise = NoiseSpec(sigma_rel=0.01, sigma_abs=1e-4, seed=seed)
        a = simulate_decay(low_model, plan, noise)
        b = simulate_decay(low_model, plan, noise)
        np.testing.assert_array_equal(a.curves[0].areas, b.curves[0].areas)


def test_property_noiseless_limits(low_model):
    rng = np.random.default_rng(52)
    for _ in range(N_PROPERTY_CASES):
        cond = Condition(10 ** rng.uniform(-2.2, 0.2), 10 ** rng.uniform(-3, -0.7))
        area0 = 10 ** rng.uniform(-1, 2)
        lifetimes = [
            rate_breakdown(low_model, cid, cond).lifetime for cid in low_model.class_ids()
        ]
        plan = reference_plan(
            (cond,),
            first_read=min(lifetimes) * 1e-5,
            horizon=max(lifetimes) * 100.0,
            reads_per_decade=2,
            initial_area=area0,
        )
        curve = simulate_decay(low_model, plan, NoiseSpec()).curves[0]
        assert curve.areas[0] == pytest.approx(area0, rel=1e-4)  # t -> 0 limit
        assert curve.areas[-1] < 1e-3 * area0  # decays toward zero


def test_property_single_class_weight_is_single_exponential(low_model):
    rng = np.random.default_rng(53)
    for _ in range(N_PROPERTY_CASES):
        cond = Condition(10 ** rng.uniform(-2.2, 0.2), 10 ** rng.uniform(-3, -0.7))
        plan = reference_plan(
            (cond,), class_weights={"A": 1.0, "B": 0.0, "C": 0.0}, horizon=1e3,
            reads_per_decade=3,
        )
        curve = simulate_decay(low_model, plan, NoiseSpec()).curves[0]
        rate = rate_breakdown(low_model, "A", cond).total
        np.testing.assert_allclose(curve.areas, np.exp(-curve.times * rate), rtol=1e-12)


def test_property_noise_statistics(low_model):
    # pooled over many seeds, the realized noise matches sigma(t)
    plan = reference_plan((Condition(0.007, 0.05),), horizon=1e3, reads_per_decade=4)
    clean = simulate_decay(low_model, plan, NoiseSpec()).curves[0]
    pulls = []
    for seed in range(1000):
        noisy = simulate_decay(
            low_model, plan, NoiseSpec(sigma_rel=0.03, sigma_abs=0.002, seed=seed)
        ).curves[0]
        pulls.append((noisy.areas - clean.areas) / noisy.sigmas)
    pulls = np.concatenate(pulls)
    assert np.mean(pulls) == pytest.approx(0.0, abs=0.02)
    assert np.std(pulls) == pytest.approx(1.0, rel=0.02)
