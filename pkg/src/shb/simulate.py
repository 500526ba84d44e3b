"""Seeded synthetic experiments: decay curves and read-scan traces.

Decay curves follow the experimental protocol: a first read at 0.1 s after
the burn, then log-spaced reads out to the horizon.  The noiseless area is

    area(t) = initial_area * sum_i W_i * exp(-t * rate_i(condition))

with per-class rates from the relaxation model and W_i the class weights.
Noise is additive Gaussian with sigma(t) = sigma_rel * area(t) + sigma_abs;
negative samples are kept, since clipping would bias late-time fits.

Every random draw is addressed by (seed, condition index, point index)
through the counter-based generator in `shb.rng`, so a dataset is a pure
function of (model, plan, noise) and re-simulation is bit-identical.
Condition k draws from the derived stream rng.derive_seed(noise.seed, k).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from . import rng
from .decay import DecayCurve
from .errors import ValidationError
from .lineshape import (
    SCAN_HIGH_HZ,
    SCAN_LOW_HZ,
    ShapeKind,
    SpectralTrace,
    TraceMeta,
    as_shape_kind,
    eval_profile,
)
from .model import Condition, IonClass, RelaxationModel, as_ion_class, rate_breakdown

DEFAULT_FIRST_READ_S = 0.1
DEFAULT_READS_PER_DECADE = 12
# Experimental horizons: high-temperature runs stop near 1e4 s, ultra-low
# temperature runs extend to 1e5 s (several hours).
HIGH_TEMP_HORIZON_S = 1e4
LOW_TEMP_HORIZON_S = 1e5

_WEIGHT_SUM_TOL = 1e-12


@dataclass(frozen=True)
class NoiseSpec:
    """Heteroscedastic additive noise: sigma(t) = sigma_rel*area + sigma_abs."""

    sigma_rel: float = 0.0
    sigma_abs: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not (self.sigma_rel >= 0 and self.sigma_abs >= 0):
            raise ValidationError("noise sigmas must be >= 0")
        if not isinstance(self.seed, int):
            raise ValidationError("seed must be an integer")

    @property
    def is_zero(self) -> bool:
        return self.sigma_rel == 0.0 and self.sigma_abs == 0.0


@dataclass(frozen=True)
class ExperimentPlan:
    """Conditions, read schedule and class weights for a decay simulation."""

    conditions: tuple[Condition, ...]
    class_weights: Mapping[IonClass, float]
    first_read: float = DEFAULT_FIRST_READ_S  # s
    horizon: float = LOW_TEMP_HORIZON_S  # s
    reads_per_decade: int = DEFAULT_READS_PER_DECADE
    initial_area: float = 1.0

    def __post_init__(self):
        conds = tuple(self.conditions)
        if not conds:
            raise ValidationError("plan needs at least one condition")
        object.__setattr__(self, "conditions", conds)
        weights = {as_ion_class(k): float(v) for k, v in dict(self.class_weights).items()}
        if not weights:
            raise ValidationError("plan needs class weights")
        for cid, w in weights.items():
            if not (math.isfinite(w) and 0.0 <= w <= 1.0):
                raise ValidationError(f"weight for class {cid} must lie in [0, 1], got {w}")
        total = math.fsum(weights.values())
        if abs(total - 1.0) > _WEIGHT_SUM_TOL:
            raise ValidationError(f"class weights must sum to 1 (got {total!r})")
        object.__setattr__(self, "class_weights", weights)
        if not (self.first_read > 0 and self.horizon > self.first_read):
            raise ValidationError("need horizon > first_read > 0")
        if self.reads_per_decade < 1:
            raise ValidationError("reads_per_decade must be >= 1")
        if not self.initial_area > 0:
            raise ValidationError("initial_area must be positive")


@dataclass(frozen=True)
class SyntheticDataset:
    """Simulated curves plus the full generating record."""

    curves: tuple[DecayCurve, ...]
    model: RelaxationModel
    plan: ExperimentPlan
    noise: NoiseSpec

    def condition_seed(self, index: int) -> int:
        return rng.derive_seed(self.noise.seed, index)


def wait_schedule(first_read: float, horizon: float, reads_per_decade: int) -> np.ndarray:
    """Log-spaced read times from first_read to the horizon, inclusive.

    The number of intervals is reads_per_decade per decade of span, rounded
    up (exact decade counts stay exact against float noise).
    """
    if not (first_read > 0 and horizon > first_read):
        raise ValidationError("need horizon > first_read > 0")
    if reads_per_decade < 1:
        raise ValidationError("reads_per_decade must be >= 1")
    decades = math.log10(horizon / first_read)
    raw = decades * reads_per_decade
    steps = round(raw) if abs(raw - round(raw)) < 1e-9 * max(1.0, abs(raw)) else math.ceil(raw)
    times = np.geomspace(first_read, horizon, int(steps) + 1)
    times[0] = first_read
    times[-1] = horizon
    return times


def simulate_decay(model: RelaxationModel, plan: ExperimentPlan, noise: NoiseSpec) -> SyntheticDataset:
    """Simulate one decay curve per plan condition; see module docstring."""
    ids = model.class_ids()
    if set(plan.class_weights) != set(ids):
        raise ValidationError(
            f"plan weights cover {sorted(str(k) for k in plan.class_weights)} "
            f"but the model has classes {[str(i) for i in ids]}"
        )
    times = wait_schedule(plan.first_read, plan.horizon, plan.reads_per_decade)
    curves = []
    for k, cond in enumerate(plan.conditions):
        clean = np.zeros_like(times)
        for cid in ids:
            rate = rate_breakdown(model, cid, cond).total
            clean += plan.class_weights[cid] * np.exp(-times * rate)
        clean *= plan.initial_area
        if noise.is_zero:
            areas, sigmas = clean, None
        else:
            sigmas = noise.sigma_rel * np.abs(clean) + noise.sigma_abs
            draws = rng.normal_stream(rng.derive_seed(noise.seed, k), 0, times.size)
            areas = clean + sigmas * draws
        curves.append(DecayCurve(times=times.copy(), areas=areas, sigmas=sigmas, condition=cond))
    return SyntheticDataset(curves=tuple(curves), model=model, plan=plan, noise=noise)


def simulate_trace(
    shape: ShapeKind,
    center: float,
    fwhm: float,
    depth: float,
    baseline: float,
    scan: tuple[float, float] = (SCAN_LOW_HZ, SCAN_HIGH_HZ),
    points: int = 128,
    noise: NoiseSpec = NoiseSpec(),
    drift: float = 0.0,
    condition: Condition | None = None,
    wait_time: float | None = None,
) -> SpectralTrace:
    """Uniformly sampled read scan of one hole, optional drift and noise.

    `drift` displaces the hole center (slow laser drift); `recenter` from
    the lineshape module undoes it.
    """
    shape = as_shape_kind(shape)
    lo, hi = float(scan[0]), float(scan[1])
    if not (math.isfinite(lo) and math.isfinite(hi) and 0.0 <= lo < hi):
        raise ValidationError(f"scan window must satisfy 0 <= lo < hi, got ({lo}, {hi})")
    if points < 16:
        raise ValidationError(f"trace needs >= 16 points, got {points}")
    if not math.isfinite(drift):
        raise ValidationError("drift must be finite")
    freq = np.linspace(lo, hi, points)
    clean = eval_profile(shape, center + drift, fwhm, depth, baseline, freq)
    if noise.is_zero:
        signal = clean
    else:
        sigmas = noise.sigma_rel * np.abs(clean) + noise.sigma_abs
        signal = clean + sigmas * rng.normal_stream(noise.seed, 0, points)
    return SpectralTrace(
        freq=freq,
        signal=signal,
        meta=TraceMeta(condition=condition, wait_time=wait_time),
    )


def implied_multiexp_lifetimes(model: RelaxationModel, cond: Condition) -> dict[IonClass, float]:
    """Per-class lifetimes 1/rate at one condition (helper for planning)."""
    return {cid: rate_breakdown(model, cid, cond).lifetime for cid in model.class_ids()}
