"""Spectral-hole profiles: evaluation, fitting, classification, recentering.

Holes are modeled as a dip below a flat baseline, either Lorentzian

    s(f) = baseline - depth * (G/2)**2 / ((f - c)**2 + (G/2)**2)

or Gaussian

    s(f) = baseline - depth * exp(-4 ln2 (f - c)**2 / G**2)

with G the full width at half maximum; both reach baseline - depth exactly
at f = c and baseline - depth/2 at f = c +/- G/2.  The analytic hole areas
are (pi/2) * depth * G (Lorentzian) and depth * G * sqrt(pi / (4 ln2))
(Gaussian).

Read scans conventionally cover 200-600 MHz with the hole near 400 MHz;
`recenter` undoes slow laser drift by aligning the smoothed minimum to that
convention.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from enum import Enum
from typing import Mapping

import numpy as np

from .errors import ValidationError
from .leastsq import aicc_from_rss, damped_least_squares
from .model import Condition

SCAN_LOW_HZ = 200e6
SCAN_HIGH_HZ = 600e6
HOLE_CENTER_HZ = 400e6

LORENTZIAN_AREA_FACTOR = math.pi / 2.0
GAUSSIAN_AREA_FACTOR = math.sqrt(math.pi / (4.0 * math.log(2.0)))  # 1.06446701943...

_FOUR_LN2 = 4.0 * math.log(2.0)
_MIN_TRACE_POINTS = 16
# AICc separation below which a shape verdict is considered indeterminate.
INDETERMINATE_AICC_MARGIN = 2.0


class ShapeKind(str, Enum):
    LORENTZIAN = "lorentzian"
    GAUSSIAN = "gaussian"

    def __str__(self) -> str:
        return self.value


def as_shape_kind(value) -> ShapeKind:
    if isinstance(value, ShapeKind):
        return value
    try:
        return ShapeKind(str(value).strip().lower())
    except ValueError:
        raise ValidationError(f"unknown shape {value!r}; expected lorentzian or gaussian") from None


@dataclass(frozen=True)
class TraceMeta:
    """Condition and timing attached to one read scan."""

    condition: Condition | None = None
    wait_time: float | None = None  # s after the burn
    recenter_shift: float = 0.0  # Hz added to the frequency axis so far

    def __post_init__(self):
        if self.wait_time is not None and not self.wait_time >= 0:
            raise ValidationError(f"wait_time must be >= 0, got {self.wait_time}")


@dataclass(frozen=True)
class SpectralTrace:
    """Sampled hole profile: frequency offsets (Hz) vs. dimensionless signal."""

    freq: np.ndarray
    signal: np.ndarray
    meta: TraceMeta = TraceMeta()

    def __post_init__(self):
        freq = np.asarray(self.freq, dtype=float)
        signal = np.asarray(self.signal, dtype=float)
        if freq.ndim != 1 or signal.ndim != 1 or freq.size != signal.size:
            raise ValidationError("freq and signal must be 1-d arrays of equal length")
        if freq.size < _MIN_TRACE_POINTS:
            raise ValidationError(f"trace needs >= {_MIN_TRACE_POINTS} samples, got {freq.size}")
        if not (np.all(np.isfinite(freq)) and np.all(np.isfinite(signal))):
            raise ValidationError("trace contains non-finite values")
        if np.any(np.diff(freq) <= 0):
            bad = int(np.argmax(np.diff(freq) <= 0)) + 1
            raise ValidationError(f"frequency axis not strictly increasing at sample {bad}")
        object.__setattr__(self, "freq", freq)
        object.__setattr__(self, "signal", signal)

    def __len__(self) -> int:
        return int(self.freq.size)


@dataclass(frozen=True)
class HoleFit:
    """Least-squares estimate of one hole profile.

    `param_cov` is the 4x4 covariance in the order (center, fwhm, depth,
    baseline); entries are NaN when the normal matrix was singular.
    """

    shape: ShapeKind
    center: float  # Hz
    fwhm: float  # Hz
    depth: float
    baseline: float
    area: float  # Hz * signal units
    rss: float
    aicc: float
    param_cov: np.ndarray
    converged: bool
    n_points: int
    degenerate: bool = False  # constant-signal trace, zero-depth fit

    @property
    def transfer_efficiency(self) -> float:
        """Fitted depth as a fraction of baseline."""
        if self.baseline <= 0:
            raise ValidationError("transfer efficiency undefined for baseline <= 0")
        return self.depth / self.baseline

    def sigma(self, which: str) -> float:
        idx = {"center": 0, "fwhm": 1, "depth": 2, "baseline": 3}[which]
        return float(np.sqrt(self.param_cov[idx, idx]))


def eval_profile(shape, center, fwhm, depth, baseline, freq):
    """Profile value(s) at `freq`; scalar in, scalar out."""
    shape = as_shape_kind(shape)
    if not fwhm > 0:
        raise ValidationError(f"fwhm must be positive, got {fwhm}")
    f = np.asarray(freq, dtype=float)
    delta = f - center
    if shape is ShapeKind.LORENTZIAN:
        half_sq = (fwhm / 2.0) ** 2
        dip = half_sq / (delta**2 + half_sq)
    else:
        dip = np.exp(-_FOUR_LN2 * delta**2 / fwhm**2)
    out = baseline - depth * dip
    return float(out) if np.ndim(freq) == 0 else out


def hole_area(shape, depth: float, fwhm: float) -> float:
    """Analytic area of the fitted dip over the whole frequency axis."""
    shape = as_shape_kind(shape)
    if not fwhm > 0:
        raise ValidationError(f"fwhm must be positive, got {fwhm}")
    factor = LORENTZIAN_AREA_FACTOR if shape is ShapeKind.LORENTZIAN else GAUSSIAN_AREA_FACTOR
    return factor * depth * fwhm


def _profile_jacobian(shape, center, fwhm, depth, freq):
    """d(signal)/d(center, fwhm, depth, baseline), one row per sample."""
    delta = freq - center
    jac = np.empty((freq.size, 4))
    if shape is ShapeKind.LORENTZIAN:
        half_sq = (fwhm / 2.0) ** 2
        denom = delta**2 + half_sq
        dip = half_sq / denom
        jac[:, 0] = -depth * 2.0 * delta * half_sq / denom**2
        jac[:, 1] = -depth * (delta**2 / denom**2) * (fwhm / 2.0)
    else:
        dip = np.exp(-_FOUR_LN2 * delta**2 / fwhm**2)
        jac[:, 0] = -depth * dip * (2.0 * _FOUR_LN2 * delta / fwhm**2)
        jac[:, 1] = -depth * dip * (2.0 * _FOUR_LN2 * delta**2 / fwhm**3)
    jac[:, 2] = -dip
    jac[:, 3] = 1.0
    return jac


def _moving_average(signal: np.ndarray, width: int = 5) -> tuple[np.ndarray, int]:
    """('valid'-mode smoothed signal, index offset into the raw arrays)."""
    kernel = np.full(width, 1.0 / width)
    return np.convolve(signal, kernel, mode="valid"), width // 2


def initial_hole_guess(trace: SpectralTrace) -> tuple[float, float, float, float]:
    """Data-driven (center, fwhm, depth, baseline) starting point.

    Baseline from the median of the outer 10% of samples, center from the
    argmin of a 5-point moving average, depth from baseline minus the raw
    minimum, width from the half-depth crossings around the center.
    """
    f, y = trace.freq, trace.signal
    n = f.size
    edge = max(2, n // 20)
    baseline = float(np.median(np.concatenate([y[:edge], y[-edge:]])))
    smooth, off = _moving_average(y)
    ic = int(np.argmin(smooth)) + off
    center = float(f[ic])
    depth = float(baseline - y.min())
    if depth <= 0:
        return center, float((f[-1] - f[0]) / 4.0), 0.0, baseline

    half = baseline - depth / 2.0
    left = f[0]
    for i in range(ic, 0, -1):
        if y[i - 1] >= half > y[i]:
            frac = (half - y[i]) / (y[i - 1] - y[i])
            left = f[i] + frac * (f[i - 1] - f[i])
            break
    right = f[-1]
    for i in range(ic, n - 1):
        if y[i + 1] >= half > y[i]:
            frac = (half - y[i]) / (y[i + 1] - y[i])
            right = f[i] + frac * (f[i + 1] - f[i])
            break
    fwhm = float(right - left)
    if fwhm <= 0:
        fwhm = float((f[-1] - f[0]) / 4.0)
    return center, fwhm, depth, baseline


def _degenerate_fit(trace: SpectralTrace, shape: ShapeKind, baseline: float) -> HoleFit:
    span = float(trace.freq[-1] - trace.freq[0])
    n = len(trace)
    rss = float(np.sum((trace.signal - baseline) ** 2))
    return HoleFit(
        shape=shape,
        center=float(0.5 * (trace.freq[0] + trace.freq[-1])),
        fwhm=span,
        depth=0.0,
        baseline=baseline,
        area=0.0,
        rss=rss,
        aicc=aicc_from_rss(rss, n, 4),
        param_cov=np.full((4, 4), np.nan),
        converged=True,
        n_points=n,
        degenerate=True,
    )


def fit_hole(
    trace: SpectralTrace,
    shape,
    init: HoleFit | tuple | None = None,
    max_iter: int = 200,
    mask_side_feature: bool = False,
) -> HoleFit:
    """Least-squares (center, fwhm, depth, baseline) estimate for one shape.

    With `mask_side_feature` the fit runs twice and samples more than three
    fitted FWHM above the center (instrumental artifact territory) are
    dropped from the second pass.
    """
    shape = as_shape_kind(shape)
    if init is None:
        theta0 = initial_hole_guess(trace)
    elif isinstance(init, HoleFit):
        theta0 = (init.center, init.fwhm, init.depth, init.baseline)
    else:
        theta0 = tuple(float(v) for v in init)
        if len(theta0) != 4:
            raise ValidationError("init must provide (center, fwhm, depth, baseline)")
    if theta0[2] == 0.0:
        return _degenerate_fit(trace, shape, theta0[3])

    fit = _fit_hole_once(trace.freq, trace.signal, shape, theta0, max_iter)
    if mask_side_feature:
        keep = trace.freq - fit.center <= 3.0 * fit.fwhm
        if keep.sum() >= _MIN_TRACE_POINTS and keep.sum() < len(trace):
            fit = _fit_hole_once(
                trace.freq[keep],
                trace.signal[keep],
                shape,
                (fit.center, fit.fwhm, fit.depth, fit.baseline),
                max_iter,
            )
    return fit


def _fit_hole_once(freq, signal, shape, theta0, max_iter) -> HoleFit:
    span = float(freq[-1] - freq[0])
    df = float(np.min(np.diff(freq)))
    lo = np.array([freq[0] - span, df / 100.0, 0.0, -np.inf])
    hi = np.array([freq[-1] + span, 100.0 * span, np.inf, np.inf])

    def residual(theta):
        return eval_profile(shape, theta[0], theta[1], theta[2], theta[3], freq) - signal

    def jacobian(theta):
        return _profile_jacobian(shape, theta[0], theta[1], theta[2], freq)

    res = damped_least_squares(
        residual, np.asarray(theta0, dtype=float), jac=jacobian, bounds=(lo, hi), max_iter=max_iter
    )
    center, fwhm, depth, baseline = res.x
    n = freq.size
    cov = res.covariance(scale=res.cost / max(n - 4, 1))
    return HoleFit(
        shape=shape,
        center=float(center),
        fwhm=float(fwhm),
        depth=float(depth),
        baseline=float(baseline),
        area=hole_area(shape, float(depth), float(fwhm)),
        rss=res.cost,
        aicc=aicc_from_rss(res.cost, n, 4),
        param_cov=cov if cov is not None else np.full((4, 4), np.nan),
        converged=res.converged,
        n_points=int(n),
    )


@dataclass(frozen=True)
class ShapeClassification:
    shape: ShapeKind
    delta_aicc: float  # AICc(rejected) - AICc(chosen), >= 0
    indeterminate: bool  # margin below INDETERMINATE_AICC_MARGIN
    fits: Mapping[ShapeKind, HoleFit]


def classify_shape(trace: SpectralTrace, mask_side_feature: bool = False) -> ShapeClassification:
    """Fit both profile shapes and pick the one with lower AICc."""
    fits = {
        kind: fit_hole(trace, kind, mask_side_feature=mask_side_feature)
        for kind in (ShapeKind.LORENTZIAN, ShapeKind.GAUSSIAN)
    }
    lor, gau = fits[ShapeKind.LORENTZIAN], fits[ShapeKind.GAUSSIAN]
    winner = ShapeKind.LORENTZIAN if lor.aicc <= gau.aicc else ShapeKind.GAUSSIAN
    margin = abs(lor.aicc - gau.aicc)
    return ShapeClassification(
        shape=winner,
        delta_aicc=margin,
        indeterminate=margin < INDETERMINATE_AICC_MARGIN,
        fits=fits,
    )


def recenter(trace: SpectralTrace, target_center: float = HOLE_CENTER_HZ) -> SpectralTrace:
    """Shift the frequency axis so the smoothed minimum sits at target_center.

    Signal values are untouched; the applied shift accumulates in
    `meta.recenter_shift`.  A minimum on the scan boundary (hole drifted out
    of the window) is an error.
    """
    smooth, off = _moving_average(trace.signal)
    j = int(np.argmin(smooth))
    if j == 0:
        raise ValidationError("hole minimum sits on the lower scan boundary; cannot recenter")
    if j == smooth.size - 1:
        raise ValidationError("hole minimum sits on the upper scan boundary; cannot recenter")
    shift = float(target_center - trace.freq[j + off])
    meta = replace(trace.meta, recenter_shift=trace.meta.recenter_shift + shift)
    return SpectralTrace(freq=trace.freq + shift, signal=trace.signal.copy(), meta=meta)
