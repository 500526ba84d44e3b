"""Multi-exponential fits of hole-area decay curves.

A curve is area vs. wait time at one (temperature, field) condition; the
model is baseline + sum_i A_i * exp(-t / tau_i) with 1-3 components.  Fits
are weighted by 1/sigma when per-point uncertainties exist.  Component
counts are compared by small-sample corrected AIC, guarded so an extra
component must be genuinely resolvable (positive amplitude, adjacent
lifetime ratio >= 3) before it is accepted.

Initialization peels components off the tail: the slowest exponential is
estimated from the last live decade of the data, subtracted, and the
procedure repeats; a joint refinement follows.  Fitting component count n
also restarts from the (n-1)-component solution extended by a zero-amplitude
component, which guarantees the fitted RSS never increases with n.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.optimize import nnls
from scipy.stats import f as f_dist

from .errors import ConvergenceError, ValidationError
from .leastsq import aicc_from_rss, damped_least_squares
from .model import Condition

MAX_COMPONENTS = 3
# Accepting component count n needs at least this many samples (AICc needs
# n_obs > n_params + 2; the larger floors keep 2- and 3-component fits sane).
MIN_SAMPLES = {1: 5, 2: 8, 3: 12}
# Adjacent lifetimes closer than this ratio are statistically one component.
LIFETIME_RATIO_GUARD = 3.0
# Amplitude weight below which a component counts as collapsed to zero.
COLLAPSED_WEIGHT = 1e-9
# An extra component's amplitude must clear its own uncertainty by this
# factor to count as positive; amplitudes are bounded at zero, so a plain
# greater-than-zero test would never reject anything.
AMPLITUDE_SIGNIFICANCE = 2.0


@dataclass(frozen=True)
class DecayCurve:
    """Hole area vs. wait time at one condition, optional 1-sigma errors."""

    times: np.ndarray  # s
    areas: np.ndarray
    sigmas: np.ndarray | None = None
    condition: Condition | None = None

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        y = np.asarray(self.areas, dtype=float)
        if t.ndim != 1 or y.ndim != 1 or t.size != y.size:
            raise ValidationError("times and areas must be 1-d arrays of equal length")
        if t.size < 2:
            raise ValidationError("decay curve needs at least 2 samples")
        if not (np.all(np.isfinite(t)) and np.all(np.isfinite(y))):
            raise ValidationError("decay curve contains non-finite values")
        if t[0] < 0 or np.any(np.diff(t) <= 0):
            raise ValidationError("times must be >= 0 and strictly increasing")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "areas", y)
        if self.sigmas is not None:
            s = np.asarray(self.sigmas, dtype=float)
            if s.shape != t.shape:
                raise ValidationError("sigmas must match times in length")
            if not np.all(np.isfinite(s)) or np.any(s <= 0):
                raise ValidationError("sigmas must be finite and positive")
            object.__setattr__(self, "sigmas", s)

    def __len__(self) -> int:
        return int(self.times.size)


@dataclass(frozen=True)
class ExpComponent:
    amplitude: float  # area units; 0 only in degenerate (flagged) fits
    lifetime: float  # s

    def __post_init__(self):
        if not (math.isfinite(self.amplitude) and self.amplitude >= 0):
            raise ValidationError(f"amplitude must be >= 0, got {self.amplitude}")
        if not (math.isfinite(self.lifetime) and self.lifetime > 0):
            raise ValidationError(f"lifetime must be positive, got {self.lifetime}")


@dataclass(frozen=True)
class MultiExpModel:
    """1-3 exponential components sorted by ascending lifetime."""

    components: tuple[ExpComponent, ...]
    baseline: float = 0.0

    def __post_init__(self):
        comps = tuple(self.components)
        if not 1 <= len(comps) <= MAX_COMPONENTS:
            raise ValidationError(f"model needs 1-{MAX_COMPONENTS} components, got {len(comps)}")
        lifetimes = [c.lifetime for c in comps]
        if any(b <= a for a, b in zip(lifetimes, lifetimes[1:])):
            raise ValidationError("components must be sorted by strictly ascending lifetime")
        if not math.isfinite(self.baseline):
            raise ValidationError("baseline must be finite")
        object.__setattr__(self, "components", comps)

    @property
    def n_components(self) -> int:
        return len(self.components)

    def amplitudes(self) -> np.ndarray:
        return np.array([c.amplitude for c in self.components])

    def lifetimes(self) -> np.ndarray:
        return np.array([c.lifetime for c in self.components])


def eval_multiexp(model: MultiExpModel, t):
    """baseline + sum_i A_i exp(-t / tau_i); t >= 0, scalar in scalar out."""
    tv = np.asarray(t, dtype=float)
    if np.any(tv < 0) or not np.all(np.isfinite(tv)):
        raise ValidationError("times must be finite and >= 0")
    acc = np.full_like(tv, model.baseline, dtype=float)
    for comp in model.components:
        acc = acc + comp.amplitude * np.exp(-tv / comp.lifetime)
    return float(acc) if np.ndim(t) == 0 else acc


@dataclass(frozen=True)
class FitReport:
    """One multi-exponential fit with normalized component weights.

    `param_cov` covers (A_1..A_n, tau_1..tau_n[, baseline]) in ascending-
    lifetime order; NaN when the normal matrix was singular.  All quoted
    uncertainties derive from this fit covariance alone, with no allowance
    for systematics.  `weights` are W_i = A_i / sum(A); a degenerate report
    (collapsed amplitude) may carry zero weights and suggests refitting with
    one fewer component.
    """

    model: MultiExpModel
    weights: np.ndarray
    param_cov: np.ndarray
    rss: float
    aicc: float
    n_params: int
    converged: bool
    degenerate: bool
    condition: Condition | None = None

    @property
    def n_components(self) -> int:
        return self.model.n_components

    def lifetime_sigmas(self) -> np.ndarray:
        n = self.n_components
        return np.sqrt(np.diag(self.param_cov)[n : 2 * n])


def _tail_single_exp(t, y):
    """(amplitude, lifetime) from a log-linear fit of the last live decade."""
    pos = y > 0
    if pos.sum() < 3:
        return None
    t_pos, y_pos = t[pos], y[pos]
    ceiling = y_pos.max()
    alive = y_pos > 0.05 * ceiling
    if alive.sum() < 3:
        alive = np.ones_like(t_pos, dtype=bool)
    t_hi = t_pos[alive][-1]
    window = (t_pos >= t_hi / 10.0) & (t_pos <= t_hi) & alive
    if window.sum() < 3:
        idx = np.flatnonzero(alive)[-min(5, int(alive.sum())) :]
        window = np.zeros_like(alive)
        window[idx] = True
    tw, yw = t_pos[window], y_pos[window]
    slope, intercept = np.polyfit(tw, np.log(yw), 1)
    if slope >= 0:
        return float(np.mean(yw)), float(max(t_hi, t[-1]))
    return float(np.exp(intercept)), float(-1.0 / slope)


def _peel_off_init(t, y, w, n, baseline0):
    """Tail-peeling lifetimes, amplitudes re-solved by non-negative LS."""
    resid = y - baseline0
    taus = []
    for _ in range(n):
        est = _tail_single_exp(t, resid)
        if est is None:
            break
        amp, tau = est
        taus.append(tau)
        resid = resid - amp * np.exp(-t / tau)
    # fall back to log-spaced lifetimes when peeling stalls
    t_lo = max(t[0], t[-1] * 1e-6) if t[0] > 0 else t[-1] * 1e-6
    while len(taus) < n:
        taus.append(math.sqrt(t_lo * t[-1]) * 10 ** (len(taus) - n / 2.0))
    taus = sorted(set(np.clip(taus, t_lo / 10.0, t[-1] * 10.0)))
    while len(taus) < n:  # deduplication may have merged lifetimes
        taus.append(taus[-1] * 5.0)
    taus = np.sort(np.asarray(taus[:n]))
    amps = _nonneg_amplitudes(t, y - baseline0, w, taus)
    amps[amps <= 0] = max(np.max(y - baseline0), 1e-30) * 1e-6
    return amps, taus


def _nonneg_amplitudes(t, y, w, taus):
    design = np.exp(-np.outer(t, 1.0 / np.asarray(taus)))
    amps, _ = nnls(design * w[:, None], y * w)
    return amps


def _extension_candidate(report: FitReport, t):
    """(n-1)-fit extended by a zero-amplitude component in the widest gap."""
    amps = report.model.amplitudes()
    taus = report.model.lifetimes()
    t_lo = max(t[0], t[-1] * 1e-6) if t[0] > 0 else t[-1] * 1e-6
    knots = np.concatenate([[t_lo / 10.0], np.sort(taus), [t[-1] * 10.0]])
    gaps = np.diff(np.log(knots))
    g = int(np.argmax(gaps))
    tau_new = math.sqrt(knots[g] * knots[g + 1])
    order = np.argsort(np.concatenate([taus, [tau_new]]))
    all_amps = np.concatenate([amps, [0.0]])[order]
    all_taus = np.sort(np.concatenate([taus, [tau_new]]))
    return all_amps, all_taus


def _run_lm(t, y, w, amps0, taus0, baseline0, free_baseline, max_iter):
    n = len(taus0)
    t_floor = t[0] if t[0] > 0 else t[-1] * 1e-9
    log_tau_lo = math.log(t_floor / 1e3)
    log_tau_hi = math.log(t[-1] * 1e3)
    theta0 = np.concatenate(
        [amps0, np.clip(np.log(taus0), log_tau_lo, log_tau_hi), [baseline0] if free_baseline else []]
    )
    lo = np.concatenate([np.zeros(n), np.full(n, log_tau_lo), [-np.inf] if free_baseline else []])
    hi = np.concatenate(
        [np.full(n, np.inf), np.full(n, log_tau_hi), [np.inf] if free_baseline else []]
    )

    def unpack(theta):
        amps = theta[:n]
        taus = np.exp(theta[n : 2 * n])
        base = theta[2 * n] if free_baseline else baseline0
        return amps, taus, base

    def residual(theta):
        amps, taus, base = unpack(theta)
        fit = base + np.exp(-t[:, None] / taus) @ amps
        return (fit - y) * w

    def jacobian(theta):
        amps, taus, base = unpack(theta)
        basis = np.exp(-t[:, None] / taus)
        jac = np.empty((t.size, theta.size))
        jac[:, :n] = basis * w[:, None]
        jac[:, n : 2 * n] = basis * amps[None, :] * (t[:, None] / taus[None, :]) * w[:, None]
        if free_baseline:
            jac[:, 2 * n] = w
        return jac

    return damped_least_squares(
        residual, theta0, jac=jacobian, bounds=(lo, hi), max_iter=max_iter
    ), unpack


def fit_multiexp(
    curve: DecayCurve,
    n: int,
    init: MultiExpModel | None = None,
    free_baseline: bool = False,
    max_iter: int = 200,
) -> FitReport:
    """Weighted least-squares fit with exactly n exponential components."""
    if n not in MIN_SAMPLES:
        raise ValidationError(f"component count must be 1-{MAX_COMPONENTS}, got {n}")
    n_params = 2 * n + (1 if free_baseline else 0)
    needed = max(MIN_SAMPLES[n], n_params + 3)
    if len(curve) < needed:
        raise ValidationError(f"{n}-component fit needs >= {needed} samples, got {len(curve)}")

    t, y = curve.times, curve.areas
    w = 1.0 / curve.sigmas if curve.sigmas is not None else np.ones_like(y)
    baseline0 = float(np.min(y)) if free_baseline else 0.0

    candidates = []
    if init is not None:
        if init.n_components != n:
            raise ValidationError("init model has wrong component count")
        candidates.append((init.amplitudes(), init.lifetimes(), init.baseline))
    else:
        amps0, taus0 = _peel_off_init(t, y, w, n, baseline0)
        candidates.append((amps0, taus0, baseline0))
        if n > 1:
            sub = fit_multiexp(curve, n - 1, free_baseline=free_baseline, max_iter=max_iter)
            ext_amps, ext_taus = _extension_candidate(sub, t)
            candidates.append((ext_amps, ext_taus, sub.model.baseline))

    best = None
    best_unpack = None
    for amps0, taus0, base0 in candidates:
        try:
            result, unpack = _run_lm(t, y, w, amps0, taus0, base0, free_baseline, max_iter)
        except ValidationError:
            continue
        if best is None or result.cost < best.cost:
            best, best_unpack = result, unpack
    if best is None:
        raise ConvergenceError(f"all {n}-component fit attempts failed on this curve")

    amps, taus, base = best_unpack(best.x)
    order = np.argsort(taus)
    amps, taus = amps[order], taus[order]

    # covariance in (A.., log tau.., [baseline]) -> reorder, then log tau -> tau
    perm = np.concatenate([order, n + order, [2 * n] if free_baseline else []]).astype(int)
    if curve.sigmas is not None:
        cov = best.covariance()
    else:
        cov = best.covariance(scale=best.cost / max(t.size - n_params, 1))
    if cov is None:
        cov = np.full((n_params, n_params), np.nan)
    else:
        cov = cov[np.ix_(perm, perm)]
        scale = np.ones(n_params)
        scale[n : 2 * n] = taus
        cov = cov * np.outer(scale, scale)

    total_amp = float(np.sum(amps))
    weights = amps / total_amp if total_amp > 0 else np.zeros(n)
    degenerate = bool(total_amp <= 0 or np.any(weights < COLLAPSED_WEIGHT))
    model = MultiExpModel(
        components=tuple(
            ExpComponent(float(a), float(tau)) for a, tau in zip(amps, _strictify(taus))
        ),
        baseline=float(base),
    )
    return FitReport(
        model=model,
        weights=weights,
        param_cov=cov,
        rss=best.cost,
        aicc=aicc_from_rss(best.cost, t.size, n_params),
        n_params=n_params,
        converged=best.converged,
        degenerate=degenerate,
        condition=curve.condition,
    )


def _strictify(taus):
    """Nudge exactly-tied lifetimes apart so the model invariant holds."""
    taus = np.asarray(taus, dtype=float).copy()
    for i in range(1, taus.size):
        if taus[i] <= taus[i - 1]:
            taus[i] = np.nextafter(taus[i - 1], np.inf)
    return taus


@dataclass(frozen=True)
class FTest:
    """F-test for the (n_low -> n_high) nested comparison; diagnostic only."""

    n_low: int
    n_high: int
    statistic: float
    p_value: float


@dataclass(frozen=True)
class ComponentSelection:
    chosen_n: int
    reports: dict[int, FitReport]
    failures: dict[int, str]
    guard_fallback: bool  # AICc winner violated the guards
    f_tests: tuple[FTest, ...]

    @property
    def chosen(self) -> FitReport:
        return self.reports[self.chosen_n]


def _passes_guards(report: FitReport) -> bool:
    amps = report.model.amplitudes()
    if report.degenerate or not np.all(amps > 0):
        return False
    n = report.n_components
    amp_sigmas = np.sqrt(np.diag(report.param_cov)[:n])
    with_cov = np.isfinite(amp_sigmas)
    if not np.all(amps[with_cov] > AMPLITUDE_SIGNIFICANCE * amp_sigmas[with_cov]):
        return False
    taus = report.model.lifetimes()
    return bool(np.all(taus[1:] / taus[:-1] >= LIFETIME_RATIO_GUARD))


def select_components(
    curve: DecayCurve, max_n: int = MAX_COMPONENTS, free_baseline: bool = False
) -> ComponentSelection:
    """Fit 1..max_n components and choose by AICc subject to the guards.

    If the AICc winner has a collapsed amplitude or under-separated
    lifetimes, the best guarded model is chosen instead and the selection is
    flagged.
    """
    if not 1 <= max_n <= MAX_COMPONENTS:
        raise ValidationError(f"max_n must be 1-{MAX_COMPONENTS}, got {max_n}")
    reports: dict[int, FitReport] = {}
    failures: dict[int, str] = {}
    for k in range(1, max_n + 1):
        try:
            reports[k] = fit_multiexp(curve, k, free_baseline=free_baseline)
        except (ValidationError, ConvergenceError) as exc:
            failures[k] = str(exc)
    if not reports:
        raise ConvergenceError(f"every component count failed: {failures}")

    f_tests = []
    ks = sorted(reports)
    for k_low, k_high in zip(ks, ks[1:]):
        lo, hi = reports[k_low], reports[k_high]
        dfn = hi.n_params - lo.n_params
        dfd = len(curve) - hi.n_params
        if dfn > 0 and dfd > 0 and hi.rss > 0:
            stat = ((lo.rss - hi.rss) / dfn) / (hi.rss / dfd)
            p = float(f_dist.sf(stat, dfn, dfd)) if stat > 0 else 1.0
            f_tests.append(FTest(k_low, k_high, float(stat), p))

    by_aicc = sorted(reports, key=lambda k: reports[k].aicc)
    winner = by_aicc[0]
    guard_fallback = False
    if not _passes_guards(reports[winner]):
        guarded = [k for k in by_aicc if _passes_guards(reports[k])]
        guard_fallback = True
        winner = guarded[0] if guarded else min(reports)
    return ComponentSelection(
        chosen_n=winner,
        reports=reports,
        failures=failures,
        guard_fallback=guard_fallback,
        f_tests=tuple(f_tests),
    )


@dataclass(frozen=True)
class WeightStats:
    """Constant-fit mean and spread of component weights across conditions."""

    means: np.ndarray  # per component, ascending-lifetime order
    stds: np.ndarray
    count: int
    n_components: int


def weight_stats(reports: Sequence[FitReport]) -> WeightStats:
    """Average the normalized weights of same-count reports."""
    reports = list(reports)
    if len(reports) < 2:
        raise ValidationError("weight statistics need at least 2 reports")
    counts = {r.n_components for r in reports}
    if len(counts) != 1:
        raise ValidationError(f"mixed component counts in one group: {sorted(counts)}")
    n = counts.pop()
    mat = np.vstack([r.weights for r in reports])
    return WeightStats(
        means=mat.mean(axis=0),
        stds=mat.std(axis=0, ddof=1),
        count=len(reports),
        n_components=n,
    )
