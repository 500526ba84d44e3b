"""Three-mechanism spin-relaxation rate model for erbium ions in glass fiber.

The population decay rate of one ion class is an additive sum of

* spin flip-flops between dipole-coupled ion pairs, suppressed both by
  field broadening of the spin transition and by spin polarization,

      alpha_ff / (Gamma0 + gamma_B * B) * sech(g mu_B B / (2 k T))**2

* direct coupling to thermally driven two-level systems of the glass,

      alpha_tls * B**l * T**m

* Raman-type two-quantum processes,

      alpha_raman * T**n

Shared constants and exponents (g, Gamma0, gamma_B, l, m, n) are common to
all ion classes; the three mechanism strengths vary per class.  Units are
strict SI throughout: kelvin, tesla, hertz, seconds (linewidths in Hz, not
GHz; fields in T, not mT).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from enum import Enum
from typing import Iterable

import numpy as np

from .errors import ValidationError

BOHR_MAGNETON = 9.2740100783e-24  # J/T, CODATA 2018
BOLTZMANN = 1.380649e-23  # J/K, exact since the 2019 SI

# sech**2 switches to its asymptotic form above this argument; exp(x)
# overflows near 709 and millikelvin sweeps up to 2 T go well past that.
SECH_OVERFLOW_ARG = 350.0

_INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0


def _require_finite(name: str, value: float) -> float:
    value = float(value)
    if not math.isfinite(value):
        raise ValidationError(f"{name} must be finite, got {value!r}")
    return value


@dataclass(frozen=True)
class PhysicalConstants:
    """Fundamental constants entering the flip-flop suppression factor."""

    bohr_magneton: float = BOHR_MAGNETON  # J/T
    boltzmann: float = BOLTZMANN  # J/K

    def __post_init__(self):
        for name in ("bohr_magneton", "boltzmann"):
            if not _require_finite(name, getattr(self, name)) > 0:
                raise ValidationError(f"{name} must be positive")


DEFAULT_CONSTANTS = PhysicalConstants()


class IonClass(str, Enum):
    """Label of one decay component / ion sub-population."""

    A = "A"
    B = "B"
    C = "C"

    def __str__(self) -> str:
        return self.value


def as_ion_class(value) -> IonClass:
    """Coerce a string or IonClass to IonClass."""
    if isinstance(value, IonClass):
        return value
    try:
        return IonClass(str(value).strip().upper())
    except ValueError:
        raise ValidationError(f"unknown ion class {value!r}; expected one of A, B, C") from None


@dataclass(frozen=True)
class Condition:
    """One experimental operating point."""

    temperature: float  # K
    field: float  # T

    def __post_init__(self):
        t = _require_finite("temperature", self.temperature)
        b = _require_finite("field", self.field)
        if t <= 0:
            raise ValidationError(f"temperature must be positive, got {t} K")
        if b < 0:
            raise ValidationError(f"field must be non-negative, got {b} T")
        object.__setattr__(self, "temperature", t)
        object.__setattr__(self, "field", b)


@dataclass(frozen=True)
class SharedModelParams:
    """Constants and exponents common to every ion class."""

    g_factor: float  # dimensionless
    zero_field_linewidth: float  # Hz
    field_broadening: float  # Hz/T
    tls_field_exp: float  # l
    tls_temp_exp: float  # m
    raman_temp_exp: float  # n

    def __post_init__(self):
        for name in (
            "g_factor",
            "zero_field_linewidth",
            "field_broadening",
            "tls_field_exp",
            "tls_temp_exp",
            "raman_temp_exp",
        ):
            if _require_finite(name, getattr(self, name)) < 0:
                raise ValidationError(f"{name} must be non-negative")
        if self.zero_field_linewidth <= 0:
            raise ValidationError("zero_field_linewidth must be positive")


@dataclass(frozen=True)
class ClassParams:
    """Per-class mechanism strengths."""

    class_id: IonClass
    alpha_ff: float  # s^-2
    alpha_tls: float  # s^-1 T^-l K^-m
    alpha_raman: float  # s^-1 K^-n

    def __post_init__(self):
        object.__setattr__(self, "class_id", as_ion_class(self.class_id))
        for name in ("alpha_ff", "alpha_tls", "alpha_raman"):
            if _require_finite(name, getattr(self, name)) < 0:
                raise ValidationError(f"{name} must be non-negative")


@dataclass(frozen=True)
class RelaxationModel:
    """Shared parameters plus 1-3 ion classes.

    `regime_label` is carried as free text ("low-temperature",
    "high-temperature", ...); the model itself permits any class in any
    regime.
    """

    shared: SharedModelParams
    classes: tuple[ClassParams, ...]
    regime_label: str = ""

    def __post_init__(self):
        classes = tuple(self.classes)
        if not 1 <= len(classes) <= 3:
            raise ValidationError(f"model needs 1-3 classes, got {len(classes)}")
        ids = [c.class_id for c in classes]
        if len(set(ids)) != len(ids):
            raise ValidationError(f"duplicate class ids: {[str(i) for i in ids]}")
        object.__setattr__(self, "classes", classes)

    def class_ids(self) -> tuple[IonClass, ...]:
        return tuple(c.class_id for c in self.classes)

    def class_params(self, class_id) -> ClassParams:
        cid = as_ion_class(class_id)
        for c in self.classes:
            if c.class_id == cid:
                return c
        raise ValidationError(
            f"class {cid} not in model (has {[str(i) for i in self.class_ids()]})"
        )

    def with_class(self, params: ClassParams) -> "RelaxationModel":
        """Copy of the model with one class replaced."""
        self.class_params(params.class_id)
        new = tuple(params if c.class_id == params.class_id else c for c in self.classes)
        return replace(self, classes=new)


@dataclass(frozen=True)
class RateBreakdown:
    """Total decay rate of one class at one condition, split by mechanism."""

    flip_flop: float  # s^-1
    tls_direct: float  # s^-1
    raman: float  # s^-1
    total: float  # s^-1
    lifetime: float  # s; inf when total == 0


def sech_squared(x):
    """sech(x)**2, evaluated as (2 / (e^x + e^-x))**2.

    For |x| > SECH_OVERFLOW_ARG the equivalent tail form 4*exp(-2|x|) is used
    so the intermediate exp never overflows.  Exactly 1 at x = 0.
    """
    arr = np.abs(np.asarray(x, dtype=float))
    scalar = arr.ndim == 0
    arr = np.atleast_1d(arr)
    out = np.empty_like(arr)
    small = arr <= SECH_OVERFLOW_ARG
    xs = arr[small]
    out[small] = (2.0 / (np.exp(xs) + np.exp(-xs))) ** 2
    out[~small] = 4.0 * np.exp(-2.0 * arr[~small])
    return float(out[0]) if scalar else out


def mechanism_rates(
    g_factor,
    zero_field_linewidth,
    field_broadening,
    tls_field_exp,
    tls_temp_exp,
    raman_temp_exp,
    alpha_ff,
    alpha_tls,
    alpha_raman,
    temperature,
    field,
    constants: PhysicalConstants = DEFAULT_CONSTANTS,
):
    """Raw (flip_flop, tls, raman) rate arrays on broadcastable T/B inputs.

    No validation; the dataclass layer above owns that.  Used directly by the
    global fitter, which needs vectorized evaluation on flat parameter values.
    """
    T = np.asarray(temperature, dtype=float)
    B = np.asarray(field, dtype=float)
    # overflow to inf is tolerated here; callers check finiteness
    with np.errstate(over="ignore", invalid="ignore"):
        x = g_factor * constants.bohr_magneton * B / (2.0 * constants.boltzmann * T)
        ff = alpha_ff / (zero_field_linewidth + field_broadening * B) * sech_squared(x)
        tls = alpha_tls * B**tls_field_exp * T**tls_temp_exp
        raman = alpha_raman * T**raman_temp_exp
    ff, tls, raman = np.broadcast_arrays(ff, tls, raman)
    return ff, tls, raman


def rate_breakdown(
    model: RelaxationModel,
    class_id,
    cond: Condition,
    constants: PhysicalConstants = DEFAULT_CONSTANTS,
) -> RateBreakdown:
    """Evaluate the three mechanism rates of one class at one condition.

    The total is the exact floating-point sum of the three terms and the
    lifetime is its reciprocal (inf if the total is zero).
    """
    cls = model.class_params(class_id)
    if not isinstance(cond, Condition):
        cond = Condition(*cond)
    s = model.shared
    ff, tls, raman = mechanism_rates(
        s.g_factor,
        s.zero_field_linewidth,
        s.field_broadening,
        s.tls_field_exp,
        s.tls_temp_exp,
        s.raman_temp_exp,
        cls.alpha_ff,
        cls.alpha_tls,
        cls.alpha_raman,
        cond.temperature,
        cond.field,
        constants,
    )
    ff, tls, raman = float(ff), float(tls), float(raman)
    total = ff + tls + raman
    if not math.isfinite(total):
        raise ValidationError(
            f"non-finite rate for class {cls.class_id} at T={cond.temperature} K, "
            f"B={cond.field} T (ff={ff}, tls={tls}, raman={raman})"
        )
    lifetime = 1.0 / total if total > 0 else math.inf
    return RateBreakdown(ff, tls, raman, total, lifetime)


def rate_grid(
    model: RelaxationModel,
    class_id,
    conditions: Iterable[Condition],
    constants: PhysicalConstants = DEFAULT_CONSTANTS,
) -> list[tuple[Condition, RateBreakdown]]:
    """rate_breakdown applied element-wise, order preserved."""
    conds = list(conditions)
    if not conds:
        raise ValidationError("rate_grid requires at least one condition")
    out = []
    for i, cond in enumerate(conds):
        try:
            out.append((cond, rate_breakdown(model, class_id, cond, constants)))
        except ValidationError as exc:
            raise ValidationError(f"condition #{i} ({cond!r}): {exc}") from exc
    return out


def find_rate_minimum_over_field(
    model: RelaxationModel,
    class_id,
    temperature: float,
    field_range: tuple[float, float],
    rel_tol: float = 1e-4,
    bracket_points: int = 257,
    constants: PhysicalConstants = DEFAULT_CONSTANTS,
) -> tuple[float, float]:
    """Minimizer of the total rate over field at fixed temperature.

    A dense bracket scan locates the basin, golden-section refines it to a
    relative field tolerance of `rel_tol`.  Boundary minima are returned as
    the exact boundary value.
    """
    lo, hi = (_require_finite("field_range", v) for v in field_range)
    if not (0.0 <= lo < hi <= 2.0):
        raise ValidationError(f"field_range must satisfy 0 <= lo < hi <= 2 T, got ({lo}, {hi})")
    cls = model.class_params(class_id)
    temperature = Condition(temperature, 0.0).temperature
    s = model.shared

    def rate(field):
        ff, tls, raman = mechanism_rates(
            s.g_factor,
            s.zero_field_linewidth,
            s.field_broadening,
            s.tls_field_exp,
            s.tls_temp_exp,
            s.raman_temp_exp,
            cls.alpha_ff,
            cls.alpha_tls,
            cls.alpha_raman,
            temperature,
            field,
            constants,
        )
        return ff + tls + raman

    grid = np.linspace(lo, hi, bracket_points)
    vals = rate(grid)
    k = int(np.argmin(vals))
    a = grid[max(k - 1, 0)]
    b = grid[min(k + 1, bracket_points - 1)]

    c = b - _INV_PHI * (b - a)
    d = a + _INV_PHI * (b - a)
    fc, fd = float(rate(c)), float(rate(d))
    for _ in range(200):
        if b - a <= rel_tol * max(abs(a), abs(b)):
            break
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - _INV_PHI * (b - a)
            fc = float(rate(c))
        else:
            a, c, fc = c, d, fd
            d = a + _INV_PHI * (b - a)
            fd = float(rate(d))
    best_b = 0.5 * (a + b)
    candidates = [(float(rate(x)), float(x)) for x in (lo, best_b, hi)]
    best_rate, best_field = min(candidates)
    return best_field, best_rate


# Published reference parameter sets for this fiber sample.  Linewidths are
# stored in Hz (1.3 GHz, 150 GHz/T); strengths in s^-2 and s^-1 T^-l K^-m /
# s^-1 K^-n.

REFERENCE_SHARED = SharedModelParams(
    g_factor=0.50,
    zero_field_linewidth=1.3e9,
    field_broadening=150e9,
    tls_field_exp=1.35,
    tls_temp_exp=0.20,
    raman_temp_exp=3.0,
)

LOW_TEMP_REGIME = "low-temperature"
HIGH_TEMP_REGIME = "high-temperature"


def reference_low_temp_model() -> RelaxationModel:
    """Reference three-class model for the ultra-low-temperature regime."""
    return RelaxationModel(
        shared=REFERENCE_SHARED,
        classes=(
            ClassParams(IonClass.A, alpha_ff=1.1e9, alpha_tls=12.5, alpha_raman=0.0),
            ClassParams(IonClass.B, alpha_ff=0.020e9, alpha_tls=0.29, alpha_raman=0.0),
            ClassParams(IonClass.C, alpha_ff=0.00079e9, alpha_tls=0.0012, alpha_raman=0.0),
        ),
        regime_label=LOW_TEMP_REGIME,
    )


def reference_high_temp_model() -> RelaxationModel:
    """Reference two-class model for the 44-2400 mK regime."""
    return RelaxationModel(
        shared=REFERENCE_SHARED,
        classes=(
            ClassParams(IonClass.A, alpha_ff=0.62e9, alpha_tls=5.1, alpha_raman=0.27),
            ClassParams(IonClass.B, alpha_ff=0.0070e9, alpha_tls=0.086, alpha_raman=0.0102),
        ),
        regime_label=HIGH_TEMP_REGIME,
    )
