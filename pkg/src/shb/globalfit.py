"""Joint estimation of the relaxation model from rate-vs-condition data.

One call fits any number of regime groups (each a RelaxationModel with its
own classes and datasets) while *sharing* the constants and exponents
(g_factor, zero_field_linewidth, field_broadening, tls_field_exp,
tls_temp_exp, raman_temp_exp) across every group; the three mechanism
strengths stay per class.  Passing the low- and high-temperature groups
together therefore fits both regimes against one common set of constants
and exponents; passing one group fits a regime on its own.

Parameter naming
----------------
Shared parameters go by their field name.  Strengths are qualified:
``alpha_tls[B]`` in single-group fits, ``alpha_tls[high-temperature:B]``
when several groups are present; a bare ``alpha_raman`` in a config
addresses the strength for every class.

Loss
----
The objective is sum(((f - y) / sigma)**2) in linear-rate space, or the same
with log rates and sigma_log = sigma/rate (the default: measured rates span
several decades, and a linear loss would let the fastest class dominate).

Inputs are canonicalized (groups sorted by regime label, classes by id,
points lexicographically) before optimization, so results do not depend on
the order datasets or points are supplied in.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.optimize import nnls

from .errors import ValidationError
from .leastsq import damped_least_squares
from .model import (
    DEFAULT_CONSTANTS,
    ClassParams,
    Condition,
    IonClass,
    PhysicalConstants,
    RateBreakdown,
    RelaxationModel,
    SharedModelParams,
    as_ion_class,
    rate_grid,
    sech_squared,
)

SHARED_PARAM_NAMES = (
    "g_factor",
    "zero_field_linewidth",
    "field_broadening",
    "tls_field_exp",
    "tls_temp_exp",
    "raman_temp_exp",
)
ALPHA_PARAM_NAMES = ("alpha_ff", "alpha_tls", "alpha_raman")

DEFAULT_FIXED = frozenset({"zero_field_linewidth", "field_broadening"})

DEFAULT_BOUNDS = {
    "g_factor": (1e-9, 15.0),
    "zero_field_linewidth": (1.0, 1e12),
    "field_broadening": (0.0, 1e13),
    "tls_field_exp": (0.0, 10.0),
    "tls_temp_exp": (0.0, 10.0),
    "raman_temp_exp": (0.0, 10.0),
    "alpha_ff": (0.0, np.inf),
    "alpha_tls": (0.0, np.inf),
    "alpha_raman": (0.0, np.inf),
}

# Exponent-like shared parameters covered by the initialization grid search.
GRID_PARAM_NAMES = ("g_factor", "tls_field_exp", "tls_temp_exp", "raman_temp_exp")
_GRID_FLOOR = 0.05

DEFAULT_INIT_SHARED = SharedModelParams(
    g_factor=1.0,
    zero_field_linewidth=1.3e9,
    field_broadening=150e9,
    tls_field_exp=1.0,
    tls_temp_exp=1.0,
    raman_temp_exp=3.0,
)


class LossSpace(str, Enum):
    LOG_RATE = "log_rate"
    LINEAR_RATE = "linear_rate"

    def __str__(self) -> str:
        return self.value


@dataclass(frozen=True)
class RatePoint:
    condition: Condition
    rate: float  # s^-1
    sigma: float  # s^-1

    def __post_init__(self):
        if not (math.isfinite(self.rate) and self.rate > 0):
            raise ValidationError(f"rate must be positive, got {self.rate}")
        if not (math.isfinite(self.sigma) and self.sigma > 0):
            raise ValidationError(f"sigma must be positive, got {self.sigma}")


@dataclass(frozen=True)
class RateDataset:
    """Measured rates of one class, optionally tagged with a regime label."""

    class_id: IonClass
    points: tuple[RatePoint, ...]
    regime_label: str = ""

    def __post_init__(self):
        object.__setattr__(self, "class_id", as_ion_class(self.class_id))
        pts = tuple(self.points)
        if len(pts) < 4:
            raise ValidationError(f"rate dataset needs >= 4 points, got {len(pts)}")
        object.__setattr__(self, "points", pts)

    @staticmethod
    def from_arrays(class_id, temperatures, fields, rates, sigmas, regime_label="") -> "RateDataset":
        pts = tuple(
            RatePoint(Condition(float(t), float(b)), float(r), float(s))
            for t, b, r, s in zip(temperatures, fields, rates, sigmas, strict=True)
        )
        return RateDataset(class_id=class_id, points=pts, regime_label=regime_label)


@dataclass(frozen=True)
class GlobalFitConfig:
    """Free/fixed mask, bounds and loss for the global fit.

    `fixed` entries may be shared names, bare alpha names, or qualified
    alpha names.  `bounds` overrides the defaults per (possibly qualified)
    name.  A config that fixes everything turns fit_global into a pure
    evaluation of the init model.
    """

    fixed: frozenset[str] = DEFAULT_FIXED
    bounds: Mapping[str, tuple[float, float]] = field(default_factory=dict)
    loss_space: LossSpace = LossSpace.LOG_RATE
    max_iterations: int = 300
    tol: float = 1e-12
    grid_search: bool = True
    grid_points: int = 5
    multi_start: int = 3

    def __post_init__(self):
        object.__setattr__(self, "fixed", frozenset(self.fixed))
        object.__setattr__(self, "loss_space", LossSpace(self.loss_space))
        for name, (lo, hi) in dict(self.bounds).items():
            if not lo <= hi:
                raise ValidationError(f"bounds for {name} are not ordered: ({lo}, {hi})")
        if self.max_iterations < 1 or self.grid_points < 1 or self.multi_start < 1:
            raise ValidationError("max_iterations, grid_points and multi_start must be >= 1")


@dataclass(frozen=True)
class ResidualRow:
    regime_label: str
    class_id: IonClass
    condition: Condition
    rate: float
    sigma: float
    model_rate: float
    residual: float  # in the loss space of the fit, sigma-scaled


@dataclass
class GlobalFitResult:
    models: tuple[RelaxationModel, ...]
    free_names: tuple[str, ...]
    theta: np.ndarray  # fitted free-parameter values, same order as free_names
    param_cov: np.ndarray | None  # None when the Jacobian was singular
    residual_table: tuple[ResidualRow, ...]
    objective: float
    iterations: int
    converged: bool
    message: str
    config: GlobalFitConfig
    datasets: tuple[RateDataset, ...]
    cost_history: list[float] = field(default_factory=list)  # accepted objectives

    @property
    def model(self) -> RelaxationModel:
        return self.models[0]

    def parameter_value(self, name: str) -> float:
        try:
            return float(self.theta[self.free_names.index(name)])
        except ValueError:
            raise ValidationError(f"{name!r} was not a free parameter of this fit") from None

    def parameter_sigma(self, name: str) -> float:
        idx = self.free_names.index(name) if name in self.free_names else None
        if idx is None:
            raise ValidationError(f"{name!r} was not a free parameter of this fit")
        if self.param_cov is None:
            return math.nan
        var = float(self.param_cov[idx, idx])
        return math.sqrt(var) if var >= 0 else math.nan


# ---------------------------------------------------------------------------
# problem assembly


@dataclass
class _Block:
    """All points of one (group, class) pair, canonically sorted."""

    group: int
    class_index: int  # index into the group's canonical class tuple
    class_id: IonClass
    T: np.ndarray
    B: np.ndarray
    y: np.ndarray
    sig: np.ndarray


@dataclass
class _Problem:
    models: list[RelaxationModel]  # canonical group order, classes sorted
    blocks: list[_Block]
    full0: np.ndarray  # initial full parameter vector
    names: list[str]  # full-vector parameter names
    free_idx: np.ndarray
    lo: np.ndarray  # bounds for free parameters
    hi: np.ndarray
    loss_space: LossSpace
    constants: PhysicalConstants

    @property
    def free_names(self) -> tuple[str, ...]:
        return tuple(self.names[i] for i in self.free_idx)

    def alpha_offset(self, group: int, class_index: int) -> int:
        off = len(SHARED_PARAM_NAMES)
        for g in range(group):
            off += 3 * len(self.models[g].classes)
        return off + 3 * class_index


def _canonical_model(model: RelaxationModel) -> RelaxationModel:
    classes = tuple(sorted(model.classes, key=lambda c: c.class_id.value))
    return replace(model, classes=classes)


def _match_datasets(models, datasets) -> dict[tuple[int, int], list[RateDataset]]:
    by_label = {m.regime_label: gi for gi, m in enumerate(models)}
    if len(by_label) != len(models):
        raise ValidationError("regime labels of the init models must be distinct")
    assignment: dict[tuple[int, int], list[RateDataset]] = {}
    for ds in datasets:
        if ds.regime_label:
            if ds.regime_label not in by_label:
                raise ValidationError(
                    f"dataset regime {ds.regime_label!r} matches no init model "
                    f"(have {sorted(by_label)})"
                )
            gi = by_label[ds.regime_label]
        elif len(models) == 1:
            gi = 0
        else:
            raise ValidationError(
                "datasets must carry a regime_label when fitting multiple regimes"
            )
        model = models[gi]
        ids = [c.class_id for c in model.classes]
        if ds.class_id not in ids:
            raise ValidationError(
                f"dataset class {ds.class_id} not in model "
                f"{model.regime_label!r} (has {[str(i) for i in ids]})"
            )
        assignment.setdefault((gi, ids.index(ds.class_id)), []).append(ds)
    return assignment


def _build_blocks(models, assignment) -> list[_Block]:
    blocks = []
    for (gi, ci), dss in sorted(assignment.items()):
        T = np.array([p.condition.temperature for ds in dss for p in ds.points])
        B = np.array([p.condition.field for ds in dss for p in ds.points])
        y = np.array([p.rate for ds in dss for p in ds.points])
        sig = np.array([p.sigma for ds in dss for p in ds.points])
        order = np.lexsort((sig, y, B, T))
        blocks.append(
            _Block(
                group=gi,
                class_index=ci,
                class_id=models[gi].classes[ci].class_id,
                T=T[order],
                B=B[order],
                y=y[order],
                sig=sig[order],
            )
        )
    return blocks


def _alpha_name(base: str, model: RelaxationModel, class_id: IonClass, multi: bool) -> str:
    if multi:
        return f"{base}[{model.regime_label}:{class_id}]"
    return f"{base}[{class_id}]"


def _full_layout(models) -> tuple[list[str], np.ndarray]:
    multi = len(models) > 1
    names = list(SHARED_PARAM_NAMES)
    shared = models[0].shared
    values = [getattr(shared, n) for n in SHARED_PARAM_NAMES]
    for m in models:
        for cls in m.classes:
            for base in ALPHA_PARAM_NAMES:
                names.append(_alpha_name(base, m, cls.class_id, multi))
                values.append(getattr(cls, base))
    return names, np.asarray(values, dtype=float)


def _base_name(name: str) -> str:
    return name.split("[", 1)[0]


def _is_fixed(name: str, class_id_tag: str | None, fixed: frozenset[str]) -> bool:
    if name in fixed or _base_name(name) in fixed:
        return True
    if class_id_tag is not None and f"{_base_name(name)}[{class_id_tag}]" in fixed:
        return True
    return False


def _resolve_mask(names, fixed: frozenset[str]) -> np.ndarray:
    known = set(names) | {_base_name(n) for n in names}
    for n in names:
        if "[" in n:
            known.add(f"{_base_name(n)}[{n[n.index('[') + 1 : -1].split(':')[-1]}]")
    unknown = [f for f in fixed if f not in known]
    if unknown:
        raise ValidationError(f"fixed entries match no parameter: {sorted(unknown)}")
    free = []
    for i, n in enumerate(names):
        tag = n[n.index("[") + 1 : -1].split(":")[-1] if "[" in n else None
        if not _is_fixed(n, tag, fixed):
            free.append(i)
    return np.asarray(free, dtype=int)


def _resolve_bounds(names, free_idx, overrides) -> tuple[np.ndarray, np.ndarray]:
    lo = np.empty(free_idx.size)
    hi = np.empty(free_idx.size)
    overrides = dict(overrides)
    for k, i in enumerate(free_idx):
        name = names[i]
        base = _base_name(name)
        pair = overrides.get(name)
        if pair is None and "[" in name:
            tag = name[name.index("[") + 1 : -1].split(":")[-1]
            pair = overrides.get(f"{base}[{tag}]")
        if pair is None:
            pair = overrides.get(base)
        if pair is None:
            pair = DEFAULT_BOUNDS[base]
        lo[k], hi[k] = float(pair[0]), float(pair[1])
    return lo, hi


def _prepare(datasets, config, init) -> _Problem:
    datasets = tuple(datasets)
    if not datasets:
        raise ValidationError("fit_global needs at least one dataset")
    if init is None:
        labels = sorted({ds.regime_label for ds in datasets})
        inits = []
        for label in labels:
            ids = sorted(
                {ds.class_id for ds in datasets if ds.regime_label == label},
                key=lambda c: c.value,
            )
            inits.append(
                RelaxationModel(
                    shared=DEFAULT_INIT_SHARED,
                    classes=tuple(
                        ClassParams(i, alpha_ff=1.0, alpha_tls=1.0, alpha_raman=1.0) for i in ids
                    ),
                    regime_label=label,
                )
            )
        models = inits
    elif isinstance(init, RelaxationModel):
        models = [init]
    else:
        models = list(init)
        if not models:
            raise ValidationError("init model list is empty")
    models = sorted((_canonical_model(m) for m in models), key=lambda m: m.regime_label)
    for m in models[1:]:
        if m.shared != models[0].shared:
            raise ValidationError("init models must agree on their shared parameters")

    assignment = _match_datasets(models, datasets)
    blocks = _build_blocks(models, assignment)
    names, full0 = _full_layout(models)
    free_idx = _resolve_mask(names, config.fixed)
    lo, hi = _resolve_bounds(names, free_idx, config.bounds)
    return _Problem(
        models=models,
        blocks=blocks,
        full0=full0,
        names=names,
        free_idx=free_idx,
        lo=lo,
        hi=hi,
        loss_space=config.loss_space,
        constants=DEFAULT_CONSTANTS,
    )


# ---------------------------------------------------------------------------
# evaluation


def _block_bases(problem: _Problem, full: np.ndarray, block: _Block):
    """Mechanism bases so that rate = a_ff*Fff + a_tls*Ftls + a_r*Fr."""
    g, gamma0, gamma_b, l, m, n = full[:6]
    mu = problem.constants.bohr_magneton
    kb = problem.constants.boltzmann
    x = g * mu * block.B / (2.0 * kb * block.T)
    denom = gamma0 + gamma_b * block.B
    f_ff = sech_squared(x) / denom
    f_tls = block.B**l * block.T**m
    f_r = block.T**n
    return x, denom, f_ff, f_tls, f_r


def _model_rates(problem: _Problem, full: np.ndarray):
    rates = []
    for block in problem.blocks:
        off = problem.alpha_offset(block.group, block.class_index)
        a_ff, a_tls, a_r = full[off : off + 3]
        _, _, f_ff, f_tls, f_r = _block_bases(problem, full, block)
        rates.append(a_ff * f_ff + a_tls * f_tls + a_r * f_r)
    return rates


def _residual_vector(problem: _Problem, full: np.ndarray) -> np.ndarray:
    out = []
    for block, f in zip(problem.blocks, _model_rates(problem, full)):
        if problem.loss_space is LossSpace.LOG_RATE:
            sig_log = block.sig / block.y
            out.append((np.log(np.maximum(f, 1e-300)) - np.log(block.y)) / sig_log)
        else:
            out.append((f - block.y) / block.sig)
    return np.concatenate(out)


def _jacobian(problem: _Problem, full: np.ndarray) -> np.ndarray:
    n_pts = sum(b.y.size for b in problem.blocks)
    J_full = np.zeros((n_pts, full.size))
    g, gamma0, gamma_b, l, m, n = full[:6]
    mu = problem.constants.bohr_magneton
    kb = problem.constants.boltzmann
    row = 0
    for block in problem.blocks:
        npts = block.y.size
        sl = slice(row, row + npts)
        row += npts
        off = problem.alpha_offset(block.group, block.class_index)
        a_ff, a_tls, a_r = full[off : off + 3]
        x, denom, f_ff, f_tls, f_r = _block_bases(problem, full, block)
        ff = a_ff * f_ff
        tls = a_tls * f_tls
        raman = a_r * f_r
        f = ff + tls + raman

        c = mu * block.B / (2.0 * kb * block.T)  # dx/dg
        logB = np.where(block.B > 0, np.log(np.maximum(block.B, 1e-300)), 0.0)
        logT = np.log(block.T)

        J_full[sl, 0] = -2.0 * ff * np.tanh(x) * c
        J_full[sl, 1] = -ff / denom
        J_full[sl, 2] = -ff * block.B / denom
        J_full[sl, 3] = tls * logB
        J_full[sl, 4] = tls * logT
        J_full[sl, 5] = raman * logT
        J_full[sl, off] = f_ff
        J_full[sl, off + 1] = f_tls
        J_full[sl, off + 2] = f_r

        if problem.loss_space is LossSpace.LOG_RATE:
            scale = 1.0 / (np.maximum(f, 1e-300) * (block.sig / block.y))
        else:
            scale = 1.0 / block.sig
        J_full[sl, :] *= scale[:, None]
    return J_full[:, problem.free_idx]


# ---------------------------------------------------------------------------
# initialization


def _nnls_strengths(problem: _Problem, full: np.ndarray) -> np.ndarray:
    """Best non-negative strengths per block at the current shared values.

    Fixed strengths keep their init value; their contribution is removed
    from the target before solving for the rest.
    """
    full = full.copy()
    free_set = set(problem.free_idx.tolist())
    for block in problem.blocks:
        off = problem.alpha_offset(block.group, block.class_index)
        _, _, f_ff, f_tls, f_r = _block_bases(problem, full, block)
        bases = [f_ff, f_tls, f_r]
        w = 1.0 / block.sig
        target = block.y.astype(float).copy()
        cols = []
        for j in range(3):
            if off + j in free_set:
                cols.append(j)
            else:
                target -= full[off + j] * bases[j]
        if not cols:
            continue
        design = np.column_stack([bases[j] for j in cols]) * w[:, None]
        sol, _ = nnls(design, target * w)
        for j, v in zip(cols, sol):
            full[off + j] = v
    return full


def _grid_candidates(problem: _Problem, config: GlobalFitConfig) -> list[np.ndarray]:
    """Start points: exponent grid x NNLS strengths, ranked by objective."""
    free_names = problem.free_names
    axes = []
    axis_idx = []
    for name in GRID_PARAM_NAMES:
        if name not in free_names:
            continue
        i = problem.names.index(name)
        k = int(np.where(problem.free_idx == i)[0][0])
        lo = max(problem.lo[k], _GRID_FLOOR)
        hi = problem.hi[k]
        vals = set(np.geomspace(lo, hi, config.grid_points).tolist())
        init_val = problem.full0[i]
        if problem.lo[k] <= init_val <= hi:
            vals.add(float(init_val))
        axes.append(sorted(vals))
        axis_idx.append(i)

    if not axes:
        combos = [problem.full0.copy()]
    else:
        combos = []
        for combo in itertools.product(*axes):
            full = problem.full0.copy()
            for i, v in zip(axis_idx, combo):
                full[i] = v
            combos.append(full)

    scored = []
    for full in combos:
        full = _nnls_strengths(problem, full)
        r = _residual_vector(problem, full)
        scored.append((float(r @ r), full))
    scored.sort(key=lambda pair: pair[0])
    return [full for _, full in scored[: config.multi_start]]


# ---------------------------------------------------------------------------
# public API


def fit_global(
    datasets: Sequence[RateDataset],
    config: GlobalFitConfig | None = None,
    init: RelaxationModel | Sequence[RelaxationModel] | None = None,
) -> GlobalFitResult:
    """Fit shared parameters and per-class strengths to rate datasets.

    `init` may be one model or one per regime group (sharing identical
    SharedModelParams); `None` builds a neutral default from the dataset
    labels.  See the module docstring for naming, loss and canonical
    ordering conventions.
    """
    config = config or GlobalFitConfig()
    problem = _prepare(datasets, config, init)
    free_idx = problem.free_idx

    if free_idx.size == 0:
        r = _residual_vector(problem, problem.full0)
        return _assemble(
            problem,
            problem.full0,
            theta_cov=None,
            objective=float(r @ r),
            iterations=0,
            converged=True,
            message="all parameters fixed; pure evaluation",
            config=config,
            datasets=tuple(datasets),
        )

    if config.grid_search:
        starts = _grid_candidates(problem, config)
    else:
        starts = [problem.full0.copy()]

    def embed(theta):
        full = problem.full0.copy()
        full[free_idx] = theta
        return full

    best = None
    for start in starts:
        res = damped_least_squares(
            lambda th: _residual_vector(problem, embed(th)),
            start[free_idx],
            jac=lambda th: _jacobian(problem, embed(th)),
            bounds=(problem.lo, problem.hi),
            max_iter=config.max_iterations,
            cost_rtol=config.tol,
        )
        if best is None or res.cost < best.cost:
            best = res

    full = embed(best.x)
    cov = best.covariance()
    return _assemble(
        problem,
        full,
        theta_cov=cov,
        objective=best.cost,
        iterations=best.iterations,
        converged=best.converged,
        message=best.message,
        config=config,
        datasets=tuple(datasets),
        cost_history=best.cost_history,
    )


def _assemble(
    problem,
    full,
    theta_cov,
    objective,
    iterations,
    converged,
    message,
    config,
    datasets,
    cost_history=None,
) -> GlobalFitResult:
    shared = SharedModelParams(**{n: float(full[i]) for i, n in enumerate(SHARED_PARAM_NAMES)})
    models = []
    for gi, m in enumerate(problem.models):
        classes = []
        for ci, cls in enumerate(m.classes):
            off = problem.alpha_offset(gi, ci)
            classes.append(
                ClassParams(
                    cls.class_id,
                    alpha_ff=float(full[off]),
                    alpha_tls=float(full[off + 1]),
                    alpha_raman=float(full[off + 2]),
                )
            )
        models.append(replace(m, shared=shared, classes=tuple(classes)))

    rows = []
    residuals = _residual_vector(problem, full)
    pos = 0
    for block, f in zip(problem.blocks, _model_rates(problem, full)):
        label = problem.models[block.group].regime_label
        for j in range(block.y.size):
            rows.append(
                ResidualRow(
                    regime_label=label,
                    class_id=block.class_id,
                    condition=Condition(block.T[j], block.B[j]),
                    rate=float(block.y[j]),
                    sigma=float(block.sig[j]),
                    model_rate=float(f[j]),
                    residual=float(residuals[pos + j]),
                )
            )
        pos += block.y.size

    return GlobalFitResult(
        models=tuple(models),
        free_names=problem.free_names,
        theta=full[problem.free_idx].copy(),
        param_cov=theta_cov,
        residual_table=tuple(rows),
        objective=float(objective),
        iterations=iterations,
        converged=converged,
        message=message,
        config=config,
        datasets=datasets,
        cost_history=list(cost_history) if cost_history else [float(objective)],
    )


def predict_curves(
    result: GlobalFitResult,
    class_id,
    sweep: Iterable[Condition],
    regime_label: str | None = None,
) -> list[tuple[Condition, RateBreakdown]]:
    """Mechanism-decomposed model rates along a condition sweep."""
    cid = as_ion_class(class_id)
    matches = [
        m
        for m in result.models
        if cid in m.class_ids() and (regime_label is None or m.regime_label == regime_label)
    ]
    if not matches:
        raise ValidationError(f"no fitted model has class {cid}" + (f" in regime {regime_label!r}" if regime_label else ""))
    if len(matches) > 1:
        raise ValidationError(
            f"class {cid} appears in several regimes "
            f"{[m.regime_label for m in matches]}; pass regime_label"
        )
    sweep = list(sweep)
    if not sweep:
        return []
    return rate_grid(matches[0], cid, sweep)


def set_parameter(models: Sequence[RelaxationModel], name: str, value: float):
    """New model list with one named parameter overridden.

    Shared names apply to every model; alpha names may be bare (all
    classes), class-qualified, or regime-and-class qualified.
    """
    base = _base_name(name)
    out = []
    hits = 0
    for m in models:
        if base in SHARED_PARAM_NAMES:
            if "[" in name:
                raise ValidationError(f"shared parameter {base} cannot be qualified: {name!r}")
            out.append(replace(m, shared=replace(m.shared, **{base: float(value)})))
            hits += 1
            continue
        if base not in ALPHA_PARAM_NAMES:
            raise ValidationError(f"unknown parameter {name!r}")
        tag = name[name.index("[") + 1 : -1] if "[" in name else None
        regime = None
        cls_tag = None
        if tag is not None:
            parts = tag.split(":")
            cls_tag = parts[-1]
            regime = parts[0] if len(parts) > 1 else None
        classes = []
        for cls in m.classes:
            match = (
                tag is None
                or (cls_tag == str(cls.class_id) and (regime is None or regime == m.regime_label))
            )
            if match:
                classes.append(replace(cls, **{base: float(value)}))
                hits += 1
            else:
                classes.append(cls)
        out.append(replace(m, classes=tuple(classes)))
    if hits == 0:
        raise ValidationError(f"parameter {name!r} matched nothing")
    return out


def profile_uncertainty(
    result: GlobalFitResult,
    name: str,
    span: Iterable[float],
) -> list[tuple[float, float]]:
    """Objective re-minimized with `name` clamped at each value in `span`.

    `name` must have been free in the fit; the re-minimizations warm-start
    from the fitted optimum, so profiling near the optimum is cheap.
    """
    if name not in result.free_names:
        raise ValidationError(f"{name!r} was fixed or unknown in this fit; cannot profile")
    cfg = replace(result.config, fixed=result.config.fixed | {name}, grid_search=False)
    out = []
    for value in span:
        inits = set_parameter(result.models, name, float(value))
        sub = fit_global(result.datasets, cfg, inits)
        out.append((float(value), sub.objective))
    return out
