"""Spectral-hole-burning spin-relaxation toolkit for erbium-doped fiber.

Forward-evaluates the three-mechanism relaxation model, simulates seeded
synthetic experiments, fits hole line shapes and multi-exponential decays,
and globally fits shared model parameters across temperature/field datasets.
"""

from ._version import __version__
from .decay import (
    ComponentSelection,
    DecayCurve,
    ExpComponent,
    FitReport,
    MultiExpModel,
    WeightStats,
    eval_multiexp,
    fit_multiexp,
    select_components,
    weight_stats,
)
from .errors import ConvergenceError, DataFormatError, ShbError, ValidationError
from .globalfit import (
    GlobalFitConfig,
    GlobalFitResult,
    LossSpace,
    RateDataset,
    RatePoint,
    fit_global,
    predict_curves,
    profile_uncertainty,
)
from .lineshape import (
    HoleFit,
    ShapeClassification,
    ShapeKind,
    SpectralTrace,
    TraceMeta,
    classify_shape,
    eval_profile,
    fit_hole,
    hole_area,
    recenter,
)
from .model import (
    BOHR_MAGNETON,
    BOLTZMANN,
    ClassParams,
    Condition,
    IonClass,
    PhysicalConstants,
    RateBreakdown,
    RelaxationModel,
    SharedModelParams,
    find_rate_minimum_over_field,
    rate_breakdown,
    rate_grid,
    reference_high_temp_model,
    reference_low_temp_model,
    sech_squared,
)
from .pipeline import PipelineConfig, PipelineReport, emit_plot_data, run_pipeline
from .simulate import (
    ExperimentPlan,
    NoiseSpec,
    SyntheticDataset,
    simulate_decay,
    simulate_trace,
    wait_schedule,
)

__all__ = [name for name in dir() if not name.startswith("_")]
