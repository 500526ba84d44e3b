"""End-to-end analysis: traces -> hole areas -> decay fits -> rates -> model.

The stages mirror the experimental workflow:

1. ingest read scans, recenter, classify the hole shape per condition on the
   earliest scan, fit every scan with that shape;
2. assemble hole area vs. wait time per condition and fit 1-3 exponential
   components with AICc selection;
3. turn fitted lifetimes into rates (rate = 1/tau, sigma = sigma_tau/tau**2),
   grouped into regimes by selected component count (3 -> low-temperature,
   2 -> high-temperature) and into classes by ascending lifetime (A, B, C);
4. fit the relaxation model globally across all regimes at once (shared
   constants and exponents), or per regime on request;
5. tabulate per-mechanism prediction sweeps for plotting.

Per-item failures are recorded and skipped; a stage only fails the pipeline
when it produces nothing at all.  Reports serialize deterministically:
re-running with identical inputs yields byte-identical report bodies
(timestamps live outside the hashed body).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import io
from .decay import ComponentSelection, DecayCurve, FitReport, WeightStats, select_components, weight_stats
from .errors import ValidationError
from .globalfit import GlobalFitConfig, GlobalFitResult, RateDataset, RatePoint, fit_global
from .lineshape import (
    HoleFit,
    ShapeClassification,
    ShapeKind,
    SpectralTrace,
    as_shape_kind,
    classify_shape,
    fit_hole,
)
from .model import Condition, IonClass, rate_grid

LOW_TEMP_REGIME = "low-temperature"
HIGH_TEMP_REGIME = "high-temperature"
SINGLE_COMPONENT_REGIME = "single-component"
_REGIME_BY_N = {1: SINGLE_COMPONENT_REGIME, 2: HIGH_TEMP_REGIME, 3: LOW_TEMP_REGIME}
_CLASS_BY_POSITION = (IonClass.A, IonClass.B, IonClass.C)

# Conditions in this temperature band sit between the two regimes; they can
# be excluded from the rate stage via PipelineConfig.exclude_transition.
TRANSITION_BAND_K = (0.040, 0.080)

_PREDICTION_POINTS = 150


@dataclass(frozen=True)
class PipelineConfig:
    max_components: int = 3
    free_baseline: bool = False
    shape: str = "auto"  # "auto" classifies per condition; or force one shape
    mask_side_feature: bool = False
    apply_recenter: bool = True
    exclude_transition: bool = False
    per_regime: bool = False
    fit_config: GlobalFitConfig = GlobalFitConfig()

    def __post_init__(self):
        if self.shape != "auto":
            as_shape_kind(self.shape)
        if not 1 <= self.max_components <= 3:
            raise ValidationError("max_components must be 1-3")

    def to_dict(self) -> dict:
        return {
            "max_components": self.max_components,
            "free_baseline": self.free_baseline,
            "shape": self.shape,
            "mask_side_feature": self.mask_side_feature,
            "apply_recenter": self.apply_recenter,
            "exclude_transition": self.exclude_transition,
            "per_regime": self.per_regime,
            "fit_config": io.fit_config_to_dict(self.fit_config),
        }


@dataclass
class ConditionAnalysis:
    """Everything derived from one (temperature, field) condition."""

    condition: Condition
    curve: DecayCurve
    selection: ComponentSelection
    shape: ShapeKind | None = None
    classification: ShapeClassification | None = None
    hole_fits: list[tuple[float, HoleFit]] = field(default_factory=list)
    transfer_efficiency: float | None = None

    @property
    def slug(self) -> str:
        return io.condition_slug(self.condition)

    @property
    def report(self) -> FitReport:
        return self.selection.chosen


@dataclass
class PipelineReport:
    config: PipelineConfig
    conditions: list[ConditionAnalysis]
    weight_statistics: dict[str, WeightStats]
    rate_datasets: dict[str, list[RateDataset]]
    rate_sources: dict[str, list[dict]]
    global_results: list[GlobalFitResult]
    predictions: list[dict]
    skipped: list[str]

    def to_dict(self) -> dict:
        """Deterministic report body (no timestamps)."""
        return {
            "schema_version": io.SCHEMA_VERSION,
            "kind": "pipeline-report",
            "config": self.config.to_dict(),
            "conditions": [
                {
                    "condition": io.condition_to_dict(c.condition),
                    "slug": c.slug,
                    "shape": str(c.shape) if c.shape else None,
                    "shape_delta_aicc": c.classification.delta_aicc if c.classification else None,
                    "shape_indeterminate": (
                        c.classification.indeterminate if c.classification else None
                    ),
                    "transfer_efficiency": c.transfer_efficiency,
                    "hole_fits": [
                        {"wait_time_s": w, **io.hole_fit_to_dict(f)} for w, f in c.hole_fits
                    ],
                    "selection": io.selection_to_dict(c.selection),
                    "decay_fit": io.fit_report_to_dict(c.report),
                }
                for c in self.conditions
            ],
            "weight_statistics": {
                regime: io.weight_stats_to_dict(ws) for regime, ws in self.weight_statistics.items()
            },
            "rates": {
                regime: {
                    "points": self.rate_sources[regime],
                }
                for regime in sorted(self.rate_sources)
            },
            "global_fits": [io.fit_result_to_dict(r) for r in self.global_results],
            "predictions": self.predictions,
            "skipped": sorted(self.skipped),
        }

    def body_json(self) -> str:
        return io.canonical_json(self.to_dict())


def _group_traces(traces: Sequence[SpectralTrace], skipped: list[str]):
    groups: dict[tuple[float, float], list[SpectralTrace]] = {}
    for tr in traces:
        cond = tr.meta.condition
        if cond is None or tr.meta.wait_time is None:
            skipped.append("trace without condition/wait_time metadata dropped from pipeline")
            continue
        groups.setdefault((cond.temperature, cond.field), []).append(tr)
    return [groups[k] for k in sorted(groups)]


def _area_sigma(fit: HoleFit) -> float:
    """Propagate (depth, fwhm) covariance into the analytic area."""
    k = fit.area / (fit.depth * fit.fwhm) if fit.depth > 0 and fit.fwhm > 0 else 0.0
    cov = fit.param_cov
    var = (
        fit.fwhm**2 * cov[2, 2] + fit.depth**2 * cov[1, 1] + 2.0 * fit.depth * fit.fwhm * cov[1, 2]
    )
    return k * math.sqrt(var) if var > 0 else math.nan


def _analyze_condition(
    group: list[SpectralTrace], config: PipelineConfig, skipped: list[str]
) -> ConditionAnalysis | None:
    group = sorted(group, key=lambda tr: tr.meta.wait_time)
    cond = group[0].meta.condition
    slug = io.condition_slug(cond)

    classification = None
    if config.shape == "auto":
        classification = classify_shape(group[0], mask_side_feature=config.mask_side_feature)
        shape = classification.shape
    else:
        shape = as_shape_kind(config.shape)

    def fit_one(tr):
        return fit_hole(tr, shape, mask_side_feature=config.mask_side_feature)

    fits = io.parallel_map(fit_one, group)

    times, areas, sigmas, hole_fits = [], [], [], []
    for tr, f in zip(group, fits):
        w = tr.meta.wait_time
        if times and w <= times[-1]:
            skipped.append(f"{slug}: duplicate wait time {w} s dropped")
            continue
        hole_fits.append((w, f))
        times.append(w)
        areas.append(f.area)
        sigmas.append(_area_sigma(f))

    if len(times) < 2:
        skipped.append(f"{slug}: fewer than 2 usable scans; no decay curve")
        return None

    sig = np.asarray(sigmas)
    use_sigma = bool(np.all(np.isfinite(sig)) and np.all(sig > 0))
    curve = DecayCurve(
        times=np.asarray(times),
        areas=np.asarray(areas),
        sigmas=sig if use_sigma else None,
        condition=cond,
    )
    try:
        selection = select_components(curve, config.max_components, config.free_baseline)
    except Exception as exc:  # noqa: BLE001 - recorded, not fatal
        skipped.append(f"{slug}: decay fit failed: {exc}")
        return None

    earliest = hole_fits[0][1]
    efficiency = None
    if earliest.baseline > 0 and not earliest.degenerate:
        efficiency = earliest.transfer_efficiency
    return ConditionAnalysis(
        condition=cond,
        curve=curve,
        selection=selection,
        shape=shape,
        classification=classification,
        hole_fits=hole_fits,
        transfer_efficiency=efficiency,
    )


def _analyze_curves(
    curves: Sequence[DecayCurve], config: PipelineConfig, skipped: list[str]
) -> list[ConditionAnalysis]:
    out = []
    ordered = sorted(
        curves,
        key=lambda c: (c.condition.temperature, c.condition.field)
        if c.condition
        else (math.inf, math.inf),
    )

    def analyze(curve):
        if curve.condition is None:
            return "decay curve without condition metadata dropped"
        try:
            sel = select_components(curve, config.max_components, config.free_baseline)
        except Exception as exc:  # noqa: BLE001 - recorded, not fatal
            return f"{io.condition_slug(curve.condition)}: decay fit failed: {exc}"
        return ConditionAnalysis(condition=curve.condition, curve=curve, selection=sel)

    for res in io.parallel_map(analyze, ordered):
        if isinstance(res, str):
            skipped.append(res)
        else:
            out.append(res)
    return out


def _in_transition_band(cond: Condition) -> bool:
    lo, hi = TRANSITION_BAND_K
    return lo <= cond.temperature <= hi


def _rate_stage(
    analyses: list[ConditionAnalysis], config: PipelineConfig, skipped: list[str]
) -> tuple[dict[str, list[RateDataset]], dict[str, list[dict]]]:
    per_regime_class: dict[str, dict[IonClass, list[RatePoint]]] = {}
    sources: dict[str, list[dict]] = {}
    for ana in analyses:
        report = ana.report
        regime = _REGIME_BY_N[report.n_components]
        if config.exclude_transition and _in_transition_band(ana.condition):
            skipped.append(f"{ana.slug}: transition-band condition excluded from rate stage")
            continue
        tau_sigmas = report.lifetime_sigmas()
        for i, comp in enumerate(report.model.components):
            rate = 1.0 / comp.lifetime
            sigma_tau = float(tau_sigmas[i])
            sigma_rate = sigma_tau / comp.lifetime**2
            if not (math.isfinite(sigma_rate) and sigma_rate > 0):
                skipped.append(
                    f"{ana.slug}: component {i + 1} has no usable lifetime uncertainty; "
                    "rate point dropped"
                )
                continue
            cid = _CLASS_BY_POSITION[i]
            per_regime_class.setdefault(regime, {}).setdefault(cid, []).append(
                RatePoint(ana.condition, rate, sigma_rate)
            )
            sources.setdefault(regime, []).append(
                {
                    "class_id": str(cid),
                    "source_condition": ana.slug,
                    "component_index": i,
                    "temperature_K": ana.condition.temperature,
                    "field_T": ana.condition.field,
                    "lifetime_s": comp.lifetime,
                    "rate_per_s": rate,
                    "sigma_per_s": sigma_rate,
                }
            )

    datasets: dict[str, list[RateDataset]] = {}
    for regime, by_class in sorted(per_regime_class.items()):
        for cid, pts in sorted(by_class.items(), key=lambda kv: kv[0].value):
            if len(pts) < 4:
                skipped.append(
                    f"global fit refused for regime {regime}, class {cid}: "
                    f"{len(pts)} rate points (need >= 4)"
                )
                continue
            datasets.setdefault(regime, []).append(
                RateDataset(class_id=cid, points=tuple(pts), regime_label=regime)
            )
    return datasets, sources


def _sweep_families(points: Sequence[RatePoint]) -> list[dict]:
    """Constant-T and constant-B slices with enough points to draw a sweep."""
    by_t: dict[float, list[RatePoint]] = {}
    by_b: dict[float, list[RatePoint]] = {}
    for p in points:
        by_t.setdefault(p.condition.temperature, []).append(p)
        by_b.setdefault(p.condition.field, []).append(p)
    families = []
    for t, pts in sorted(by_t.items()):
        if len(pts) >= 3:
            families.append({"axis": "field_T", "fixed": {"temperature_K": t}, "points": pts})
    for b, pts in sorted(by_b.items()):
        if len(pts) >= 3:
            families.append({"axis": "temperature_K", "fixed": {"field_T": b}, "points": pts})
    return families


def _prediction_tables(
    results: list[GlobalFitResult], datasets: Mapping[str, list[RateDataset]]
) -> list[dict]:
    tables = []
    for result in results:
        for model in result.models:
            regime = model.regime_label
            for ds in datasets.get(regime, []):
                if ds.class_id not in model.class_ids():
                    continue
                for family in _sweep_families(ds.points):
                    axis = family["axis"]
                    values = np.array(
                        [
                            p.condition.field if axis == "field_T" else p.condition.temperature
                            for p in family["points"]
                        ]
                    )
                    lo, hi = values.min(), values.max()
                    if lo > 0:
                        sweep_vals = np.geomspace(lo, hi, _PREDICTION_POINTS)
                    else:
                        sweep_vals = np.linspace(lo, hi, _PREDICTION_POINTS)
                    if axis == "field_T":
                        t_fixed = family["fixed"]["temperature_K"]
                        conds = [Condition(t_fixed, float(v)) for v in sweep_vals]
                    else:
                        b_fixed = family["fixed"]["field_T"]
                        conds = [Condition(float(v), b_fixed) for v in sweep_vals]
                    curve_rows = [
                        {
                            "temperature_K": c.temperature,
                            "field_T": c.field,
                            "total_per_s": br.total,
                            "flip_flop_per_s": br.flip_flop,
                            "tls_per_s": br.tls_direct,
                            "raman_per_s": br.raman,
                        }
                        for c, br in rate_grid(model, ds.class_id, conds)
                    ]
                    point_rows = [
                        {
                            "temperature_K": p.condition.temperature,
                            "field_T": p.condition.field,
                            "rate_per_s": p.rate,
                            "sigma_per_s": p.sigma,
                        }
                        for p in family["points"]
                    ]
                    tables.append(
                        {
                            "regime_label": regime,
                            "class_id": str(ds.class_id),
                            "axis": axis,
                            "fixed": family["fixed"],
                            "points": point_rows,
                            "curve": curve_rows,
                        }
                    )
    return tables


def run_pipeline(
    traces: Sequence[SpectralTrace] | None = None,
    curves: Sequence[DecayCurve] | None = None,
    config: PipelineConfig | None = None,
) -> PipelineReport:
    """Run the analysis chain on traces and/or ready-made decay curves."""
    config = config or PipelineConfig()
    if traces is None and curves is None:
        raise ValidationError("run_pipeline needs traces and/or decay curves")
    skipped: list[str] = []

    analyses: list[ConditionAnalysis] = []
    if traces:
        for group in _group_traces(traces, skipped):
            ana = _analyze_condition(group, config, skipped)
            if ana is not None:
                analyses.append(ana)
    if curves:
        analyses.extend(_analyze_curves(curves, config, skipped))
    if (traces or curves) and not analyses:
        raise ValidationError(f"no condition produced a usable decay fit; skipped: {skipped}")
    analyses.sort(key=lambda a: (a.condition.temperature, a.condition.field))

    stats: dict[str, WeightStats] = {}
    by_regime: dict[str, list[FitReport]] = {}
    for ana in analyses:
        by_regime.setdefault(_REGIME_BY_N[ana.report.n_components], []).append(ana.report)
    for regime, reports in sorted(by_regime.items()):
        if len(reports) >= 2:
            stats[regime] = weight_stats(reports)
        else:
            skipped.append(f"weight statistics skipped for regime {regime}: single report")

    datasets, sources = _rate_stage(analyses, config, skipped)

    results: list[GlobalFitResult] = []
    flat = [ds for regime in sorted(datasets) for ds in datasets[regime]]
    if not flat:
        skipped.append("global fit stage skipped: no regime has enough rate points")
    elif config.per_regime:
        for regime in sorted(datasets):
            results.append(fit_global(datasets[regime], config.fit_config))
    else:
        results.append(fit_global(flat, config.fit_config))

    predictions = _prediction_tables(results, datasets)
    return PipelineReport(
        config=config,
        conditions=analyses,
        weight_statistics=stats,
        rate_datasets=datasets,
        rate_sources=sources,
        global_results=results,
        predictions=predictions,
        skipped=skipped,
    )


def persist_report(report: PipelineReport, outdir, command: str = "pipeline") -> list[Path]:
    """Write the report, per-stage files and the run manifest; list the files."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    manifest = io.RunManifest(
        command=command,
        inputs=[],
        config_hash=io.config_hash(report.config.to_dict()),
    )
    written: list[Path] = []

    from datetime import datetime, timezone

    report_doc = {
        "created_at": datetime.now(timezone.utc).isoformat(),
        "body": report.to_dict(),
    }
    written.append(io.write_json(outdir / "report.json", report_doc))

    for ana in report.conditions:
        written.extend(io.write_decay_csv(outdir / f"decay_{ana.slug}.csv", ana.curve))
    for regime, datasets in sorted(report.rate_datasets.items()):
        written.append(io.write_rates_csv(outdir / f"rates_{regime}.csv", datasets))
    for i, result in enumerate(report.global_results):
        written.append(io.write_json(outdir / f"model_fit_{i}.json", io.fit_result_to_dict(result)))

    manifest.record(*written)
    manifest_path = manifest.write(outdir / "manifest.json")
    return written + [manifest_path]


def emit_plot_data(report: PipelineReport, which: str, outdir, svg: bool = False) -> list[Path]:
    """Plot-ready CSVs for one report stage ("rates" or "weights")."""
    outdir = Path(outdir)
    if which == "rates":
        if not report.predictions:
            raise ValidationError("report has no rates/prediction stage to plot")
        outdir.mkdir(parents=True, exist_ok=True)
        written = []
        for table in report.predictions:
            fixed_name, fixed_val = next(iter(table["fixed"].items()))
            slug = (
                f"{table['regime_label']}_{table['class_id']}_"
                f"{'Bsweep' if table['axis'] == 'field_T' else 'Tsweep'}_"
                f"{fixed_name.split('_')[0]}{fixed_val:g}".replace(".", "p")
            )
            points_path = outdir / f"rates_{slug}_points.csv"
            with open(points_path, "w", encoding="utf-8", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["temperature_K", "field_T", "rate_per_s", "sigma_per_s"])
                for row in table["points"]:
                    w.writerow([io.fmt(row[k]) for k in ("temperature_K", "field_T", "rate_per_s", "sigma_per_s")])
            curve_path = outdir / f"rates_{slug}_curve.csv"
            with open(curve_path, "w", encoding="utf-8", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(
                    ["temperature_K", "field_T", "total_per_s", "flip_flop_per_s", "tls_per_s", "raman_per_s"]
                )
                for row in table["curve"]:
                    w.writerow(
                        [
                            io.fmt(row[k])
                            for k in (
                                "temperature_K",
                                "field_T",
                                "total_per_s",
                                "flip_flop_per_s",
                                "tls_per_s",
                                "raman_per_s",
                            )
                        ]
                    )
            written.extend([points_path, curve_path])
            if svg:
                written.append(_render_rates_svg(table, outdir / f"rates_{slug}.svg"))
        return written

    if which == "weights":
        if not report.weight_statistics:
            raise ValidationError("report has no weight-statistics stage to plot")
        outdir.mkdir(parents=True, exist_ok=True)
        written = []
        for regime, stats in sorted(report.weight_statistics.items()):
            rows = []
            for ana in report.conditions:
                rep = ana.report
                if _REGIME_BY_N[rep.n_components] != regime:
                    continue
                row = {
                    "temperature_K": ana.condition.temperature,
                    "field_T": ana.condition.field,
                }
                for i, wgt in enumerate(rep.weights):
                    row[f"weight_{_CLASS_BY_POSITION[i]}"] = float(wgt)
                rows.append(row)
            path = outdir / f"weights_{regime}.csv"
            cols = ["temperature_K", "field_T"]
            n = stats.n_components
            for i in range(n):
                cid = _CLASS_BY_POSITION[i]
                cols += [f"weight_{cid}", f"mean_{cid}", f"band_lo_{cid}", f"band_hi_{cid}"]
            with open(path, "w", encoding="utf-8", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(cols)
                for row in rows:
                    out = [io.fmt(row["temperature_K"]), io.fmt(row["field_T"])]
                    for i in range(n):
                        cid = _CLASS_BY_POSITION[i]
                        mean, std = float(stats.means[i]), float(stats.stds[i])
                        out += [
                            io.fmt(row[f"weight_{cid}"]),
                            io.fmt(mean),
                            io.fmt(mean - std),
                            io.fmt(mean + std),
                        ]
                    w.writerow(out)
            written.append(path)
        return written

    raise ValidationError(f"unknown plot stage {which!r}; expected 'rates' or 'weights'")


def _render_rates_svg(table: dict, path: Path) -> Path:
    try:
        import matplotlib
    except ImportError as exc:
        raise ValidationError("SVG rendering needs matplotlib (install the 'plots' extra)") from exc
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    axis = table["axis"]
    xkey = "field_T" if axis == "field_T" else "temperature_K"
    fig, ax = plt.subplots(figsize=(5, 4))
    xs = [row[xkey] for row in table["curve"]]
    for key, style, label in (
        ("total_per_s", "-", "total"),
        ("flip_flop_per_s", "--", "flip-flop"),
        ("tls_per_s", ":", "TLS direct"),
        ("raman_per_s", "-.", "Raman"),
    ):
        ys = [row[key] for row in table["curve"]]
        if any(y > 0 for y in ys):
            ax.plot(xs, ys, style, label=label)
    px = [row[xkey] for row in table["points"]]
    py = [row["rate_per_s"] for row in table["points"]]
    pe = [row["sigma_per_s"] for row in table["points"]]
    ax.errorbar(px, py, yerr=pe, fmt="o", ms=4, capsize=2, label="data")
    ax.set_xscale("log" if min(xs) > 0 else "linear")
    ax.set_yscale("log")
    ax.set_xlabel(xkey)
    ax.set_ylabel("rate (1/s)")
    ax.set_title(f"{table['regime_label']} class {table['class_id']}")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path
