"""Command-line interface.

Verbs: eval-rate, simulate-decay, simulate-trace, fit-trace, fit-decay,
fit-model, pipeline, plot-data.  Conditions are given in the experiment's
customary units (--temp-mk, --field-mt); files always store SI.

Exit codes: 0 success, 1 validation error, 2 convergence failure, 3 I/O or
file-format error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import io
from ._version import __version__
from .decay import select_components
from .errors import ConvergenceError, DataFormatError, ShbError, ValidationError
from .globalfit import GlobalFitConfig, fit_global
from .lineshape import as_shape_kind, classify_shape, fit_hole
from .model import (
    Condition,
    RelaxationModel,
    rate_breakdown,
    reference_high_temp_model,
    reference_low_temp_model,
)
from .pipeline import PipelineConfig, emit_plot_data, persist_report, run_pipeline
from .simulate import (
    HIGH_TEMP_HORIZON_S,
    LOW_TEMP_HORIZON_S,
    ExperimentPlan,
    NoiseSpec,
    simulate_decay,
    simulate_trace,
)

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_CONVERGENCE = 2
EXIT_IO = 3


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--seed", type=int, default=0, help="random seed (simulation verbs)")
    parser.add_argument("--config", type=Path, default=None, help="JSON config file")
    parser.add_argument("-o", "--output", type=Path, default=None, help="output file/directory")
    parser.add_argument(
        "--format", choices=("json", "csv"), default="json", help="stdout format for results"
    )


def _add_condition_args(parser: argparse.ArgumentParser, required: bool = True) -> None:
    parser.add_argument("--temp-mk", "--temp-mK", type=float, default=None, help="temperature in mK")
    parser.add_argument("--temp-k", "--temp-K", type=float, default=None, help="temperature in K")
    parser.add_argument("--field-mt", "--field-mT", type=float, default=None, help="field in mT")
    parser.add_argument("--field-t", "--field-T", type=float, default=None, help="field in T")
    parser.set_defaults(_condition_required=required)


def _condition_from_args(args) -> Condition | None:
    temp = field = None
    if args.temp_mk is not None:
        temp = args.temp_mk * 1e-3
    if args.temp_k is not None:
        if temp is not None:
            raise ValidationError("give either --temp-mk or --temp-k, not both")
        temp = args.temp_k
    if args.field_mt is not None:
        field = args.field_mt * 1e-3
    if args.field_t is not None:
        if field is not None:
            raise ValidationError("give either --field-mt or --field-t, not both")
        field = args.field_t
    if temp is None and field is None and not args._condition_required:
        return None
    if temp is None or field is None:
        raise ValidationError("condition needs a temperature and a field")
    return Condition(temp, field)


def _load_model_arg(args) -> RelaxationModel:
    if args.model is not None and args.reference is not None:
        raise ValidationError("give either --model or --reference, not both")
    if args.model is not None:
        return io.load_model(args.model)
    if args.reference == "low":
        return reference_low_temp_model()
    if args.reference == "high":
        return reference_high_temp_model()
    raise ValidationError("a model is required: --model FILE or --reference low|high")


def _add_model_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--model", type=Path, default=None, help="relaxation-model JSON")
    parser.add_argument(
        "--reference",
        choices=("low", "high"),
        default=None,
        help="use the built-in reference parameter set",
    )


def _emit(args, doc: dict, csv_rows: tuple[list[str], list[list[str]]] | None = None) -> None:
    if args.output is not None:
        io.write_json(args.output, doc)
        return
    if args.format == "csv" and csv_rows is not None:
        header, rows = csv_rows
        print(",".join(header))
        for row in rows:
            print(",".join(row))
        return
    sys.stdout.write(io.canonical_json(doc))


# ---------------------------------------------------------------------------
# verbs


def _cmd_eval_rate(args) -> int:
    model = _load_model_arg(args)
    cond = _condition_from_args(args)
    docs = []
    rows = []
    class_ids = [args.class_id] if args.class_id else [str(c) for c in model.class_ids()]
    for cid in class_ids:
        br = rate_breakdown(model, cid, cond)
        docs.append(
            {
                "class_id": str(cid).upper(),
                "temperature_K": cond.temperature,
                "field_T": cond.field,
                "flip_flop_per_s": br.flip_flop,
                "tls_per_s": br.tls_direct,
                "raman_per_s": br.raman,
                "total_per_s": br.total,
                "lifetime_s": br.lifetime,
            }
        )
        rows.append(
            [str(cid).upper()]
            + [io.fmt(v) for v in (cond.temperature, cond.field, br.flip_flop, br.tls_direct, br.raman, br.total, br.lifetime)]
        )
    header = [
        "class",
        "temperature_K",
        "field_T",
        "flip_flop_per_s",
        "tls_per_s",
        "raman_per_s",
        "total_per_s",
        "lifetime_s",
    ]
    _emit(args, {"schema_version": io.SCHEMA_VERSION, "rates": docs}, (header, rows))
    return EXIT_OK


def _parse_weights(text: str) -> dict[str, float]:
    out = {}
    for chunk in text.split(","):
        if not chunk.strip():
            continue
        try:
            key, val = chunk.split("=")
            out[key.strip().upper()] = float(val)
        except ValueError:
            raise ValidationError(f"bad weight spec {chunk!r}; expected CLASS=VALUE") from None
    if not out:
        raise ValidationError("empty weight spec")
    return out


def _cmd_simulate_decay(args) -> int:
    model = _load_model_arg(args)
    conds = []
    for spec in args.cond or []:
        try:
            t_mk, b_mt = (float(v) for v in spec.split(":"))
        except ValueError:
            raise ValidationError(f"bad --cond {spec!r}; expected TEMP_MK:FIELD_MT") from None
        conds.append(Condition(t_mk * 1e-3, b_mt * 1e-3))
    single = _condition_from_args(args)
    if single is not None:
        conds.append(single)
    if not conds:
        raise ValidationError("simulate-decay needs --cond or --temp-mk/--field-mt")

    horizon = args.horizon
    if horizon is None:
        horizon = LOW_TEMP_HORIZON_S if min(c.temperature for c in conds) < 0.04 else HIGH_TEMP_HORIZON_S
    plan = ExperimentPlan(
        conditions=tuple(conds),
        class_weights=_parse_weights(args.weights),
        first_read=args.first_read,
        horizon=horizon,
        reads_per_decade=args.reads_per_decade,
        initial_area=args.initial_area,
    )
    noise = NoiseSpec(sigma_rel=args.noise_rel, sigma_abs=args.noise_abs, seed=args.seed)
    dataset = simulate_decay(model, plan, noise)

    outdir = args.output or Path("decay_sim")
    provenance = io.provenance_to_dict(dataset)
    manifest = io.RunManifest(
        command="simulate-decay",
        inputs=[str(args.model)] if args.model else [f"reference:{args.reference}"],
        config_hash=io.config_hash(provenance),
    )
    written = []
    for curve in dataset.curves:
        written.extend(io.write_decay_csv(Path(outdir) / f"decay_{io.condition_slug(curve.condition)}.csv", curve))
    written.append(io.write_json(Path(outdir) / "provenance.json", provenance))
    manifest.record(*written)
    manifest.write(Path(outdir) / "manifest.json")
    print(f"wrote {len(written) + 1} files to {outdir}")
    return EXIT_OK


def _cmd_simulate_trace(args) -> int:
    noise = NoiseSpec(sigma_rel=args.noise_rel, sigma_abs=args.noise_abs, seed=args.seed)
    cond = _condition_from_args(args)
    trace = simulate_trace(
        shape=as_shape_kind(args.shape),
        center=args.center_mhz * 1e6,
        fwhm=args.fwhm_mhz * 1e6,
        depth=args.depth,
        baseline=args.baseline,
        scan=(args.scan_mhz[0] * 1e6, args.scan_mhz[1] * 1e6),
        points=args.points,
        noise=noise,
        drift=args.drift_mhz * 1e6,
        condition=cond,
        wait_time=args.wait_s,
    )
    out = args.output or Path("trace.csv")
    written = io.write_trace_csv(out, trace)
    print(f"wrote {', '.join(str(p) for p in written)}")
    return EXIT_OK


def _cmd_fit_trace(args) -> int:
    results = []
    all_converged = True
    for path in args.traces:
        trace = io.read_trace_csv(path)
        if args.no_recenter is False:
            from .lineshape import recenter

            trace = recenter(trace)
        if args.shape == "auto":
            cls = classify_shape(trace, mask_side_feature=args.mask_side_feature)
            chosen = cls.fits[cls.shape]
            rejected = next(k for k in cls.fits if k != cls.shape)
            results.append(
                {
                    "file": str(path),
                    "classification": {
                        "shape": str(cls.shape),
                        "delta_aicc": cls.delta_aicc,
                        "indeterminate": cls.indeterminate,
                    },
                    "fit": io.hole_fit_to_dict(chosen),
                    "alternative": io.hole_fit_to_dict(cls.fits[rejected]),
                }
            )
            all_converged &= chosen.converged
        else:
            fit = fit_hole(trace, as_shape_kind(args.shape), mask_side_feature=args.mask_side_feature)
            results.append({"file": str(path), "fit": io.hole_fit_to_dict(fit)})
            all_converged &= fit.converged
    _emit(args, {"schema_version": io.SCHEMA_VERSION, "hole_fits": results})
    return EXIT_OK if all_converged else EXIT_CONVERGENCE


def _cmd_fit_decay(args) -> int:
    results = []
    had_fallback = False
    for path in args.curves:
        curve = io.read_decay_csv(path)
        sel = select_components(curve, max_n=args.max_components, free_baseline=args.free_baseline)
        had_fallback |= sel.guard_fallback
        results.append(
            {
                "file": str(path),
                "selection": io.selection_to_dict(sel),
                "chosen_fit": io.fit_report_to_dict(sel.chosen),
            }
        )
    _emit(args, {"schema_version": io.SCHEMA_VERSION, "decay_fits": results})
    return EXIT_OK


def _cmd_fit_model(args) -> int:
    datasets = []
    labels = args.regime_labels.split(",") if args.regime_labels else []
    if labels and len(labels) != len(args.rates):
        raise ValidationError("--regime-labels must name one label per rates CSV")
    for i, path in enumerate(args.rates):
        label = labels[i] if labels else (Path(path).stem if len(args.rates) > 1 else "")
        datasets.extend(io.read_rates_csv(path, regime_label=label))
    config = GlobalFitConfig()
    if args.config is not None:
        config = io.fit_config_from_dict(io.load_json(args.config))
    init = None
    if args.init_model:
        init = [io.load_model(p) for p in args.init_model]
        if len(init) == 1:
            init = init[0]
    if args.per_regime:
        results = []
        by_label: dict[str, list] = {}
        for ds in datasets:
            by_label.setdefault(ds.regime_label, []).append(ds)
        for label in sorted(by_label):
            results.append(fit_global(by_label[label], config))
        doc = {
            "schema_version": io.SCHEMA_VERSION,
            "results": [io.fit_result_to_dict(r) for r in results],
        }
        converged = all(r.converged for r in results)
    else:
        result = fit_global(datasets, config, init)
        doc = io.fit_result_to_dict(result)
        converged = result.converged
    _emit(args, doc)
    return EXIT_OK if converged else EXIT_CONVERGENCE


def _cmd_pipeline(args) -> int:
    fit_config = GlobalFitConfig()
    pcfg_kwargs = {}
    if args.config is not None:
        doc = io.load_json(args.config)
        if "fit_config" in doc:
            fit_config = io.fit_config_from_dict(doc["fit_config"])
        for key in (
            "max_components",
            "free_baseline",
            "shape",
            "mask_side_feature",
            "apply_recenter",
            "exclude_transition",
            "per_regime",
        ):
            if key in doc:
                pcfg_kwargs[key] = doc[key]
    if args.exclude_transition:
        pcfg_kwargs["exclude_transition"] = True
    if args.per_regime:
        pcfg_kwargs["per_regime"] = True
    if args.mask_side_feature:
        pcfg_kwargs["mask_side_feature"] = True
    config = PipelineConfig(fit_config=fit_config, **pcfg_kwargs)

    source = Path(args.input)
    kind = args.input_kind
    if kind == "auto":
        kind = "traces"
        if source.is_dir():
            sample = sorted(source.glob("*.csv"))
            if sample:
                with open(sample[0], "r", encoding="utf-8") as fh:
                    kind = "traces" if fh.readline().startswith("freq_hz") else "decays"
        elif source.is_file():
            with open(source, "r", encoding="utf-8") as fh:
                kind = "traces" if fh.readline().startswith("freq_hz") else "decays"

    traces = curves = None
    if kind == "traces":
        traces = io.ingest_traces(source, apply_recenter=config.apply_recenter)
    else:
        curves = io.ingest_decays(source)
    report = run_pipeline(traces=traces, curves=curves, config=config)

    outdir = args.output or Path("pipeline_out")
    files = persist_report(report, outdir, command="pipeline")
    print(f"pipeline wrote {len(files)} files to {outdir}")
    if report.skipped:
        print(f"{len(report.skipped)} items skipped; see report.json")
    return EXIT_OK


def _cmd_plot_data(args) -> int:
    doc = io.load_json(args.report)
    body = doc.get("body", doc)
    if body.get("kind") != "pipeline-report":
        raise DataFormatError(f"{args.report}: not a pipeline report")
    report = _report_from_dict(body)
    outdir = args.output or Path("plot_data")
    written = emit_plot_data(report, args.which, outdir, svg=args.svg)
    print(f"wrote {len(written)} files to {outdir}")
    return EXIT_OK


def _report_from_dict(body: dict):
    """Rebuild the pieces of a report that plot-data needs."""
    from types import SimpleNamespace

    from .decay import WeightStats as _WS

    conditions = []
    for cdoc in body.get("conditions", []):
        weights = [c["weight"] for c in cdoc["decay_fit"]["components"]]
        cond = Condition(cdoc["condition"]["temperature_K"], cdoc["condition"]["field_T"])
        report = SimpleNamespace(n_components=len(weights), weights=np.asarray(weights))
        conditions.append(SimpleNamespace(condition=cond, report=report))
    stats = {
        regime: _WS(
            means=np.asarray(d["means"]),
            stds=np.asarray(d["stds"]),
            count=d["count"],
            n_components=d["n_components"],
        )
        for regime, d in body.get("weight_statistics", {}).items()
    }
    return SimpleNamespace(
        conditions=conditions,
        weight_statistics=stats,
        predictions=body.get("predictions", []),
    )


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="shb",
        description="Spectral-hole-burning spin-relaxation simulator and fitting toolkit",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("eval-rate", help="evaluate the relaxation model at one condition")
    _add_common(p)
    _add_model_args(p)
    _add_condition_args(p)
    p.add_argument("--class-id", default=None, help="ion class (default: all in the model)")
    p.set_defaults(func=_cmd_eval_rate)

    p = sub.add_parser("simulate-decay", help="simulate decay curves from a model")
    _add_common(p)
    _add_model_args(p)
    _add_condition_args(p, required=False)
    p.add_argument("--cond", action="append", help="condition TEMP_MK:FIELD_MT (repeatable)")
    p.add_argument("--weights", required=True, help="class weights, e.g. A=0.52,B=0.26,C=0.22")
    p.add_argument("--first-read", type=float, default=0.1, help="first read time (s)")
    p.add_argument("--horizon", type=float, default=None, help="last read time (s)")
    p.add_argument("--reads-per-decade", type=int, default=12)
    p.add_argument("--initial-area", type=float, default=1.0)
    p.add_argument("--noise-rel", type=float, default=0.0)
    p.add_argument("--noise-abs", type=float, default=0.0)
    p.set_defaults(func=_cmd_simulate_decay)

    p = sub.add_parser("simulate-trace", help="simulate one read-scan trace")
    _add_common(p)
    _add_condition_args(p, required=False)
    p.add_argument("--shape", choices=("lorentzian", "gaussian"), required=True)
    p.add_argument("--center-mhz", type=float, default=400.0)
    p.add_argument("--fwhm-mhz", type=float, required=True)
    p.add_argument("--depth", type=float, required=True)
    p.add_argument("--baseline", type=float, default=1.0)
    p.add_argument("--scan-mhz", type=float, nargs=2, default=(200.0, 600.0))
    p.add_argument("--points", type=int, default=128)
    p.add_argument("--drift-mhz", type=float, default=0.0)
    p.add_argument("--noise-rel", type=float, default=0.0)
    p.add_argument("--noise-abs", type=float, default=0.0)
    p.add_argument("--wait-s", type=float, default=None)
    p.set_defaults(func=_cmd_simulate_trace)

    p = sub.add_parser("fit-trace", help="fit hole profiles to trace CSVs")
    _add_common(p)
    p.add_argument("traces", nargs="+", type=Path)
    p.add_argument("--shape", choices=("auto", "lorentzian", "gaussian"), default="auto")
    p.add_argument("--mask-side-feature", action="store_true")
    p.add_argument("--no-recenter", action="store_true")
    p.set_defaults(func=_cmd_fit_trace)

    p = sub.add_parser("fit-decay", help="fit multi-exponential decays to decay CSVs")
    _add_common(p)
    p.add_argument("curves", nargs="+", type=Path)
    p.add_argument("--max-components", type=int, default=3, choices=(1, 2, 3))
    p.add_argument("--free-baseline", action="store_true")
    p.set_defaults(func=_cmd_fit_decay)

    p = sub.add_parser("fit-model", help="global fit of the relaxation model to rates CSVs")
    _add_common(p)
    p.add_argument("rates", nargs="+", type=Path)
    p.add_argument(
        "--regime-labels",
        default=None,
        help="comma-separated regime label per rates CSV (default: file stem)",
    )
    p.add_argument("--init-model", action="append", type=Path, help="initial model JSON (repeatable)")
    p.add_argument("--per-regime", action="store_true", help="fit each regime separately")
    p.set_defaults(func=_cmd_fit_model)

    p = sub.add_parser("pipeline", help="run the full analysis pipeline")
    _add_common(p)
    p.add_argument("input", help="directory (or file) of trace or decay CSVs")
    p.add_argument("--input-kind", choices=("auto", "traces", "decays"), default="auto")
    p.add_argument("--exclude-transition", action="store_true")
    p.add_argument("--per-regime", action="store_true")
    p.add_argument("--mask-side-feature", action="store_true")
    p.set_defaults(func=_cmd_pipeline)

    p = sub.add_parser("plot-data", help="emit plot-ready CSVs from a pipeline report")
    _add_common(p)
    p.add_argument("report", type=Path)
    p.add_argument("--which", choices=("rates", "weights"), required=True)
    p.add_argument("--svg", action="store_true", help="also render static SVGs")
    p.set_defaults(func=_cmd_plot_data)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except ConvergenceError as exc:
        print(f"convergence failure: {exc}", file=sys.stderr)
        return EXIT_CONVERGENCE
    except (DataFormatError, OSError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ShbError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
