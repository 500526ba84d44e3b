"""File formats: CSV schemas, JSON documents, run manifests, trace ingest.

Schemas (all carry schema_version = 1)
--------------------------------------
trace CSV    header ``freq_hz,signal``; sidecar ``<stem>.meta.json`` with
             temperature_K, field_T, wait_time_s.
decay CSV    header ``t_s,area[,sigma]``; sidecar with temperature_K, field_T.
rates CSV    header ``class,temperature_K,field_T,rate_per_s,sigma_per_s``;
             one file holds one regime, the regime label rides on the file
             (CLI flag or caller argument), classes distinguish rows.
model JSON   shared parameters with unit-suffixed keys (linewidths in Hz),
             one entry per class.

Numbers are written as decimal text with 17 significant digits (``%.17g``),
which round-trips IEEE doubles exactly; JSON documents are emitted through a
canonical serializer (sorted keys, fixed layout, the same float format), so
equal data produces byte-identical files.  Non-finite floats serialize as
null.  Parallel helpers honor the SHB_THREADS environment variable.
"""

from __future__ import annotations

import csv
import hashlib
import math
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from ._version import __version__
from .decay import ComponentSelection, DecayCurve, FitReport, WeightStats
from .errors import DataFormatError, ValidationError
from .globalfit import (
    GlobalFitConfig,
    GlobalFitResult,
    LossSpace,
    RateDataset,
    RatePoint,
)
from .lineshape import HoleFit, SpectralTrace, TraceMeta, recenter
from .model import (
    ClassParams,
    Condition,
    IonClass,
    RelaxationModel,
    SharedModelParams,
    as_ion_class,
)

SCHEMA_VERSION = 1
TOOL_VERSION = __version__

TRACE_HEADER = ["freq_hz", "signal"]
DECAY_HEADER = ["t_s", "area", "sigma"]
RATES_HEADER = ["class", "temperature_K", "field_T", "rate_per_s", "sigma_per_s"]


def fmt(x: float) -> str:
    """17-significant-digit decimal text; exact for IEEE doubles."""
    return format(float(x), ".17g")


# ---------------------------------------------------------------------------
# canonical JSON


def _json_escape(s: str) -> str:
    out = []
    for ch in s:
        if ch == '"':
            out.append('\\"')
        elif ch == "\\":
            out.append("\\\\")
        elif ord(ch) < 0x20:
            out.append(f"\\u{ord(ch):04x}")
        else:
            out.append(ch)
    return "".join(out)


def _json_number(x: float) -> str:
    if not math.isfinite(x):
        return "null"
    text = fmt(x)
    if not any(c in text for c in ".eE"):
        text += ".0"
    return text


def _canonical(obj, indent: int, pieces: list[str]):
    pad = "  " * indent
    inner = "  " * (indent + 1)
    if obj is None:
        pieces.append("null")
    elif obj is True or obj is False:
        pieces.append("true" if obj else "false")
    elif isinstance(obj, str):
        pieces.append(f'"{_json_escape(obj)}"')
    elif isinstance(obj, (int, np.integer)) and not isinstance(obj, bool):
        pieces.append(str(int(obj)))
    elif isinstance(obj, (float, np.floating)):
        pieces.append(_json_number(float(obj)))
    elif isinstance(obj, Mapping):
        keys = sorted(obj.keys())
        if any(not isinstance(k, str) for k in keys):
            raise ValidationError("JSON object keys must be strings")
        if not keys:
            pieces.append("{}")
            return
        pieces.append("{\n")
        for i, k in enumerate(keys):
            pieces.append(f'{inner}"{_json_escape(k)}": ')
            _canonical(obj[k], indent + 1, pieces)
            pieces.append(",\n" if i < len(keys) - 1 else "\n")
        pieces.append(pad + "}")
    elif isinstance(obj, (list, tuple, np.ndarray)):
        items = list(obj)
        if not items:
            pieces.append("[]")
            return
        pieces.append("[\n")
        for i, v in enumerate(items):
            pieces.append(inner)
            _canonical(v, indent + 1, pieces)
            pieces.append(",\n" if i < len(items) - 1 else "\n")
        pieces.append(pad + "]")
    else:
        raise ValidationError(f"cannot serialize {type(obj).__name__} to JSON")


def canonical_json(obj) -> str:
    """Deterministic JSON text: sorted keys, fixed indentation, %.17g floats."""
    pieces: list[str] = []
    _canonical(obj, 0, pieces)
    pieces.append("\n")
    return "".join(pieces)


def load_json(path) -> dict:
    import json

    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except OSError:
        raise
    except ValueError as exc:
        raise DataFormatError(f"{path}: invalid JSON ({exc})") from exc


def write_json(path, obj) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(canonical_json(obj), encoding="utf-8")
    return path


def config_hash(obj) -> str:
    """sha256 of the canonical serialization; insensitive to key order."""
    return hashlib.sha256(canonical_json(obj).encode("utf-8")).hexdigest()


# ---------------------------------------------------------------------------
# threads

DEFAULT_THREADS = 4


def thread_count() -> int:
    """Worker cap from SHB_THREADS (default min(4, cpu count))."""
    raw = os.environ.get("SHB_THREADS", "").strip()
    if raw:
        try:
            n = int(raw)
        except ValueError:
            raise ValidationError(f"SHB_THREADS must be an integer, got {raw!r}") from None
        if n < 1:
            raise ValidationError("SHB_THREADS must be >= 1")
        return n
    return max(1, min(DEFAULT_THREADS, os.cpu_count() or 1))


def parallel_map(fn, items: Sequence):
    """Order-preserving map over items, threaded when SHB_THREADS allows."""
    items = list(items)
    workers = min(thread_count(), max(len(items), 1))
    if workers <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


# ---------------------------------------------------------------------------
# CSV helpers


def _read_rows(path, expected_header, optional_last=False) -> list[list[str]]:
    try:
        with open(path, "r", encoding="utf-8", newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError:
        raise
    if not rows:
        raise DataFormatError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    full = list(expected_header)
    short = full[:-1] if optional_last else full
    if header != full and header != short:
        raise DataFormatError(f"{path}: expected header {','.join(full)}, got {','.join(header)}")
    ncol = len(header)
    out = []
    for i, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != ncol:
            raise DataFormatError(f"{path}: row {i}: expected {ncol} columns, got {len(row)}")
        out.append([c.strip() for c in row])
    if not out:
        raise DataFormatError(f"{path}: no data rows")
    return out


def _parse_float(path, row_no, name, text) -> float:
    try:
        return float(text)
    except ValueError:
        raise DataFormatError(f"{path}: row {row_no}: bad {name} value {text!r}") from None


def sidecar_path(csv_path) -> Path:
    return Path(csv_path).with_suffix(".meta.json")


def _load_sidecar(csv_path, required_keys) -> dict:
    side = sidecar_path(csv_path)
    if not side.exists():
        raise DataFormatError(f"{csv_path}: missing metadata sidecar {side.name}")
    meta = load_json(side)
    missing = [k for k in required_keys if k not in meta]
    if missing:
        raise DataFormatError(f"{side}: missing keys {missing}")
    return meta


# --- traces


def write_trace_csv(path, trace: SpectralTrace) -> list[Path]:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(TRACE_HEADER)
        for f, s in zip(trace.freq, trace.signal):
            writer.writerow([fmt(f), fmt(s)])
    meta = {
        "schema_version": SCHEMA_VERSION,
        "temperature_K": trace.meta.condition.temperature if trace.meta.condition else None,
        "field_T": trace.meta.condition.field if trace.meta.condition else None,
        "wait_time_s": trace.meta.wait_time,
        "recenter_shift_hz": trace.meta.recenter_shift,
    }
    side = write_json(sidecar_path(path), meta)
    return [path, side]


def read_trace_csv(path) -> SpectralTrace:
    rows = _read_rows(path, TRACE_HEADER)
    freq = np.array([_parse_float(path, i + 2, "freq_hz", r[0]) for i, r in enumerate(rows)])
    signal = np.array([_parse_float(path, i + 2, "signal", r[1]) for i, r in enumerate(rows)])
    meta = _load_sidecar(path, ["temperature_K", "field_T", "wait_time_s"])
    cond = None
    if meta["temperature_K"] is not None and meta["field_T"] is not None:
        cond = Condition(float(meta["temperature_K"]), float(meta["field_T"]))
    wait = float(meta["wait_time_s"]) if meta["wait_time_s"] is not None else None
    shift = float(meta.get("recenter_shift_hz") or 0.0)
    try:
        return SpectralTrace(
            freq=freq,
            signal=signal,
            meta=TraceMeta(condition=cond, wait_time=wait, recenter_shift=shift),
        )
    except ValidationError as exc:
        raise DataFormatError(f"{path}: {exc}") from exc


def ingest_traces(source, apply_recenter: bool = True) -> list[SpectralTrace]:
    """Read, validate and optionally recenter traces from a directory or files.

    Returns traces sorted by (temperature, field, wait time).  An empty
    directory yields an empty list with a warning.
    """
    if isinstance(source, (str, Path)) and Path(source).is_dir():
        paths = sorted(p for p in Path(source).glob("*.csv"))
    elif isinstance(source, (str, Path)):
        paths = [Path(source)]
    else:
        paths = [Path(p) for p in source]
    if not paths:
        warnings.warn(f"no trace CSVs found in {source}", stacklevel=2)
        return []

    def load(path):
        trace = read_trace_csv(path)
        if apply_recenter:
            try:
                trace = recenter(trace)
            except ValidationError as exc:
                raise DataFormatError(f"{path}: {exc}") from exc
        return trace

    traces = parallel_map(load, paths)

    def key(tr: SpectralTrace):
        cond = tr.meta.condition
        return (
            cond.temperature if cond else math.inf,
            cond.field if cond else math.inf,
            tr.meta.wait_time if tr.meta.wait_time is not None else math.inf,
        )

    return sorted(traces, key=key)


# --- decay curves


def write_decay_csv(path, curve: DecayCurve) -> list[Path]:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with_sigma = curve.sigmas is not None
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(DECAY_HEADER if with_sigma else DECAY_HEADER[:2])
        for i in range(len(curve)):
            row = [fmt(curve.times[i]), fmt(curve.areas[i])]
            if with_sigma:
                row.append(fmt(curve.sigmas[i]))
            writer.writerow(row)
    meta = {
        "schema_version": SCHEMA_VERSION,
        "temperature_K": curve.condition.temperature if curve.condition else None,
        "field_T": curve.condition.field if curve.condition else None,
    }
    side = write_json(sidecar_path(path), meta)
    return [path, side]


def read_decay_csv(path) -> DecayCurve:
    rows = _read_rows(path, DECAY_HEADER, optional_last=True)
    with_sigma = len(rows[0]) == 3
    times = np.array([_parse_float(path, i + 2, "t_s", r[0]) for i, r in enumerate(rows)])
    areas = np.array([_parse_float(path, i + 2, "area", r[1]) for i, r in enumerate(rows)])
    sigmas = (
        np.array([_parse_float(path, i + 2, "sigma", r[2]) for i, r in enumerate(rows)])
        if with_sigma
        else None
    )
    meta = _load_sidecar(path, ["temperature_K", "field_T"])
    cond = None
    if meta["temperature_K"] is not None and meta["field_T"] is not None:
        cond = Condition(float(meta["temperature_K"]), float(meta["field_T"]))
    try:
        return DecayCurve(times=times, areas=areas, sigmas=sigmas, condition=cond)
    except ValidationError as exc:
        raise DataFormatError(f"{path}: {exc}") from exc


def ingest_decays(source) -> list[DecayCurve]:
    """Read decay CSVs from a directory or list of files."""
    if isinstance(source, (str, Path)) and Path(source).is_dir():
        paths = sorted(Path(source).glob("*.csv"))
    elif isinstance(source, (str, Path)):
        paths = [Path(source)]
    else:
        paths = [Path(p) for p in source]
    if not paths:
        warnings.warn(f"no decay CSVs found in {source}", stacklevel=2)
        return []
    curves = parallel_map(read_decay_csv, paths)

    def key(c: DecayCurve):
        return (
            c.condition.temperature if c.condition else math.inf,
            c.condition.field if c.condition else math.inf,
        )

    return sorted(curves, key=key)


# --- rates


def write_rates_csv(path, datasets: Iterable[RateDataset]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(RATES_HEADER)
        for ds in datasets:
            for p in ds.points:
                writer.writerow(
                    [
                        str(ds.class_id),
                        fmt(p.condition.temperature),
                        fmt(p.condition.field),
                        fmt(p.rate),
                        fmt(p.sigma),
                    ]
                )
    return path


def read_rates_csv(path, regime_label: str = "") -> list[RateDataset]:
    """Parse one regime's rates CSV into per-class datasets (sorted by class)."""
    rows = _read_rows(path, RATES_HEADER)
    grouped: dict[IonClass, list[RatePoint]] = {}
    for i, row in enumerate(rows):
        row_no = i + 2
        try:
            cid = as_ion_class(row[0])
        except ValidationError as exc:
            raise DataFormatError(f"{path}: row {row_no}: {exc}") from exc
        t = _parse_float(path, row_no, "temperature_K", row[1])
        b = _parse_float(path, row_no, "field_T", row[2])
        r = _parse_float(path, row_no, "rate_per_s", row[3])
        s = _parse_float(path, row_no, "sigma_per_s", row[4])
        try:
            grouped.setdefault(cid, []).append(RatePoint(Condition(t, b), r, s))
        except ValidationError as exc:
            raise DataFormatError(f"{path}: row {row_no}: {exc}") from exc
    out = []
    for cid in sorted(grouped, key=lambda c: c.value):
        try:
            out.append(
                RateDataset(class_id=cid, points=tuple(grouped[cid]), regime_label=regime_label)
            )
        except ValidationError as exc:
            raise DataFormatError(f"{path}: class {cid}: {exc}") from exc
    return out


# ---------------------------------------------------------------------------
# model / config / result documents


def condition_to_dict(cond: Condition | None) -> dict | None:
    if cond is None:
        return None
    return {"temperature_K": cond.temperature, "field_T": cond.field}


def model_to_dict(model: RelaxationModel) -> dict:
    s = model.shared
    return {
        "schema_version": SCHEMA_VERSION,
        "kind": "relaxation-model",
        "regime_label": model.regime_label,
        "shared": {
            "g_factor": s.g_factor,
            "zero_field_linewidth_hz": s.zero_field_linewidth,
            "field_broadening_hz_per_T": s.field_broadening,
            "tls_field_exp": s.tls_field_exp,
            "tls_temp_exp": s.tls_temp_exp,
            "raman_temp_exp": s.raman_temp_exp,
        },
        "classes": [
            {
                "class_id": str(c.class_id),
                "alpha_ff_per_s2": c.alpha_ff,
                "alpha_tls": c.alpha_tls,
                "alpha_raman": c.alpha_raman,
            }
            for c in model.classes
        ],
    }


def model_from_dict(doc: Mapping) -> RelaxationModel:
    try:
        if doc.get("kind") not in (None, "relaxation-model"):
            raise DataFormatError(f"not a relaxation-model document: kind={doc.get('kind')!r}")
        s = doc["shared"]
        shared = SharedModelParams(
            g_factor=float(s["g_factor"]),
            zero_field_linewidth=float(s["zero_field_linewidth_hz"]),
            field_broadening=float(s["field_broadening_hz_per_T"]),
            tls_field_exp=float(s["tls_field_exp"]),
            tls_temp_exp=float(s["tls_temp_exp"]),
            raman_temp_exp=float(s["raman_temp_exp"]),
        )
        classes = tuple(
            ClassParams(
                class_id=as_ion_class(c["class_id"]),
                alpha_ff=float(c["alpha_ff_per_s2"]),
                alpha_tls=float(c["alpha_tls"]),
                alpha_raman=float(c["alpha_raman"]),
            )
            for c in doc["classes"]
        )
        return RelaxationModel(
            shared=shared, classes=classes, regime_label=str(doc.get("regime_label", ""))
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise DataFormatError(f"malformed model document: {exc!r}") from exc


def load_model(path) -> RelaxationModel:
    return model_from_dict(load_json(path))


def save_model(path, model: RelaxationModel) -> Path:
    return write_json(path, model_to_dict(model))


def _bound_to_json(v: float):
    return None if math.isinf(v) else v


def _bound_from_json(v, default: float) -> float:
    return default if v is None else float(v)


def fit_config_to_dict(config: GlobalFitConfig) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "kind": "global-fit-config",
        "fixed": sorted(config.fixed),
        "bounds": {
            k: [_bound_to_json(lo), _bound_to_json(hi)] for k, (lo, hi) in dict(config.bounds).items()
        },
        "loss_space": str(config.loss_space),
        "max_iterations": config.max_iterations,
        "tol": config.tol,
        "grid_search": config.grid_search,
        "grid_points": config.grid_points,
        "multi_start": config.multi_start,
    }


def fit_config_from_dict(doc: Mapping) -> GlobalFitConfig:
    try:
        bounds = {
            k: (_bound_from_json(v[0], -math.inf), _bound_from_json(v[1], math.inf))
            for k, v in dict(doc.get("bounds", {})).items()
        }
        return GlobalFitConfig(
            fixed=frozenset(doc.get("fixed", sorted(GlobalFitConfig().fixed))),
            bounds=bounds,
            loss_space=LossSpace(doc.get("loss_space", "log_rate")),
            max_iterations=int(doc.get("max_iterations", 300)),
            tol=float(doc.get("tol", 1e-12)),
            grid_search=bool(doc.get("grid_search", True)),
            grid_points=int(doc.get("grid_points", 5)),
            multi_start=int(doc.get("multi_start", 3)),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise DataFormatError(f"malformed global-fit config: {exc!r}") from exc


def _cov_to_json(cov: np.ndarray | None):
    if cov is None:
        return None
    return [[float(v) for v in row] for row in np.asarray(cov)]


def fit_result_to_dict(result: GlobalFitResult) -> dict:
    if result.param_cov is not None:
        diag = np.diag(result.param_cov)
        sigmas = np.sqrt(np.where(diag >= 0, diag, np.nan))
    else:
        sigmas = [math.nan] * len(result.free_names)
    return {
        "schema_version": SCHEMA_VERSION,
        "kind": "global-fit-result",
        "objective": result.objective,
        "iterations": result.iterations,
        "converged": result.converged,
        "message": result.message,
        "loss_space": str(result.config.loss_space),
        "free_parameters": [
            {"name": n, "value": float(v), "sigma": float(s)}
            for n, v, s in zip(result.free_names, result.theta, sigmas)
        ],
        "param_cov": _cov_to_json(result.param_cov),
        "models": [model_to_dict(m) for m in result.models],
        "residuals": [
            {
                "regime_label": row.regime_label,
                "class_id": str(row.class_id),
                "temperature_K": row.condition.temperature,
                "field_T": row.condition.field,
                "rate_per_s": row.rate,
                "sigma_per_s": row.sigma,
                "model_rate_per_s": row.model_rate,
                "residual": row.residual,
            }
            for row in result.residual_table
        ],
    }


def hole_fit_to_dict(fit: HoleFit) -> dict:
    return {
        "shape": str(fit.shape),
        "center_hz": fit.center,
        "fwhm_hz": fit.fwhm,
        "depth": fit.depth,
        "baseline": fit.baseline,
        "area_hz": fit.area,
        "rss": fit.rss,
        "aicc": fit.aicc,
        "converged": fit.converged,
        "degenerate": fit.degenerate,
        "n_points": fit.n_points,
        "param_cov": _cov_to_json(fit.param_cov),
    }


def fit_report_to_dict(report: FitReport) -> dict:
    return {
        "condition": condition_to_dict(report.condition),
        "components": [
            {"amplitude": c.amplitude, "lifetime_s": c.lifetime, "weight": float(w)}
            for c, w in zip(report.model.components, report.weights)
        ],
        "baseline": report.model.baseline,
        "rss": report.rss,
        "aicc": report.aicc,
        "n_params": report.n_params,
        "converged": report.converged,
        "degenerate": report.degenerate,
        "param_cov": _cov_to_json(report.param_cov),
    }


def selection_to_dict(sel: ComponentSelection) -> dict:
    return {
        "chosen_n": sel.chosen_n,
        "guard_fallback": sel.guard_fallback,
        "candidates": {
            str(n): {
                "aicc": r.aicc,
                "rss": r.rss,
                "converged": r.converged,
                "degenerate": r.degenerate,
            }
            for n, r in sel.reports.items()
        },
        "failures": dict(sel.failures),
        "f_tests": [
            {
                "n_low": t.n_low,
                "n_high": t.n_high,
                "statistic": t.statistic,
                "p_value": t.p_value,
            }
            for t in sel.f_tests
        ],
    }


def weight_stats_to_dict(stats: WeightStats) -> dict:
    return {
        "n_components": stats.n_components,
        "count": stats.count,
        "means": [float(v) for v in stats.means],
        "stds": [float(v) for v in stats.stds],
    }


# ---------------------------------------------------------------------------
# run manifest


@dataclass
class RunManifest:
    """Record of one tool invocation: inputs, config hash, every output."""

    command: str
    inputs: list[str]
    config_hash: str
    tool_version: str = TOOL_VERSION
    timestamp: str = ""
    outputs: list[str] = None  # type: ignore[assignment]

    def __post_init__(self):
        if not self.timestamp:
            self.timestamp = datetime.now(timezone.utc).isoformat()
        if self.outputs is None:
            self.outputs = []

    def record(self, *paths) -> None:
        for p in paths:
            text = str(p)
            if text not in self.outputs:
                self.outputs.append(text)

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "kind": "run-manifest",
            "command": self.command,
            "inputs": list(self.inputs),
            "config_hash": self.config_hash,
            "tool_version": self.tool_version,
            "timestamp": self.timestamp,
            "outputs": sorted(self.outputs),
        }

    def write(self, path) -> Path:
        return write_json(path, self.to_dict())


def condition_slug(cond: Condition) -> str:
    """Filesystem-friendly condition tag, e.g. T7mK_B50mT."""
    t_mk = cond.temperature * 1e3
    b_mt = cond.field * 1e3
    return f"T{t_mk:g}mK_B{b_mt:g}mT".replace(".", "p")


# ---------------------------------------------------------------------------
# simulation provenance


def provenance_to_dict(dataset) -> dict:
    """Full generating record of a synthetic decay dataset."""
    plan = dataset.plan
    noise = dataset.noise
    return {
        "schema_version": SCHEMA_VERSION,
        "kind": "decay-simulation-provenance",
        "model": model_to_dict(dataset.model),
        "plan": {
            "conditions": [condition_to_dict(c) for c in plan.conditions],
            "class_weights": {str(k): v for k, v in plan.class_weights.items()},
            "first_read_s": plan.first_read,
            "horizon_s": plan.horizon,
            "reads_per_decade": plan.reads_per_decade,
            "initial_area": plan.initial_area,
        },
        "noise": {
            "sigma_rel": noise.sigma_rel,
            "sigma_abs": noise.sigma_abs,
            "seed": noise.seed,
        },
        "generator": "splitmix64 counter + box-muller (see shb.rng)",
    }


def dataset_from_provenance(doc: Mapping):
    """Re-simulate from a provenance document; output is bit-identical."""
    from .simulate import ExperimentPlan, NoiseSpec, simulate_decay

    try:
        if doc.get("kind") != "decay-simulation-provenance":
            raise DataFormatError(f"not a provenance document: kind={doc.get('kind')!r}")
        model = model_from_dict(doc["model"])
        p = doc["plan"]
        plan = ExperimentPlan(
            conditions=tuple(
                Condition(float(c["temperature_K"]), float(c["field_T"]))
                for c in p["conditions"]
            ),
            class_weights={as_ion_class(k): float(v) for k, v in p["class_weights"].items()},
            first_read=float(p["first_read_s"]),
            horizon=float(p["horizon_s"]),
            reads_per_decade=int(p["reads_per_decade"]),
            initial_area=float(p["initial_area"]),
        )
        n = doc["noise"]
        noise = NoiseSpec(
            sigma_rel=float(n["sigma_rel"]), sigma_abs=float(n["sigma_abs"]), seed=int(n["seed"])
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise DataFormatError(f"malformed provenance document: {exc!r}") from exc
    return simulate_decay(model, plan, noise)
