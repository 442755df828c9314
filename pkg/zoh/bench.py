"""Seeded multi-trial experiments, bound diagnostics and comparison tables."""
from __future__ import annotations

import csv
import io
import itertools
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .config import (
    MethodSpec,
    build_objective,
    config_hash,
    initial_point,
    load_config,
    objective_dict,
    to_hgd_config,
)
from .diagnostics import BoundReport, check_bounds
from .errors import ConfigError, ZohError
from .estimators import CgeConfig, RgeConfig
from .importance import ProbabilityVector, optimal_alpha, sparsification_probabilities
from .objectives import Objective
from .optimize import METHODS, RunTrace, SamplingMode, first_crossing

logger = logging.getLogger(__name__)

TRACE_COLUMNS = [
    "t",
    "f_value",
    "grad_norm_sq",
    "alpha",
    "eta",
    "realized_I_size",
    "actual_queries",
    "nominal_fqc",
]
SUMMARY_COLUMNS = [
    "method",
    "trial",
    "final_objective",
    "best_grad_norm_sq",
    "total_actual_queries",
    "total_nominal_fqc",
    "queries_to_threshold",
    "wall_time",
]
NUMERIC_SUMMARY_COLUMNS = SUMMARY_COLUMNS[1:]
_INT_COLUMNS = {"trial", "total_actual_queries", "total_nominal_fqc", "queries_to_threshold"}

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_RUNTIME = 2
EXIT_DIAGNOSTIC = 3


@dataclass(frozen=True)
class SummaryRow:
    method: str
    trial: int
    final_objective: float
    best_grad_norm_sq: Optional[float]
    total_actual_queries: int
    total_nominal_fqc: int
    queries_to_threshold: Optional[int]
    wall_time: float


@dataclass
class ExperimentResult:
    exit_code: int
    message: str = ""
    summary_path: Optional[Path] = None
    trace_paths: List[Path] = field(default_factory=list)
    rows: List[SummaryRow] = field(default_factory=list)
    chosen_eta: Dict[str, float] = field(default_factory=dict)


@dataclass
class DiagnosticsResult:
    exit_code: int
    message: str = ""
    reports: List[BoundReport] = field(default_factory=list)
    report_paths: List[Path] = field(default_factory=list)


def fmt_float(value: Optional[float]) -> str:
    """Round-trip float text; empty field for missing values."""
    if value is None:
        return ""
    return format(float(value), ".17g")


def _fmt(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return fmt_float(value)
    return str(value)


def trial_seeds(base_seed: int, trials: int) -> List[int]:
    return [base_seed + i for i in range(trials)]


def summarize(
    method: str,
    trial: int,
    objective: Objective,
    trace: RunTrace,
    threshold: Optional[float],
) -> SummaryRow:
    grads = [r.grad_norm_sq for r in trace.records if r.grad_norm_sq is not None]
    crossing = None
    if threshold is not None:
        hit = first_crossing([r.f_value for r in trace.records], threshold)
        if hit is not None:
            crossing = trace.records[hit].actual_queries
    final = trace.final
    return SummaryRow(
        method=method,
        trial=trial,
        final_objective=objective.monitor_value(trace.x_out),
        best_grad_norm_sq=min(grads) if grads else None,
        total_actual_queries=final.actual_queries if final else 0,
        total_nominal_fqc=final.nominal_fqc if final else 0,
        queries_to_threshold=crossing,
        wall_time=trace.wall_time,
    )


def _run_trials(
    objective: Objective,
    x0: np.ndarray,
    spec: MethodSpec,
    seeds: Sequence[int],
    eta: Optional[float],
    jobs: int,
) -> List[RunTrace]:
    configs = [to_hgd_config(spec, objective, seed, eta) for seed in seeds]
    method = METHODS[spec.method]

    def one(cfg: Any) -> RunTrace:
        logger.info("run %s seed=%d", spec.name, cfg.seed)
        trace = method(objective, x0, cfg)
        logger.info("done %s seed=%d f=%s", spec.name, cfg.seed, trace.final.f_value if trace.final else None)
        return trace

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(one, configs))
    return [one(cfg) for cfg in configs]


def select_eta(
    objective: Objective,
    x0: np.ndarray,
    spec: MethodSpec,
    seeds: Sequence[int],
    jobs: int,
) -> Tuple[Optional[float], List[RunTrace]]:
    """Greedy grid search: the η with the lowest median final objective (first on ties)."""
    if not spec.eta_grid:
        return None, _run_trials(objective, x0, spec, seeds, None, jobs)
    best: Optional[Tuple[float, float, List[RunTrace]]] = None
    for eta in spec.eta_grid:
        traces = _run_trials(objective, x0, spec, seeds, eta, jobs)
        finals = [objective.monitor_value(t.x_out) if t.ok else np.inf for t in traces]
        score = float(np.median(finals))
        logger.info("%s eta=%g median final objective %s", spec.name, eta, score)
        if best is None or score < best[1]:
            best = (eta, score, traces)
    return best[0], best[2]


def _header_lines(items: Dict[str, Any]) -> List[str]:
    return [f"# {key}: {value}" for key, value in items.items()]


def _stride_records(trace: RunTrace, stride: int) -> List[Any]:
    n = len(trace.records)
    return [r for i, r in enumerate(trace.records) if (i + 1) % stride == 0 or i == n - 1]


def write_trace(path: Path, trace: RunTrace, header: Dict[str, Any], stride: int, fmt: str) -> None:
    records = _stride_records(trace, stride)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as f:
        if fmt == "jsonl":
            f.write(json.dumps({"header": header}, sort_keys=True) + "\n")
            for r in records:
                row = {col: getattr(r, col) for col in TRACE_COLUMNS}
                f.write(json.dumps(row) + "\n")
            return
        for line in _header_lines(header):
            f.write(line + "\n")
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(TRACE_COLUMNS)
        for r in records:
            writer.writerow([_fmt(getattr(r, col)) for col in TRACE_COLUMNS])


def write_summary(path: Path, rows: Iterable[SummaryRow], header: Dict[str, Any]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as f:
        for line in _header_lines(header):
            f.write(line + "\n")
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(SUMMARY_COLUMNS)
        for row in rows:
            writer.writerow([_fmt(v) for v in asdict(row).values()])


def read_summary(path: str | Path) -> Tuple[Dict[str, str], List[Dict[str, Any]]]:
    """Parse a summary CSV into (header block, rows); numbers parsed, empty fields → None."""
    path = Path(path)
    header: Dict[str, str] = {}
    body: List[str] = []
    with path.open("r", encoding="utf-8") as f:
        for line in f:
            if line.startswith("#"):
                key, _, value = line[1:].strip().partition(":")
                header[key.strip()] = value.strip()
            else:
                body.append(line)
    reader = csv.DictReader(io.StringIO("".join(body)))
    if reader.fieldnames != SUMMARY_COLUMNS:
        raise ConfigError(f"unexpected summary columns {reader.fieldnames}", location=str(path))
    rows = []
    for raw in reader:
        row: Dict[str, Any] = {"method": raw["method"]}
        for col in NUMERIC_SUMMARY_COLUMNS:
            text = raw[col]
            try:
                row[col] = None if text in ("", None) else (int(text) if col in _INT_COLUMNS else float(text))
            except ValueError as e:
                raise ConfigError(f"column {col}: not a number: {text!r}", location=str(path)) from e
        rows.append(row)
    return header, rows


def _trace_name(label: str, trial: int, fmt: str) -> str:
    return f"{label}_trial{trial:03d}.{'jsonl' if fmt == 'jsonl' else 'csv'}"


def run_experiment(
    config_path: str | Path,
    out_dir: Optional[str | Path] = None,
    jobs: int = 1,
    fmt: str = "csv",
) -> ExperimentResult:
    """Run every method for every trial seed and write traces plus ``summary.csv``."""
    try:
        cfg, base_dir = load_config(config_path)
        if cfg.objective is None:
            raise ConfigError("missing", location="objective")
        if not cfg.methods:
            raise ConfigError("at least one method is required", location="methods")
        objective = build_objective(cfg.objective, base_dir)
        x0 = initial_point(cfg, objective.dimension)
        for spec in cfg.methods:
            to_hgd_config(spec, objective, cfg.base_seed, spec.eta_grid[0] if spec.eta_grid else None)
    except ConfigError as e:
        logger.error("config error: %s", e)
        return ExperimentResult(EXIT_CONFIG, message=str(e))

    out = Path(out_dir) if out_dir is not None else resolve_output(cfg.output_dir)
    digest = config_hash(cfg)
    seeds = trial_seeds(cfg.base_seed, cfg.trials)
    result = ExperimentResult(EXIT_OK)

    for spec in cfg.methods:
        eta, traces = select_eta(objective, x0, spec, seeds, jobs)
        if eta is not None:
            result.chosen_eta[spec.name] = eta
        for trial, (seed, trace) in enumerate(zip(seeds, traces)):
            header: Dict[str, Any] = {"method": spec.name, "config_hash": digest, "seed": seed}
            if eta is not None:
                header["eta"] = fmt_float(eta)
            if trace.error:
                header["error"] = trace.error
                result.exit_code = EXIT_RUNTIME
            path = out / "traces" / _trace_name(spec.name, trial, fmt)
            write_trace(path, trace, header, cfg.report.stride, fmt)
            result.trace_paths.append(path)
            result.rows.append(summarize(spec.name, trial, objective, trace, cfg.report.threshold))

    result.summary_path = out / "summary.csv"
    write_summary(
        result.summary_path,
        result.rows,
        {"objective": json.dumps(objective_dict(cfg.objective), sort_keys=True), "config_hash": digest},
    )
    if result.exit_code == EXIT_RUNTIME:
        result.message = "at least one run aborted (see trace headers)"
    return result


def resolve_output(output_dir: str) -> Path:
    """Relative output directories are taken from the working directory."""
    path = Path(output_dir)
    return path if path.is_absolute() else Path.cwd() / path


def _diagnostic_points(points: Optional[List[List[float]]], d: int) -> List[np.ndarray]:
    if not points:
        return [np.linspace(0.5, 1.5, d)]
    for i, point in enumerate(points):
        if len(point) != d:
            raise ConfigError(f"point {i} has {len(point)} entries, objective has dimension {d}", location="diagnostics.points")
    return [np.asarray(p, dtype=float) for p in points]


def run_diagnostics(
    config_path: str | Path,
    out_dir: Optional[str | Path] = None,
    lipschitz_scale: Optional[float] = None,
    jobs: int = 1,
) -> DiagnosticsResult:
    """Check every bound on the configured grid; exit 3 if any check fails."""
    try:
        cfg, base_dir = load_config(config_path)
        if cfg.diagnostics is None:
            raise ConfigError("missing", location="diagnostics")
        diag = cfg.diagnostics
        specs = diag.objectives if diag.objectives is not None else ([cfg.objective] if cfg.objective else [])
        grid = list(itertools.product(diag.grid.n_r, diag.grid.n_c, diag.grid.mu, diag.grid.batch_size))
        if not grid or not specs:
            raise ConfigError("no configurations", location="diagnostics.grid")
        objectives = [build_objective(spec, base_dir) for spec in specs]
        points = [_diagnostic_points(diag.points, obj.dimension) for obj in objectives]
    except ConfigError as e:
        logger.error("config error: %s", e)
        return DiagnosticsResult(EXIT_CONFIG, message=str(e))

    scale = lipschitz_scale if lipschitz_scale is not None else diag.lipschitz_scale
    out = Path(out_dir) if out_dir is not None else resolve_output(cfg.output_dir)
    result = DiagnosticsResult(EXIT_OK)
    index = 0
    for objective, objective_points in zip(objectives, points):
        d = objective.dimension
        for x in objective_points:
            for n_r, n_c, mu, batch in grid:
                if n_c > d:
                    logger.warning("skipping n_c=%d > d=%d for %s", n_c, d, objective.name)
                    continue
                rng = np.random.default_rng(cfg.base_seed + index)
                rge_cfg = RgeConfig(n_r, mu, batch)
                cge_cfg = CgeConfig.uniform(d, mu, batch)
                if diag.sampling is SamplingMode.IMPORTANCE:
                    p = sparsification_probabilities(objective.exact.gradient(x), n_c)
                else:
                    p = ProbabilityVector.uniform(d, n_c)
                alpha = optimal_alpha(n_r, p, d)
                try:
                    report = check_bounds(objective, x, rge_cfg, cge_cfg, p, alpha, diag.trials, rng, scale, jobs)
                except ZohError as e:
                    logger.error("diagnostics error: %s", e)
                    return DiagnosticsResult(EXIT_CONFIG, message=str(e), reports=result.reports)
                path = out / "diagnostics" / f"report_{index:03d}.json"
                path.parent.mkdir(parents=True, exist_ok=True)
                path.write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
                result.reports.append(report)
                result.report_paths.append(path)
                index += 1

    if not result.reports:
        return DiagnosticsResult(EXIT_CONFIG, message="no configurations")
    failed = [r for r in result.reports if not r.passed]
    if failed:
        result.exit_code = EXIT_DIAGNOSTIC
        result.message = f"{len(failed)} of {len(result.reports)} configurations violate a bound"
    return result


@dataclass(frozen=True)
class AggregateRow:
    method: str
    trials: int
    final_median: float
    final_iqr: float
    queries_median: Optional[float]
    queries_iqr: Optional[float]
    reached: int


def _median_iqr(values: Sequence[float]) -> Tuple[float, float]:
    q25, q50, q75 = np.percentile(np.asarray(values, dtype=float), [25, 50, 75])
    return float(q50), float(q75 - q25)


def aggregate(rows: Sequence[Dict[str, Any]]) -> List[AggregateRow]:
    """Per-method median and IQR, methods in order of first appearance."""
    by_method: Dict[str, List[Dict[str, Any]]] = {}
    for row in rows:
        by_method.setdefault(row["method"], []).append(row)
    out = []
    for method, group in by_method.items():
        final_med, final_iqr = _median_iqr([r["final_objective"] for r in group])
        reached = [r["queries_to_threshold"] for r in group if r["queries_to_threshold"] is not None]
        q_med, q_iqr = _median_iqr(reached) if reached else (None, None)
        out.append(AggregateRow(method, len(group), final_med, final_iqr, q_med, q_iqr, len(reached)))
    return out


def compare_report(summary_paths: Sequence[str | Path], fmt: str = "markdown") -> str:
    """Aggregate summaries that share one objective spec into a markdown or CSV table."""
    if len(summary_paths) < 2:
        raise ConfigError("compare needs at least two summary files")
    objective = None
    rows: List[Dict[str, Any]] = []
    for path in summary_paths:
        header, part = read_summary(path)
        spec = header.get("objective")
        if objective is None:
            objective = spec
        elif spec != objective:
            raise ConfigError("objective spec differs from the first summary", location=str(path))
        rows.extend(part)
    table = aggregate(rows)

    columns = ["method", "trials", "final_median", "final_iqr", "queries_median", "queries_iqr", "reached"]
    cells = [[_fmt(getattr(r, c)) for c in columns] for r in table]
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(columns)
        writer.writerows(cells)
        return buf.getvalue()
    lines = ["| " + " | ".join(columns) + " |", "|" + "---|" * len(columns)]
    lines += ["| " + " | ".join(c if c else "-" for c in row) + " |" for row in cells]
    return "\n".join(lines) + "\n"
