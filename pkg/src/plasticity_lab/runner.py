"""Sweep execution and result aggregation.

A run expands a config into independent cells (activation x seed), executes
them serially or in a process pool, and writes ``manifest.json``,
``results.csv``, ``timestamps.json`` and per-cell traces.  Everything except
the timestamps file is a pure function of the config.
"""

from __future__ import annotations

import csv
import json
import math
import shutil
import traceback
import warnings
from collections import defaultdict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .activations import ActivationSpec
from .analytic import dead_band_width, effective_negative_slope, property_grid
from .config import ExperimentConfig
from .errors import ConfigError
from .experiments import continual_cell, goldilocks_cell, shock_cell
from .metrics import (
    bootstrap_ci,
    gap_delta,
    pearson_r,
    plasticity_score,
    read_return_log,
)
from .presets import floor_group, sidedness_group

RESULT_COLUMNS = ("experiment", "config_hash", "activation", "kind", "seed", "metric", "value", "units")
REPORT_KINDS = ("summary", "floor", "sidedness", "correlation")


def tool_version() -> str:
    return __version__


@dataclass(frozen=True)
class Cell:
    index: int
    label: str
    activation: ActivationSpec | None
    seed: int
    config_hash: str

    @property
    def cell_id(self) -> str:
        return f"{self.index:04d}-seed{self.seed}"


def expand_cells(config: ExperimentConfig) -> list[Cell]:
    if config.experiment == "rl_metrics":
        return [Cell(0, "return_log", None, config.seeds[0], config.cell_hash(None))]
    pairs = config.activations.resolve()
    seeds = config.seeds[:1] if config.experiment == "property_grid" else config.seeds
    cells = []
    for label, spec in pairs:
        h = config.cell_hash(spec)
        for seed in seeds:
            cells.append(Cell(len(cells), label, spec, seed, h))
    return cells


def _rows(config, cell, metrics, units, kind):
    return [
        {"experiment": config.name, "config_hash": cell.config_hash, "activation": cell.label,
         "kind": kind, "seed": cell.seed, "metric": m, "value": v, "units": units.get(m, "")}
        for m, v in metrics.items()
    ]


def run_cell(config: ExperimentConfig, cell: Cell) -> tuple[list[dict], str | None]:
    """Rows and optional trace CSV text for one cell; raises on failure."""
    exp = config.experiment
    spec = cell.activation
    if exp == "property_grid":
        flags = property_grid(spec).as_dict()
        metrics = {k: float(v) for k, v in flags.items()}
        metrics["dbw"] = dead_band_width(spec)
        metrics["s_bar"] = effective_negative_slope(spec)
        units = {k: "flag" for k in flags} | {"dbw": "fraction", "s_bar": "slope"}
        return _rows(config, cell, metrics, units, spec.kind.value), None
    if exp == "rl_metrics":
        log = read_return_log(config.return_log)
        metrics, units = {}, {}
        for run in log.runs():
            metrics[f"plasticity_score[{run}]"] = plasticity_score(log, run, config.p)
            units[f"plasticity_score[{run}]"] = "return"
        for env in log.environments():
            metrics[f"gap_delta[{env}]"] = gap_delta(log, env, p=config.p)
            units[f"gap_delta[{env}]"] = "return"
        deltas = [metrics[f"gap_delta[{e}]"] for e in log.environments()]
        metrics["gap_delta_median"] = float(np.median(deltas))
        metrics["gap_delta_mean"] = float(np.mean(deltas))
        units.update(gap_delta_median="return", gap_delta_mean="return")
        return _rows(config, cell, metrics, units, "rl"), None
    if exp == "goldilocks":
        res = goldilocks_cell(spec, config.stream, config.data, config.train, cell.seed, config.power_iters)
    elif exp == "continual":
        res = continual_cell(spec, config.stream, config.data, config.train, cell.seed, config.replay)
    elif exp == "shock":
        res = shock_cell(spec, config.stream, config.data, config.train, cell.seed,
                         config.schedule, config.epochs)
    else:
        raise ConfigError(f"unknown experiment {exp!r}")
    trace = res.trace.to_csv() if res.trace is not None else None
    return _rows(config, cell, res.metrics, res.units, spec.kind.value), trace


def _safe_cell(config: ExperimentConfig, cell: Cell):
    try:
        rows, trace = run_cell(config, cell)
        return cell.index, "ok", rows, trace, None
    except Exception as exc:  # noqa: BLE001 - isolate any cell failure
        detail = "".join(traceback.format_exception_only(type(exc), exc)).strip()
        return cell.index, "failed", [], None, detail


def _format_value(v: float) -> str:
    return repr(float(v))


def run_experiment(config: ExperimentConfig, overwrite: bool = False, jobs: int = 1,
                   output_dir: str | Path | None = None) -> Path:
    """Execute every cell and write the experiment directory."""
    out = Path(output_dir if output_dir is not None else config.output_dir)
    if out.exists() and any(out.iterdir()):
        if not overwrite:
            raise FileExistsError(f"{out} already holds results; pass --overwrite to replace them")
        shutil.rmtree(out)
    out.mkdir(parents=True, exist_ok=True)
    started = datetime.now(timezone.utc).isoformat()
    cells = expand_cells(config)
    if not cells:
        warnings.warn(f"experiment {config.name!r} has an empty sweep grid; no results", stacklevel=2)
    if jobs > 1 and len(cells) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(_safe_cell, [config] * len(cells), cells))
    else:
        outcomes = [_safe_cell(config, c) for c in cells]
    outcomes.sort(key=lambda o: o[0])

    rows = []
    statuses = []
    trace_dir = out / "traces"
    for cell, (_, status, cell_rows, trace, error) in zip(cells, outcomes):
        rows.extend(cell_rows)
        entry = {"cell": cell.cell_id, "activation": cell.label, "seed": cell.seed,
                 "config_hash": cell.config_hash, "status": status}
        if error:
            entry["error"] = error
        if trace is not None:
            trace_dir.mkdir(exist_ok=True)
            name = f"{cell.cell_id}.csv"
            (trace_dir / name).write_text(trace)
            entry["trace"] = f"traces/{name}"
        statuses.append(entry)

    with (out / "results.csv").open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(RESULT_COLUMNS)
        for r in rows:
            writer.writerow([r["experiment"], r["config_hash"], r["activation"], r["kind"], r["seed"],
                             r["metric"], _format_value(r["value"]), r["units"]])
    manifest = {
        "tool": "plasticity-lab",
        "version": tool_version(),
        "config": config.to_dict(),
        "n_cells": len(cells),
        "n_failed": sum(s["status"] != "ok" for s in statuses),
        "cells": statuses,
    }
    if not cells:
        manifest["warning"] = "empty sweep grid"
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=False) + "\n")
    finished = datetime.now(timezone.utc).isoformat()
    (out / "timestamps.json").write_text(json.dumps({"started": started, "finished": finished}) + "\n")
    return out


# --------------------------------------------------------------------------- reports


def read_results(result_dir: str | Path) -> list[dict]:
    path = Path(result_dir) / "results.csv"
    if not path.exists():
        raise ConfigError(f"{path}: no results file")
    with path.open(newline="") as fh:
        rows = list(csv.DictReader(fh))
    for r in rows:
        r["value"] = float(r["value"])
        r["seed"] = int(r["seed"])
    return rows


def _per_activation(rows, metric):
    out: dict[tuple[str, str], list[float]] = defaultdict(list)
    for r in rows:
        if r["metric"] == metric:
            out[(r["activation"], r["kind"])].append(r["value"])
    return out


def _write_csv(path: Path, header, records):
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(records)


def summary_table(rows, metrics=None, seed: int = 0):
    """Mean and bootstrap CI across seeds for each (activation, metric)."""
    metrics = metrics or sorted({r["metric"] for r in rows})
    records = []
    for m in metrics:
        for (act, kind), vals in sorted(_per_activation(rows, m).items()):
            finite = [v for v in vals if math.isfinite(v)]
            if not finite:
                records.append([act, kind, m, len(vals), math.nan, math.nan, math.nan, math.nan, "no_finite_values"])
                continue
            mean = float(np.mean(finite))
            if len(finite) < 2 or np.ptp(finite) == 0:
                flag = "single_seed" if len(finite) < 2 else "constant"
                records.append([act, kind, m, len(finite), mean, mean, mean, 0.0, flag])
                continue
            ci = bootstrap_ci(finite, seed=seed)
            records.append([act, kind, m, len(finite), mean, ci.lo, ci.hi, ci.half_width, ""])
    return records


def group_table(rows, metrics, grouping):
    """Per-group mean of per-activation means."""
    records = []
    for m in metrics:
        groups: dict[str, list[float]] = defaultdict(list)
        for (act, kind), vals in sorted(_per_activation(rows, m).items()):
            g = grouping(kind)
            finite = [v for v in vals if math.isfinite(v)]
            if g is not None and finite:
                groups[g].append(float(np.mean(finite)))
        for g, means in sorted(groups.items()):
            records.append([g, m, len(means), float(np.mean(means))])
    return records


def correlation(rows, x: str = "dbw", y: str = "ausc"):
    xs, ys = _per_activation(rows, x), _per_activation(rows, y)
    keys = sorted(set(xs) & set(ys))
    xv = [float(np.mean(xs[k])) for k in keys]
    yv = [float(np.mean(ys[k])) for k in keys]
    r, p = pearson_r(xv, yv)
    return {"x": x, "y": y, "n": len(keys), "r": r, "p": p,
            "points": [{"activation": k[0], x: a, y: b} for k, a, b in zip(keys, xv, yv)]}


def build_report(result_dir: str | Path, kind: str, x: str = "dbw", y: str = "ausc") -> dict:
    """Write ``report_<kind>.csv`` (and JSON for correlations); returns a summary dict."""
    if kind not in REPORT_KINDS:
        raise ConfigError(f"unknown report kind {kind!r}; expected one of {REPORT_KINDS}")
    result_dir = Path(result_dir)
    rows = read_results(result_dir)
    present = {r["metric"] for r in rows}
    info: dict = {"kind": kind, "missing": []}
    if kind == "summary":
        records = summary_table(rows)
        _write_csv(result_dir / "report_summary.csv",
                   ["activation", "kind", "metric", "n", "mean", "ci_lo", "ci_hi", "half_width", "flag"], records)
        info["rows"] = len(records)
    elif kind in ("floor", "sidedness"):
        grouping = floor_group if kind == "floor" else sidedness_group
        wanted = ["ausc", "peak_sf", "sf_non_recovery_rate", "tau95", "taoa", "acc_T", "dead_unit_fraction"]
        metrics = [m for m in wanted if m in present]
        info["missing"] = [m for m in wanted if m not in present]
        records = group_table(rows, metrics, grouping)
        _write_csv(result_dir / f"report_{kind}.csv", ["group", "metric", "n_activations", "mean"], records)
        info["rows"] = len(records)
    else:
        info["missing"] = [m for m in (x, y) if m not in present]
        if info["missing"]:
            info["rows"] = 0
        else:
            corr = correlation(rows, x, y)
            (result_dir / "report_correlation.json").write_text(json.dumps(corr, indent=2) + "\n")
            _write_csv(result_dir / "report_correlation.csv", ["activation", x, y],
                       [[p["activation"], p[x], p[y]] for p in corr["points"]])
            info.update(r=corr["r"], p=corr["p"], n=corr["n"], rows=corr["n"])
    return info
