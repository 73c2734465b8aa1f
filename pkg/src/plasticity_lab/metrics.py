"""Accuracy, saturation-recovery, curvature, return-log and summary statistics."""

from __future__ import annotations

import csv
import math
import warnings
from collections import defaultdict
from collections.abc import Callable, Sequence
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np
from scipy import special

from .errors import ConfigError, ParseError

# --------------------------------------------------------------------------- accuracy


def _row(A, T: int) -> np.ndarray:
    A = np.asarray(A, dtype=float)
    if not 1 <= T <= A.shape[0]:
        raise ConfigError(f"T={T} outside 1..{A.shape[0]}")
    row = A[T - 1, :T]
    if np.any(np.isnan(row)):
        raise ConfigError(f"row {T} of the accuracy matrix is not populated")
    return row


def acc_T(A, T: int) -> float:
    """Mean accuracy over tasks 1..T after training on task T (1-based)."""
    return float(np.mean(_row(A, T)))


def bwt_T(A, T: int) -> float:
    """Backward transfer ``mean_{i<T} (A[T,i] - A[i,i])`` (1-based)."""
    if T < 2:
        raise ConfigError(f"backward transfer needs T >= 2, got {T}")
    A = np.asarray(A, dtype=float)
    row = _row(A, T)
    diag = np.array([A[i, i] for i in range(T - 1)])
    return float(np.mean(row[:-1] - diag))


def aoa(log: Sequence[Sequence[float]], task: int) -> float:
    """Average online accuracy over the batches of one task (0-based index)."""
    batches = log[task]
    if len(batches) == 0:
        raise ConfigError(f"task {task} has no online accuracies")
    return float(np.mean(batches))


def taoa(log: Sequence[Sequence[float]], through: int | None = None) -> float:
    """Batch-weighted mean of online accuracies over tasks ``0..through``."""
    tasks = log if through is None else log[: through + 1]
    if not tasks:
        raise ConfigError("empty online-accuracy log")
    for i, t in enumerate(tasks):
        if len(t) == 0:
            raise ConfigError(f"task {i} has no online accuracies")
    return float(np.mean(np.concatenate([np.asarray(t, dtype=float) for t in tasks])))


def trend_sign_statistic(values: Sequence[float]) -> int:
    """Mann-Kendall S: sum of sign(v_j - v_i) over i < j.  Negative means declining."""
    v = np.asarray(values, dtype=float)
    diff = v[None, :] - v[:, None]
    return int(np.sign(diff[np.triu_indices(len(v), 1)]).sum())


# --------------------------------------------------------------------------- saturation recovery


@dataclass(frozen=True)
class RecoveryEvent:
    shock_epoch: int
    gamma: float
    baseline_sf: float
    peak_sf: float
    post_revert_sf: float
    ausc: float
    sf_recovered: bool
    sf_recovery_time: int | None
    baseline_accuracy: float
    perf_recovered: bool
    tau95: int | None
    window: int

    def as_dict(self) -> dict:
        return asdict(self)


def recovery_stats(trace, perf_threshold: float = 0.95, cycle: int | None = None) -> list[RecoveryEvent]:
    """One event per shock epoch ``s`` that has a baseline epoch ``s-1``.

    The window runs from ``s`` to the epoch before the next shock.  AUSC sums
    ``max(SF - baseline, 0)`` over it.  SF recovery and tau95 are the first
    window epochs meeting their targets, as offsets from ``s``; a shock that
    does not raise SF above baseline therefore recovers at offset 0.
    """
    cycle = trace.cycle if cycle is None else cycle
    epochs = list(trace.epoch)
    pos = {e: i for i, e in enumerate(epochs)}
    events = []
    for s in trace.shock_epochs():
        if s - 1 not in pos:
            warnings.warn(f"shock at epoch {s} has no baseline epoch; skipped", stacklevel=2)
            continue
        window = [e for e in range(s, s + cycle) if e in pos]
        after = window[1:]
        if not after:
            warnings.warn(f"shock at epoch {s} has an empty recovery window; skipped", stacklevel=2)
            continue
        i0 = pos[s - 1]
        base, peak = trace.sf_network[i0], trace.sf_network[pos[s]]
        sf = [trace.sf_network[pos[e]] for e in window]
        ausc = float(sum(max(v - base, 0.0) for v in sf))
        target = base + (peak - base) / 2.0
        sf_time = next((e - s for e in window if trace.sf_network[pos[e]] <= target), None)
        base_acc = trace.accuracy[i0]
        tau = next((e - s for e in window if trace.accuracy[pos[e]] >= perf_threshold * base_acc), None)
        events.append(RecoveryEvent(
            shock_epoch=s, gamma=trace.gamma[pos[s]], baseline_sf=base, peak_sf=peak,
            post_revert_sf=trace.sf_network[pos[after[0]]], ausc=ausc,
            sf_recovered=sf_time is not None, sf_recovery_time=sf_time,
            baseline_accuracy=base_acc, perf_recovered=tau is not None, tau95=tau, window=len(window),
        ))
    return events


@dataclass(frozen=True)
class RecoverySummary:
    n_events: int
    mean_peak_sf: float
    mean_ausc: float
    sf_non_recovery_rate: float
    perf_non_recovery_rate: float
    mean_sf_recovery_time: float
    mean_tau95: float


def summarize_recovery(events: Sequence[RecoveryEvent]) -> RecoverySummary:
    if not events:
        nan = float("nan")
        return RecoverySummary(0, nan, nan, nan, nan, nan, nan)

    def mean_or_nan(vals):
        vals = [v for v in vals if v is not None]
        return float(np.mean(vals)) if vals else float("nan")

    return RecoverySummary(
        n_events=len(events),
        mean_peak_sf=float(np.mean([e.peak_sf for e in events])),
        mean_ausc=float(np.mean([e.ausc for e in events])),
        sf_non_recovery_rate=float(np.mean([not e.sf_recovered for e in events])),
        perf_non_recovery_rate=float(np.mean([not e.perf_recovered for e in events])),
        mean_sf_recovery_time=mean_or_nan(e.sf_recovery_time for e in events),
        mean_tau95=mean_or_nan(e.tau95 for e in events),
    )


# --------------------------------------------------------------------------- curvature


def effective_rank(G, tau: float = 0.99) -> int:
    """Smallest k whose leading singular values of ``G^T G`` hold a ``tau`` share of the total."""
    G = np.asarray(G, dtype=float)
    if G.ndim != 2 or G.shape[1] < 1:
        raise ConfigError(f"G must be a d x m matrix with m >= 1, got shape {G.shape}")
    if not np.all(np.isfinite(G)):
        raise ConfigError("G contains non-finite entries")
    if not 0 < tau <= 1:
        raise ConfigError(f"tau must be in (0, 1], got {tau}")
    sv = np.linalg.svd(G.T @ G, compute_uv=False)
    cum = np.cumsum(sv)
    if cum[-1] == 0:
        warnings.warn("effective rank of an all-zero gradient matrix is defined as 0", stacklevel=2)
        return 0
    return int(np.searchsorted(cum / cum[-1], tau, side="left") + 1)


class PowerIterationResult(NamedTuple):
    value: float
    vector: np.ndarray
    converged: bool
    iterations: int
    zero_operator: bool = False


def lambda_max(
    hvp: Callable[[np.ndarray], np.ndarray],
    dim: int,
    iters: int = 100,
    tol: float = 1e-6,
    seed: int = 0,
) -> PowerIterationResult:
    """Dominant-magnitude eigenvalue by power iteration.

    The returned value is the Rayleigh quotient on the converged direction,
    so a negative dominant eigenvalue comes back negative.
    """
    rng = np.random.default_rng(seed)
    v = rng.normal(size=dim)
    v /= np.linalg.norm(v)
    lam_prev = None
    for k in range(1, iters + 1):
        w = np.asarray(hvp(v), dtype=float)
        lam = float(v @ w)
        norm = np.linalg.norm(w)
        if norm == 0.0:
            return PowerIterationResult(0.0, v, True, k, zero_operator=True)
        v = w / norm
        if lam_prev is not None and abs(lam - lam_prev) < tol:
            lam = float(v @ np.asarray(hvp(v), dtype=float))
            return PowerIterationResult(lam, v, True, k)
        lam_prev = lam
    lam = float(v @ np.asarray(hvp(v), dtype=float))
    return PowerIterationResult(lam, v, False, iters)


# --------------------------------------------------------------------------- return logs

RETURN_LOG_COLUMNS = ("run", "environment", "cycle", "phase", "episode_index", "return")


@dataclass
class ReturnLog:
    """Episodic returns keyed by ``(run, environment, cycle, phase)``, ordered by episode index."""

    series: dict[tuple[str, str, int, str], np.ndarray]
    lengths: dict[tuple[str, str, int, str], np.ndarray] | None = None

    @classmethod
    def from_rows(cls, rows) -> ReturnLog:
        acc: dict[tuple, list] = defaultdict(list)
        for run, env, cycle, phase, idx, ret, *rest in rows:
            acc[(str(run), str(env), int(cycle), str(phase))].append(
                (int(idx), float(ret), float(rest[0]) if rest else 1.0)
            )
        series, lengths = {}, {}
        for key, items in acc.items():
            items.sort()
            series[key] = np.array([r for _, r, _ in items])
            lengths[key] = np.array([n for _, _, n in items])
        return cls(series, lengths)

    def runs(self) -> list[str]:
        return sorted({k[0] for k in self.series})

    def environments(self) -> list[str]:
        return sorted({k[1] for k in self.series})

    def cycles(self) -> list[int]:
        return sorted({k[2] for k in self.series})

    def get(self, run, env, cycle, phase) -> np.ndarray:
        key = (run, env, cycle, phase)
        if key not in self.series:
            raise ConfigError(f"return log has no {phase} series for run={run} env={env} cycle={cycle}")
        return self.series[key]


def read_return_log(path) -> ReturnLog:
    """Strict CSV reader; an optional seventh ``timesteps`` column gives episode lengths."""
    path = Path(path)
    rows = []
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ParseError(f"{path}:1: empty file")
        header = [h.strip() for h in header]
        expected = list(RETURN_LOG_COLUMNS)
        if header[:6] != expected or len(header) > 7 or (len(header) == 7 and header[6] != "timesteps"):
            raise ParseError(f"{path}:1: header must be {','.join(expected)}[,timesteps], got {','.join(header)}")
        seen = set()
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ParseError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            run, env, cycle, phase, idx, ret, *rest = (c.strip() for c in row)
            try:
                cycle_i, idx_i, ret_f = int(cycle), int(idx), float(ret)
                length = float(rest[0]) if rest else None
            except ValueError as exc:
                raise ParseError(f"{path}:{lineno}: {exc}") from None
            if cycle_i < 1:
                raise ParseError(f"{path}:{lineno}: cycle must be >= 1, got {cycle_i}")
            if phase not in ("train", "test"):
                raise ParseError(f"{path}:{lineno}: phase must be train or test, got {phase!r}")
            if not math.isfinite(ret_f):
                raise ParseError(f"{path}:{lineno}: non-finite return")
            if length is not None and not length > 0:
                raise ParseError(f"{path}:{lineno}: timesteps must be > 0")
            key = (run, env, cycle_i, phase, idx_i)
            if key in seen:
                raise ParseError(f"{path}:{lineno}: duplicate episode {idx_i} for {run}/{env}/cycle {cycle_i}/{phase}")
            seen.add(key)
            rows.append((run, env, cycle_i, phase, idx_i, ret_f, *([length] if rest else [])))
    if not rows:
        raise ParseError(f"{path}: no data rows")
    return ReturnLog.from_rows(rows)


def tail_window(n: int, p: float) -> int:
    """``ceil(p * n)`` episodes, at least one; products like 0.15 * 20 are rounded first."""
    if not 0 < p <= 1:
        raise ConfigError(f"p must be in (0, 1], got {p}")
    return max(1, min(n, math.ceil(round(p * n, 9))))


def tail_mean(returns, p: float = 0.15, lengths=None, unit: str = "episodes") -> float:
    """Mean over the final ``p`` share of a series, counted in episodes or timesteps."""
    r = np.asarray(returns, dtype=float)
    if r.size == 0:
        raise ConfigError("empty return series")
    if unit == "episodes":
        return float(np.mean(r[-tail_window(len(r), p):]))
    if unit != "timesteps":
        raise ConfigError(f"unknown window unit {unit!r}")
    n = np.ones_like(r) if lengths is None else np.asarray(lengths, dtype=float)
    need = p * n.sum()
    covered = np.cumsum(n[::-1])
    k = int(np.searchsorted(covered, need - 1e-9) + 1)
    k = min(k, len(r))
    return float(np.average(r[-k:], weights=n[-k:]))


def median(values) -> float:
    """Median; even counts average the two middle values."""
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        raise ConfigError("median of an empty sequence")
    return float(np.median(v))


def plasticity_score(log: ReturnLog, run: str, p: float = 0.15, unit: str = "episodes") -> float:
    """Median across environments of the late-window mean train return in the last cycle."""
    envs = log.environments()
    last = max(log.cycles())
    missing = [e for e in envs if (run, e, last, "train") not in log.series]
    if missing:
        raise ConfigError(f"run {run!r} lacks cycle-{last} train returns for: {', '.join(missing)}")
    means = []
    for e in envs:
        key = (run, e, last, "train")
        lengths = log.lengths.get(key) if log.lengths else None
        means.append(tail_mean(log.series[key], p, lengths, unit))
    return median(means)


def generalization_gap(log: ReturnLog, run: str, env: str, cycle: int, p: float = 0.15) -> float:
    """``R_train - R_test``: late-window train mean minus mean test return."""
    r_train = tail_mean(log.get(run, env, cycle, "train"), p)
    r_test = float(np.mean(log.get(run, env, cycle, "test")))
    return r_train - r_test


def gap_delta(log: ReturnLog, env: str, run: str | None = None, first: int = 1, last: int = 3,
              p: float = 0.15) -> float:
    """``GAP_last - GAP_first``; averaged over runs when ``run`` is None."""
    runs = [run] if run is not None else log.runs()
    deltas = [generalization_gap(log, r, env, last, p) - generalization_gap(log, r, env, first, p)
              for r in runs]
    return float(np.mean(deltas))


class GapSummary(NamedTuple):
    median: float
    mean: float


def summarize_deltas(deltas) -> GapSummary:
    d = np.asarray(list(deltas), dtype=float)
    return GapSummary(median(d), float(np.mean(d)))


def gap_summary(log: ReturnLog, run: str | None = None, first: int = 1, last: int = 3,
                p: float = 0.15) -> GapSummary:
    """Median (primary) and mean of per-environment gap deltas."""
    return summarize_deltas(gap_delta(log, e, run, first, last, p) for e in log.environments())


# --------------------------------------------------------------------------- statistics


def pearson_r(x, y) -> tuple[float, float]:
    """Product-moment r and two-sided p from Student's t with n-2 degrees of freedom."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise ConfigError("x and y must be 1-D sequences of equal length")
    n = len(x)
    if n < 3:
        raise ConfigError(f"pearson_r needs n >= 3, got {n}")
    dx, dy = x - x.mean(), y - y.mean()
    sxx, syy = float(dx @ dx), float(dy @ dy)
    if sxx == 0 or syy == 0:
        raise ConfigError("pearson_r is undefined for a zero-variance input")
    r = float(np.clip((dx @ dy) / math.sqrt(sxx * syy), -1.0, 1.0))
    df = n - 2
    if abs(r) == 1.0:
        return r, 0.0
    t2 = r * r * df / (1.0 - r * r)
    p = float(special.betainc(0.5 * df, 0.5, df / (df + t2)))
    return r, p


class BootstrapCI(NamedTuple):
    mean: float
    lo: float
    hi: float

    @property
    def half_width(self) -> float:
        return half_width(self.mean, self.lo, self.hi)


def half_width(mean: float, lo: float, hi: float) -> float:
    """The larger one-sided margin of an interval around ``mean``."""
    return max(mean - lo, hi - mean)


def bootstrap_ci(samples, level: float = 0.95, resamples: int = 10_000, seed: int = 0) -> BootstrapCI:
    """Equal-tailed percentile bootstrap interval for the mean."""
    x = np.asarray(samples, dtype=float)
    if x.size < 2:
        raise ConfigError(f"bootstrap needs n >= 2, got {x.size}")
    if not 0 < level < 1:
        raise ConfigError(f"level must be in (0, 1), got {level}")
    m = float(x.mean())
    if np.ptp(x) == 0:
        return BootstrapCI(m, m, m)
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, x.size, size=(resamples, x.size))
    means = x[idx].mean(axis=1)
    tail = (1.0 - level) / 2.0
    lo, hi = np.quantile(means, [tail, 1.0 - tail])
    return BootstrapCI(m, float(lo), float(hi))
