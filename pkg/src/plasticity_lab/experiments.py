"""Experiment cells: each is one deterministic run that returns named metrics."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .activations import ActivationSpec, Mode
from .analytic import dead_band_width, effective_negative_slope
from .errors import ConfigError
from .metrics import (
    acc_T,
    bwt_T,
    effective_rank,
    lambda_max,
    recovery_stats,
    summarize_recovery,
    taoa,
)
from .network import (
    NetworkParams,
    NetworkSpec,
    Optimizer,
    backward,
    dead_unit_fraction,
    forward,
    hessian_vector_product,
    init_network,
    layer_rngs,
    per_sample_gradients,
    softmax_cross_entropy,
    step,
)
from .streams import (
    Dataset,
    ReplayBuffer,
    StreamConfig,
    TaskStream,
    make_blobs,
    train_eval_split,
)
from .stress import SaturationTrace, ShockSchedule, run_stress_experiment


@dataclass(frozen=True)
class DataConfig:
    """Where a stream's base data comes from.

    ``source`` is ``blobs`` (seeded synthetic), ``digits`` (the 8x8 digits
    bundled with scikit-learn), ``idx`` or ``csv``.
    """

    source: str = "blobs"
    path: str | None = None
    labels_path: str | None = None
    n_classes: int = 10
    per_class: int = 200
    dim: int = 64
    clusters_per_class: int = 1
    spread: float = 1.0
    eval_fraction: float = 0.3
    seed: int = 0

    def __post_init__(self):
        if self.source not in ("blobs", "digits", "idx", "csv"):
            raise ConfigError(f"data.source must be blobs, digits, idx or csv, got {self.source!r}")
        if self.source in ("idx", "csv") and not self.path:
            raise ConfigError(f"data.path is required for source {self.source!r}")
        if not 0 < self.eval_fraction < 1:
            raise ConfigError(f"data.eval_fraction must be in (0, 1), got {self.eval_fraction}")

    def load(self) -> tuple[Dataset, Dataset]:
        if self.source == "blobs":
            full = make_blobs(self.n_classes, self.per_class, self.dim, self.seed,
                              self.clusters_per_class, self.spread)
        elif self.source == "digits":
            full = load_digits_dataset()
        else:
            from .streams import load_dataset

            full = load_dataset(self.path, self.source, self.labels_path)
        return train_eval_split(full, self.eval_fraction, self.seed)

    def to_dict(self) -> dict:
        keys = {
            "blobs": ("n_classes", "per_class", "dim", "clusters_per_class", "spread"),
            "digits": (),
            "idx": ("path", "labels_path"),
            "csv": ("path",),
        }[self.source]
        out = {"source": self.source, **{k: getattr(self, k) for k in keys}}
        out["eval_fraction"] = self.eval_fraction
        out["seed"] = self.seed
        return out


def load_digits_dataset() -> Dataset:
    """The 1797-sample 8x8 digits set, pixels scaled from [0, 16] to [0, 1]."""
    try:
        from sklearn.datasets import load_digits
    except ImportError as exc:
        raise ConfigError("data.source 'digits' needs scikit-learn installed") from exc
    d = load_digits()
    return Dataset(d.data / 16.0, d.target, 10)


@dataclass(frozen=True)
class TrainConfig:
    optimizer: str = "adam"
    lr: float = 1e-3
    hidden: tuple[int, ...] = (100, 100)
    crelu_halving: bool = True

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        Optimizer(self.optimizer, lr=self.lr)

    def network(self, n_in: int, n_out: int, activation: ActivationSpec) -> NetworkSpec:
        return NetworkSpec.mlp(n_in, self.hidden, n_out, activation, self.crelu_halving)

    def to_dict(self) -> dict:
        return {"optimizer": self.optimizer, "lr": self.lr, "hidden": list(self.hidden),
                "crelu_halving": self.crelu_halving}


@dataclass
class CellResult:
    metrics: dict[str, float]
    units: dict[str, str] = field(default_factory=dict)
    trace: SaturationTrace | None = None
    extra: dict = field(default_factory=dict)


def _train_step(params, opt, xb, yb, rngs):
    logits, tape = forward(params, xb, mode=Mode.TRAIN, rngs=rngs)
    acc = float(np.mean(np.argmax(logits, axis=1) == yb))
    _, dlogits = softmax_cross_entropy(logits, yb)
    step(opt, params, backward(params, tape, dlogits))
    return acc


def train_online(params: NetworkParams, stream: TaskStream, opt: Optimizer, seed: int):
    """One pass over every task; online accuracy is taken before each update."""
    rngs = layer_rngs(seed, params.spec.n_hidden)
    log: list[list[float]] = []
    task = None
    for task in stream:
        log.append([_train_step(params, opt, xb, yb, rngs) for xb, yb in task.batches()])
    return log, task


def diagnostics(params: NetworkParams, task, eval_size: int = 512, grad_samples: int = 256,
                power_iters: int = 20, seed: int = 0) -> dict[str, float]:
    """Dead-unit fraction, gradient effective rank and Hessian lambda_max on the current task."""
    x, y = task.eval_features[:eval_size], task.eval_labels[:eval_size]
    logits, _ = forward(params, x, mode=Mode.EVAL)
    out = {
        "final_task_accuracy": float(np.mean(np.argmax(logits, axis=1) == y)),
        "dead_unit_fraction": dead_unit_fraction(params, [x]),
    }
    layer = 1 if params.spec.n_hidden >= 1 else 0
    G = per_sample_gradients(params, x[:grad_samples], y[:grad_samples], layer=layer)
    out["effective_rank"] = float(effective_rank(G))
    if power_iters > 0:
        hvp, dim = hessian_vector_product(params, x[:grad_samples], y[:grad_samples])
        out["lambda_max"] = lambda_max(hvp, dim, iters=power_iters, tol=1e-4, seed=seed).value
    return out


def goldilocks_cell(activation: ActivationSpec, stream_cfg: StreamConfig, data: DataConfig,
                    train: TrainConfig, seed: int, power_iters: int = 20) -> CellResult:
    """Online continual run over a permuted (or other) stream."""
    tr, ev = data.load()
    stream = TaskStream(stream_cfg, tr, seed, ev)
    params = init_network(train.network(tr.dim, stream.n_outputs, activation), seed)
    opt = Optimizer(train.optimizer, lr=train.lr)
    log, last = train_online(params, stream, opt, seed)
    per_task = [float(np.mean(t)) for t in log]
    metrics = {"s_bar": effective_negative_slope(activation), "taoa": taoa(log)}
    metrics.update(diagnostics(params, last, power_iters=power_iters, seed=seed))
    units = {k: "fraction" for k in ("taoa", "final_task_accuracy", "dead_unit_fraction")}
    units.update(s_bar="slope", effective_rank="count", lambda_max="curvature")
    return CellResult(metrics, units, extra={"aoa_per_task": per_task})


def continual_cell(activation: ActivationSpec, stream_cfg: StreamConfig, data: DataConfig,
                   train: TrainConfig, seed: int, replay: dict | None = None) -> CellResult:
    """Class-incremental run with optional replay; fills the accuracy matrix."""
    tr, ev = data.load()
    stream = TaskStream(stream_cfg, tr, seed, ev)
    params = init_network(train.network(tr.dim, stream.n_outputs, activation), seed)
    opt = Optimizer(train.optimizer, lr=train.lr)
    rngs = layer_rngs(seed, params.spec.n_hidden)
    buf = None
    if replay:
        buf = ReplayBuffer(replay.get("capacity", 10_000), replay.get("per_task_cap", 500), seed)
    replay_batch = replay.get("batch_size", stream_cfg.batch_size) if replay else 0
    tasks = list(stream)
    T = len(tasks)
    A = np.full((T, T), np.nan)
    online: list[list[float]] = []
    for t, task in enumerate(tasks):
        accs = []
        for xb, yb in task.batches():
            if buf is not None and len(buf) > 0:
                rx, ry, _ = buf.sample(min(replay_batch, len(buf)))
                xb, yb = np.concatenate([xb, rx]), np.concatenate([yb, ry])
            accs.append(_train_step(params, opt, xb, yb, rngs))
        online.append(accs)
        if buf is not None:
            buf.insert(task.features, task.labels, t)
        for i in range(t + 1):
            logits, _ = forward(params, tasks[i].eval_features, mode=Mode.EVAL)
            A[t, i] = float(np.mean(np.argmax(logits, axis=1) == tasks[i].eval_labels))
    metrics = {"acc_T": acc_T(A, T), "taoa": taoa(online)}
    if T >= 2:
        metrics["bwt_T"] = bwt_T(A, T)
    units = {k: "fraction" for k in metrics}
    return CellResult(metrics, units, extra={"accuracy_matrix": A.tolist()})


def shock_cell(activation: ActivationSpec, stream_cfg: StreamConfig, data: DataConfig,
               train: TrainConfig, seed: int, schedule: ShockSchedule, epochs: int = 50) -> CellResult:
    """Shock-protocol run summarized by recovery statistics."""
    tr, ev = data.load()
    stream = TaskStream(stream_cfg, tr, seed, ev)
    net = train.network(tr.dim, stream.n_outputs, activation)
    trace = run_stress_experiment(net, stream, schedule, seed, epochs=epochs,
                                  optimizer=train.optimizer, lr=train.lr)
    summary = summarize_recovery(recovery_stats(trace))
    metrics = {
        "dbw": dead_band_width(activation),
        "peak_sf": summary.mean_peak_sf,
        "ausc": summary.mean_ausc,
        "sf_non_recovery_rate": summary.sf_non_recovery_rate,
        "perf_non_recovery_rate": summary.perf_non_recovery_rate,
        "sf_recovery_time": summary.mean_sf_recovery_time,
        "tau95": summary.mean_tau95,
        "aborted": float(trace.aborted),
        "final_accuracy": trace.accuracy[-1] if len(trace) else math.nan,
    }
    units = {
        "dbw": "fraction", "peak_sf": "fraction", "ausc": "fraction*epochs",
        "sf_non_recovery_rate": "fraction", "perf_non_recovery_rate": "fraction",
        "sf_recovery_time": "epochs", "tau95": "epochs", "aborted": "flag", "final_accuracy": "fraction",
    }
    return CellResult(metrics, units, trace=trace)
