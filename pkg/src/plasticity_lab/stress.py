"""Pre-activation scaling shocks and the saturation time series they produce."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .activations import ActivationSpec, ActivationState, Mode, derivative_magnitude
from .errors import ConfigError, NonFiniteError
from .network import (
    ForwardTape,
    NetworkParams,
    NetworkSpec,
    Optimizer,
    forward,
    init_network,
    layer_rngs,
    loss_and_grads,
    step,
)
from .streams import TaskStream

SATURATION_EPS = 1e-3
TRACE_SCHEMA = "saturation-trace v1"


@dataclass(frozen=True)
class ShockSchedule:
    """Cyclic shock factors: epoch ``t`` is a shock when ``t % cycle == 0`` and ``t > 0``."""

    gammas: tuple[float, ...] = (1.5, 0.5, 0.25, 2.0)
    cycle: int = 10

    def __post_init__(self):
        object.__setattr__(self, "gammas", tuple(float(g) for g in self.gammas))
        if not self.gammas:
            raise ConfigError("shock schedule needs at least one gamma")
        if any(not g > 0 for g in self.gammas):
            raise ConfigError(f"all gammas must be > 0, got {self.gammas}")
        if self.cycle < 2:
            raise ConfigError(f"cycle length must be >= 2, got {self.cycle}")

    def is_shock(self, epoch: int) -> bool:
        return epoch > 0 and epoch % self.cycle == 0

    def gamma_at(self, epoch: int) -> float:
        if epoch < 0:
            raise ConfigError(f"epoch must be >= 0, got {epoch}")
        if not self.is_shock(epoch):
            return 1.0
        k = (epoch // self.cycle - 1) % len(self.gammas)
        return self.gammas[k]

    def to_dict(self) -> dict:
        return {"gammas": list(self.gammas), "cycle": self.cycle}


def gamma_at(schedule: ShockSchedule, epoch: int) -> float:
    return schedule.gamma_at(epoch)


def saturation_fraction(
    tape: ForwardTape,
    specs: list[ActivationSpec] | tuple[ActivationSpec, ...],
    states: list[ActivationState] | None = None,
    eps: float = SATURATION_EPS,
) -> tuple[list[float], float]:
    """Per-layer and network-wide fraction of (unit, sample) pairs with ``|phi'(gamma z)| < eps``.

    The network value weights each layer by its number of pairs.
    """
    if len(tape.scaled) != len(specs):
        raise ConfigError(f"tape has {len(tape.scaled)} hidden layers, got {len(specs)} specs")
    per_layer, hits, total = [], 0, 0
    for i, (zs, spec) in enumerate(zip(tape.scaled, specs)):
        state = None if states is None else states[i]
        dead = derivative_magnitude(spec, zs, state) < eps
        per_layer.append(float(dead.mean()))
        hits += int(dead.sum())
        total += dead.size
    return per_layer, float(hits / total) if total else 0.0


@dataclass
class SaturationTrace:
    """One record per epoch; ``aborted`` marks a run truncated by divergence."""

    epoch: list[int] = field(default_factory=list)
    gamma: list[float] = field(default_factory=list)
    shock: list[bool] = field(default_factory=list)
    task: list[int] = field(default_factory=list)
    sf_network: list[float] = field(default_factory=list)
    sf_layers: list[list[float]] = field(default_factory=list)
    accuracy: list[float] = field(default_factory=list)
    cycle: int = 10
    aborted: bool = False
    abort_epoch: int | None = None
    abort_message: str = ""

    def __len__(self) -> int:
        return len(self.epoch)

    def append(self, epoch, gamma, shock, task, sf_layers, sf_network, accuracy):
        self.epoch.append(int(epoch))
        self.gamma.append(float(gamma))
        self.shock.append(bool(shock))
        self.task.append(int(task))
        self.sf_layers.append([float(v) for v in sf_layers])
        self.sf_network.append(float(sf_network))
        self.accuracy.append(float(accuracy))

    def shock_epochs(self) -> list[int]:
        return [e for e, s in zip(self.epoch, self.shock) if s]

    def to_csv(self, path: str | Path | None = None) -> str:
        n_layers = max((len(v) for v in self.sf_layers), default=0)
        buf = io.StringIO()
        buf.write(f"# {TRACE_SCHEMA} cycle={self.cycle}\n")
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["epoch", "gamma", "shock_flag", "task", "sf_network",
                         *(f"sf_layer_{i}" for i in range(n_layers)), "accuracy"])
        for i in range(len(self)):
            writer.writerow([
                self.epoch[i], repr(self.gamma[i]), int(self.shock[i]), self.task[i],
                repr(self.sf_network[i]), *(repr(v) for v in self.sf_layers[i]), repr(self.accuracy[i]),
            ])
        if self.aborted:
            buf.write(f"# aborted at epoch {self.abort_epoch}: {self.abort_message}\n")
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text


def _accuracy(logits: np.ndarray, labels: np.ndarray) -> float:
    return float(np.mean(np.argmax(logits, axis=1) == labels))


def measure(params: NetworkParams, x: np.ndarray, y: np.ndarray, gamma: float, eps: float = SATURATION_EPS):
    """Eval-mode SF and accuracy on a fixed batch with ``gamma`` applied."""
    logits, tape = forward(params, x, gamma=gamma, mode=Mode.EVAL)
    per_layer, net = saturation_fraction(tape, params.spec.activations, params.act_states, eps)
    return per_layer, net, _accuracy(logits, y)


def run_stress_experiment(
    net_spec: NetworkSpec,
    stream: TaskStream,
    schedule: ShockSchedule,
    seed: int,
    epochs: int = 50,
    optimizer: str = "adam",
    lr: float = 1e-3,
    eval_size: int = 512,
    eps: float = SATURATION_EPS,
) -> SaturationTrace:
    """Train through ``epochs`` passes, shocking hidden pre-activations on schedule.

    Each task of ``stream`` lasts ``stream.config.epochs`` epochs.  After every
    epoch SF and accuracy are measured on a fixed evaluation batch of the
    current task, with that epoch's gamma applied.
    """
    if net_spec.widths[0] != stream.data.dim or net_spec.widths[-1] != stream.n_outputs:
        raise ConfigError(
            f"network interface {net_spec.widths[0]}->{net_spec.widths[-1]} does not match "
            f"stream {stream.data.dim}->{stream.n_outputs}"
        )
    params = init_network(net_spec, seed)
    opt = Optimizer(optimizer, lr=lr)
    rngs = layer_rngs(seed, net_spec.n_hidden)
    trace = SaturationTrace(cycle=schedule.cycle)
    per_task = stream.config.epochs
    task = None
    for epoch in range(epochs):
        t_index = min(epoch // per_task, len(stream) - 1)
        if task is None or task.index != t_index:
            task = stream.task(t_index)
            ex, ey = task.eval_features[:eval_size], task.eval_labels[:eval_size]
        gamma = schedule.gamma_at(epoch)
        try:
            for xb, yb in task.epoch_batches(epoch - t_index * per_task):
                _, grads, _ = loss_and_grads(params, xb, yb, gamma=gamma, mode=Mode.TRAIN, rngs=rngs)
                step(opt, params, grads)
            per_layer, net, acc = measure(params, ex, ey, gamma, eps)
        except NonFiniteError as exc:
            trace.aborted = True
            trace.abort_epoch = epoch
            trace.abort_message = str(exc)
            break
        trace.append(epoch, gamma, schedule.is_shock(epoch), t_index, per_layer, net, acc)
    return trace
