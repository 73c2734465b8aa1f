"""Fully connected network with manual reverse-mode differentiation.

Parameters live in a :class:`NetworkParams`; every operation is a function of
it.  Hidden pre-activations can be multiplied by a scalar ``gamma`` before the
nonlinearity (the shock hook); the factor is part of the recorded computation
so gradients include it.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import special

from .activations import (
    ActivationSpec,
    ActivationState,
    ActTape,
    Kind,
    Mode,
    Scope,
    act_backward,
    act_forward,
    derivative_magnitude,
    init_state,
    kaiming_gain,
)
from .errors import ConfigError, NonFiniteError


class DivergenceError(NonFiniteError):
    """Non-finite values appeared inside the network."""

    def __init__(self, message: str, layer: int | None = None):
        super().__init__(message)
        self.layer = layer


@dataclass(frozen=True)
class NetworkSpec:
    """Layer widths ``(input, hidden..., output)`` and one activation per hidden layer.

    With ``crelu_halving`` a CReLU layer of target width H is fed by a linear
    producer of width H/2, so the consumer still sees H features.
    """

    widths: tuple[int, ...]
    activations: tuple[ActivationSpec, ...]
    crelu_halving: bool = True

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        object.__setattr__(self, "activations", tuple(self.activations))
        if len(self.widths) < 2:
            raise ConfigError("a network needs at least input and output widths")
        if any(w < 1 for w in self.widths):
            raise ConfigError(f"widths must be >= 1, got {self.widths}")
        if len(self.activations) != len(self.widths) - 2:
            raise ConfigError(
                f"{len(self.widths) - 2} hidden layers but {len(self.activations)} activations"
            )
        for i, act in enumerate(self.activations):
            if act.kind is Kind.CRELU and self.crelu_halving and self.widths[i + 1] % 2:
                raise ConfigError(f"crelu layer {i} needs an even width, got {self.widths[i + 1]}")

    @property
    def n_hidden(self) -> int:
        return len(self.activations)

    def producer_width(self, layer: int) -> int:
        """Pre-activation width of hidden ``layer``."""
        w = self.widths[layer + 1]
        if self.activations[layer].kind is Kind.CRELU and self.crelu_halving:
            return w // 2
        return w

    def output_width(self, layer: int) -> int:
        """Width after the nonlinearity of hidden ``layer``."""
        act = self.activations[layer]
        if act.kind is Kind.CRELU and not self.crelu_halving:
            return 2 * self.widths[layer + 1]
        return self.widths[layer + 1]

    def linear_shapes(self) -> list[tuple[int, int]]:
        shapes = []
        fan_in = self.widths[0]
        for i in range(self.n_hidden):
            shapes.append((fan_in, self.producer_width(i)))
            fan_in = self.output_width(i)
        shapes.append((fan_in, self.widths[-1]))
        return shapes

    def to_dict(self) -> dict:
        return {
            "widths": list(self.widths),
            "activations": [a.to_dict() for a in self.activations],
            "crelu_halving": self.crelu_halving,
        }

    @classmethod
    def from_dict(cls, data: dict) -> NetworkSpec:
        return cls(
            widths=tuple(data["widths"]),
            activations=tuple(ActivationSpec.from_dict(a) for a in data["activations"]),
            crelu_halving=bool(data.get("crelu_halving", True)),
        )

    @classmethod
    def mlp(cls, n_in: int, hidden: list[int] | tuple[int, ...], n_out: int,
            activation: ActivationSpec, crelu_halving: bool = True) -> NetworkSpec:
        return cls((n_in, *hidden, n_out), (activation,) * len(hidden), crelu_halving)


@dataclass(eq=False)
class NetworkParams:
    spec: NetworkSpec
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    act_states: list[ActivationState]

    def parameters(self) -> dict[str, np.ndarray]:
        """Parameter path -> array (the live arrays, not copies)."""
        out: dict[str, np.ndarray] = {}
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            out[f"W{i}"] = w
            out[f"b{i}"] = b
        for path, state, attr in self._act_slots():
            out[path] = getattr(state, attr)
        return out

    def _act_slots(self):
        seen = set()
        for i, (act, state) in enumerate(zip(self.spec.activations, self.act_states)):
            shared = act.kind in (Kind.PRELU, Kind.BO_PRELU) and act.prelu_scope is Scope.GLOBAL
            prefix = "act.shared" if shared else f"act{i}"
            if id(state) in seen:
                continue
            seen.add(id(state))
            for attr in ("alpha", "num", "den"):
                if getattr(state, attr) is not None:
                    yield f"{prefix}.{attr}", state, attr

    def act_param_path(self, layer: int, attr: str) -> str:
        act = self.spec.activations[layer]
        shared = act.kind in (Kind.PRELU, Kind.BO_PRELU) and act.prelu_scope is Scope.GLOBAL
        return f"act.shared.{attr}" if shared else f"act{layer}.{attr}"

    def n_parameters(self) -> int:
        return int(sum(a.size for a in self.parameters().values()))

    def copy(self) -> NetworkParams:
        states = []
        cache: dict[int, ActivationState] = {}
        for s in self.act_states:
            if id(s) not in cache:
                cache[id(s)] = s.copy()
            states.append(cache[id(s)])
        return NetworkParams(
            self.spec, [w.copy() for w in self.weights], [b.copy() for b in self.biases], states
        )


def init_network(spec: NetworkSpec, seed: int) -> NetworkParams:
    """Fan-in normal weights with ``std = gain / sqrt(fan_in)``; zero biases."""
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    shapes = spec.linear_shapes()
    for i, (fan_in, fan_out) in enumerate(shapes):
        gain = kaiming_gain(spec.activations[i]) if i < spec.n_hidden else 1.0
        weights.append(rng.normal(0.0, gain / np.sqrt(fan_in), size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    states: list[ActivationState] = []
    shared: ActivationState | None = None
    for i, act in enumerate(spec.activations):
        if act.kind in (Kind.PRELU, Kind.BO_PRELU) and act.prelu_scope is Scope.GLOBAL:
            if shared is None:
                shared = init_state(act, 1)
            states.append(shared)
        else:
            states.append(init_state(act, spec.producer_width(i)))
    return NetworkParams(spec, weights, biases, states)


def layer_rngs(seed: int, n_layers: int) -> list[np.random.Generator]:
    """Independent per-layer streams for randomized activations."""
    children = np.random.SeedSequence([int(seed), 0x5EED]).spawn(n_layers)
    return [np.random.default_rng(c) for c in children]


@dataclass
class ForwardTape:
    inputs: list[np.ndarray] = field(default_factory=list)
    pre: list[np.ndarray] = field(default_factory=list)
    scaled: list[np.ndarray] = field(default_factory=list)
    act_tapes: list[ActTape] = field(default_factory=list)
    gamma: float = 1.0
    mode: Mode = Mode.TRAIN


def forward(
    params: NetworkParams,
    batch,
    gamma: float = 1.0,
    mode: Mode | str = Mode.TRAIN,
    rngs: list[np.random.Generator] | None = None,
):
    """Logits and tape for a ``[B x D]`` batch.

    Every hidden pre-activation is multiplied by ``gamma`` before its
    nonlinearity; the output layer is neither scaled nor activated.
    """
    x = np.asarray(batch, dtype=float)
    spec = params.spec
    if x.ndim != 2 or x.shape[1] != spec.widths[0]:
        raise ConfigError(f"batch shape {x.shape} does not match input width {spec.widths[0]}")
    if not gamma > 0:
        raise ConfigError(f"gamma must be > 0, got {gamma}")
    mode = Mode(mode)
    tape = ForwardTape(gamma=float(gamma), mode=mode)
    h = x
    for i in range(spec.n_hidden):
        z = h @ params.weights[i] + params.biases[i]
        zs = z * gamma if gamma != 1.0 else z
        rng = rngs[i] if rngs is not None else None
        try:
            a, atape = act_forward(spec.activations[i], params.act_states[i], zs, rng=rng, mode=mode)
        except NonFiniteError as exc:
            raise DivergenceError(f"non-finite pre-activation in hidden layer {i}: {exc}", i) from None
        tape.inputs.append(h)
        tape.pre.append(z)
        tape.scaled.append(zs)
        tape.act_tapes.append(atape)
        h = a
    logits = h @ params.weights[-1] + params.biases[-1]
    tape.inputs.append(h)
    if not np.all(np.isfinite(logits)):
        raise DivergenceError(f"non-finite logits (layer {spec.n_hidden})", spec.n_hidden)
    return logits, tape


def _backward_deltas(params: NetworkParams, tape: ForwardTape, dlogits):
    """Gradient dict plus per-linear-layer output deltas (d loss / d pre-activation)."""
    spec = params.spec
    d = np.asarray(dlogits, dtype=float)
    n_lin = spec.n_hidden + 1
    if d.shape != (tape.inputs[-1].shape[0], spec.widths[-1]):
        raise ConfigError(f"dlogits shape {d.shape} does not match the recorded forward")
    grads: dict[str, np.ndarray] = {}
    deltas: list[np.ndarray | None] = [None] * n_lin
    deltas[-1] = d
    last = n_lin - 1
    grads[f"W{last}"] = tape.inputs[-1].T @ d
    grads[f"b{last}"] = d.sum(axis=0)
    dh = d @ params.weights[-1].T
    for i in reversed(range(spec.n_hidden)):
        dzs, dparams = act_backward(spec.activations[i], params.act_states[i], tape.act_tapes[i], dh)
        for attr, g in dparams.items():
            path = params.act_param_path(i, attr)
            grads[path] = grads[path] + g if path in grads else g
        dz = dzs * tape.gamma if tape.gamma != 1.0 else dzs
        deltas[i] = dz
        grads[f"W{i}"] = tape.inputs[i].T @ dz
        grads[f"b{i}"] = dz.sum(axis=0)
        dh = dz @ params.weights[i].T
    return grads, deltas


def backward(params: NetworkParams, tape: ForwardTape, dlogits) -> dict[str, np.ndarray]:
    """Gradients for every parameter path, replaying ``tape`` exactly."""
    grads, _ = _backward_deltas(params, tape, dlogits)
    return grads


def softmax_cross_entropy(logits, targets, reduction: str = "mean"):
    """Loss and its gradient with respect to the logits."""
    logits = np.asarray(logits, dtype=float)
    targets = np.asarray(targets, dtype=int)
    logp = logits - special.logsumexp(logits, axis=1, keepdims=True)
    n = logits.shape[0]
    losses = -logp[np.arange(n), targets]
    d = np.exp(logp)
    d[np.arange(n), targets] -= 1.0
    if reduction == "mean":
        return float(losses.mean()), d / n
    if reduction == "none":
        return losses, d
    raise ValueError(reduction)


def loss_and_grads(params, batch, targets, gamma=1.0, mode=Mode.EVAL, rngs=None):
    logits, tape = forward(params, batch, gamma=gamma, mode=mode, rngs=rngs)
    loss, dlogits = softmax_cross_entropy(logits, targets)
    return loss, backward(params, tape, dlogits), logits


@dataclass
class Optimizer:
    """SGD or Adam with per-path moment buffers."""

    kind: str = "adam"
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in ("sgd", "adam"):
            raise ConfigError(f"unknown optimizer {self.kind!r}")
        if not self.lr > 0:
            raise ConfigError(f"learning rate must be > 0, got {self.lr}")


def step(opt: Optimizer, params: NetworkParams, grads: dict[str, np.ndarray]) -> NetworkParams:
    """In-place update of every parameter that has a gradient.

    Bo-PReLU raw parameters are updated like any other; the bounded slope is
    re-derived from them on the next forward.
    """
    live = params.parameters()
    for path, g in grads.items():
        if path not in live:
            raise ConfigError(f"gradient for unknown parameter {path!r}")
        if g.shape != live[path].shape:
            raise ConfigError(f"gradient shape {g.shape} != parameter shape {live[path].shape} at {path}")
        if not np.all(np.isfinite(g)):
            raise NonFiniteError(f"non-finite gradient at {path}")
    opt.t += 1
    for path, g in grads.items():
        p = live[path]
        if opt.kind == "sgd":
            p -= opt.lr * g
            continue
        m = opt.m.setdefault(path, np.zeros_like(p))
        v = opt.v.setdefault(path, np.zeros_like(p))
        m *= opt.beta1
        m += (1.0 - opt.beta1) * g
        v *= opt.beta2
        v += (1.0 - opt.beta2) * g * g
        m_hat = m / (1.0 - opt.beta1**opt.t)
        v_hat = v / (1.0 - opt.beta2**opt.t)
        p -= opt.lr * m_hat / (np.sqrt(v_hat) + opt.eps)
    return params


def per_sample_gradients(params: NetworkParams, batch, targets, layer: int = 1,
                         mode: Mode | str = Mode.EVAL, rngs=None) -> np.ndarray:
    """``[d x m]`` matrix whose column i is d loss_i / d W_layer, flattened row-major."""
    x = np.asarray(batch, dtype=float)
    if x.shape[0] == 0:
        raise ConfigError("per-sample gradients need at least one sample")
    if not 0 <= layer <= params.spec.n_hidden:
        raise ConfigError(f"layer {layer} out of range")
    logits, tape = forward(params, x, mode=mode, rngs=rngs)
    _, d = softmax_cross_entropy(logits, targets, reduction="none")
    _, deltas = _backward_deltas(params, tape, d)
    h = tape.inputs[layer]
    per = h[:, :, None] * deltas[layer][:, None, :]
    return per.reshape(x.shape[0], -1).T


def hidden_derivative_magnitudes(params: NetworkParams, tape: ForwardTape) -> list[np.ndarray]:
    """``|phi'|`` at the scaled pre-activations of each hidden layer (eval slopes)."""
    spec = params.spec
    return [
        derivative_magnitude(spec.activations[i], tape.scaled[i], params.act_states[i])
        for i in range(spec.n_hidden)
    ]


def dead_unit_fraction(params: NetworkParams, probe_batches, eps: float = 1e-3) -> float:
    """Fraction of hidden units with ``|phi'| < eps`` on every probe sample."""
    batches = [np.asarray(b, dtype=float) for b in probe_batches]
    if not batches or sum(len(b) for b in batches) == 0:
        raise ConfigError("dead-unit fraction needs a non-empty probe set")
    alive = None
    for b in batches:
        _, tape = forward(params, b, mode=Mode.EVAL)
        mags = hidden_derivative_magnitudes(params, tape)
        layer_alive = [np.any(m >= eps, axis=0) for m in mags]
        alive = layer_alive if alive is None else [a | la for a, la in zip(alive, layer_alive)]
    total = sum(a.size for a in alive)
    return float(sum(int((~a).sum()) for a in alive) / total)


# --------------------------------------------------------------------------- flat views


def flatten(params: NetworkParams) -> np.ndarray:
    return np.concatenate([a.ravel() for a in params.parameters().values()])


def unflatten_into(params: NetworkParams, theta: np.ndarray) -> None:
    off = 0
    for arr in params.parameters().values():
        n = arr.size
        arr[...] = theta[off:off + n].reshape(arr.shape)
        off += n


def flat_grad(params: NetworkParams, grads: dict[str, np.ndarray]) -> np.ndarray:
    return np.concatenate([grads.get(k, np.zeros_like(v)).ravel() for k, v in params.parameters().items()])


def loss_gradient_fn(params: NetworkParams, batch, targets):
    """``theta -> (loss, grad)`` over the flat parameter vector (eval mode)."""
    work = params.copy()

    def fn(theta):
        unflatten_into(work, theta)
        loss, grads, _ = loss_and_grads(work, batch, targets)
        return loss, flat_grad(work, grads)

    return fn


def hessian_vector_product(params: NetworkParams, batch, targets, step: float = 1e-4):
    """Central finite-difference HVP ``(g(theta + h v) - g(theta - h v)) / 2h``."""
    fn = loss_gradient_fn(params, batch, targets)
    theta = flatten(params)

    def hvp(v):
        v = np.asarray(v, dtype=float)
        return (fn(theta + step * v)[1] - fn(theta - step * v)[1]) / (2.0 * step)

    return hvp, theta.size


# --------------------------------------------------------------------------- checkpoints

CHECKPOINT_FORMAT = "plasticity-lab-checkpoint"


def save_checkpoint(params: NetworkParams, path: str | Path) -> Path:
    """JSON map ``path -> {shape, data}`` with a header holding the NetworkSpec."""
    path = Path(path)
    body = {
        "format": CHECKPOINT_FORMAT,
        "version": 1,
        "spec": params.spec.to_dict(),
        "modes": [s.mode.value for s in params.act_states],
        "params": {
            k: {"shape": list(v.shape), "data": [float(x) for x in v.ravel()]}
            for k, v in params.parameters().items()
        },
    }
    path.write_text(json.dumps(body))
    return path


def load_checkpoint(path: str | Path) -> NetworkParams:
    body = json.loads(Path(path).read_text())
    if body.get("format") != CHECKPOINT_FORMAT:
        raise ConfigError(f"{path}: not a checkpoint file")
    spec = NetworkSpec.from_dict(body["spec"])
    params = init_network(spec, seed=0)
    live = params.parameters()
    if set(live) != set(body["params"]):
        raise ConfigError(f"{path}: parameter set does not match the stored spec")
    for k, entry in body["params"].items():
        arr = np.array(entry["data"], dtype=np.float64).reshape(entry["shape"])
        if arr.shape != live[k].shape:
            raise ConfigError(f"{path}: shape mismatch at {k}")
        live[k][...] = arr
    for state, mode in zip(params.act_states, body.get("modes", [])):
        state.mode = Mode(mode)
    return params
