"""Activation functions with exact derivatives, learnable and randomized slopes.

Every nonlinearity is described by an immutable :class:`ActivationSpec` plus a
mutable :class:`ActivationState` (learnable slopes, rational coefficients,
train/eval mode).  :func:`act_forward` returns the output together with an
:class:`ActTape`; :func:`act_backward` replays the tape to give the input
gradient and the parameter gradients.

Kinked functions use the left derivative at ``x == 0`` (the negative-branch
slope), so ``x > 0`` selects the positive branch everywhere in this module.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields
from enum import Enum
from functools import cache
from typing import Any

import numpy as np
from scipy import optimize, special

from .errors import ConfigError, NonFiniteError

SELU_LAMBDA = 1.0507009873554805
SELU_ALPHA = 1.6732632423543772

_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


class Kind(str, Enum):
    RELU = "relu"
    LEAKY_RELU = "leaky_relu"
    PRELU = "prelu"
    RRELU = "rrelu"
    SIGMOID = "sigmoid"
    TANH = "tanh"
    SWISH = "swish"
    GELU = "gelu"
    ELU = "elu"
    CELU = "celu"
    SELU = "selu"
    CRELU = "crelu"
    RATIONAL = "rational"
    SMOOTH_LEAKY = "smooth_leaky"
    RAND_SMOOTH_LEAKY = "rand_smooth_leaky"
    BO_PRELU = "bo_prelu"
    RSELU = "rselu"


class Scope(str, Enum):
    GLOBAL = "global"
    LAYER = "layer"
    NEURON = "neuron"


class Mode(str, Enum):
    TRAIN = "train"
    EVAL = "eval"


RANDOMIZED = frozenset({Kind.RRELU, Kind.RAND_SMOOTH_LEAKY, Kind.RSELU})
LEARNABLE_SLOPE = frozenset({Kind.PRELU, Kind.BO_PRELU})
KINKED = frozenset(
    {Kind.RELU, Kind.LEAKY_RELU, Kind.PRELU, Kind.RRELU, Kind.CRELU, Kind.BO_PRELU,
     Kind.ELU, Kind.SELU, Kind.RSELU}
)

_DEFAULT_ALPHA = {
    Kind.LEAKY_RELU: 0.01,
    Kind.PRELU: 0.25,
    Kind.ELU: 1.0,
    Kind.CELU: 1.0,
    Kind.SELU: SELU_ALPHA,
    Kind.SMOOTH_LEAKY: 0.1,
    Kind.BO_PRELU: 0.65,
}
_DEFAULT_BOUNDS = {
    Kind.RRELU: (0.125, 0.333),
    Kind.RAND_SMOOTH_LEAKY: (0.3, 0.6),
    Kind.BO_PRELU: (0.6, 0.8),
    Kind.RSELU: (0.9232, 2.4232),
}

# Serialized field names per kind; everything else is ignored for that kind.
_RELEVANT = {
    Kind.RELU: (),
    Kind.LEAKY_RELU: ("alpha",),
    Kind.PRELU: ("alpha", "prelu_scope"),
    Kind.RRELU: ("bounds",),
    Kind.SIGMOID: (),
    Kind.TANH: (),
    Kind.SWISH: ("beta",),
    Kind.GELU: ("beta",),
    Kind.ELU: ("alpha",),
    Kind.CELU: ("alpha",),
    Kind.SELU: ("alpha",),
    Kind.CRELU: (),
    Kind.RATIONAL: ("rational_degrees", "rational_version", "rational_target"),
    Kind.SMOOTH_LEAKY: ("alpha", "c", "p"),
    Kind.RAND_SMOOTH_LEAKY: ("bounds", "c", "p"),
    Kind.BO_PRELU: ("alpha", "bounds", "prelu_scope"),
    Kind.RSELU: ("bounds",),
}

RATIONAL_TARGETS = ("relu", "leaky_relu", "swish", "tanh", "sigmoid")


@dataclass(frozen=True)
class ActivationSpec:
    """Shape description of one nonlinearity.

    ``alpha`` is the negative-branch leak for the Leaky/PReLU/Smooth-Leaky
    family (initial value for PReLU and Bo-PReLU) and the ELU-family scale.
    ``bounds`` holds the uniform sampling range of randomized kinds and the
    ``(alpha_min, alpha_max)`` clamp of Bo-PReLU.
    """

    kind: Kind
    alpha: float | None = None
    beta: float = 1.0
    c: float = 5.0
    p: float = 3.0
    bounds: tuple[float, float] | None = None
    prelu_scope: Scope = Scope.NEURON
    rational_degrees: tuple[int, int] = (5, 4)
    rational_version: str = "A"
    rational_target: str = "leaky_relu"

    def __post_init__(self):
        try:
            kind = Kind(self.kind)
            scope = Scope(self.prelu_scope)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        object.__setattr__(self, "kind", kind)
        object.__setattr__(self, "prelu_scope", scope)
        if self.alpha is None and kind in _DEFAULT_ALPHA:
            object.__setattr__(self, "alpha", _DEFAULT_ALPHA[kind])
        if self.alpha is not None:
            object.__setattr__(self, "alpha", float(self.alpha))
        if self.bounds is None and kind in _DEFAULT_BOUNDS:
            object.__setattr__(self, "bounds", _DEFAULT_BOUNDS[kind])
        if self.bounds is not None:
            lo, hi = (float(v) for v in self.bounds)
            object.__setattr__(self, "bounds", (lo, hi))
        object.__setattr__(self, "rational_degrees", tuple(int(d) for d in self.rational_degrees))
        self._validate()

    def _validate(self):
        kind = self.kind
        if kind in (Kind.SMOOTH_LEAKY, Kind.RAND_SMOOTH_LEAKY):
            if not (self.c > 0 and self.p > 0):
                raise ConfigError(f"{kind.value}: c and p must be > 0, got c={self.c}, p={self.p}")
        if kind in (Kind.RRELU, Kind.RAND_SMOOTH_LEAKY, Kind.RSELU):
            lo, hi = self.bounds
            if lo > hi:
                raise ConfigError(f"{kind.value}: lower bound {lo} exceeds upper bound {hi}")
        if kind is Kind.BO_PRELU:
            lo, hi = self.bounds
            if not lo < hi:
                raise ConfigError(f"bo_prelu: alpha_min={lo} must be < alpha_max={hi}")
            if not lo < self.alpha < hi:
                raise ConfigError(f"bo_prelu: initial alpha {self.alpha} outside ({lo}, {hi})")
        if kind in (Kind.CELU,) and self.alpha == 0:
            raise ConfigError("celu: alpha must be non-zero")
        if kind in (Kind.SWISH, Kind.GELU) and self.beta <= 0:
            raise ConfigError(f"{kind.value}: beta must be > 0")
        if kind is Kind.RATIONAL:
            deg_p, deg_q = self.rational_degrees
            if deg_p < 1:
                raise ConfigError(f"rational: numerator degree must be >= 1, got {deg_p}")
            if deg_q < 0:
                raise ConfigError(f"rational: denominator degree must be >= 0, got {deg_q}")
            if self.rational_version != "A":
                raise ConfigError(
                    f"rational: only version A is implemented, got {self.rational_version!r}"
                )
            if self.rational_target not in RATIONAL_TARGETS:
                raise ConfigError(f"rational: unknown target {self.rational_target!r}")

    @property
    def randomized(self) -> bool:
        return self.kind in RANDOMIZED

    @property
    def midpoint(self) -> float:
        lo, hi = self.bounds
        return 0.5 * (lo + hi)

    @property
    def smooth_leak_steepness(self) -> float:
        return self.c / self.p

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {"kind": self.kind.value}
        for name in _RELEVANT[self.kind]:
            value = getattr(self, name)
            if name == "bounds":
                out["lower"], out["upper"] = value
            elif name == "rational_degrees":
                out["rational_p"], out["rational_q"] = value
            elif isinstance(value, Enum):
                out[name] = value.value
            else:
                out[name] = value
        return out

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> ActivationSpec:
        data = dict(data)
        known = {f.name for f in fields(cls)} | {"lower", "upper", "rational_p", "rational_q"}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown activation fields: {sorted(unknown)}")
        if "kind" not in data:
            raise ConfigError("activation block needs a 'kind'")
        if "lower" in data or "upper" in data:
            if "lower" not in data or "upper" not in data:
                raise ConfigError("activation bounds need both 'lower' and 'upper'")
            data["bounds"] = (data.pop("lower"), data.pop("upper"))
        if "rational_p" in data or "rational_q" in data:
            data["rational_degrees"] = (data.pop("rational_p", 5), data.pop("rational_q", 4))
        return cls(**data)

    def label(self) -> str:
        parts = []
        for key, value in self.to_dict().items():
            if key != "kind":
                parts.append(f"{key}={value:g}" if isinstance(value, float) else f"{key}={value}")
        return f"{self.kind.value}({','.join(parts)})" if parts else self.kind.value


@dataclass(eq=False)
class ActivationState:
    """Mutable parameters of one activation layer.

    ``alpha`` holds PReLU slopes or Bo-PReLU raw (pre-sigmoid) parameters;
    ``num``/``den`` hold rational coefficients ``a_0..a_P`` and ``b_1..b_Q``.
    """

    alpha: np.ndarray | None = None
    num: np.ndarray | None = None
    den: np.ndarray | None = None
    mode: Mode = Mode.TRAIN

    def copy(self) -> ActivationState:
        def c(a):
            return None if a is None else a.copy()

        return ActivationState(c(self.alpha), c(self.num), c(self.den), self.mode)


@dataclass
class ActTape:
    kind: Kind
    x: np.ndarray
    r: np.ndarray | float | None = None
    extra: dict[str, np.ndarray] = field(default_factory=dict)


def scope_size(spec: ActivationSpec, width: int) -> int:
    if spec.kind not in LEARNABLE_SLOPE:
        return 0
    return width if spec.prelu_scope is Scope.NEURON else 1


def init_state(spec: ActivationSpec, width: int = 1, mode: Mode = Mode.TRAIN) -> ActivationState:
    """Fresh state for a layer of ``width`` pre-activation units."""
    state = ActivationState(mode=Mode(mode))
    n = scope_size(spec, width)
    if spec.kind is Kind.PRELU:
        state.alpha = np.full(n, spec.alpha)
    elif spec.kind is Kind.BO_PRELU:
        lo, hi = spec.bounds
        state.alpha = np.full(n, bo_prelu_raw(spec.alpha, lo, hi))
    elif spec.kind is Kind.RATIONAL:
        num, den, _ = fit_rational(spec.rational_target, spec.rational_degrees)
        state.num, state.den = num, den
    return state


# --------------------------------------------------------------------------- helpers


def sigmoid(x):
    return special.expit(x)


def _sigmoid_prime(x):
    return special.expit(x) * special.expit(-x)


def _sech2(x):
    with np.errstate(over="ignore"):
        return 1.0 / np.cosh(x) ** 2


def _poly(coeffs: np.ndarray, x: np.ndarray) -> np.ndarray:
    out = np.zeros_like(x, dtype=float)
    for c in coeffs[::-1]:
        out = out * x + c
    return out


def _poly_prime(coeffs: np.ndarray, x: np.ndarray) -> np.ndarray:
    k = np.arange(1, len(coeffs))
    return _poly(coeffs[1:] * k, x) if len(coeffs) > 1 else np.zeros_like(x, dtype=float)


def _smooth_leaky(x, slope, k):
    s = sigmoid(k * x)
    y = slope * x + (1.0 - slope) * x * s
    dy = slope + (1.0 - slope) * (s + k * x * s * (1.0 - s))
    return y, dy


def bo_prelu_alpha(alpha_raw, alpha_min: float, alpha_max: float):
    """Bounded slope ``alpha_min + (alpha_max - alpha_min) * sigmoid(alpha_raw)``."""
    if not alpha_min < alpha_max:
        raise ConfigError(f"alpha_min={alpha_min} must be < alpha_max={alpha_max}")
    return alpha_min + (alpha_max - alpha_min) * sigmoid(alpha_raw)


def bo_prelu_raw(alpha: float, alpha_min: float, alpha_max: float) -> float:
    """Inverse of :func:`bo_prelu_alpha`."""
    if not alpha_min < alpha < alpha_max:
        raise ConfigError(f"alpha={alpha} outside ({alpha_min}, {alpha_max})")
    return float(special.logit((alpha - alpha_min) / (alpha_max - alpha_min)))


def crelu_concat(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    return np.concatenate([np.maximum(z, 0.0), np.maximum(-z, 0.0)], axis=-1)


def rational_forward(x, num, den) -> np.ndarray:
    """Version-A rational ``P(x) / (1 + |sum_j b_j x^j|)``."""
    num = np.asarray(num, dtype=float)
    den = np.asarray(den, dtype=float)
    if len(num) < 2:
        raise ConfigError("rational numerator degree must be >= 1")
    x = np.asarray(x, dtype=float)
    q = x * _poly(den, x) if len(den) else np.zeros_like(x)
    return _poly(num, x) / (1.0 + np.abs(q))


def _rational_parts(num, den, x):
    pnum = _poly(num, x)
    if len(den):
        q = x * _poly(den, x)
        dq = _poly_prime(np.concatenate([[0.0], den]), x)
    else:
        q = np.zeros_like(x)
        dq = np.zeros_like(x)
    sgn = np.sign(q)
    denom = 1.0 + np.abs(q)
    return pnum, q, dq, sgn, denom


def rselu_forward(x, bounds, mode: Mode | str = Mode.EVAL, rng: np.random.Generator | None = None):
    """Randomized-slope SELU; the negative branch scale is drawn per element."""
    spec = ActivationSpec(Kind.RSELU, bounds=tuple(bounds))
    y, _ = act_forward(spec, ActivationState(mode=Mode(mode)), x, rng=rng)
    return y


# --------------------------------------------------------------------------- rational fit


def _target_fn(name: str):
    targets = {
        "relu": ActivationSpec(Kind.RELU),
        "leaky_relu": ActivationSpec(Kind.LEAKY_RELU, alpha=0.01),
        "swish": ActivationSpec(Kind.SWISH, beta=1.0),
        "tanh": ActivationSpec(Kind.TANH),
        "sigmoid": ActivationSpec(Kind.SIGMOID),
    }
    spec = targets[name]
    return lambda x: evaluate(spec, x)


@cache
def _fit_rational_cached(target: str, deg_p: int, deg_q: int, n_points: int):
    x = np.linspace(-3.0, 3.0, n_points)
    f = _target_fn(target)(x)
    a0 = float(_target_fn(target)(np.array([0.0]))[0])
    # P(0) is pinned to f(0): the |q| kink sits at the origin, and with P(0)=0
    # it carries no derivative jump there.
    powers_p = np.stack([x**k for k in range(1, deg_p + 1)], axis=1)
    powers_q = np.stack([x**j for j in range(1, deg_q + 1)], axis=1) if deg_q else np.zeros((len(x), 0))
    lin = np.hstack([powers_p, -f[:, None] * powers_q])
    theta0, *_ = np.linalg.lstsq(lin, f - a0, rcond=None)

    def unpack(theta):
        return np.concatenate([[a0], theta[:deg_p]]), theta[deg_p:]

    def residual(theta):
        num, den = unpack(theta)
        return rational_forward(x, num, den) - f

    best = theta0
    best_cost = float(np.sum(residual(theta0) ** 2))
    for start in (theta0, np.concatenate([theta0[:deg_p], np.zeros(deg_q)])):
        sol = optimize.least_squares(residual, start, method="trf", xtol=1e-12, ftol=1e-12, max_nfev=800)
        cost = float(np.sum(sol.fun**2))
        if np.all(np.isfinite(sol.x)) and cost < best_cost:
            best, best_cost = sol.x, cost
    num, den = unpack(best)
    max_err = float(np.max(np.abs(residual(best))))
    return tuple(num), tuple(den), max_err


def fit_rational(target: str, degrees: tuple[int, int], n_points: int = 1001):
    """Least-squares fit of version-A rational coefficients to ``target`` on [-3, 3].

    Returns ``(num, den, max_abs_error)`` where the error is over the fit grid.
    """
    if target not in RATIONAL_TARGETS:
        raise ConfigError(f"unknown rational target {target!r}")
    deg_p, deg_q = degrees
    if deg_p < 1:
        raise ConfigError(f"rational numerator degree must be >= 1, got {deg_p}")
    num, den, err = _fit_rational_cached(target, int(deg_p), int(deg_q), int(n_points))
    return np.array(num), np.array(den), err


# --------------------------------------------------------------------------- core


def _check_finite(x: np.ndarray):
    bad = ~np.isfinite(x)
    if bad.any():
        idx = tuple(int(i) for i in np.argwhere(bad)[0])
        raise NonFiniteError(f"non-finite input at index {idx}: {x[idx]!r}")


def _check_state(spec: ActivationSpec, state: ActivationState, x: np.ndarray):
    if spec.kind in LEARNABLE_SLOPE:
        if state.alpha is None:
            raise ConfigError(f"{spec.kind.value}: state has no slope parameters")
        n = len(state.alpha)
        width = x.shape[-1] if x.ndim else 1
        expected = width if spec.prelu_scope is Scope.NEURON else 1
        if n != expected:
            raise ConfigError(
                f"{spec.kind.value}/{spec.prelu_scope.value}: {n} slope parameters for width {width}"
            )
    if spec.kind is Kind.RATIONAL:
        if state.num is None or state.den is None:
            raise ConfigError("rational: state has no coefficients")
        deg_p, deg_q = spec.rational_degrees
        if len(state.num) != deg_p + 1 or len(state.den) != deg_q:
            raise ConfigError(
                f"rational: coefficient shapes {len(state.num)}/{len(state.den)} "
                f"do not match degrees {spec.rational_degrees}"
            )


def _sample_slopes(spec, x, mode, rng):
    if mode is Mode.EVAL:
        return spec.midpoint
    if rng is None:
        raise ConfigError(f"{spec.kind.value}: train mode needs an rng")
    lo, hi = spec.bounds
    return rng.uniform(lo, hi, size=x.shape)


def _negative_slope(spec, state):
    """Slope vector used by the piecewise-linear learnable kinds."""
    if spec.kind is Kind.PRELU:
        return state.alpha
    lo, hi = spec.bounds
    return bo_prelu_alpha(state.alpha, lo, hi)


def _value_and_slope(spec: ActivationSpec, state: ActivationState, x: np.ndarray, r):
    """Forward value and elementwise derivative (CReLU excluded)."""
    k = spec.kind
    pos = x > 0
    if k is Kind.RELU:
        return np.where(pos, x, 0.0), pos.astype(float)
    if k is Kind.LEAKY_RELU:
        a = spec.alpha
        return np.where(pos, x, a * x), np.where(pos, 1.0, a)
    if k in LEARNABLE_SLOPE:
        a = _negative_slope(spec, state)
        return np.where(pos, x, a * x), np.where(pos, 1.0, a)
    if k is Kind.RRELU:
        return np.where(pos, x, r * x), np.where(pos, 1.0, r)
    if k is Kind.SIGMOID:
        return sigmoid(x), _sigmoid_prime(x)
    if k is Kind.TANH:
        return np.tanh(x), _sech2(x)
    if k is Kind.SWISH:
        t = spec.beta * x
        s = sigmoid(t)
        return x * s, s + t * _sigmoid_prime(t)
    if k is Kind.GELU:
        t = spec.beta * x
        cdf = special.ndtr(t)
        return x * cdf, cdf + t * _INV_SQRT_2PI * np.exp(-0.5 * t * t)
    if k is Kind.ELU:
        xn = np.minimum(x, 0.0)
        a = spec.alpha
        return np.where(pos, x, a * np.expm1(xn)), np.where(pos, 1.0, a * np.exp(xn))
    if k is Kind.CELU:
        a = spec.alpha
        xn = np.minimum(x, 0.0) / a
        return np.where(pos, x, a * np.expm1(xn)), np.where(pos, 1.0, np.exp(xn))
    if k in (Kind.SELU, Kind.RSELU):
        xn = np.minimum(x, 0.0)
        a = spec.alpha if k is Kind.SELU else r
        lam = SELU_LAMBDA
        return (
            np.where(pos, lam * x, lam * a * np.expm1(xn)),
            np.where(pos, lam, lam * a * np.exp(xn)),
        )
    if k is Kind.SMOOTH_LEAKY:
        return _smooth_leaky(x, spec.alpha, spec.smooth_leak_steepness)
    if k is Kind.RAND_SMOOTH_LEAKY:
        return _smooth_leaky(x, r, spec.smooth_leak_steepness)
    if k is Kind.RATIONAL:
        pnum, q, dq, sgn, denom = _rational_parts(state.num, state.den, x)
        dp = _poly_prime(state.num, x)
        return pnum / denom, dp / denom - pnum * sgn * dq / denom**2
    raise ConfigError(f"no elementwise derivative for {k.value}")


def act_forward(
    spec: ActivationSpec,
    state: ActivationState,
    x,
    rng: np.random.Generator | None = None,
    mode: Mode | str | None = None,
):
    """Apply the activation; returns ``(y, tape)``.

    ``mode`` overrides ``state.mode``.  Randomized kinds draw one slope per
    element from ``rng`` in train mode and use the bounds midpoint in eval.
    """
    x = np.asarray(x, dtype=float)
    _check_finite(x)
    _check_state(spec, state, x)
    mode = Mode(mode) if mode is not None else state.mode
    if spec.kind is Kind.CRELU:
        return crelu_concat(x), ActTape(spec.kind, x)
    r = _sample_slopes(spec, x, mode, rng) if spec.randomized else None
    y, _ = _value_and_slope(spec, state, x, r)
    return y, ActTape(spec.kind, x, r)


def act_backward(spec: ActivationSpec, state: ActivationState, tape: ActTape, upstream):
    """Chain rule through a recorded forward; returns ``(dx, dparams)``.

    ``dparams`` maps ``"alpha"`` (PReLU slopes or Bo-PReLU raw parameters,
    summed over the batch per scope entry) or ``"num"``/``"den"`` (rational
    coefficients) to gradient arrays; it is empty for fixed kinds.
    """
    if tape.kind is not spec.kind:
        raise ConfigError(f"tape recorded {tape.kind.value}, spec is {spec.kind.value}")
    x = tape.x
    up = np.asarray(upstream, dtype=float)
    if spec.kind is Kind.CRELU:
        h = x.shape[-1]
        if up.shape[-1] != 2 * h:
            raise ConfigError(f"crelu upstream width {up.shape[-1]} != {2 * h}")
        dx = up[..., :h] * (x > 0) - up[..., h:] * (x <= 0)
        return dx, {}
    if up.shape != x.shape:
        raise ConfigError(f"upstream shape {up.shape} != input shape {x.shape}")
    _, slope = _value_and_slope(spec, state, x, tape.r)
    dx = up * slope
    dparams: dict[str, np.ndarray] = {}
    if spec.kind in LEARNABLE_SLOPE:
        per_elem = up * np.where(x > 0, 0.0, x)
        if spec.prelu_scope is Scope.NEURON:
            g = per_elem.reshape(-1, x.shape[-1]).sum(axis=0) if x.ndim else per_elem.reshape(1)
        else:
            g = np.array([per_elem.sum()])
        if spec.kind is Kind.BO_PRELU:
            lo, hi = spec.bounds
            g = g * (hi - lo) * _sigmoid_prime(state.alpha)
        dparams["alpha"] = g
    elif spec.kind is Kind.RATIONAL:
        pnum, q, dq, sgn, denom = _rational_parts(state.num, state.den, x)
        xf, upf = x.ravel(), up.ravel()
        dn, sg, pf = denom.ravel(), sgn.ravel(), pnum.ravel()
        dparams["num"] = np.array([np.sum(upf * xf**k / dn) for k in range(len(state.num))])
        dparams["den"] = np.array(
            [np.sum(-upf * pf * sg * xf**j / dn**2) for j in range(1, len(state.den) + 1)]
        )
    return dx, dparams


# --------------------------------------------------------------------------- deterministic views


def default_state(spec: ActivationSpec, width: int = 1) -> ActivationState:
    return init_state(spec, width, mode=Mode.EVAL)


def evaluate(spec: ActivationSpec, x, state: ActivationState | None = None) -> np.ndarray:
    """Eval-mode output (randomized kinds at their midpoint slope).

    Single-entry slope states broadcast over any input shape here.
    """
    x = np.asarray(x, dtype=float)
    if spec.kind is Kind.CRELU:
        return crelu_concat(x)
    state = default_state(spec) if state is None else state
    r = spec.midpoint if spec.randomized else None
    y, _ = _value_and_slope(spec, state, x, r)
    return np.broadcast_to(y, x.shape).astype(float)


def derivative(spec: ActivationSpec, x, state: ActivationState | None = None) -> np.ndarray:
    """Eval-mode elementwise derivative; CReLU is reported by its branches.

    For CReLU the return has a trailing axis of length 2 holding the
    derivative of ``max(z, 0)`` and of ``max(-z, 0)`` with respect to ``z``.
    """
    x = np.asarray(x, dtype=float)
    if spec.kind is Kind.CRELU:
        return np.stack([(x > 0).astype(float), -(x <= 0).astype(float)], axis=-1)
    state = default_state(spec) if state is None else state
    r = spec.midpoint if spec.randomized else None
    _, slope = _value_and_slope(spec, state, x, r)
    return np.broadcast_to(slope, x.shape).astype(float)


def derivative_magnitude(spec: ActivationSpec, x, state: ActivationState | None = None) -> np.ndarray:
    """``|phi'(x)|`` per pre-activation element; CReLU takes the larger branch."""
    d = np.abs(derivative(spec, x, state))
    return d.max(axis=-1) if spec.kind is Kind.CRELU else d


def negative_slope_proxy(spec: ActivationSpec) -> float | None:
    """Initial negative-branch slope for piecewise-linear kinds, else None."""
    k = spec.kind
    if k in (Kind.RELU, Kind.CRELU):
        return 0.0
    if k in (Kind.LEAKY_RELU, Kind.PRELU, Kind.BO_PRELU):
        return spec.alpha
    if k is Kind.RRELU:
        return spec.midpoint
    return None


def kaiming_gain(spec: ActivationSpec) -> float:
    """Fan-in normal init gain ``sqrt(2 / (1 + a^2))`` for negative slope ``a``.

    Sigmoid, Tanh, SELU and RSELU use gain 1.  Smooth kinds use their
    effective negative slope (mean derivative over negative inputs) as ``a``.
    """
    if spec.kind in (Kind.SIGMOID, Kind.TANH, Kind.SELU, Kind.RSELU):
        return 1.0
    a = negative_slope_proxy(spec)
    if a is None:
        from .analytic import effective_negative_slope

        a = effective_negative_slope(spec)
    return math.sqrt(2.0 / (1.0 + a * a))
