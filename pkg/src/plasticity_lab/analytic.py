"""Shape descriptors computed from an activation alone.

Effective negative slope (mean derivative over negative inputs), dead-band
width (fraction of an input range with ``|phi'| < eps``) and the binary
property grid.  All of them probe the closed-form derivatives from
:mod:`plasticity_lab.activations` numerically.
"""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np
from scipy import integrate, special

from .activations import (
    RANDOMIZED,
    ActivationSpec,
    ActivationState,
    Kind,
    default_state,
    derivative,
    derivative_magnitude,
)
from .errors import ConfigError

TAIL_PROBE = 50.0
# A tail derivative counts as vanished once it is below double resolution of a unit slope.
TAIL_ZERO = 1e-15
SLOPE_FLOOR_LIMIT = -10.0


@dataclass(frozen=True)
class TruncatedStandardNormalNegative:
    """Standard normal restricted to x < 0."""

    def weight(self, x):
        return np.exp(-0.5 * np.asarray(x) ** 2)

    @property
    def support(self):
        return (SLOPE_FLOOR_LIMIT, 0.0)


@dataclass(frozen=True)
class UniformNegative:
    a: float = -3.0
    b: float = 0.0

    def __post_init__(self):
        if not self.a < self.b <= 0.0:
            raise ConfigError(f"uniform support ({self.a}, {self.b}) must lie in x <= 0")

    def weight(self, x):
        return np.ones_like(np.asarray(x, dtype=float))

    @property
    def support(self):
        return (max(self.a, SLOPE_FLOOR_LIMIT), self.b)


@dataclass(frozen=True)
class EmpiricalNegative:
    """Observed pre-activations; only the negative ones are used."""

    samples: tuple[float, ...]


SlopeDistribution = TruncatedStandardNormalNegative | UniformNegative | EmpiricalNegative


def _constant_negative_slope(spec: ActivationSpec, state: ActivationState | None) -> float | None:
    k = spec.kind
    if k in (Kind.RELU, Kind.CRELU):
        return 0.0
    if k is Kind.LEAKY_RELU:
        return spec.alpha
    if k is Kind.RRELU:
        return spec.midpoint
    if k in (Kind.PRELU, Kind.BO_PRELU):
        state = default_state(spec) if state is None else state
        slopes = derivative(spec, np.full(len(state.alpha), -1.0), state)
        return float(np.mean(slopes))
    return None


def _negative_derivative(spec, state):
    if spec.kind is Kind.CRELU:
        return lambda x: derivative(spec, x, state)[..., 0]
    return lambda x: derivative(spec, x, state)


def effective_negative_slope(
    spec: ActivationSpec,
    state: ActivationState | None = None,
    dist: SlopeDistribution | None = None,
) -> float:
    """Mean derivative ``E[phi'(x) | x < 0]`` under ``dist``.

    Piecewise-linear kinds return their negative-branch slope exactly.
    Analytic measures are truncated to [-10, 0) and integrated adaptively.
    Randomized kinds are evaluated at their midpoint slope.
    """
    dist = TruncatedStandardNormalNegative() if dist is None else dist
    const = _constant_negative_slope(spec, state)
    if const is not None:
        return float(const)
    dphi = _negative_derivative(spec, state)
    if isinstance(dist, EmpiricalNegative):
        xs = np.asarray(dist.samples, dtype=float)
        xs = xs[xs < 0]
        if xs.size == 0:
            raise ConfigError("empirical slope distribution has no negative samples")
        return float(np.mean(dphi(xs)))
    lo, hi = dist.support

    def num(x):
        return float(dphi(np.array([x]))[0] * dist.weight(x))

    def den(x):
        return float(dist.weight(x))

    n, _ = integrate.quad(num, lo, hi, epsabs=0.0, epsrel=1e-11, limit=400)
    d, _ = integrate.quad(den, lo, hi, epsabs=0.0, epsrel=1e-12, limit=400)
    return n / d


def dead_band_width(
    spec: ActivationSpec,
    state: ActivationState | None = None,
    range: tuple[float, float] = (-100.0, 100.0),
    eps: float = 1e-3,
    grid_n: int = 200_001,
) -> float:
    """Fraction of an evenly spaced grid over ``range`` where ``|phi'| < eps``."""
    if eps <= 0:
        raise ConfigError(f"eps must be > 0, got {eps}")
    if grid_n < 3 or grid_n % 2 == 0:
        raise ConfigError(f"grid_n must be odd and >= 3 so that x=0 is a grid point, got {grid_n}")
    lo, hi = range
    x = np.linspace(lo, hi, grid_n)
    return float(np.mean(derivative_magnitude(spec, x, state) < eps))


def sigmoid_dead_band_edge(eps: float = 1e-3) -> float:
    """|x| beyond which sigmoid'(x) < eps, from s(1-s) = eps."""
    s = 0.5 * (1.0 - math.sqrt(1.0 - 4.0 * eps))
    return -float(special.logit(s))


def tanh_dead_band_edge(eps: float = 1e-3) -> float:
    """|x| beyond which sech^2(x) < eps."""
    return math.acosh(1.0 / math.sqrt(eps))


@dataclass(frozen=True)
class PropertyGrid:
    hdz: bool
    nzg: bool
    sat_both: bool
    sat_neg: bool
    c1: bool
    non_monotonic: bool
    self_normalizing: bool
    learnable_or_random_slope: bool
    nonzero_second_derivative: bool

    COMPUTED = ("hdz", "nzg", "sat_both", "sat_neg", "c1", "non_monotonic", "nonzero_second_derivative")

    def as_dict(self) -> dict[str, bool]:
        return asdict(self)


# Flags that describe intent rather than shape; declared per kind.
_SELF_NORMALIZING = frozenset({Kind.SELU, Kind.RSELU})
_LEARNABLE_OR_RANDOM = frozenset({Kind.PRELU, Kind.BO_PRELU}) | RANDOMIZED


def _branches(spec, x, state):
    d = derivative(spec, x, state)
    return [d[..., 0], d[..., 1]] if spec.kind is Kind.CRELU else [d]


def property_grid(spec: ActivationSpec, state: ActivationState | None = None) -> PropertyGrid:
    """Binary shape properties probed on fixed grids.

    hdz: some branch derivative is exactly 0 on an open negative interval.
    nzg: ``|phi'| != 0`` on at least 99% of the negative probe grid.
    sat_*: ``|phi'(-/+50)|`` below :data:`TAIL_ZERO`.
    c1: one-sided derivatives at 0 agree within 1e-6.
    non_monotonic: ``phi'`` takes both signs on [-10, 10].
    nonzero_second_derivative: ``phi'`` is not piecewise constant away from 0.
    """
    state = default_state(spec) if state is None else state
    neg = np.linspace(-TAIL_PROBE, -1e-3, 49_999)
    neg_branches = _branches(spec, neg, state)
    hdz = False
    for d in neg_branches:
        zero = d == 0.0
        if np.any(zero[1:] & zero[:-1]):
            hdz = True
    mag_neg = derivative_magnitude(spec, neg, state)
    nzg = bool(np.mean(mag_neg != 0.0) >= 0.99)

    tails = derivative_magnitude(spec, np.array([-TAIL_PROBE, TAIL_PROBE]), state)
    sat_neg = bool(tails[0] < TAIL_ZERO)
    sat_both = bool(sat_neg and tails[1] < TAIL_ZERO)

    delta = 1e-12
    at0 = np.array([-delta, delta])
    c1 = all(abs(d[0] - d[1]) < 1e-6 for d in _branches(spec, at0, state))

    probe = np.linspace(-10.0, 10.0, 20_001)
    non_monotonic = any(
        bool(d.min() < -1e-12 and d.max() > 1e-12) for d in _branches(spec, probe, state)
    )

    away = probe[np.abs(probe) > 1e-3]
    left, right = away[away < 0], away[away > 0]
    curvature = False
    for side in (left, right):
        for d in _branches(spec, side, state):
            if np.max(np.abs(np.diff(d))) > 1e-9:
                curvature = True

    return PropertyGrid(
        hdz=hdz,
        nzg=nzg,
        sat_both=sat_both,
        sat_neg=sat_neg,
        c1=c1,
        non_monotonic=non_monotonic,
        self_normalizing=spec.kind in _SELF_NORMALIZING,
        learnable_or_random_slope=spec.kind in _LEARNABLE_OR_RANDOM,
        nonzero_second_derivative=curvature,
    )


GRID_COLUMNS = [f.name for f in fields(PropertyGrid)]


def write_property_csv(rows: dict[str, PropertyGrid], path: str | Path) -> Path:
    """One row per activation label, one 0/1 column per flag."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["activation", *GRID_COLUMNS])
        for name, grid in rows.items():
            flags = grid.as_dict()
            writer.writerow([name, *(int(flags[c]) for c in GRID_COLUMNS)])
    return path
