"""Canonical parameterizations, sweep grids, and benchmark schedules."""

from __future__ import annotations

import itertools

from .activations import ActivationSpec, Kind, Scope

K = Kind

# One parameterization per property-grid row.  Swish/GeLU use moderate
# temperatures from the sweep grid: at beta=1 their negative-tail derivative
# underflows at the -50 probe and would read as saturating.
PROPERTY_CANONICAL: dict[str, ActivationSpec] = {
    "ReLU": ActivationSpec(K.RELU),
    "LeakyReLU": ActivationSpec(K.LEAKY_RELU, alpha=0.01),
    "PReLU": ActivationSpec(K.PRELU, alpha=0.25),
    "RReLU": ActivationSpec(K.RRELU, bounds=(0.125, 0.333)),
    "Sigmoid": ActivationSpec(K.SIGMOID),
    "Tanh": ActivationSpec(K.TANH),
    "Swish": ActivationSpec(K.SWISH, beta=0.5),
    "GeLU": ActivationSpec(K.GELU, beta=0.1),
    "ELU": ActivationSpec(K.ELU, alpha=1.0),
    "CELU": ActivationSpec(K.CELU, alpha=1.0),
    "SELU": ActivationSpec(K.SELU),
    "CReLU": ActivationSpec(K.CRELU),
    "Rational": ActivationSpec(K.RATIONAL, rational_degrees=(5, 4), rational_target="leaky_relu"),
    "SmoothLeaky": ActivationSpec(K.SMOOTH_LEAKY, alpha=0.05, c=5.0, p=3.0),
    "RandSmoothLeaky": ActivationSpec(K.RAND_SMOOTH_LEAKY, bounds=(0.01, 0.1), c=5.0, p=3.0),
    "RSELU": ActivationSpec(K.RSELU, bounds=(0.9232, 2.4232)),
    "BoPReLU": ActivationSpec(K.BO_PRELU, alpha=0.65, bounds=(0.6, 0.8)),
}

_COLS = ("hdz", "nzg", "sat_both", "sat_neg", "c1", "non_monotonic",
         "self_normalizing", "learnable_or_random_slope", "nonzero_second_derivative")


def _row(flags: str) -> dict[str, bool]:
    return dict(zip(_COLS, (ch == "X" for ch in flags)))


# Reference property grid, one character per column in _COLS order.
REFERENCE_PROPERTY_GRID: dict[str, dict[str, bool]] = {
    "ReLU": _row("X--X-----"),
    "LeakyReLU": _row("-X-------"),
    "PReLU": _row("-X-----X-"),
    "RReLU": _row("-X-----X-"),
    "Sigmoid": _row("-XXXX---X"),
    "Tanh": _row("-XXXX---X"),
    "Swish": _row("-X--XX--X"),
    "GeLU": _row("-X--XX--X"),
    "ELU": _row("-X-XX---X"),
    "CELU": _row("-X-XX---X"),
    "SELU": _row("-X-X--X-X"),
    "CReLU": _row("XX-------"),
    "Rational": _row("-X--XX--X"),
    "SmoothLeaky": _row("-X--XX--X"),
    "RandSmoothLeaky": _row("-X--XX-XX"),
    "RSELU": _row("-X-X--XXX"),
    "BoPReLU": _row("-X-----X-"),
}

CORE_ROWS = tuple(list(REFERENCE_PROPERTY_GRID)[:15])

# Activation sweep grids.
LEAKY_ALPHAS = (0.01, 0.05, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0)
ELU_ALPHAS = (0.1, 0.5, 1.0, 1.5, 2.0, 2.2, 2.4, 2.6, 2.8, 3.0, 3.3, 3.5, 3.6, 3.9)
SELU_ALPHAS = (1.0, 1.3, 1.673, 2.0, 2.3, 2.4, 2.6, 2.8, 3.0, 3.1, 3.3, 3.5, 3.7)
SWISH_BETAS = (0.01, 0.05, 0.1, 0.5, 0.8, 1.0)
RRELU_BOUNDS = (
    (0.01, 0.05), (0.05, 0.10), (0.1, 0.3), (0.125, 0.333), (0.3, 1.0),
    (0.4, 1.0), (0.5, 1.0), (0.6, 1.0), (0.6, 0.8), (0.7, 1.0), (0.8, 1.0),
    (0.9, 1.0), (1.0, 1.5), (1.6732, 1.6732), (1.4232, 1.9232), (1.168, 2.178),
    (0.9232, 2.4232), (1.548, 1.798), (0.673, 2.673), (0.423, 2.923),
)
RATIONAL_DEGREES = ((7, 6), (5, 4), (3, 2))
RATIONAL_TARGET_GRID = ("relu", "leaky_relu", "swish", "tanh", "sigmoid")
SMOOTH_CP = (1.0, 2.0, 3.0, 4.0, 5.0)
SMOOTH_ALPHAS = (0.1, 0.3, 0.5, 0.65, 0.7, 0.8, 0.9)
RAND_SMOOTH_LOWER = (0.01, 0.3, 0.4, 0.5, 0.6, 0.7)
RAND_SMOOTH_UPPER = (0.05, 0.8, 1.0)
EXTENDED_CP = (0.1, 0.3, 0.5, 0.8, 1.0, 2.0, 3.0, 4.0, 5.0)
EXTENDED_RAND_SMOOTH_BOUNDS = ((0.673, 2.673), (0.55, 1.0), (0.05, 0.70), (0.01, 0.02), (0.01, 0.10))


def smooth_leaky_grid() -> list[ActivationSpec]:
    return [
        ActivationSpec(K.SMOOTH_LEAKY, alpha=a, c=c, p=p)
        for c, p, a in itertools.product(SMOOTH_CP, SMOOTH_CP, SMOOTH_ALPHAS)
    ]


def rand_smooth_leaky_grid(valid_only: bool = True) -> list[ActivationSpec]:
    """Bounds grid; pairs with lower > upper are skipped when ``valid_only``."""
    out = []
    for c, p, lo, hi in itertools.product(SMOOTH_CP, SMOOTH_CP, RAND_SMOOTH_LOWER, RAND_SMOOTH_UPPER):
        if lo > hi and valid_only:
            continue
        out.append(ActivationSpec(K.RAND_SMOOTH_LEAKY, bounds=(lo, hi), c=c, p=p))
    return out


def sweep_grid(kind: Kind | str) -> list[ActivationSpec]:
    """Every swept parameterization of one activation kind."""
    kind = Kind(kind)
    if kind in (K.RELU, K.CRELU, K.SIGMOID, K.TANH):
        return [ActivationSpec(kind)]
    if kind is K.LEAKY_RELU:
        return [ActivationSpec(kind, alpha=a) for a in LEAKY_ALPHAS]
    if kind in (K.ELU, K.CELU):
        return [ActivationSpec(kind, alpha=a) for a in ELU_ALPHAS]
    if kind is K.SELU:
        return [ActivationSpec(kind, alpha=a) for a in SELU_ALPHAS]
    if kind in (K.SWISH, K.GELU):
        return [ActivationSpec(kind, beta=b) for b in SWISH_BETAS]
    if kind is K.RRELU:
        return [ActivationSpec(kind, bounds=b) for b in RRELU_BOUNDS]
    if kind is K.PRELU:
        return [ActivationSpec(kind, alpha=0.25, prelu_scope=s) for s in Scope]
    if kind is K.RATIONAL:
        return [
            ActivationSpec(kind, rational_degrees=d, rational_target=t)
            for d, t in itertools.product(RATIONAL_DEGREES, RATIONAL_TARGET_GRID)
        ]
    if kind is K.SMOOTH_LEAKY:
        return smooth_leaky_grid()
    if kind is K.RAND_SMOOTH_LEAKY:
        return rand_smooth_leaky_grid()
    if kind is K.BO_PRELU:
        return [ActivationSpec(kind, alpha=0.65, bounds=(0.6, 0.8), prelu_scope=s) for s in Scope]
    if kind is K.RSELU:
        return [ActivationSpec(kind, bounds=b) for b in ((0.9232, 2.4232), (1.4232, 1.9232), (0.673, 2.673))]
    raise ValueError(kind)


# Learning rates of the tuned continual (class-incremental) configurations.
CL_LEARNING_RATES = {
    K.RELU: 1e-4, K.LEAKY_RELU: 3e-4, K.RRELU: 3e-4, K.PRELU: 1e-3, K.SWISH: 1e-4,
    K.GELU: 1e-3, K.CELU: 1e-3, K.ELU: 1e-4, K.SELU: 1e-4, K.TANH: 1e-4, K.SIGMOID: 1e-3,
}

# Best continual (class-incremental) shape parameters.
CL_BEST = {
    "ReLU": ActivationSpec(K.RELU),
    "LeakyReLU": ActivationSpec(K.LEAKY_RELU, alpha=0.7),
    "RReLU": ActivationSpec(K.RRELU, bounds=(0.673, 2.673)),
    "PReLU": ActivationSpec(K.PRELU, alpha=0.25, prelu_scope=Scope.NEURON),
    "Swish": ActivationSpec(K.SWISH, beta=0.05),
    "GeLU": ActivationSpec(K.GELU, beta=0.05),
    "CELU": ActivationSpec(K.CELU, alpha=2.4),
    "ELU": ActivationSpec(K.ELU, alpha=3.9),
    "SELU": ActivationSpec(K.SELU, alpha=3.7),
    "Tanh": ActivationSpec(K.TANH),
    "Sigmoid": ActivationSpec(K.SIGMOID),
}

# Per-benchmark schedules at full size; desk presets divide data sizes by `scale`.
STREAM_PRESETS = {
    "permuted": dict(kind="permuted", samples=10_000, batch_size=16, epochs=1, n_tasks=500),
    "random_label": dict(kind="random_label", samples=1_200, batch_size=16, epochs=400, n_tasks=50),
    "split_class": dict(
        kind="split_class", samples=500, batch_size=32, epochs=10, n_tasks=15,
        classes_per_hard_task=5, step_budget=780,
    ),
    "binary_pair": dict(kind="binary_pair", samples=600, batch_size=100, epochs=10, n_tasks=500),
}

FLOOR_GROUPS = {
    "zero_floor": ("relu", "tanh", "sigmoid"),
    "non_zero_floor": ("leaky_relu", "rrelu", "prelu"),
    "effective_non_zero_floor": ("elu", "celu", "selu", "gelu", "swish"),
}
SIDEDNESS_GROUPS = {
    "one_sided_kink": ("leaky_relu", "prelu", "rrelu"),
    "one_sided_smooth": ("elu", "celu", "selu"),
    "two_sided": ("sigmoid", "tanh"),
}


def floor_group(kind: Kind | str) -> str | None:
    kind = Kind(kind).value
    for group, members in FLOOR_GROUPS.items():
        if kind in members:
            return group
    return None


def sidedness_group(kind: Kind | str) -> str | None:
    kind = Kind(kind).value
    for group, members in SIDEDNESS_GROUPS.items():
        if kind in members:
            return group
    return None
