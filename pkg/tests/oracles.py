"""Independent reference computations shared by the test modules."""

import numpy as np

from plasticity_lab.activations import (
    KINKED,
    Kind,
    Mode,
    Scope,
    act_backward,
    act_forward,
    init_state,
)


def central_diff(f, x, h=1e-5):
    return (f(x + h) - f(x - h)) / (2.0 * h)


def kink_points(spec, state):
    """Points where the derivative may jump."""
    if spec.kind in KINKED:
        return np.array([0.0])
    if spec.kind is Kind.RATIONAL:
        # |x * Q(x)| is kinked at the real roots of x * Q(x).
        coeffs = np.concatenate([[0.0], state.den])[::-1]
        coeffs = np.trim_zeros(coeffs, "f")
        roots = np.roots(coeffs) if len(coeffs) > 1 else np.array([])
        real = roots[np.abs(roots.imag) < 1e-9].real
        return np.concatenate([[0.0], real])
    return np.array([])


def away_from_kinks(x, kinks, margin=1e-3):
    if len(kinks) == 0:
        return x
    dist = np.min(np.abs(x[:, None] - kinks[None, :]), axis=1)
    return x[dist > margin]


def fixed_draw_forward(spec, state, seed, mode=Mode.TRAIN):
    """Forward with a rng re-created per call, so every call reuses the same slopes."""
    def f(x):
        y, _ = act_forward(spec, state, x, rng=np.random.default_rng(seed), mode=mode)
        return y
    return f


def dense_hessian(grad_fn, theta, h=1e-4):
    """Symmetrized finite-difference Hessian from a gradient function."""
    n = theta.size
    H = np.empty((n, n))
    for i in range(n):
        e = np.zeros(n)
        e[i] = h
        H[:, i] = (grad_fn(theta + e) - grad_fn(theta - e)) / (2 * h)
    return 0.5 * (H + H.T)


def network_fd_check(params, x, y, rel_tol=1e-4, h=1e-4, kink_margin=1e-3):
    """Max relative error between analytic and central-difference loss gradients.

    Skips a parameter when the two probes put any kinked pre-activation on
    different sides of zero (or within ``kink_margin * h`` of it).
    """
    from plasticity_lab.network import (
        flat_grad,
        flatten,
        forward,
        loss_and_grads,
        unflatten_into,
    )

    def loss_at(theta):
        work = params.copy()
        unflatten_into(work, theta)
        loss, _, _ = loss_and_grads(work, x, y)
        return loss

    def kinked(theta):
        work = params.copy()
        unflatten_into(work, theta)
        _, tape = forward(work, x, mode=Mode.EVAL)
        return [zs for spec, zs in zip(work.spec.activations, tape.scaled) if spec.kind in KINKED]

    def crosses(a, b):
        # a central difference is only trustworthy if no unit changes branch between probes
        return any(np.any((np.sign(za) != np.sign(zb)) | (np.minimum(np.abs(za), np.abs(zb)) < kink_margin * h))
                   for za, zb in zip(a, b))

    theta = flatten(params)
    _, grads, _ = loss_and_grads(params, x, y)
    g = flat_grad(params, grads)
    worst, checked = 0.0, 0
    for i in range(theta.size):
        e = np.zeros_like(theta)
        e[i] = h
        if crosses(kinked(theta + e), kinked(theta - e)):
            continue
        fd = (loss_at(theta + e) - loss_at(theta - e)) / (2 * h)
        err = abs(fd - g[i]) / max(abs(fd), abs(g[i]), 1e-6)
        worst = max(worst, err)
        checked += 1
    return worst, checked


def loss_hessian(loss_fn, theta, h=1e-3):
    """Hessian from second differences of the loss alone (no gradient code involved)."""
    n = theta.size
    H = np.empty((n, n))
    for i in range(n):
        for j in range(i, n):
            ei, ej = np.zeros(n), np.zeros(n)
            ei[i], ej[j] = h, h
            v = (loss_fn(theta + ei + ej) - loss_fn(theta + ei - ej)
                 - loss_fn(theta - ei + ej) + loss_fn(theta - ei - ej)) / (4 * h * h)
            H[i, j] = H[j, i] = v
    return H


def _state_for(spec, width):
    state = init_state(spec, width)
    if spec.kind is Kind.PRELU:
        state.alpha = np.linspace(0.05, 0.9, len(state.alpha))
    if spec.kind is Kind.BO_PRELU:
        state.alpha = np.linspace(-2.0, 2.0, len(state.alpha))
    return state


def check_input_gradient(spec, seed=0, n=256):
    rng = np.random.default_rng(seed)
    state = _state_for(spec, 1)
    x = away_from_kinks(rng.uniform(-10, 10, size=n), kink_points(spec, state))
    if spec.kind in (Kind.PRELU, Kind.BO_PRELU) and spec.prelu_scope is Scope.NEURON:
        state = init_state(spec, len(x))
        state.alpha = np.linspace(-1.0, 1.0, len(x)) + (0.3 if spec.kind is Kind.PRELU else 0.0)
    f = fixed_draw_forward(spec, state, seed)
    _, tape = act_forward(spec, state, x, rng=np.random.default_rng(seed), mode=Mode.TRAIN)
    if spec.kind is Kind.CRELU:
        up = np.ones(2 * len(x))
        dx, _ = act_backward(spec, state, tape, up)
        fd = central_diff(lambda v: f(v)[: len(x)] + f(v)[len(x):], x)
    else:
        dx, _ = act_backward(spec, state, tape, np.ones_like(x))
        fd = central_diff(f, x)
    return float(np.max(np.abs(dx - fd)))
