"""Loss gradients through the solve: discrete backprop, continuous adjoint,
and a finite-difference oracle.

The discrete path differentiates the unrolled fixed-step solver exactly,
at the cost of storing every grid state. The adjoint path re-integrates
the state backward alongside the adjoint variables, so its stored-state
count is a small constant regardless of depth; the two agree up to the
discretization error of the backward solve.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ContractViolationError
from .odeint import SolveSpec, integrate, integrate_batch, integrate_rhs

FD_STEP = 1e-6


def max_rel_err(a, b):
    """Max absolute difference over the joint max-norm scale.

    Normalizing by the largest entry (never below 1e-10) keeps near-zero
    components from turning roundoff into huge per-entry ratios.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    scale = max(float(np.max(np.abs(a))), float(np.max(np.abs(b))), 1e-10)
    return float(np.max(np.abs(a - b)) / scale)


@dataclass
class GradResult:
    d_theta: np.ndarray
    d_x0: np.ndarray
    method: str
    # Count of state-sized vectors the method kept across solver steps:
    # the measurable form of activation memory at desk scale.
    activation_memory_units: int


def _check_bucket_alignment(dyn, spec):
    for _, fld in dyn.field_views():
        s = fld.spec
        if s is not None and s.kind == "bucketed" and spec.steps % s.order != 0:
            raise ContractViolationError(
                f"adjoint with bucketed bases needs steps divisible by the bucket "
                f"count (steps={spec.steps}, buckets={s.order})"
            )


def backward_discrete(dyn, theta, spec, states, seed_adjoints):
    """Exact reverse sweep of the stored forward steps.

    `states` has shape (L+1, B, n); `seed_adjoints` is dL/dx_T per row.
    Returns (dL/dx_0 rows, dL/dtheta summed over rows).
    """
    h = spec.h
    grid = spec.grid
    a = np.array(seed_adjoints, dtype=float)
    g = np.zeros(dyn.n_params)

    def f(xs, t):
        return dyn.f_batch(xs, t, theta)

    def vjp(xs, t, cs):
        return dyn.vjp_batch(xs, t, theta, cs)

    for k in range(spec.steps - 1, -1, -1):
        xk = states[k]
        t = float(grid[k])
        if spec.method == "euler":
            ja, ga = vjp(xk, t, a)
            a = a + h * ja
            g += h * ga
        else:
            k1 = f(xk, t)
            x2 = xk + 0.5 * h * k1
            k2 = f(x2, t + 0.5 * h)
            x3 = xk + 0.5 * h * k2
            k3 = f(x3, t + 0.5 * h)
            x4 = xk + h * k3
            c4 = (h / 6.0) * a
            j4, g4 = vjp(x4, t + h, c4)
            c3 = (h / 3.0) * a + h * j4
            j3, g3 = vjp(x3, t + 0.5 * h, c3)
            c2 = (h / 3.0) * a + 0.5 * h * j3
            j2, g2 = vjp(x2, t + 0.5 * h, c2)
            c1 = (h / 6.0) * a + 0.5 * h * j2
            j1, g1 = vjp(xk, t, c1)
            a = a + j1 + j2 + j3 + j4
            g += g1 + g2 + g3 + g4
    return a, g


def grad_discrete(dyn, x0, theta, spec, loss_grad_at_terminal):
    """Reverse-mode differentiation of the unrolled solver."""
    theta = np.asarray(theta, dtype=float)
    store = SolveSpec(spec.method, spec.t0, spec.t1, spec.steps, store_all=True)
    traj = integrate_batch(dyn, np.asarray(x0, float)[None, :], theta, store)
    a, g = backward_discrete(
        dyn, theta, store, traj.states, np.asarray(loss_grad_at_terminal, float)[None, :]
    )
    return GradResult(g, a[0], "discrete", spec.steps + 1)


def grad_discrete_batch(dyn, xs, theta, spec, seed_adjoints):
    """Batched discrete gradient; d_theta is summed over the batch rows."""
    theta = np.asarray(theta, dtype=float)
    store = SolveSpec(spec.method, spec.t0, spec.t1, spec.steps, store_all=True)
    traj = integrate_batch(dyn, xs, theta, store)
    a, g = backward_discrete(dyn, theta, store, traj.states, seed_adjoints)
    return GradResult(g, a, "discrete", spec.steps + 1), traj


def adjoint_backward(dyn, terminal_rows, theta, spec, seed_adjoints):
    b, n = terminal_rows.shape
    k = dyn.n_params

    def rhs(flat, t):
        xs = flat[: b * n].reshape(b, n)
        adj = flat[b * n: 2 * b * n].reshape(b, n)
        fx = dyn.f_batch(xs, t, theta)
        ja, ga = dyn.vjp_batch(xs, t, theta, adj)
        return np.concatenate([fx.reshape(-1), -ja.reshape(-1), -ga])

    y1 = np.concatenate([
        terminal_rows.reshape(-1),
        np.asarray(seed_adjoints, float).reshape(-1),
        np.zeros(k),
    ])
    y0 = integrate_rhs(rhs, y1, spec.t1, spec.t0, spec.steps, spec.method)
    a0 = y0[b * n: 2 * b * n].reshape(b, n)
    g = y0[2 * b * n:]
    return a0, g


def grad_adjoint(dyn, x0, theta, spec, loss_grad_at_terminal):
    """Backward integration of the augmented system [x; a; g].

    a' = -(df/dx)^T a with a(t1) = dL/dx(t1), g' = -(df/dtheta)^T a with
    g(t1) = 0; the state is re-integrated backward rather than stored, so
    only three state vectors live across steps (terminal, x, a).
    """
    theta = np.asarray(theta, dtype=float)
    _check_bucket_alignment(dyn, spec)
    fwd = SolveSpec(spec.method, spec.t0, spec.t1, spec.steps, store_all=False)
    traj = integrate(dyn, x0, theta, fwd)
    a0, g = adjoint_backward(
        dyn, traj.terminal[None, :], theta, spec,
        np.asarray(loss_grad_at_terminal, float)[None, :],
    )
    return GradResult(g, a0[0], "adjoint", 3)


def grad_adjoint_batch(dyn, xs, theta, spec, seed_adjoints):
    theta = np.asarray(theta, dtype=float)
    _check_bucket_alignment(dyn, spec)
    fwd = SolveSpec(spec.method, spec.t0, spec.t1, spec.steps, store_all=False)
    traj = integrate_batch(dyn, xs, theta, fwd)
    a0, g = adjoint_backward(dyn, traj.terminal, theta, spec, seed_adjoints)
    return GradResult(g, a0, "adjoint", 3), traj


def grad_fd(dyn, x0, theta, spec, loss):
    """Central finite differences of loss(terminal) in theta and x0."""
    theta = np.asarray(theta, dtype=float)
    x0 = np.asarray(x0, dtype=float)
    fwd = SolveSpec(spec.method, spec.t0, spec.t1, spec.steps, store_all=False)

    def run(x, th):
        return float(loss(integrate(dyn, x, th, fwd).terminal))

    d_theta = np.zeros_like(theta)
    for i in range(theta.shape[0]):
        step = FD_STEP * max(1.0, abs(theta[i]))
        tp = theta.copy(); tp[i] += step
        tm = theta.copy(); tm[i] -= step
        d_theta[i] = (run(x0, tp) - run(x0, tm)) / (2.0 * step)

    d_x0 = np.zeros_like(x0)
    for i in range(x0.shape[0]):
        step = FD_STEP * max(1.0, abs(x0[i]))
        xp = x0.copy(); xp[i] += step
        xm = x0.copy(); xm[i] -= step
        d_x0[i] = (run(xp, theta) - run(xm, theta)) / (2.0 * step)

    return GradResult(d_theta, d_x0, "finite_diff", 1)
