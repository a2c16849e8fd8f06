"""Fixed-step explicit integrators on a uniform time grid.

Only Euler and the classical 4-stage Runge-Kutta scheme are provided;
the discrete map they define is exactly what the reverse-mode gradient
code differentiates, so adaptive stepping is deliberately absent.
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import ContractViolationError, DivergenceError

METHODS = ("euler", "rk4")

# States with a norm beyond this are treated as blown up.
DIVERGENCE_LIMIT = 1e12


@dataclass(frozen=True)
class SolveSpec:
    method: str = "rk4"
    t0: float = 0.0
    t1: float = 1.0
    steps: int = 10
    store_all: bool = True

    def __post_init__(self):
        if self.method not in METHODS:
            raise ContractViolationError(f"unknown method {self.method!r}")
        if not (self.t1 > self.t0):
            raise ContractViolationError("need t1 > t0")
        if self.steps < 1:
            raise ContractViolationError("steps must be positive")
        h = (self.t1 - self.t0) / self.steps
        if not math.isfinite(h) or h <= 0:
            raise ContractViolationError("step size must be finite and positive")

    @property
    def h(self):
        return (self.t1 - self.t0) / self.steps

    @property
    def grid(self):
        return np.linspace(self.t0, self.t1, self.steps + 1)


@dataclass
class Trajectory:
    grid: np.ndarray
    states: np.ndarray | None  # (L+1, n) when stored, else None
    terminal: np.ndarray
    eval_count: int


def _check_state(x, step, t):
    finite = np.isfinite(x)
    if finite.all() and np.max(np.abs(x)) <= DIVERGENCE_LIMIT:
        return
    example = None
    if x.ndim == 2:
        capped = np.where(finite, np.abs(x), np.inf)
        bad = np.where(~finite.all(axis=1) | (capped.max(axis=1) > DIVERGENCE_LIMIT))[0]
        example = int(bad[0]) if bad.size else None
    raise DivergenceError(
        f"state diverged at step {step} (t={t:.6g})"
        + (f" for example {example}" if example is not None else ""),
        step=step, time=t, example=example,
    )


def step_euler(f, x, t, h):
    return x + h * f(x, t), 1


def step_rk4(f, x, t, h):
    k1 = f(x, t)
    k2 = f(x + 0.5 * h * k1, t + 0.5 * h)
    k3 = f(x + 0.5 * h * k2, t + 0.5 * h)
    k4 = f(x + h * k3, t + h)
    return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4), 4


def _drive(f, x0, spec, record=None):
    """Shared stepping loop; `record` collects the state after each step."""
    stepper = step_euler if spec.method == "euler" else step_rk4
    grid = spec.grid
    h = spec.h
    x = np.array(x0, dtype=float)
    evals = 0
    for k in range(spec.steps):
        x, used = stepper(f, x, grid[k], h)
        evals += used
        _check_state(x, k, float(grid[k]))
        if record is not None:
            record(k + 1, x)
    return x, evals


def integrate(dyn, x0, theta, spec):
    """Trajectory of x' = f(x, t, theta) from x0 over the spec's grid."""
    x0 = np.asarray(x0, dtype=float)
    if not np.all(np.isfinite(x0)):
        raise ContractViolationError("initial state must be finite")

    states = None
    if spec.store_all:
        states = np.empty((spec.steps + 1, x0.shape[0]))
        states[0] = x0

    def record(k, x):
        states[k] = x

    rhs = lambda x, t: dyn.f(x, t, theta)
    terminal, evals = _drive(rhs, x0, spec, record if spec.store_all else None)
    return Trajectory(spec.grid, states, terminal, evals)


def integrate_batch(dyn, xs, theta, spec):
    """Batched trajectory; rows evolve independently (vectorized RHS)."""
    xs = np.asarray(xs, dtype=float)
    states = None
    if spec.store_all:
        states = np.empty((spec.steps + 1,) + xs.shape)
        states[0] = xs

    def record(k, x):
        states[k] = x

    rhs = lambda x, t: dyn.f_batch(x, t, theta)
    terminal, evals = _drive(rhs, xs, spec, record if spec.store_all else None)
    return Trajectory(spec.grid, states, terminal, evals)


def integrate_rhs(rhs, y0, t0, t1, steps, method="rk4"):
    """Low-level driver for arbitrary callables; allows t1 < t0.

    Used by the backward (adjoint) pass and the matrix-ODE solvers where
    the public SolveSpec orientation contract does not apply. Arrays of
    any shape are supported as the state.
    """
    stepper = step_euler if method == "euler" else step_rk4
    h = (t1 - t0) / steps
    y = np.array(y0, dtype=float)
    for k in range(steps):
        t = t0 + k * h
        y, _ = stepper(rhs, y, t, h)
        if not np.all(np.isfinite(y)) or np.max(np.abs(y)) > DIVERGENCE_LIMIT:
            raise DivergenceError(
                f"state diverged at step {k} (t={t:.6g})", step=k, time=t
            )
    return y


def convergence_order(dyn, x0, theta, method, t0=0.0, t1=1.0, coarse=32, ref_steps=4096):
    """Empirical order from errors at L and 2L against a fine reference."""
    theta = np.asarray(theta, dtype=float)

    def terminal(steps):
        spec = SolveSpec(method=method, t0=t0, t1=t1, steps=steps, store_all=False)
        return integrate(dyn, x0, theta, spec).terminal

    ref = terminal(ref_steps)
    e1 = float(np.linalg.norm(terminal(coarse) - ref))
    e2 = float(np.linalg.norm(terminal(2 * coarse) - ref))
    if e1 == 0.0 or e2 == 0.0:
        return float("inf")
    return math.log2(e1 / e2)
