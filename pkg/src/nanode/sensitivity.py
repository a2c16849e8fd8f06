"""Forward sensitivity analysis and linear time-varying stability diagnostics.

The parameter Jacobian S(t) = dx(t)/dtheta obeys the matrix ODE
S' = A(t) S + B(t) with S(t0) = 0, where A and B are the state and
parameter Jacobians of the dynamics along the trajectory. Co-integrating
x, S and the state transition matrix Phi gives everything the gradient
amplification diagnostics need: when A(t) stays skew-symmetric, Phi stays
orthogonal and the gradient norm cannot blow up through the flow.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import DivergenceError
from .linalg import matexp, spectral_norm
from .odeint import DIVERGENCE_LIMIT, step_euler, step_rk4


@dataclass
class SensitivitySolve:
    snapshots: list  # [(t, S matrix)] at every grid point
    terminal_S: np.ndarray


@dataclass
class STMSolve:
    phi: np.ndarray
    t0: float
    t1: float
    norm_series: list  # [(t, ||Phi(t, t0)||_2)]


@dataclass
class SensitivityReport:
    rows: list = field(default_factory=list)
    # row: (t, norm_S, norm_A, norm_Phi, skew_defect, norm_W)
    diverged: bool = False

    CORE_COLUMNS = ("t", "norm_S", "norm_A", "norm_Phi", "skew_defect")

    def to_csv(self, path, include_weight_norm=False):
        cols = self.CORE_COLUMNS + (("norm_W",) if include_weight_norm else ())
        with open(path, "w") as fh:
            fh.write(",".join(cols) + "\n")
            for row in self.rows:
                fh.write(",".join(repr(v) for v in row[: len(cols)]) + "\n")

    def max_norm(self, column):
        idx = {"norm_S": 1, "norm_A": 2, "norm_Phi": 3, "skew_defect": 4, "norm_W": 5}[column]
        return max((row[idx] for row in self.rows), default=float("nan"))


def _stepper(method):
    return step_euler if method == "euler" else step_rk4


def integrate_sensitivity(dyn, x0, theta, spec):
    """Co-integrate the state and S(t); terminal columns are dx(t1)/dtheta_i."""
    theta = np.asarray(theta, dtype=float)
    n, k = dyn.n, dyn.n_params

    def rhs(y, t):
        x = y[:n]
        s = y[n:].reshape(n, k)
        a = dyn.jac_x(x, t, theta)
        b = dyn.jac_theta(x, t, theta)
        return np.concatenate([dyn.f(x, t, theta), (a @ s + b).reshape(-1)])

    stepper = _stepper(spec.method)
    grid = spec.grid
    h = spec.h
    y = np.concatenate([np.asarray(x0, float), np.zeros(n * k)])
    snapshots = [(float(grid[0]), np.zeros((n, k)))]
    for step in range(spec.steps):
        y, _ = stepper(rhs, y, float(grid[step]), h)
        if not np.all(np.isfinite(y)) or np.max(np.abs(y)) > DIVERGENCE_LIMIT:
            raise DivergenceError(
                f"sensitivity solve diverged at step {step}", step=step,
                time=float(grid[step]),
            )
        snapshots.append((float(grid[step + 1]), y[n:].reshape(n, k).copy()))
    return SensitivitySolve(snapshots, snapshots[-1][1])


def integrate_stm(a_of_t, t0, t1, steps, method="rk4"):
    """State transition matrix Phi(t1, t0) of M' = A(t) M, M(t0) = I."""
    probe = np.asarray(a_of_t(t0), dtype=float)
    n = probe.shape[0]
    stepper = _stepper(method)
    h = (t1 - t0) / steps
    m = np.eye(n)
    norm_series = [(float(t0), spectral_norm(m))]

    def rhs(mat, t):
        return np.asarray(a_of_t(t), dtype=float) @ mat

    for step in range(steps):
        t = t0 + step * h
        m, _ = stepper(rhs, m, t, h)
        if not np.all(np.isfinite(m)) or np.max(np.abs(m)) > DIVERGENCE_LIMIT:
            raise DivergenceError(f"STM diverged at step {step}", step=step, time=t)
        norm_series.append((float(t + h), spectral_norm(m)))
    return STMSolve(m, float(t0), float(t1), norm_series)


def commuting_stm(a_of_t, t0, t1, quad_points):
    """Closed form exp(int A) valid when A(t) commutes with its integral.

    The integral is evaluated by composite Simpson quadrature; callers
    pick quad_points well above the solver resolution so the quadrature
    error sits below the comparison tolerance.
    """
    if quad_points % 2 == 1:
        quad_points += 1
    ts = np.linspace(t0, t1, quad_points + 1)
    h = (t1 - t0) / quad_points
    acc = np.asarray(a_of_t(ts[0]), dtype=float).copy()
    acc += np.asarray(a_of_t(ts[-1]), dtype=float)
    for i in range(1, quad_points):
        w = 4.0 if i % 2 == 1 else 2.0
        acc += w * np.asarray(a_of_t(ts[i]), dtype=float)
    return matexp(acc * (h / 3.0))


def gradient_flow_report(dyn, x0, theta, spec):
    """Norm time-series of S, A, Phi and the skew defect of A.

    Divergence is a finding, not an error: the report is truncated at the
    blow-up step and flagged. Weight-field norms ride along so stability
    contrasts can show whether ||W(t)|| stayed controlled.
    """
    theta = np.asarray(theta, dtype=float)
    n, k = dyn.n, dyn.n_params

    def rhs(y, t):
        x = y[:n]
        s = y[n:n + n * k].reshape(n, k)
        phi = y[n + n * k:].reshape(n, n)
        a = dyn.jac_x(x, t, theta)
        b = dyn.jac_theta(x, t, theta)
        return np.concatenate([
            dyn.f(x, t, theta),
            (a @ s + b).reshape(-1),
            (a @ phi).reshape(-1),
        ])

    def row_at(t, y):
        x = y[:n]
        s = y[n:n + n * k].reshape(n, k)
        phi = y[n + n * k:].reshape(n, n)
        a = dyn.jac_x(x, t, theta)
        a_nrm = np.linalg.norm(a)
        defect = float(np.linalg.norm(a + a.T) / a_nrm) if a_nrm > 0 else 0.0
        w_nrm = max(dyn.weight_norms(t, theta), default=float("nan"))
        return (
            float(t),
            spectral_norm(s) if k > 0 else 0.0,
            spectral_norm(a),
            spectral_norm(phi),
            defect,
            float(w_nrm),
        )

    stepper = _stepper(spec.method)
    grid = spec.grid
    h = spec.h
    y = np.concatenate([np.asarray(x0, float), np.zeros(n * k), np.eye(n).reshape(-1)])
    report = SensitivityReport()
    report.rows.append(row_at(float(grid[0]), y))
    for step in range(spec.steps):
        try:
            y, _ = stepper(rhs, y, float(grid[step]), h)
        except (DivergenceError, FloatingPointError):
            report.diverged = True
            break
        if not np.all(np.isfinite(y)) or np.max(np.abs(y)) > DIVERGENCE_LIMIT:
            report.diverged = True
            break
        report.rows.append(row_at(float(grid[step + 1]), y))
    return report
