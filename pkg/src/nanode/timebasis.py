"""Scalar functions of time that parameterize individual weight entries.

Every basis kind is linear in its coefficient vector:

    phi(t; alpha) = alpha . z(t)

with z(t) the kind's feature vector (an indicator for the bucketed kind,
polynomial values for the polynomial families, harmonics for the
trigonometric kind, frozen random cosines for the random-feature kind).
That linearity is what keeps coefficient gradients cheap: they are just
the features scaled by the upstream signal.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractViolationError

KINDS = (
    "constant",
    "bucketed",
    "monomial",
    "chebyshev",
    "legendre",
    "trigonometric",
    "random_feature",
)

POLYNOMIAL_KINDS = ("monomial", "chebyshev", "legendre")

# Relative slack on the [0, horizon] domain check; fixed-step solvers can
# land a stage time one ulp past the endpoint.
_DOMAIN_TOL = 1e-9


@dataclass(frozen=True)
class ParamView:
    """Half-open window [offset, offset+length) into a flat parameter vector."""

    name: str
    offset: int
    length: int

    @property
    def stop(self):
        return self.offset + self.length


class ParamLayout:
    """Allocates disjoint ParamViews that exactly cover a parameter vector."""

    def __init__(self):
        self.views = []
        self.total = 0

    def add(self, name, length):
        view = ParamView(name, self.total, int(length))
        self.views.append(view)
        self.total += view.length
        return view

    def check_covering(self):
        pos = 0
        for v in self.views:
            if v.offset != pos:
                raise ContractViolationError(f"param views not contiguous at {v.name}")
            pos = v.stop
        if pos != self.total:
            raise ContractViolationError("param views do not cover the vector")


@dataclass(frozen=True)
class BasisSpec:
    """Shape of one basis family: everything except the learned coefficients."""

    kind: str
    order: int
    horizon: float = 1.0
    freq_scale: float = 1.0
    # Frozen random-feature draws; None for every other kind.
    frozen_freq: np.ndarray | None = field(default=None, compare=False)
    frozen_phase: np.ndarray | None = field(default=None, compare=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ContractViolationError(f"unknown basis kind {self.kind!r}")
        if self.order < 0:
            raise ContractViolationError("basis order must be >= 0")
        if self.kind != "constant" and self.kind != "trigonometric" and self.order < 1:
            raise ContractViolationError(f"{self.kind} basis needs order >= 1")
        if self.horizon <= 0:
            raise ContractViolationError("horizon must be positive")
        if self.freq_scale <= 0:
            raise ContractViolationError("freq_scale must be positive")
        if self.kind == "random_feature":
            if self.frozen_freq is None or self.frozen_phase is None:
                raise ContractViolationError("random_feature needs frozen draws")
            if len(self.frozen_freq) != self.order or len(self.frozen_phase) != self.order:
                raise ContractViolationError("frozen draws must have length = order")
        elif self.frozen_freq is not None or self.frozen_phase is not None:
            raise ContractViolationError("frozen draws are random_feature-only")

    @property
    def n_coeffs(self):
        if self.kind == "constant":
            return 1
        if self.kind == "trigonometric":
            return 2 * self.order + 1
        return self.order

    def _check_domain(self, t):
        tol = _DOMAIN_TOL * max(1.0, self.horizon)
        if t < -tol or t > self.horizon + tol:
            raise ContractViolationError(
                f"time {t} outside basis domain [0, {self.horizon}]"
            )
        return min(max(t, 0.0), self.horizon)

    def features(self, t):
        """Feature vector z(t), length n_coeffs."""
        t = self._check_domain(float(t))
        if self.kind == "constant":
            return np.ones(1)
        if self.kind == "bucketed":
            z = np.zeros(self.order)
            z[bucket_index(t, self.order, self.horizon)] = 1.0
            return z
        if self.kind in POLYNOMIAL_KINDS:
            x = 2.0 * t / self.horizon - 1.0
            return _poly_values(self.kind, self.order, x)
        if self.kind == "trigonometric":
            w = self.freq_scale
            d = self.order
            z = np.empty(2 * d + 1)
            z[0] = 1.0
            for n in range(1, d + 1):
                z[n] = math.cos(n * w * t)
                z[d + n] = math.sin(n * w * t)
            return z
        # random_feature
        return np.cos(self.frozen_freq * t + self.frozen_phase)

    def dfeatures_dt(self, t):
        """Entrywise time derivative of z(t); zero inside a bucket."""
        t = self._check_domain(float(t))
        if self.kind == "constant" or self.kind == "bucketed":
            return np.zeros(self.n_coeffs)
        if self.kind in POLYNOMIAL_KINDS:
            x = 2.0 * t / self.horizon - 1.0
            return _poly_derivs(self.kind, self.order, x) * (2.0 / self.horizon)
        if self.kind == "trigonometric":
            w = self.freq_scale
            d = self.order
            dz = np.empty(2 * d + 1)
            dz[0] = 0.0
            for n in range(1, d + 1):
                dz[n] = -n * w * math.sin(n * w * t)
                dz[d + n] = n * w * math.cos(n * w * t)
            return dz
        return -self.frozen_freq * np.sin(self.frozen_freq * t + self.frozen_phase)

    def init_coeffs(self, rng, fan_in, scheme="fanin"):
        """Fresh coefficient vector.

        "fanin": the constant-level slots are drawn N(0, 1/fan_in) and all
        time-varying slots start at zero, so a freshly built model is (up
        to the random-feature kind, which has no constant slot) an
        autonomous ODE. "scale1": every slot is drawn N(0, 1), which is
        the deliberately ill-conditioned setting used by the stability
        contrast experiment.
        """
        m = self.n_coeffs
        if scheme == "scale1":
            return rng.normal(0.0, 1.0, m)
        if scheme != "fanin":
            raise ContractViolationError(f"unknown init scheme {scheme!r}")
        std = 1.0 / math.sqrt(fan_in)
        c = np.zeros(m)
        if self.kind == "bucketed":
            c[:] = rng.normal(0.0, std, m)
        elif self.kind == "random_feature":
            # No constant slot exists; spread a small time-varying start
            # across the features instead (variance ~1/fan_in overall).
            c[:] = rng.normal(0.0, std / math.sqrt(m), m)
        else:
            c[0] = rng.normal(0.0, std)
        return c

    def penalty_weights(self, freq_weighted=False):
        """Per-slot weights for the coefficient L2 penalty.

        Constant-level slots (and the whole bucketed kind, which has no
        frequency structure) are exempt. With freq_weighted the slots are
        weighted by squared harmonic index, damping high frequencies
        harder.
        """
        w = np.zeros(self.n_coeffs)
        if self.kind in ("constant", "bucketed"):
            return w
        if self.kind in POLYNOMIAL_KINDS:
            for n in range(1, self.order):
                w[n] = n * n if freq_weighted else 1.0
        elif self.kind == "trigonometric":
            d = self.order
            for n in range(1, d + 1):
                w[n] = w[d + n] = n * n if freq_weighted else 1.0
        else:  # random_feature: every slot oscillates at frequency zeta_k
            w[:] = self.frozen_freq ** 2 if freq_weighted else 1.0
        return w


def bucket_index(t, d, horizon):
    """Left-closed uniform buckets with the right endpoint clamped."""
    return min(int(t * d / horizon), d - 1)


def make_spec(kind, order, horizon=1.0, freq_scale=1.0, rng=None):
    """Build a BasisSpec, drawing the random-feature frequencies if needed.

    The draws come once from `rng` and are frozen into the spec, so a
    model rebuilt from the same run seed reproduces them exactly.
    """
    if kind == "random_feature":
        if rng is None:
            raise ContractViolationError("random_feature spec needs an rng")
        freq = rng.normal(0.0, math.sqrt(order), order)
        phase = rng.uniform(0.0, 2.0 * math.pi, order)
        return BasisSpec(kind, order, horizon, freq_scale, freq, phase)
    return BasisSpec(kind, order, horizon, freq_scale)


class TimeBasis:
    """One scalar weight trajectory: a BasisSpec plus its coefficients.

    `coeffs` may be a view into a model-global parameter vector; the
    basis never copies it, so optimizer updates are visible immediately.
    """

    def __init__(self, spec, coeffs):
        coeffs = np.asarray(coeffs, dtype=float)
        if coeffs.shape != (spec.n_coeffs,):
            raise ContractViolationError(
                f"coeffs shape {coeffs.shape} != ({spec.n_coeffs},) for {spec.kind}"
            )
        self.spec = spec
        self.coeffs = coeffs

    def eval(self, t):
        return float(self.coeffs @ self.spec.features(t))

    def grad_coeffs(self, t, upstream=1.0):
        """d phi / d alpha scaled by the upstream signal."""
        return upstream * self.spec.features(t)

    def time_derivative(self, t):
        return float(self.coeffs @ self.spec.dfeatures_dt(t))


def _poly_values(kind, count, x):
    """First `count` members of the family at x in [-1, 1], by recurrence."""
    z = np.empty(count)
    z[0] = 1.0
    if count == 1:
        return z
    z[1] = x
    for n in range(1, count - 1):
        if kind == "monomial":
            z[n + 1] = z[n] * x
        elif kind == "chebyshev":
            z[n + 1] = 2.0 * x * z[n] - z[n - 1]
        else:  # legendre
            z[n + 1] = ((2 * n + 1) * x * z[n] - n * z[n - 1]) / (n + 1)
    return z


def _poly_derivs(kind, count, x):
    """Derivatives d z_n / dx, by differentiating the recurrences."""
    z = _poly_values(kind, count, x)
    dz = np.zeros(count)
    if count == 1:
        return dz
    dz[1] = 1.0
    for n in range(1, count - 1):
        if kind == "monomial":
            # z[n] is x**n, so d(x**(n+1))/dx = (n+1) z[n]
            dz[n + 1] = (n + 1) * z[n]
        elif kind == "chebyshev":
            dz[n + 1] = 2.0 * z[n] + 2.0 * x * dz[n] - dz[n - 1]
        else:  # legendre
            dz[n + 1] = ((2 * n + 1) * (z[n] + x * dz[n]) - n * dz[n - 1]) / (n + 1)
    return dz
