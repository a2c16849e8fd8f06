"""Orthogonal-group machinery: Householder chains, Givens walks, geodesics.

Products of Householder reflections reach every orthogonal matrix, so a
chain of reflection vectors is an unconstrained parameterization of O(N).
Wrapping each reflection-vector coordinate in a time basis gives a weight
field W(t) that is exactly orthogonal at every t, which is the stable
counterpart of a raw per-entry field whose norm can drift arbitrarily.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractViolationError, DegenerateVectorError
from .linalg import as_matrix, as_vector, matexp

_MIN_REFLECT_NORM = 1e-12
# Threshold under which a time-varying reflection vector is treated as
# degenerate and its reflection replaced by the identity.
DEGENERATE_NORM = 1e-8


class OpCounter:
    """Tallies floating-point multiplies/adds for the apply benchmarks."""

    def __init__(self):
        self.mul = 0
        self.add = 0

    @property
    def total(self):
        return self.mul + self.add


def householder_reflect(u):
    """H(u) = I - 2 u u^T / ||u||^2; symmetric, orthogonal, det -1."""
    u = as_vector(u)
    g = float(u @ u)
    if g <= _MIN_REFLECT_NORM ** 2:
        raise DegenerateVectorError("reflection vector is numerically zero")
    h = np.eye(u.shape[0])
    h -= (2.0 / g) * np.outer(u, u)
    return h


@dataclass
class HouseholderChain:
    """Ordered reflection vectors u_1..u_d (rows) and a sign in {-1, +1}."""

    vectors: np.ndarray  # (d, N)
    sign: int = 1

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors, dtype=float)
        if self.vectors.ndim != 2 or self.vectors.shape[0] < 1:
            raise ContractViolationError("chain needs a (d, N) array of vectors")
        if self.sign not in (-1, 1):
            raise ContractViolationError("chain sign must be -1 or +1")
        norms = np.linalg.norm(self.vectors, axis=1)
        if np.any(norms <= _MIN_REFLECT_NORM):
            raise DegenerateVectorError("chain contains a numerically zero vector")

    @property
    def depth(self):
        return self.vectors.shape[0]

    @property
    def dim(self):
        return self.vectors.shape[1]


def chain_apply(chain, x, counter=None):
    """Apply the chain to a vector without materializing any matrix.

    Reflections act right-to-left, matching the product
    sign * H(u_1) ... H(u_d). Cost is 4*N flops per reflection (counted
    against a cached 2/||u||^2), linear in depth times dimension.
    """
    x = as_vector(x)
    if x.shape[0] != chain.dim:
        raise ContractViolationError("chain/vector dimension mismatch")
    y = x.copy()
    for u in chain.vectors[::-1]:
        scale = 2.0 / float(u @ u)
        c = scale * float(u @ y)
        y -= c * u
        if counter is not None:
            n = u.shape[0]
            counter.mul += 2 * n  # dot products and the axpy multiplies
            counter.add += 2 * n  # dot accumulation, c scaling, axpy adds
    if chain.sign == -1:
        y = -y
    return y


def chain_materialize(chain):
    """Dense orthogonal matrix for the chain: reflections applied to I."""
    m = np.eye(chain.dim)
    for u in chain.vectors[::-1]:
        scale = 2.0 / float(u @ u)
        m -= np.outer(scale * u, u @ m)
    return chain.sign * m


def givens(n, i, j, theta):
    """Planar rotation in the (e_i, e_j) plane; entry [i, j] is +sin(theta)."""
    if not (0 <= i < j < n):
        raise ContractViolationError(f"givens indices need 0 <= i < j < n, got ({i}, {j}, n={n})")
    g = np.eye(n)
    c, s = np.cos(theta), np.sin(theta)
    g[i, i] = g[j, j] = c
    g[i, j] = s
    g[j, i] = -s
    return g


@dataclass
class GivensWalk:
    """Equal-angle walk: start point Q right-multiplied by k rotations."""

    start: np.ndarray  # (N, N), orthogonal
    pairs: list = field(default_factory=list)  # [(i, j), ...] with i < j
    angle: float = 0.0

    def __post_init__(self):
        self.start = as_matrix(self.start)
        n = self.start.shape[0]
        if self.start.shape[1] != n:
            raise ContractViolationError("walk start must be square")
        for (i, j) in self.pairs:
            if not (0 <= i < j < n):
                raise ContractViolationError(f"walk pair ({i}, {j}) out of range for N={n}")


def walk_materialize(walk):
    """Ordered product Q G_{i1,j1} ... G_{ik,jk}, all at the shared angle.

    Right-multiplying by a Givens rotation only mixes two columns, so the
    product is accumulated with column operations.
    """
    w = walk.start.copy()
    c, s = np.cos(walk.angle), np.sin(walk.angle)
    for (i, j) in walk.pairs:
        col_i = w[:, i].copy()
        col_j = w[:, j].copy()
        w[:, i] = c * col_i - s * col_j
        w[:, j] = s * col_i + c * col_j
    return w


def skew_basis(n, i, j):
    """Canonical tangent-space element: [i, j] = 1, [j, i] = -1."""
    if not (0 <= i < j < n):
        raise ContractViolationError(f"skew basis indices out of range: ({i}, {j})")
    h = np.zeros((n, n))
    h[i, j] = 1.0
    h[j, i] = -1.0
    return h


def geodesic(q, omega, t):
    """Point gamma(t) = Q exp(t Omega) on the orthogonal group."""
    q = as_matrix(q)
    omega = as_matrix(omega)
    n = q.shape[0]
    if q.shape != (n, n) or omega.shape != (n, n):
        raise ContractViolationError("geodesic needs square Q and Omega of equal size")
    if np.linalg.norm(q.T @ q - np.eye(n)) > 1e-8:
        raise ContractViolationError("geodesic start point is not orthogonal")
    if np.max(np.abs(omega + omega.T)) > 1e-12 * max(1.0, np.max(np.abs(omega))):
        raise ContractViolationError("geodesic direction is not skew-symmetric")
    return q @ matexp(t * omega)


def fit_trig_poly(angles, values, degree):
    """Least-squares fit of samples by a degree-d trig polynomial.

    Returns (coefficients, max_abs_residual). The design includes the
    constant term: identity entries of short walks are constant in the
    angle, so the pure-harmonic form would not close.
    """
    angles = np.asarray(angles, dtype=float)
    values = np.asarray(values, dtype=float)
    cols = [np.ones_like(angles)]
    for s in range(1, degree + 1):
        cols.append(np.cos(s * angles))
    for s in range(1, degree + 1):
        cols.append(np.sin(s * angles))
    design = np.stack(cols, axis=1)
    coeffs, *_ = np.linalg.lstsq(design, values, rcond=None)
    residual = float(np.max(np.abs(design @ coeffs - values)))
    return coeffs, residual


class OrthoWrappedField:
    """Time-varying orthogonal matrix from basis-valued reflection vectors.

    Coefficients live in a (N, N, m) tensor: row i holds the bases for
    the coordinates of reflection vector u_i(t). A vector whose norm
    falls under DEGENERATE_NORM at some t contributes the identity
    instead of a reflection (the unconstrained parameterization excludes
    exact zeros, so evaluation must not blow up near them).
    """

    def __init__(self, n, spec):
        self.n = int(n)
        self.spec = spec
        self.n_coeffs = n * n * spec.n_coeffs

    def vectors_at(self, t, coeffs):
        """All u_i(t) as rows of an (N, N) matrix."""
        c = np.asarray(coeffs).reshape(self.n, self.n, self.spec.n_coeffs)
        z = self.spec.features(t)
        return c @ z

    def eval(self, t, coeffs):
        u = self.vectors_at(t, coeffs)
        return _reflect_product(u, self.n)

    def eval_with_du(self, t, coeffs):
        """Field value plus dW/du as a (N, N, N, N) tensor.

        Index [i, c] gives the matrix derivative of W with respect to
        coordinate c of reflection vector u_i, assembled from prefix and
        suffix products so each slot costs one pair of outer products.
        """
        u = self.vectors_at(t, coeffs)
        n = self.n
        active = [k for k in range(n) if np.linalg.norm(u[k]) >= DEGENERATE_NORM]
        prefix = [np.eye(n)]
        for k in active:
            prefix.append(prefix[-1] @ householder_reflect(u[k]))
        w = prefix[-1]

        du = np.zeros((n, n, n, n))
        suffix = np.eye(n)
        for pos in range(len(active) - 1, -1, -1):
            k = active[pos]
            p = prefix[pos]
            uk = u[k]
            g = float(uk @ uk)
            a = p @ uk
            b = suffix.T @ uk  # row vector u^T S as a column
            for c in range(n):
                term = -(2.0 / g) * (np.outer(p[:, c], b) + np.outer(a, suffix[c, :]))
                term += (4.0 * uk[c] / g**2) * np.outer(a, b)
                du[k, c] = term
            suffix = householder_reflect(uk) @ suffix
        return w, du, u

    def coeff_jacobian(self, t, coeffs):
        """d vec(W) / d coeffs, shape (N*N, n_coeffs)."""
        _, du, _ = self.eval_with_du(t, coeffs)
        z = self.spec.features(t)
        m = self.spec.n_coeffs
        n = self.n
        # du[i, c] -> columns for the m coefficients of basis (i, c)
        jac = np.einsum("icab,m->abicm", du, z).reshape(n * n, n * n * m)
        return jac

    def coeff_vjp(self, t, coeffs, upstream):
        """Gradient of <upstream, W(t)> with respect to the coefficients."""
        _, du, _ = self.eval_with_du(t, coeffs)
        z = self.spec.features(t)
        dl_du = np.einsum("icab,ab->ic", du, upstream)
        return np.einsum("ic,m->icm", dl_du, z).reshape(-1)


def _reflect_product(u_rows, n):
    m = np.eye(n)
    for k in range(n - 1, -1, -1):
        u = u_rows[k]
        g = float(u @ u)
        if g < DEGENERATE_NORM ** 2:
            continue
        m -= np.outer((2.0 / g) * u, u @ m)
    return m
