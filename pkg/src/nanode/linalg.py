"""Dense linear algebra kernels used throughout the package.

Everything here operates on plain float64 numpy arrays: matrices are 2-D,
vectors 1-D. The matrix exponential and spectral norm are implemented
in-module (scaling-and-squaring, power iteration) so their behaviour is
fully pinned down; numpy supplies only array storage and matmul.
"""

import math

import numpy as np

from .errors import ContractViolationError

# Taylor order for the scaled exponential core. With the scaled norm
# below 0.5 the truncation error is ~0.5**17/17! < 1e-19.
_EXP_TAYLOR_ORDER = 16

_POWER_ITER_CAP = 200
_POWER_ITER_TOL = 1e-10


def as_matrix(a):
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] < 1 or a.shape[1] < 1:
        raise ContractViolationError(f"expected a 2-D matrix, got shape {a.shape}")
    return a


def as_vector(x):
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or x.shape[0] < 1:
        raise ContractViolationError(f"expected a 1-D vector, got shape {x.shape}")
    return x


def matvec(a, x):
    """Matrix-vector product with an explicit dimension check."""
    a = as_matrix(a)
    x = as_vector(x)
    if a.shape[1] != x.shape[0]:
        raise ContractViolationError(
            f"matvec dimension mismatch: {a.shape[0]}x{a.shape[1]} @ {x.shape[0]}"
        )
    return a @ x


def matexp(a):
    """Matrix exponential by scaling-and-squaring with a Taylor core.

    The input is scaled by 2**-s so its Frobenius norm drops below 0.5,
    the exponential of the scaled matrix is evaluated by a degree-16
    Taylor polynomial (Horner form), and the result is squared s times.
    Accurate to ~1e-12 relative for the moderate norms (||A|| <= 10) and
    sizes this package deals in.
    """
    a = as_matrix(a)
    n, m = a.shape
    if n != m:
        raise ContractViolationError(f"matexp requires a square matrix, got {n}x{m}")

    nrm = float(np.linalg.norm(a))
    squarings = 0
    if nrm > 0.5:
        squarings = max(0, int(math.ceil(math.log2(nrm / 0.5))))
    scaled = a / (2.0 ** squarings)

    eye = np.eye(n)
    result = eye + scaled / _EXP_TAYLOR_ORDER
    for k in range(_EXP_TAYLOR_ORDER - 1, 0, -1):
        result = eye + (scaled @ result) / k
    for _ in range(squarings):
        result = result @ result
    return result


def spectral_norm(a):
    """Largest singular value via power iteration on A^T A.

    Uses a fixed seeded start vector and a hard iteration cap so repeated
    calls are bit-reproducible. The Rayleigh estimate converges fast for
    the well-separated or near-isometric spectra that arise here.
    """
    a = as_matrix(a)
    if not np.all(np.isfinite(a)):
        raise ContractViolationError("spectral_norm requires finite entries")
    n = a.shape[1]
    v = np.random.default_rng(0x5EED).standard_normal(n)
    v /= np.linalg.norm(v)

    sigma = 0.0
    for _ in range(_POWER_ITER_CAP):
        w = a @ v
        sigma_new = float(np.linalg.norm(w))
        if sigma_new == 0.0:
            return 0.0
        v = a.T @ w
        v_nrm = float(np.linalg.norm(v))
        if v_nrm == 0.0:
            return sigma_new
        v /= v_nrm
        if abs(sigma_new - sigma) <= _POWER_ITER_TOL * max(1.0, sigma_new):
            return sigma_new
        sigma = sigma_new
    return sigma
