import math

import numpy as np
import pytest

from nanode.errors import ContractViolationError, DegenerateVectorError
from nanode.linalg import spectral_norm
from nanode.ortho import (
    GivensWalk,
    HouseholderChain,
    OpCounter,
    OrthoWrappedField,
    chain_apply,
    chain_materialize,
    fit_trig_poly,
    geodesic,
    givens,
    householder_reflect,
    skew_basis,
    walk_materialize,
)
from nanode.timebasis import make_spec


def cofactor_det(m):
    # exact small-N determinant, independent of any factorization
    n = m.shape[0]
    if n == 1:
        return m[0, 0]
    total = 0.0
    for j in range(n):
        minor = np.delete(np.delete(m, 0, axis=0), j, axis=1)
        total += ((-1) ** j) * m[0, j] * cofactor_det(minor)
    return total


def ortho_defect(m):
    return np.linalg.norm(m.T @ m - np.eye(m.shape[0]))


class TestHouseholder:
    def test_axis_reflection(self):
        h = householder_reflect(np.array([1.0, 0.0, 0.0]))
        assert np.array_equal(h, np.diag([-1.0, 1.0, 1.0]))

    def test_direct_formula(self):
        h = householder_reflect(np.array([1.0, 1.0]))
        assert np.max(np.abs(h - np.array([[0.0, -1.0], [-1.0, 0.0]]))) < 1e-15

    def test_reflection_property(self):
        rng = np.random.default_rng(0)
        u = rng.normal(size=5)
        h = householder_reflect(u)
        assert np.max(np.abs(h @ u + u)) < 1e-12
        v = rng.normal(size=5)
        v -= (v @ u) / (u @ u) * u  # project out u
        assert np.max(np.abs(h @ v - v)) < 1e-12

    def test_degenerate_raises(self):
        with pytest.raises(DegenerateVectorError):
            householder_reflect(np.zeros(3))


class TestChain:
    def test_two_axis_chain(self):
        c = HouseholderChain(np.eye(2))
        assert np.array_equal(chain_materialize(c), np.diag([-1.0, -1.0]))
        c = HouseholderChain(np.eye(2), sign=-1)
        assert np.array_equal(chain_materialize(c), np.eye(2))

    def test_apply_examples(self):
        c = HouseholderChain(np.array([[1.0, 0.0, 0.0]]))
        assert np.array_equal(chain_apply(c, np.array([1.0, 2.0, 3.0])),
                              np.array([-1.0, 2.0, 3.0]))
        c = HouseholderChain(np.array([[0.0, 1.0]]))
        assert np.array_equal(chain_apply(c, np.array([1.0, 2.0])),
                              np.array([1.0, -2.0]))

    def test_apply_matches_materialized(self):
        rng = np.random.default_rng(1)
        for sign in (1, -1):
            c = HouseholderChain(rng.normal(size=(6, 6)), sign=sign)
            m = chain_materialize(c)
            for _ in range(3):
                x = rng.normal(size=6)
                assert np.max(np.abs(chain_apply(c, x) - m @ x)) < 1e-12

    def test_orthogonality_large(self):
        rng = np.random.default_rng(2)
        c = HouseholderChain(rng.normal(size=(16, 16)))
        assert ortho_defect(chain_materialize(c)) < 1e-8

    def test_determinant_sign_small_n(self):
        rng = np.random.default_rng(3)
        for n in (2, 3, 4):
            for d in (1, 2, 3):
                for sign in (1, -1):
                    c = HouseholderChain(rng.normal(size=(d, n)), sign=sign)
                    det = cofactor_det(chain_materialize(c))
                    want = ((-1.0) ** d) * (sign ** n)
                    assert det == pytest.approx(want, abs=1e-10)

    def test_flop_count_linear_in_depth(self):
        rng = np.random.default_rng(4)
        for n, d in ((8, 3), (16, 16), (32, 5)):
            c = HouseholderChain(rng.normal(size=(d, n)))
            counter = OpCounter()
            chain_apply(c, rng.normal(size=n), counter)
            assert counter.total == 4 * d * n

    def test_zero_vector_rejected(self):
        vecs = np.eye(3)
        vecs[1] = 0.0
        with pytest.raises(DegenerateVectorError):
            HouseholderChain(vecs)


class TestGivens:
    def test_zero_angle(self):
        assert np.array_equal(givens(4, 1, 3, 0.0), np.eye(4))

    def test_sign_convention(self):
        # entry [i, j] is +sin(theta)
        g = givens(2, 0, 1, math.pi / 2)
        assert np.max(np.abs(g - np.array([[0.0, 1.0], [-1.0, 0.0]]))) < 1e-15

    def test_inverse_rotation(self):
        for th in (0.3, 1.1, 2.9):
            g = givens(5, 1, 4, th) @ givens(5, 1, 4, -th)
            assert np.max(np.abs(g - np.eye(5))) < 1e-12

    def test_index_contract(self):
        with pytest.raises(ContractViolationError):
            givens(3, 2, 2, 0.1)
        with pytest.raises(ContractViolationError):
            givens(3, 1, 3, 0.1)


class TestWalk:
    def test_single_step(self):
        w = GivensWalk(np.eye(4), [(0, 2)], 0.8)
        assert np.max(np.abs(walk_materialize(w) - givens(4, 0, 2, 0.8))) < 1e-14

    def test_disjoint_pairs_commute(self):
        th = 0.6
        a = walk_materialize(GivensWalk(np.eye(4), [(0, 1), (2, 3)], th))
        b = walk_materialize(GivensWalk(np.eye(4), [(2, 3), (0, 1)], th))
        assert np.max(np.abs(a - b)) < 1e-12

    def test_orthogonal(self):
        rng = np.random.default_rng(5)
        q, _ = np.linalg.qr(rng.normal(size=(6, 6)))
        w = GivensWalk(q, [(0, 3), (1, 2), (0, 5), (2, 4)], 1.234)
        assert ortho_defect(walk_materialize(w)) < 1e-10

    def test_entries_are_trig_polynomials(self):
        # k = 3 walk: every entry follows a degree-3 trig polynomial in theta
        pairs = [(0, 1), (1, 2), (0, 2)]
        angles = np.linspace(0.0, 2.0 * math.pi, 13, endpoint=False)
        samples = np.stack([
            walk_materialize(GivensWalk(np.eye(3), pairs, th)) for th in angles
        ])
        for i in range(3):
            for j in range(3):
                _, resid = fit_trig_poly(angles, samples[:, i, j], 3)
                assert resid < 1e-8

    def test_pair_range_contract(self):
        with pytest.raises(ContractViolationError):
            GivensWalk(np.eye(3), [(0, 3)], 0.1)


class TestGeodesic:
    def test_at_zero(self):
        rng = np.random.default_rng(6)
        q, _ = np.linalg.qr(rng.normal(size=(4, 4)))
        assert np.max(np.abs(geodesic(q, np.zeros((4, 4)), 0.0) - q)) < 1e-12

    def test_canonical_direction_is_givens(self):
        # exp(t * H_{0,1}) equals the +t rotation under the [i,j]=+sin
        # convention (H[0,1] = +1 pairs with G[0,1] = +sin t)
        for t in (0.25, 1.3, -0.7):
            got = geodesic(np.eye(4), skew_basis(4, 0, 1), t)
            assert np.max(np.abs(got - givens(4, 0, 1, t))) < 1e-10

    def test_stays_orthogonal(self):
        rng = np.random.default_rng(7)
        m = rng.normal(size=(5, 5))
        omega = m - m.T
        gamma = geodesic(np.eye(5), omega, 2.0)
        assert ortho_defect(gamma) < 1e-9

    def test_contracts(self):
        rng = np.random.default_rng(8)
        with pytest.raises(ContractViolationError):
            geodesic(np.eye(3) * 2.0, skew_basis(3, 0, 1), 1.0)
        m = rng.normal(size=(3, 3))
        with pytest.raises(ContractViolationError):
            geodesic(np.eye(3), m + m.T + np.eye(3), 1.0)


class TestOrthoWrappedField:
    def _coeffs(self, field, rng, scheme="fanin"):
        return np.concatenate([
            field.spec.init_coeffs(rng, field.n, scheme)
            for _ in range(field.n * field.n)
        ])

    def test_constant_axis_vectors(self):
        field = OrthoWrappedField(3, make_spec("constant", 0))
        coeffs = np.eye(3).reshape(-1)  # u_i = e_i
        w = field.eval(0.5, coeffs)
        assert np.array_equal(w, np.diag([-1.0, -1.0, -1.0]))

    def test_order_zero_is_time_independent(self):
        rng = np.random.default_rng(9)
        field = OrthoWrappedField(4, make_spec("constant", 0))
        coeffs = rng.normal(size=field.n_coeffs)
        w0 = field.eval(0.0, coeffs)
        assert np.array_equal(w0, field.eval(0.7, coeffs))
        assert np.array_equal(w0, field.eval(1.0, coeffs))

    def test_orthogonal_at_sampled_times(self):
        rng = np.random.default_rng(10)
        spec = make_spec("chebyshev", 4)
        field = OrthoWrappedField(6, spec)
        coeffs = rng.normal(size=field.n_coeffs)  # scale-1 coefficients
        for t in np.linspace(0.0, 1.0, 50):
            w = field.eval(t, coeffs)
            assert ortho_defect(w) < 1e-8
            assert abs(spectral_norm(w) - 1.0) < 1e-8

    def test_degenerate_vector_becomes_identity(self):
        field = OrthoWrappedField(3, make_spec("constant", 0))
        vectors = np.eye(3)
        vectors[1] = 0.0  # u_2 collapses: its reflection drops out
        w = field.eval(0.3, vectors.reshape(-1))
        assert np.array_equal(w, np.diag([-1.0, 1.0, -1.0]))
        assert ortho_defect(w) < 1e-12

    def test_du_matches_finite_differences(self):
        rng = np.random.default_rng(11)
        field = OrthoWrappedField(3, make_spec("trigonometric", 1))
        coeffs = self._coeffs(field, rng)
        coeffs += rng.normal(0, 0.1, coeffs.shape)
        t = 0.4
        jac = field.coeff_jacobian(t, coeffs)
        h = 1e-6
        for idx in range(0, field.n_coeffs, 5):
            cp = coeffs.copy(); cp[idx] += h
            cm = coeffs.copy(); cm[idx] -= h
            fd = (field.eval(t, cp) - field.eval(t, cm)).reshape(-1) / (2 * h)
            assert np.max(np.abs(jac[:, idx] - fd)) < 1e-6

    def test_vjp_matches_jacobian(self):
        rng = np.random.default_rng(12)
        field = OrthoWrappedField(4, make_spec("legendre", 2))
        coeffs = self._coeffs(field, rng)
        up = rng.normal(size=(4, 4))
        got = field.coeff_vjp(0.6, coeffs, up)
        want = field.coeff_jacobian(0.6, coeffs).T @ up.reshape(-1)
        assert np.max(np.abs(got - want)) < 1e-12
