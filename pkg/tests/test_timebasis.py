import math

import numpy as np
import pytest

from nanode.errors import ContractViolationError
from nanode.timebasis import (
    BasisSpec,
    ParamLayout,
    TimeBasis,
    bucket_index,
    make_spec,
)

# explicit low-degree tables for cross-checking the recurrences
CHEB_TABLE = [
    lambda x: 1.0,
    lambda x: x,
    lambda x: 2 * x * x - 1,
    lambda x: 4 * x ** 3 - 3 * x,
]
LEG_TABLE = [
    lambda x: 1.0,
    lambda x: x,
    lambda x: (3 * x * x - 1) / 2,
    lambda x: (5 * x ** 3 - 3 * x) / 2,
]


def fd_grad_coeffs(basis, t, h=1e-6):
    g = np.zeros_like(basis.coeffs)
    for i in range(len(g)):
        old = basis.coeffs[i]
        basis.coeffs[i] = old + h
        up = basis.eval(t)
        basis.coeffs[i] = old - h
        dn = basis.eval(t)
        basis.coeffs[i] = old
        g[i] = (up - dn) / (2 * h)
    return g


class TestEval:
    def test_trig_at_zero(self):
        b = TimeBasis(make_spec("trigonometric", 1), np.array([0.5, 1.0, 2.0]))
        assert b.eval(0.0) == pytest.approx(1.5, abs=1e-15)

    def test_monomial_at_right_endpoint(self):
        # horizon 1 maps t=1 to x=1
        b = TimeBasis(make_spec("monomial", 3), np.array([1.0, 2.0, 3.0]))
        assert b.eval(1.0) == pytest.approx(6.0, abs=1e-12)

    def test_chebyshev_t2(self):
        b = TimeBasis(make_spec("chebyshev", 3), np.array([0.0, 0.0, 1.0]))
        # x = 0.5 corresponds to t = 0.75 on [0, 1]
        assert b.eval(0.75) == pytest.approx(-0.5, abs=1e-12)

    def test_bucketed_rule(self):
        b = TimeBasis(make_spec("bucketed", 4), np.array([10.0, 20.0, 30.0, 40.0]))
        assert b.eval(0.26) == 20.0
        assert b.eval(1.0) == 40.0  # right endpoint clamps into the last bucket

    def test_constant(self):
        b = TimeBasis(make_spec("constant", 0), np.array([0.37]))
        assert b.eval(0.1) == b.eval(0.9) == 0.37

    def test_domain_violation(self):
        b = TimeBasis(make_spec("trigonometric", 1), np.zeros(3))
        with pytest.raises(ContractViolationError):
            b.eval(1.5)
        with pytest.raises(ContractViolationError):
            b.eval(-0.2)

    def test_random_feature_shape_and_finite(self):
        rng = np.random.default_rng(0)
        spec = make_spec("random_feature", 5, rng=rng)
        b = TimeBasis(spec, rng.normal(size=5))
        for t in np.linspace(0, 1, 11):
            assert math.isfinite(b.eval(t))


class TestGradCoeffs:
    def test_trig_example(self):
        b = TimeBasis(make_spec("trigonometric", 1), np.zeros(3))
        assert np.array_equal(b.grad_coeffs(0.0, 1.0), np.array([1.0, 1.0, 0.0]))

    def test_bucket_indicator(self):
        b = TimeBasis(make_spec("bucketed", 4), np.zeros(4))
        assert np.array_equal(b.grad_coeffs(0.26, 3.0), np.array([0.0, 3.0, 0.0, 0.0]))

    def test_linear_in_upstream(self):
        rng = np.random.default_rng(1)
        b = TimeBasis(make_spec("legendre", 4), rng.normal(size=4))
        g1 = b.grad_coeffs(0.3, 1.0)
        g5 = b.grad_coeffs(0.3, 5.0)
        assert np.array_equal(5.0 * g1, g5)

    @pytest.mark.parametrize("kind,order", [
        ("constant", 0), ("bucketed", 4), ("monomial", 4), ("chebyshev", 4),
        ("legendre", 4), ("trigonometric", 3), ("random_feature", 4),
    ])
    def test_matches_finite_differences(self, kind, order):
        rng = np.random.default_rng(2)
        spec = make_spec(kind, order, rng=rng)
        b = TimeBasis(spec, rng.normal(size=spec.n_coeffs))
        for t in (0.13, 0.5, 0.87):
            got = b.grad_coeffs(t, 1.0)
            want = fd_grad_coeffs(b, t)
            assert np.max(np.abs(got - want)) < 1e-6 * max(1.0, np.max(np.abs(want)))


class TestTimeDerivative:
    def test_constant_zero(self):
        b = TimeBasis(make_spec("constant", 0), np.array([3.0]))
        assert b.time_derivative(0.4) == 0.0

    def test_trig_cosine_term(self):
        b = TimeBasis(make_spec("trigonometric", 1), np.array([0.0, 1.0, 0.0]))
        for t in (0.1, 0.6):
            assert b.time_derivative(t) == pytest.approx(-math.sin(t), abs=1e-12)

    @pytest.mark.parametrize("kind,order", [
        ("monomial", 5), ("chebyshev", 5), ("legendre", 5),
        ("trigonometric", 3), ("random_feature", 4),
    ])
    def test_matches_finite_differences(self, kind, order):
        rng = np.random.default_rng(3)
        spec = make_spec(kind, order, rng=rng)
        b = TimeBasis(spec, rng.normal(size=spec.n_coeffs))
        for t in (0.21, 0.5, 0.79):
            h = 1e-6
            fd = (b.eval(t + h) - b.eval(t - h)) / (2 * h)
            assert b.time_derivative(t) == pytest.approx(fd, abs=1e-6, rel=1e-6)


class TestInvariants:
    def test_trig_periodicity(self):
        rng = np.random.default_rng(4)
        spec = make_spec("trigonometric", 3, horizon=1.0, freq_scale=4 * math.pi)
        b = TimeBasis(spec, rng.normal(size=spec.n_coeffs))
        period = 2 * math.pi / spec.freq_scale
        for t in (0.05, 0.21, 0.4):
            assert b.eval(t) == pytest.approx(b.eval(t + period), abs=1e-12)

    def test_monomial_recurrence_vs_naive_expansion(self):
        rng = np.random.default_rng(5)
        coeffs = rng.normal(size=8)
        b = TimeBasis(make_spec("monomial", 8), coeffs)
        for t in np.linspace(0, 1, 9):
            x = 2 * t - 1
            naive = sum(c * x ** n for n, c in enumerate(coeffs))
            assert b.eval(t) == pytest.approx(naive, abs=1e-10)

    @pytest.mark.parametrize("kind,table", [("chebyshev", CHEB_TABLE), ("legendre", LEG_TABLE)])
    def test_recurrence_vs_coefficient_tables(self, kind, table):
        rng = np.random.default_rng(6)
        coeffs = rng.normal(size=4)
        b = TimeBasis(make_spec(kind, 4), coeffs)
        for t in np.linspace(0, 1, 7):
            x = 2 * t - 1
            explicit = sum(c * table[n](x) for n, c in enumerate(coeffs))
            assert b.eval(t) == pytest.approx(explicit, abs=1e-10)

    def test_bucketed_matches_untied_steps(self):
        # d == L reproduces per-step weights at every step's left endpoint
        steps = 8
        vals = np.arange(1.0, steps + 1)
        b = TimeBasis(make_spec("bucketed", steps), vals)
        for k in range(steps):
            assert b.eval(k / steps) == vals[k]

    def test_bucket_index_edges(self):
        assert bucket_index(0.0, 4, 1.0) == 0
        assert bucket_index(0.9999, 4, 1.0) == 3
        assert bucket_index(1.0, 4, 1.0) == 3

    def test_penalty_weights_exempt_constant_slot(self):
        spec = make_spec("trigonometric", 2)
        w = spec.penalty_weights()
        assert w[0] == 0.0 and np.all(w[1:] == 1.0)
        w2 = spec.penalty_weights(freq_weighted=True)
        assert np.array_equal(w2, np.array([0.0, 1.0, 4.0, 1.0, 4.0]))

    def test_frequency_weighted_step_damps_high_modes_faster(self):
        # one gradient step on the n^2-weighted penalty alone
        spec = make_spec("trigonometric", 2)
        coeffs = np.array([0.3, 1.0, 1.0, 1.0, 1.0])
        w = spec.penalty_weights(freq_weighted=True)
        lr, alpha = 0.01, 1.0
        after = coeffs - lr * 2.0 * alpha * w * coeffs
        # a_2/a_1 strictly shrinks, a_0 untouched
        assert abs(after[2] / after[1]) < abs(coeffs[2] / coeffs[1])
        assert after[0] == coeffs[0]


class TestParamLayout:
    def test_views_cover_exactly(self):
        layout = ParamLayout()
        v1 = layout.add("a", 3)
        v2 = layout.add("b", 5)
        layout.check_covering()
        assert (v1.offset, v1.length, v2.offset, v2.length) == (0, 3, 3, 5)
        assert layout.total == 8

    def test_basis_coeff_length_contract(self):
        assert make_spec("trigonometric", 3).n_coeffs == 7
        assert make_spec("bucketed", 5).n_coeffs == 5
        assert make_spec("chebyshev", 4).n_coeffs == 4
        assert make_spec("constant", 0).n_coeffs == 1
        rng = np.random.default_rng(0)
        assert make_spec("random_feature", 6, rng=rng).n_coeffs == 6

    def test_coeff_shape_mismatch_raises(self):
        with pytest.raises(ContractViolationError):
            TimeBasis(make_spec("trigonometric", 2), np.zeros(3))

    def test_random_feature_requires_rng(self):
        with pytest.raises(ContractViolationError):
            make_spec("random_feature", 4)
        with pytest.raises(ContractViolationError):
            BasisSpec("random_feature", 4)
