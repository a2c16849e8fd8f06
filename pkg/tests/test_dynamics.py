import numpy as np
import pytest

from nanode.dynamics import (
    GatedMixture,
    LayerStack,
    PerEntryField,
    build_stack,
    dense_layer,
)
from nanode.errors import ContractViolationError, NumericOverflowError
from nanode.timebasis import make_spec


def fd_jac_x(dyn, x, t, theta, h=1e-6):
    jac = np.zeros((dyn.n, dyn.n))
    for i in range(dyn.n):
        xp = x.copy(); xp[i] += h
        xm = x.copy(); xm[i] -= h
        jac[:, i] = (dyn.f(xp, t, theta) - dyn.f(xm, t, theta)) / (2 * h)
    return jac


def fd_jac_theta(dyn, x, t, theta, h=1e-6):
    jac = np.zeros((dyn.n, theta.shape[0]))
    for i in range(theta.shape[0]):
        step = h * max(1.0, abs(theta[i]))
        tp = theta.copy(); tp[i] += step
        tm = theta.copy(); tm[i] -= step
        jac[:, i] = (dyn.f(x, t, tp) - dyn.f(x, t, tm)) / (2 * step)
    return jac


def rel(a, b):
    return np.max(np.abs(a - b)) / max(1e-10, np.max(np.abs(b)))


def set_constant_weight(dyn, layer_idx, w, b=None):
    """Write a constant-basis layer's matrix and bias into a theta vector."""
    theta = np.zeros(dyn.n_params)
    layer = dyn.layers[layer_idx]
    theta[layer.w_view.offset:layer.w_view.stop] = np.asarray(w, float).reshape(-1)
    if b is not None:
        theta[layer.b_view.offset:layer.b_view.stop] = np.asarray(b, float)
    return theta


class TestEvalF:
    def test_identity_flow(self):
        dyn = build_stack(3, 1, make_spec("constant", 0), activations="identity")
        theta = set_constant_weight(dyn, 0, np.eye(3))
        x = np.array([0.3, -1.2, 2.0])
        for t in (0.0, 0.5, 1.0):
            assert np.array_equal(dyn.f(x, t, theta), x)

    def test_gated_mixture_balanced_gates(self):
        rng = np.random.default_rng(0)
        subs = [build_stack(3, 1, make_spec("trigonometric", 1)) for _ in range(2)]
        mix = GatedMixture(3, subs)
        theta = mix.init_theta(rng)
        theta += rng.normal(0, 0.3, theta.shape)
        # zero the gate parameters: sigma_n = 0.5
        theta[mix.c_view.offset:mix.e_view.stop] = 0.0
        x = rng.normal(size=3)
        f1 = subs[0].f(x, 0.3, theta[mix.sub_views[0].offset:mix.sub_views[0].stop])
        f2 = subs[1].f(x, 0.3, theta[mix.sub_views[1].offset:mix.sub_views[1].stop])
        assert np.max(np.abs(mix.f(x, 0.3, theta) - 0.5 * (f1 + f2))) < 1e-14

    def test_append_time_reads_time_column(self):
        dyn = build_stack(3, 1, make_spec("constant", 0), activations="identity",
                          append_time=True, variant="append_time")
        w = np.zeros((3, 4))
        w[:, 3] = 1.0  # only the appended coordinate feeds through
        theta = set_constant_weight(dyn, 0, w)
        x = np.array([5.0, -2.0, 0.1])
        for t in (0.0, 0.25, 0.9):
            assert np.max(np.abs(dyn.f(x, t, theta) - t)) < 1e-15

    def test_overflow_carries_time(self):
        dyn = build_stack(2, 1, make_spec("constant", 0), activations="identity")
        theta = set_constant_weight(dyn, 0, np.full((2, 2), 1e200))
        with pytest.raises(NumericOverflowError) as exc:
            dyn.f(np.full(2, 1e200), 0.625, theta)
        assert exc.value.time == 0.625

    def test_batch_shape_contract(self):
        dyn = build_stack(3, 1, make_spec("constant", 0))
        with pytest.raises(ContractViolationError):
            dyn.f(np.ones(4), 0.0, np.zeros(dyn.n_params))


class TestJacX:
    def test_identity_activation_returns_weight(self):
        rng = np.random.default_rng(1)
        spec = make_spec("trigonometric", 2)
        dyn = build_stack(4, 1, spec, activations="identity")
        theta = dyn.init_theta(rng)
        theta += rng.normal(0, 0.5, theta.shape)
        t = 0.37
        layer = dyn.layers[0]
        w = layer.w_field.eval(t, theta[layer.w_view.offset:layer.w_view.stop])
        assert np.max(np.abs(dyn.jac_x(rng.normal(size=4), t, theta) - w)) < 1e-14

    def test_tanh_at_origin_returns_weight(self):
        rng = np.random.default_rng(2)
        dyn = build_stack(4, 1, make_spec("chebyshev", 3))
        theta = dyn.init_theta(rng)
        theta += rng.normal(0, 0.5, theta.shape)
        # zero the bias so pre-activation is 0 at x = 0
        layer = dyn.layers[0]
        theta[layer.b_view.offset:layer.b_view.stop] = 0.0
        t = 0.61
        w = layer.w_field.eval(t, theta[layer.w_view.offset:layer.w_view.stop])
        assert np.max(np.abs(dyn.jac_x(np.zeros(4), t, theta) - w)) < 1e-14


class TestJacTheta:
    def test_constant_identity_structure(self):
        # column for W_ij is x_j e_i
        dyn = build_stack(3, 1, make_spec("constant", 0), activations="identity")
        theta = np.zeros(dyn.n_params)
        x = np.array([2.0, -1.0, 0.5])
        jt = dyn.jac_theta(x, 0.4, theta)
        layer = dyn.layers[0]
        for i in range(3):
            for j in range(3):
                col = jt[:, layer.w_view.offset + i * 3 + j]
                want = np.zeros(3)
                want[i] = x[j]
                assert np.array_equal(col, want)

    def test_order_zero_trig_equals_constant(self):
        x = np.array([1.0, -2.0, 3.0])
        dyn_c = build_stack(3, 1, make_spec("constant", 0), activations="identity")
        dyn_t = build_stack(3, 1, make_spec("trigonometric", 0), activations="identity")
        jc = dyn_c.jac_theta(x, 0.3, np.zeros(dyn_c.n_params))
        jt = dyn_t.jac_theta(x, 0.3, np.zeros(dyn_t.n_params))
        assert np.array_equal(jc, jt)


ALL_CASES = []
for kind, order in [("constant", 0), ("bucketed", 3), ("monomial", 3),
                    ("chebyshev", 3), ("legendre", 2), ("trigonometric", 2),
                    ("random_feature", 3)]:
    ALL_CASES.append(("nanode", kind, order, 1, "per_entry"))
ALL_CASES += [
    ("nanode", "trigonometric", 2, 2, "per_entry"),
    ("nanode", "chebyshev", 2, 1, "ortho"),
    ("nanode", "legendre", 2, 1, "skew"),
    ("autonomous", "constant", 0, 2, "per_entry"),
    ("append_time", "constant", 0, 1, "per_entry"),
    ("hypernet", "constant", 0, 1, "hypernet"),
    ("gated_mixture", "trigonometric", 1, 1, "per_entry"),
]


class TestJacobiansAgainstFiniteDifferences:
    @pytest.mark.parametrize("variant,kind,order,layers,field", ALL_CASES)
    def test_jacobians(self, variant, kind, order, layers, field):
        rng = np.random.default_rng(abs(hash((variant, kind, order, layers, field))) % 2**31)
        n = 4
        spec = make_spec(kind, order, rng=rng)
        if variant == "gated_mixture":
            subs = [build_stack(n, layers, spec, field_kind=field) for _ in range(2)]
            dyn = GatedMixture(n, subs)
        else:
            dyn = build_stack(n, layers, spec, field_kind=field,
                              append_time=(variant == "append_time"), variant=variant)
        theta = dyn.init_theta(rng)
        theta += rng.normal(0, 0.2, theta.shape)
        x = rng.normal(size=n)
        t = 0.45
        assert rel(dyn.jac_x(x, t, theta), fd_jac_x(dyn, x, t, theta)) < 1e-6
        assert rel(dyn.jac_theta(x, t, theta), fd_jac_theta(dyn, x, t, theta)) < 1e-6
        # vjp must contract the same Jacobians
        c = rng.normal(size=n)
        ja, ga = dyn.vjp(x, t, theta, c)
        assert np.max(np.abs(ja - dyn.jac_x(x, t, theta).T @ c)) < 1e-12
        assert np.max(np.abs(ga - dyn.jac_theta(x, t, theta).T @ c)) < 1e-12


class TestVariantEquivalences:
    def test_autonomous_is_time_independent(self):
        rng = np.random.default_rng(3)
        dyn = build_stack(4, 2, make_spec("constant", 0), variant="autonomous")
        theta = dyn.init_theta(rng)
        x = rng.normal(size=4)
        f0 = dyn.f(x, 0.0, theta)
        assert np.array_equal(f0, dyn.f(x, 0.7, theta))
        assert np.array_equal(f0, dyn.f(x, 1.0, theta))

    def test_zeroed_trig_matches_autonomous_bitwise(self):
        rng1 = np.random.default_rng(4)
        rng2 = np.random.default_rng(4)
        auto = build_stack(4, 1, make_spec("constant", 0), variant="autonomous")
        trig = build_stack(4, 1, make_spec("trigonometric", 3))
        theta_a = auto.init_theta(rng1)
        theta_t = trig.init_theta(rng2)  # higher-order slots are zero at init
        x = rng1.normal(size=4)
        for t in (0.0, 0.31, 1.0):
            assert np.array_equal(auto.f(x, t, theta_a), trig.f(x, t, theta_t))

    def test_append_time_equals_degree_one_bias(self):
        # sigma(W0 x + w_t t + b) == constant weights + affine-in-t bias
        rng = np.random.default_rng(5)
        n = 3
        app = build_stack(n, 1, make_spec("constant", 0), append_time=True,
                          variant="append_time")
        theta_app = app.init_theta(rng)
        theta_app += rng.normal(0, 0.4, theta_app.shape)
        layer = app.layers[0]
        w_aug = theta_app[layer.w_view.offset:layer.w_view.stop].reshape(n, n + 1)
        b = theta_app[layer.b_view.offset:layer.b_view.stop]

        spec_w = make_spec("constant", 0)
        spec_b = make_spec("monomial", 2)
        lay = dense_layer(n, n, spec_w, activation="tanh")
        lay.b_field = PerEntryField(n, 1, spec_b, fan_in=n)
        equiv = LayerStack(n, [lay], variant="nanode")
        theta_eq = np.zeros(equiv.n_params)
        theta_eq[lay.w_view.offset:lay.w_view.stop] = w_aug[:, :n].reshape(-1)
        # bias basis on [0,1] sees x = 2t - 1: c0 + c1 x = (c0 - c1) + 2 c1 t
        c1 = w_aug[:, n] / 2.0
        c0 = b + c1
        theta_eq[lay.b_view.offset:lay.b_view.stop] = np.stack([c0, c1], axis=1).reshape(-1)

        x = rng.normal(size=n)
        for t in (0.0, 0.35, 0.8, 1.0):
            assert np.max(np.abs(app.f(x, t, theta_app) - equiv.f(x, t, theta_eq))) < 1e-12
