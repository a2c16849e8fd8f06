"""Right-hand sides f(x, t, theta) built from time-varying weight fields.

A dynamics object owns a flat parameter layout and evaluates everything
as a pure function of (x, t, theta): the state Jacobian A = df/dx, the
parameter Jacobian B = df/dtheta, and vector-Jacobian products used by
the reverse-mode gradient paths. Weight fields share one protocol:

    eval(t, coeffs)              -> dense (rows, cols) matrix
    coeff_jacobian(t, coeffs)    -> d vec(W) / d coeffs
    coeff_vjp(t, coeffs, G)      -> gradient of <G, W(t)> in the coeffs

which keeps the per-entry, antisymmetrized, orthogonally wrapped and
hypernet parameterizations interchangeable inside a layer.
"""

import math

import numpy as np

from .errors import ContractViolationError, NumericOverflowError
from .ortho import OrthoWrappedField
from .timebasis import ParamLayout

VARIANTS = ("autonomous", "nanode", "append_time", "gated_mixture", "hypernet")
ACTIVATIONS = ("tanh", "identity")

_HYPER_WIDTH = 16
_HYPER_EMBED = 4


def _act(pre, kind):
    if kind == "tanh":
        h = np.tanh(pre)
        return h, 1.0 - h * h
    return pre, np.ones_like(pre)


class PerEntryField:
    """Each weight entry carries its own basis; all entries share the spec.

    With skew=True the field materializes C(t) - C(t)^T, which makes the
    state Jacobian of an identity-activation layer skew-symmetric -- the
    construction behind the bounded-transition-matrix diagnostics.
    """

    def __init__(self, rows, cols, spec, skew=False, fan_in=None):
        if skew and rows != cols:
            raise ContractViolationError("skew field must be square")
        self.rows = int(rows)
        self.cols = int(cols)
        self.spec = spec
        self.skew = skew
        # bias fields are (out, 1) but initialize at the owning layer's fan-in
        self.fan_in = int(fan_in) if fan_in is not None else int(cols)
        self.n_coeffs = rows * cols * spec.n_coeffs

    def eval(self, t, coeffs):
        z = self.spec.features(t)
        w = (coeffs.reshape(self.rows, self.cols, -1) @ z).reshape(self.rows, self.cols)
        return w - w.T if self.skew else w

    def coeff_vjp(self, t, coeffs, upstream):
        if self.skew:
            upstream = upstream - upstream.T
        z = self.spec.features(t)
        return np.einsum("ij,m->ijm", upstream, z).reshape(-1)

    def coeff_jacobian(self, t, coeffs):
        z = self.spec.features(t)
        m = self.spec.n_coeffs
        e = self.rows * self.cols
        jac = np.zeros((e, e * m))
        idx = np.arange(e)
        for k in range(m):
            jac[idx, idx * m + k] = z[k]
        if self.skew:
            # vec index of the transposed entry
            i, j = np.divmod(idx, self.cols)
            tr = j * self.cols + i
            for k in range(m):
                jac[tr, idx * m + k] -= z[k]
        return jac

    def init_coeffs(self, rng, scheme="fanin"):
        blocks = [
            self.spec.init_coeffs(rng, self.fan_in, scheme)
            for _ in range(self.rows * self.cols)
        ]
        return np.concatenate(blocks)

    def penalty_weights(self, freq_weighted=False):
        return np.tile(self.spec.penalty_weights(freq_weighted), self.rows * self.cols)


class OrthoField:
    """Adapter giving OrthoWrappedField the shared field protocol."""

    def __init__(self, n, spec):
        self.rows = self.cols = int(n)
        self.inner = OrthoWrappedField(n, spec)
        self.spec = spec
        self.n_coeffs = self.inner.n_coeffs

    def eval(self, t, coeffs):
        return self.inner.eval(t, coeffs)

    def coeff_vjp(self, t, coeffs, upstream):
        return self.inner.coeff_vjp(t, coeffs, upstream)

    def coeff_jacobian(self, t, coeffs):
        return self.inner.coeff_jacobian(t, coeffs)

    def init_coeffs(self, rng, scheme="fanin"):
        blocks = [
            self.spec.init_coeffs(rng, self.rows, scheme)
            for _ in range(self.rows * self.cols)
        ]
        return np.concatenate(blocks)

    def penalty_weights(self, freq_weighted=False):
        return np.tile(self.spec.penalty_weights(freq_weighted), self.rows * self.cols)


class HypernetField:
    """Entries generated by a small tanh network from [v_ij, t].

    The generator (one per field) has a fixed 2-layer architecture of
    width 16; only its weights and the 4-dim entry embeddings are
    learned. Coefficient order: W1, b1, w2, b2, then the embeddings.
    """

    def __init__(self, rows, cols):
        self.rows = int(rows)
        self.cols = int(cols)
        self.spec = None
        self.n_entries = self.rows * self.cols
        self.n_psi = _HYPER_WIDTH * (_HYPER_EMBED + 1) + _HYPER_WIDTH + _HYPER_WIDTH + 1
        self.n_coeffs = self.n_psi + self.n_entries * _HYPER_EMBED

    def _unpack(self, coeffs):
        w, e = _HYPER_WIDTH, _HYPER_EMBED
        o = 0
        w1 = coeffs[o:o + w * (e + 1)].reshape(w, e + 1); o += w * (e + 1)
        b1 = coeffs[o:o + w]; o += w
        w2 = coeffs[o:o + w]; o += w
        b2 = coeffs[o]; o += 1
        v = coeffs[o:].reshape(self.n_entries, e)
        return w1, b1, w2, b2, v

    def _forward(self, t, coeffs):
        w1, b1, w2, b2, v = self._unpack(coeffs)
        inp = np.concatenate([v, np.full((self.n_entries, 1), t)], axis=1)
        hid = np.tanh(inp @ w1.T + b1)
        out = hid @ w2 + b2
        return out, hid, inp, (w1, b1, w2, b2, v)

    def eval(self, t, coeffs):
        out, _, _, _ = self._forward(t, coeffs)
        return out.reshape(self.rows, self.cols)

    def coeff_vjp(self, t, coeffs, upstream):
        out, hid, inp, (w1, b1, w2, b2, v) = self._forward(t, coeffs)
        up = upstream.reshape(-1)
        g = np.zeros(self.n_coeffs)
        d_hid = up[:, None] * w2[None, :] * (1.0 - hid * hid)
        w, e = _HYPER_WIDTH, _HYPER_EMBED
        o = 0
        g[o:o + w * (e + 1)] = (d_hid.T @ inp).reshape(-1); o += w * (e + 1)
        g[o:o + w] = d_hid.sum(axis=0); o += w
        g[o:o + w] = hid.T @ up; o += w
        g[o] = up.sum(); o += 1
        g[o:] = (d_hid @ w1[:, :e]).reshape(-1)
        return g

    def coeff_jacobian(self, t, coeffs):
        out, hid, inp, (w1, b1, w2, b2, v) = self._forward(t, coeffs)
        w, e = _HYPER_WIDTH, _HYPER_EMBED
        n_e = self.n_entries
        jac = np.zeros((n_e, self.n_coeffs))
        sens = w2[None, :] * (1.0 - hid * hid)  # (E, width): d out_e / d pre_hidden
        o = 0
        jac[:, o:o + w * (e + 1)] = np.einsum("er,ec->erc", sens, inp).reshape(n_e, -1)
        o += w * (e + 1)
        jac[:, o:o + w] = sens; o += w
        jac[:, o:o + w] = hid; o += w
        jac[:, o] = 1.0; o += 1
        dv = sens @ w1[:, :e]  # (E, embed), own embedding only
        for c in range(e):
            jac[np.arange(n_e), o + np.arange(n_e) * e + c] = dv[:, c]
        return jac

    def init_coeffs(self, rng, scheme="fanin"):
        w, e = _HYPER_WIDTH, _HYPER_EMBED
        w1 = rng.normal(0.0, 1.0 / math.sqrt(e + 1), (w, e + 1))
        b1 = np.zeros(w)
        w2 = rng.normal(0.0, 1.0 / math.sqrt(w), w)
        b2 = np.zeros(1)
        v = rng.normal(0.0, 1.0, (self.n_entries, e))
        return np.concatenate([w1.reshape(-1), b1, w2, b2, v.reshape(-1)])

    def penalty_weights(self, freq_weighted=False):
        # No basis coefficients to damp.
        return np.zeros(self.n_coeffs)


class Layer:
    def __init__(self, w_field, b_field, activation):
        if activation not in ACTIVATIONS:
            raise ContractViolationError(f"unknown activation {activation!r}")
        self.w_field = w_field
        self.b_field = b_field
        self.activation = activation
        self.w_view = None
        self.b_view = None


class Dynamics:
    """Base: owns the layout; subclasses implement the evaluation core."""

    variant = "base"

    def __init__(self, n, horizon):
        self.n = int(n)
        self.horizon = float(horizon)
        self.layout = ParamLayout()

    @property
    def n_params(self):
        return self.layout.total

    @property
    def views(self):
        return self.layout.views

    def _check_x(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape != (self.n,):
            raise ContractViolationError(f"state shape {x.shape} != ({self.n},)")
        return x

    def _check_theta(self, theta):
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.n_params,):
            raise ContractViolationError(
                f"theta shape {theta.shape} != ({self.n_params},)"
            )
        return theta

    # single-example entry points ------------------------------------
    def f(self, x, t, theta):
        out = self.f_batch(self._check_x(x)[None, :], t, self._check_theta(theta))[0]
        if not np.all(np.isfinite(out)):
            raise NumericOverflowError("non-finite dynamics output", time=t)
        return out

    def jac_x(self, x, t, theta):
        raise NotImplementedError

    def jac_theta(self, x, t, theta):
        raise NotImplementedError

    def vjp(self, x, t, theta, c):
        """(df/dx)^T c and (df/dtheta)^T c in one backward sweep."""
        ax, g = self.vjp_batch(
            self._check_x(x)[None, :], t, self._check_theta(theta), np.asarray(c)[None, :]
        )
        return ax[0], g

    # batched entry points --------------------------------------------
    def f_batch(self, xs, t, theta):
        raise NotImplementedError

    def vjp_batch(self, xs, t, theta, cs):
        raise NotImplementedError

    def init_theta(self, rng, scheme="fanin"):
        raise NotImplementedError

    def weight_norms(self, t, theta):
        """Spectral norms of every weight-field matrix at time t."""
        raise NotImplementedError

    def field_views(self):
        """(view, field) pairs for every weight/bias field in layout order."""
        raise NotImplementedError

    def penalty_weights(self, freq_weighted=False):
        w = np.zeros(self.n_params)
        for view, fld in self.field_views():
            w[view.offset:view.stop] = fld.penalty_weights(freq_weighted)
        return w

    def uses_bucketed(self):
        return any(
            fld.spec is not None and fld.spec.kind == "bucketed"
            for _, fld in self.field_views()
        )


class LayerStack(Dynamics):
    """sigma(W_L(t) ... sigma(W_1(t) x + b_1(t)) ... + b_L(t)).

    Covers the autonomous (constant bases), per-entry time-varying,
    append-time (t joined to each layer input) and hypernet variants.
    """

    def __init__(self, n, layers, horizon=1.0, append_time=False, variant="nanode"):
        super().__init__(n, horizon)
        if variant not in VARIANTS:
            raise ContractViolationError(f"unknown variant {variant!r}")
        self.variant = variant
        self.append_time = append_time
        self.layers = layers
        expected_in = n
        for k, layer in enumerate(layers):
            in_dim = layer.w_field.cols - (1 if append_time else 0)
            if in_dim != expected_in:
                raise ContractViolationError(f"layer {k} input dim {in_dim} != {expected_in}")
            layer.w_view = self.layout.add(f"layer{k}.weights", layer.w_field.n_coeffs)
            layer.b_view = self.layout.add(f"layer{k}.bias", layer.b_field.n_coeffs)
            expected_in = layer.w_field.rows
        if expected_in != n:
            raise ContractViolationError("stack output dim != state dim")

    def _layer_coeffs(self, layer, theta):
        return (
            theta[layer.w_view.offset:layer.w_view.stop],
            theta[layer.b_view.offset:layer.b_view.stop],
        )

    def _forward_cache(self, xs, t, theta):
        if xs.ndim != 2 or xs.shape[1] != self.n:
            raise ContractViolationError(f"batch state shape {xs.shape} != (B, {self.n})")
        h = xs
        cache = []
        for layer in self.layers:
            cw, cb = self._layer_coeffs(layer, theta)
            w = layer.w_field.eval(t, cw)
            b = layer.b_field.eval(t, cb).reshape(-1)
            inp = h
            if self.append_time:
                inp = np.concatenate([h, np.full((h.shape[0], 1), t)], axis=1)
            pre = np.einsum("bi,oi->bo", inp, w) + b
            h, dh = _act(pre, layer.activation)
            cache.append((inp, w, h, dh))
        return h, cache

    def f_batch(self, xs, t, theta):
        xs = np.asarray(xs, dtype=float)
        theta = self._check_theta(theta)
        out, _ = self._forward_cache(xs, t, theta)
        if not np.all(np.isfinite(out)):
            bad = int(np.where(~np.isfinite(out).all(axis=1))[0][0])
            raise NumericOverflowError("non-finite dynamics output", time=t, example=bad)
        return out

    def jac_x(self, x, t, theta):
        x = self._check_x(x)
        theta = self._check_theta(theta)
        _, cache = self._forward_cache(x[None, :], t, theta)
        jac = np.eye(self.n)
        for (inp, w, h, dh) in cache:
            wx = w[:, : w.shape[1] - 1] if self.append_time else w
            jac = (dh[0][:, None] * wx) @ jac
        return jac

    def jac_theta(self, x, t, theta):
        x = self._check_x(x)
        theta = self._check_theta(theta)
        _, cache = self._forward_cache(x[None, :], t, theta)
        blocks = np.zeros((self.n, self.n_params))
        # downstream[l] = d f / d h_l evaluated with everything above layer l
        down = np.eye(self.n)
        for idx in range(len(self.layers) - 1, -1, -1):
            layer = self.layers[idx]
            inp, w, h, dh = cache[idx]
            u = down * dh[0][None, :]  # d f / d pre_idx
            cw, cb = self._layer_coeffs(layer, theta)
            jw = layer.w_field.coeff_jacobian(t, cw).reshape(
                layer.w_field.rows, layer.w_field.cols, -1
            )
            dpre = np.einsum("oic,i->oc", jw, inp[0])
            blocks[:, layer.w_view.offset:layer.w_view.stop] = u @ dpre
            jb = layer.b_field.coeff_jacobian(t, cb)
            blocks[:, layer.b_view.offset:layer.b_view.stop] = u @ jb
            wx = w[:, : w.shape[1] - 1] if self.append_time else w
            down = u @ wx
        return blocks

    def vjp_batch(self, xs, t, theta, cs):
        xs = np.asarray(xs, dtype=float)
        cs = np.asarray(cs, dtype=float)
        theta = self._check_theta(theta)
        _, cache = self._forward_cache(xs, t, theta)
        grad = np.zeros(self.n_params)
        a = cs
        for idx in range(len(self.layers) - 1, -1, -1):
            layer = self.layers[idx]
            inp, w, h, dh = cache[idx]
            s = a * dh  # (B, out): upstream on pre-activations
            cw, cb = self._layer_coeffs(layer, theta)
            gw = np.einsum("bo,bi->oi", s, inp)
            grad[layer.w_view.offset:layer.w_view.stop] = layer.w_field.coeff_vjp(t, cw, gw)
            gb = s.sum(axis=0).reshape(layer.b_field.rows, 1)
            grad[layer.b_view.offset:layer.b_view.stop] = layer.b_field.coeff_vjp(t, cb, gb)
            wx = w[:, : w.shape[1] - 1] if self.append_time else w
            a = np.einsum("bo,oi->bi", s, wx)
        return a, grad

    def init_theta(self, rng, scheme="fanin"):
        theta = np.zeros(self.n_params)
        for layer in self.layers:
            theta[layer.w_view.offset:layer.w_view.stop] = layer.w_field.init_coeffs(rng, scheme)
            theta[layer.b_view.offset:layer.b_view.stop] = layer.b_field.init_coeffs(rng, scheme)
        return theta

    def weight_norms(self, t, theta):
        from .linalg import spectral_norm

        norms = []
        for layer in self.layers:
            cw, _ = self._layer_coeffs(layer, theta)
            norms.append(spectral_norm(layer.w_field.eval(t, cw)))
        return norms

    def field_views(self):
        for layer in self.layers:
            yield layer.w_view, layer.w_field
            yield layer.b_view, layer.b_field


class GateSet:
    """Logistic gates sigma_n(t) = 1 / (1 + exp(-(c_n t + e_n)))."""

    @staticmethod
    def values(c, e, t):
        return 1.0 / (1.0 + np.exp(-(c * t + e)))

    @staticmethod
    def derivs(c, e, t):
        s = GateSet.values(c, e, t)
        return s * (1.0 - s)


class GatedMixture(Dynamics):
    """f = sum_n sigma_n(t) f_n(x, t); each branch is a full layer stack."""

    variant = "gated_mixture"

    def __init__(self, n, subs, horizon=1.0):
        super().__init__(n, horizon)
        if not subs:
            raise ContractViolationError("gated mixture needs at least one branch")
        self.subs = subs
        self.sub_views = []
        for k, sub in enumerate(subs):
            if sub.n != n:
                raise ContractViolationError("branch state dim mismatch")
            self.sub_views.append(self.layout.add(f"branch{k}", sub.n_params))
        self.c_view = self.layout.add("gates.c", len(subs))
        self.e_view = self.layout.add("gates.e", len(subs))

    def _gates(self, theta, t):
        c = theta[self.c_view.offset:self.c_view.stop]
        e = theta[self.e_view.offset:self.e_view.stop]
        return c, e, GateSet.values(c, e, t)

    def f_batch(self, xs, t, theta):
        xs = np.asarray(xs, dtype=float)
        theta = self._check_theta(theta)
        _, _, sig = self._gates(theta, t)
        out = np.zeros_like(xs)
        for k, sub in enumerate(self.subs):
            sub_theta = theta[self.sub_views[k].offset:self.sub_views[k].stop]
            out += sig[k] * sub.f_batch(xs, t, sub_theta)
        return out

    def jac_x(self, x, t, theta):
        theta = self._check_theta(theta)
        _, _, sig = self._gates(theta, t)
        jac = np.zeros((self.n, self.n))
        for k, sub in enumerate(self.subs):
            sub_theta = theta[self.sub_views[k].offset:self.sub_views[k].stop]
            jac += sig[k] * sub.jac_x(x, t, sub_theta)
        return jac

    def jac_theta(self, x, t, theta):
        x = self._check_x(x)
        theta = self._check_theta(theta)
        c, e, sig = self._gates(theta, t)
        dsig = GateSet.derivs(c, e, t)
        blocks = np.zeros((self.n, self.n_params))
        for k, sub in enumerate(self.subs):
            view = self.sub_views[k]
            sub_theta = theta[view.offset:view.stop]
            blocks[:, view.offset:view.stop] = sig[k] * sub.jac_theta(x, t, sub_theta)
            fk = sub.f(x, t, sub_theta)
            blocks[:, self.c_view.offset + k] = dsig[k] * t * fk
            blocks[:, self.e_view.offset + k] = dsig[k] * fk
        return blocks

    def vjp_batch(self, xs, t, theta, cs):
        xs = np.asarray(xs, dtype=float)
        cs = np.asarray(cs, dtype=float)
        theta = self._check_theta(theta)
        c, e, sig = self._gates(theta, t)
        dsig = GateSet.derivs(c, e, t)
        a = np.zeros_like(xs)
        grad = np.zeros(self.n_params)
        for k, sub in enumerate(self.subs):
            view = self.sub_views[k]
            sub_theta = theta[view.offset:view.stop]
            ak, gk = sub.vjp_batch(xs, t, sub_theta, cs)
            a += sig[k] * ak
            grad[view.offset:view.stop] = sig[k] * gk
            fk = sub.f_batch(xs, t, sub_theta)
            coupling = float(np.einsum("bn,bn->", cs, fk))
            grad[self.c_view.offset + k] = dsig[k] * t * coupling
            grad[self.e_view.offset + k] = dsig[k] * coupling
        return a, grad

    def init_theta(self, rng, scheme="fanin"):
        theta = np.zeros(self.n_params)
        for k, sub in enumerate(self.subs):
            view = self.sub_views[k]
            theta[view.offset:view.stop] = sub.init_theta(rng, scheme)
        # gates start flat: sigma_n = 0.5 for all t
        return theta

    def weight_norms(self, t, theta):
        norms = []
        for k, sub in enumerate(self.subs):
            view = self.sub_views[k]
            norms.extend(sub.weight_norms(t, theta[view.offset:view.stop]))
        return norms

    def field_views(self):
        for k, sub in enumerate(self.subs):
            base = self.sub_views[k].offset
            for view, fld in sub.field_views():
                yield (
                    type(view)(f"branch{k}.{view.name}", base + view.offset, view.length),
                    fld,
                )


def dense_layer(out_dim, in_dim, spec, activation="tanh", field_kind="per_entry",
                append_time=False):
    """One layer: weight field + bias field + activation."""
    cols = in_dim + (1 if append_time else 0)
    if field_kind == "per_entry":
        w_field = PerEntryField(out_dim, cols, spec)
    elif field_kind == "skew":
        w_field = PerEntryField(out_dim, cols, spec, skew=True)
    elif field_kind == "ortho":
        if append_time or out_dim != cols:
            raise ContractViolationError("ortho fields must be square (no appended time)")
        w_field = OrthoField(out_dim, spec)
    elif field_kind == "hypernet":
        w_field = HypernetField(out_dim, cols)
    else:
        raise ContractViolationError(f"unknown field kind {field_kind!r}")
    if field_kind == "hypernet":
        b_field = HypernetField(out_dim, 1)
    else:
        b_field = PerEntryField(out_dim, 1, spec, fan_in=in_dim)
    return Layer(w_field, b_field, activation)


def build_stack(n, n_layers, spec, activations="tanh", field_kind="per_entry",
                append_time=False, variant="nanode", horizon=1.0):
    """Square N->N stack with one shared basis spec across layers."""
    if isinstance(activations, str):
        activations = [activations] * n_layers
    if len(activations) != n_layers:
        raise ContractViolationError("need one activation per layer")
    layers = [
        dense_layer(n, n, spec, act, field_kind, append_time) for act in activations
    ]
    return LayerStack(n, layers, horizon=horizon, append_time=append_time, variant=variant)
