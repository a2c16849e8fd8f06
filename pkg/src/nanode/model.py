"""End-to-end model: affine stem -> flow block -> affine head.

The model owns the flat global parameter vector; stems and the dynamics
read it through disjoint ParamViews. All batched contractions go through
einsum so each batch row is reduced independently -- a batch forward is
bit-identical to the same examples run one at a time.
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import ContractViolationError
from .grad import _check_bucket_alignment, adjoint_backward, backward_discrete
from .odeint import SolveSpec, integrate_batch
from .timebasis import ParamLayout

LOSS_KINDS = ("mse", "cross_entropy")
GRAD_METHODS = ("discrete", "adjoint")


@dataclass(frozen=True)
class LossSpec:
    kind: str = "mse"
    l2_alpha: float = 0.0
    freq_weighted: bool = False

    def __post_init__(self):
        if self.kind not in LOSS_KINDS:
            raise ContractViolationError(f"unknown loss kind {self.kind!r}")
        if self.l2_alpha < 0:
            raise ContractViolationError("l2_alpha must be non-negative")


class NanodeModel:
    def __init__(self, dynamics, solve, in_dim, out_dim, stems="affine"):
        if stems not in ("affine", "identity"):
            raise ContractViolationError(f"unknown stem mode {stems!r}")
        if stems == "identity" and not (in_dim == dynamics.n == out_dim):
            raise ContractViolationError("identity stems require in_dim == N == out_dim")
        self.dynamics = dynamics
        self.solve = solve
        self.in_dim = int(in_dim)
        self.out_dim = int(out_dim)
        self.stems = stems

        n = dynamics.n
        self.layout = ParamLayout()
        if stems == "affine":
            self.win_view = self.layout.add("input.weights", n * in_dim)
            self.bin_view = self.layout.add("input.bias", n)
        else:
            self.win_view = self.bin_view = None
        self.flow_view = self.layout.add("flow", dynamics.n_params)
        if stems == "affine":
            self.wout_view = self.layout.add("output.weights", out_dim * n)
            self.bout_view = self.layout.add("output.bias", out_dim)
        else:
            self.wout_view = self.bout_view = None
        self.theta = np.zeros(self.layout.total)

    # ---- parameter plumbing ------------------------------------------
    @property
    def n_params(self):
        return self.layout.total

    @property
    def views(self):
        return self.layout.views

    def flow_theta(self, theta=None):
        theta = self.theta if theta is None else theta
        return theta[self.flow_view.offset:self.flow_view.stop]

    def init_theta(self, rng, scheme="fanin"):
        """Draw order: input stem, flow coefficients, output stem."""
        theta = np.zeros(self.n_params)
        n = self.dynamics.n
        if self.stems == "affine":
            theta[self.win_view.offset:self.win_view.stop] = rng.normal(
                0.0, 1.0 / math.sqrt(self.in_dim), n * self.in_dim
            )
        theta[self.flow_view.offset:self.flow_view.stop] = self.dynamics.init_theta(rng, scheme)
        if self.stems == "affine":
            theta[self.wout_view.offset:self.wout_view.stop] = rng.normal(
                0.0, 1.0 / math.sqrt(n), self.out_dim * n
            )
        self.theta = theta
        return theta

    def _stem_in(self, xs, theta):
        if self.stems == "identity":
            return xs
        w = theta[self.win_view.offset:self.win_view.stop].reshape(self.dynamics.n, self.in_dim)
        b = theta[self.bin_view.offset:self.bin_view.stop]
        return np.einsum("bd,nd->bn", xs, w) + b

    def _stem_out(self, hs, theta):
        if self.stems == "identity":
            return hs
        w = theta[self.wout_view.offset:self.wout_view.stop].reshape(self.out_dim, self.dynamics.n)
        b = theta[self.bout_view.offset:self.bout_view.stop]
        return np.einsum("bn,on->bo", hs, w) + b

    def penalty_weights(self, freq_weighted=False):
        w = np.zeros(self.n_params)
        off = self.flow_view.offset
        w[off:self.flow_view.stop] = self.dynamics.penalty_weights(freq_weighted)
        return w


def forward(model, xs, theta=None):
    """Batch outputs: head(terminal(flow(stem(x)))) per row."""
    xs = np.asarray(xs, dtype=float)
    if xs.ndim != 2 or xs.shape[1] != model.in_dim:
        raise ContractViolationError(f"batch inputs must be (B, {model.in_dim})")
    theta = model.theta if theta is None else np.asarray(theta, dtype=float)
    h0 = model._stem_in(xs, theta)
    traj = integrate_batch(model.dynamics, h0, model.flow_theta(theta), model.solve)
    return model._stem_out(traj.terminal, theta)


def data_loss(pred, targets, kind):
    """(loss, d loss / d pred). MSE sums over output dims, means over rows."""
    b = pred.shape[0]
    if kind == "mse":
        diff = pred - targets
        return float(np.sum(diff * diff) / b), 2.0 * diff / b
    # softmax cross-entropy on integer labels
    labels = np.asarray(targets, dtype=int)
    shifted = pred - pred.max(axis=1, keepdims=True)
    expd = np.exp(shifted)
    p = expd / expd.sum(axis=1, keepdims=True)
    loss = float(-np.mean(np.log(p[np.arange(b), labels] + 1e-300)))
    dpred = p.copy()
    dpred[np.arange(b), labels] -= 1.0
    return loss, dpred / b


def accuracy(pred, targets):
    labels = np.asarray(targets, dtype=int)
    return float(np.mean(np.argmax(pred, axis=1) == labels))


def loss_and_grad(model, xs, targets, loss_spec, method="discrete"):
    """Mean batch loss plus coefficient penalty, and its full gradient.

    Returns (loss, grad, info); info carries the data/penalty split and
    the activation-memory-unit count of the chosen gradient method.
    """
    if method not in GRAD_METHODS:
        raise ContractViolationError(f"unknown grad method {method!r}")
    xs = np.asarray(xs, dtype=float)
    if xs.shape[0] < 1:
        raise ContractViolationError("batch must be non-empty")
    theta = model.theta
    dyn = model.dynamics
    flow_theta = model.flow_theta(theta)

    h0 = model._stem_in(xs, theta)
    store = SolveSpec(
        model.solve.method, model.solve.t0, model.solve.t1, model.solve.steps,
        store_all=(method == "discrete"),
    )
    traj = integrate_batch(dyn, h0, flow_theta, store)
    pred = model._stem_out(traj.terminal, theta)
    loss, dpred = data_loss(pred, targets, loss_spec.kind)

    grad = np.zeros(model.n_params)
    # head
    if model.stems == "affine":
        w_out = theta[model.wout_view.offset:model.wout_view.stop].reshape(
            model.out_dim, dyn.n
        )
        grad[model.wout_view.offset:model.wout_view.stop] = np.einsum(
            "bo,bn->on", dpred, traj.terminal
        ).reshape(-1)
        grad[model.bout_view.offset:model.bout_view.stop] = dpred.sum(axis=0)
        seed = np.einsum("bo,on->bn", dpred, w_out)
    else:
        seed = dpred

    # flow block
    if method == "discrete":
        a0, gflow = backward_discrete(dyn, flow_theta, store, traj.states, seed)
        memory_units = store.steps + 1
    else:
        _check_bucket_alignment(dyn, model.solve)
        a0, gflow = adjoint_backward(dyn, traj.terminal, flow_theta, model.solve, seed)
        memory_units = 3
    grad[model.flow_view.offset:model.flow_view.stop] = gflow

    # stem
    if model.stems == "affine":
        grad[model.win_view.offset:model.win_view.stop] = np.einsum(
            "bn,bd->nd", a0, xs
        ).reshape(-1)
        grad[model.bin_view.offset:model.bin_view.stop] = a0.sum(axis=0)

    # coefficient penalty (constant-level slots exempt)
    penalty = 0.0
    if loss_spec.l2_alpha > 0.0:
        w = model.penalty_weights(loss_spec.freq_weighted)
        penalty = float(loss_spec.l2_alpha * np.sum(w * theta * theta))
        grad += 2.0 * loss_spec.l2_alpha * w * theta

    info = {
        "data_loss": loss,
        "penalty": penalty,
        "activation_memory_units": memory_units,
        "pred": pred,
    }
    return loss + penalty, grad, info
