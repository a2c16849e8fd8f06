"""Optimizers, synthetic tasks, and the seeded training loop.

The three tasks are desk-scale stand-ins with known structure: a 1-D
reflection regression (impossible for order-preserving flows), a pair of
concentric annuli, and two interleaved spirals whose difficulty scales
with how much the dynamics can vary over time.
"""

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractViolationError, DivergenceError
from .model import LossSpec, accuracy, data_loss, forward, loss_and_grad

TASKS = ("reflection1d", "annuli2d", "spirals2d")

# Offset Weyl-mixed into a run seed to get an independent test-set stream.
TEST_SEED_OFFSET = 0x9E3779B1


@dataclass
class OptimState:
    kind: str
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    m: np.ndarray | None = None
    v: np.ndarray | None = None
    step: int = 0


def make_optimizer(kind, lr, n_params, beta1=0.9, beta2=0.999, eps=1e-8):
    if kind not in ("sgd", "adam"):
        raise ContractViolationError(f"unknown optimizer {kind!r}")
    return OptimState(kind, lr, beta1, beta2, eps,
                      np.zeros(n_params), np.zeros(n_params), 0)


def adam_step(opt, theta, grad):
    """One Adam update with bias correction; returns the new parameters."""
    if not np.all(np.isfinite(grad)):
        raise DivergenceError("non-finite gradient passed to the optimizer")
    if grad.shape != theta.shape or opt.m.shape != theta.shape:
        raise ContractViolationError("optimizer/parameter shape mismatch")
    opt.step += 1
    opt.m = opt.beta1 * opt.m + (1.0 - opt.beta1) * grad
    opt.v = opt.beta2 * opt.v + (1.0 - opt.beta2) * grad * grad
    m_hat = opt.m / (1.0 - opt.beta1 ** opt.step)
    v_hat = opt.v / (1.0 - opt.beta2 ** opt.step)
    return theta - opt.lr * m_hat / (np.sqrt(v_hat) + opt.eps)


def sgd_step(opt, theta, grad):
    if not np.all(np.isfinite(grad)):
        raise DivergenceError("non-finite gradient passed to the optimizer")
    opt.step += 1
    return theta - opt.lr * grad


def optimizer_step(opt, theta, grad):
    return adam_step(opt, theta, grad) if opt.kind == "adam" else sgd_step(opt, theta, grad)


@dataclass
class Dataset:
    name: str
    inputs: np.ndarray
    targets: np.ndarray
    seed: int
    task: str  # "regression" | "classification"

    def __len__(self):
        return self.inputs.shape[0]


def gen_dataset(name, seed, n, noise=0.05):
    """Deterministic synthetic dataset; identical (name, seed, n) regenerate
    identical samples."""
    if name not in TASKS:
        raise ContractViolationError(f"unknown task {name!r}")
    if n < 2:
        raise ContractViolationError("need at least 2 samples")
    rng = np.random.default_rng(seed)
    if name == "reflection1d":
        xs = []
        while len(xs) < n:
            cand = rng.uniform(-1.0, 1.0)
            if abs(cand) >= 0.05:
                xs.append(cand)
        x = np.array(xs).reshape(n, 1)
        return Dataset(name, x, -x, seed, "regression")
    if name == "annuli2d":
        n_in = n // 2
        r_in = np.sqrt(rng.uniform(0.0, 1.0, n_in))
        r_out = np.sqrt(rng.uniform(1.5 ** 2, 2.5 ** 2, n - n_in))
        r = np.concatenate([r_in, r_out])
        phi = rng.uniform(0.0, 2.0 * math.pi, n)
        pts = np.stack([r * np.cos(phi), r * np.sin(phi)], axis=1)
        labels = np.concatenate([np.zeros(n_in, int), np.ones(n - n_in, int)])
        order = rng.permutation(n)
        return Dataset(name, pts[order], labels[order], seed, "classification")
    # spirals2d: two interleaved Archimedean spirals, 3 turns
    n0 = n // 2
    u = np.sqrt(rng.uniform(0.05, 1.0, n))
    theta = 3.0 * 2.0 * math.pi * u
    radius = 2.0 * u
    sign = np.concatenate([np.ones(n0), -np.ones(n - n0)])
    pts = np.stack([sign * radius * np.cos(theta), sign * radius * np.sin(theta)], axis=1)
    pts += rng.normal(0.0, noise, (n, 2))
    labels = np.concatenate([np.zeros(n0, int), np.ones(n - n0, int)])
    order = rng.permutation(n)
    return Dataset(name, pts[order], labels[order], seed, "classification")


@dataclass
class EpochRow:
    epoch: int
    train_loss: float
    test_loss: float
    train_acc: float
    test_acc: float
    grad_norm: float
    wall_ms: float
    activation_memory_units: int


@dataclass
class RunMetrics:
    rows: list = field(default_factory=list)
    diverged: bool = False

    # wall_ms deliberately lives in a separate artifact: metrics.csv is
    # covered by the byte-identical determinism contract, timers are not.
    CSV_COLUMNS = ("epoch", "train_loss", "test_loss", "train_acc", "test_acc",
                   "grad_norm", "activation_memory_units")

    def to_csv(self, path):
        with open(path, "w") as fh:
            fh.write(",".join(self.CSV_COLUMNS) + "\n")
            for r in self.rows:
                fh.write(",".join([
                    repr(r.epoch), repr(r.train_loss), repr(r.test_loss),
                    repr(r.train_acc), repr(r.test_acc), repr(r.grad_norm),
                    repr(r.activation_memory_units),
                ]) + "\n")

    def timings_csv(self, path):
        with open(path, "w") as fh:
            fh.write("epoch,wall_ms\n")
            for r in self.rows:
                fh.write(f"{r.epoch},{r.wall_ms}\n")


def _evaluate(model, ds, loss_spec):
    pred = forward(model, ds.inputs)
    loss, _ = data_loss(pred, ds.targets, loss_spec.kind)
    acc = accuracy(pred, ds.targets) if ds.task == "classification" else float("nan")
    return loss, acc


def run_training(model, train_ds, test_ds, *, epochs, batch, lr, optimizer="adam",
                 l2_alpha=0.0, freq_weighted=False, grad_method="discrete", seed=0,
                 max_steps=None):
    """Seeded minibatch loop; returns RunMetrics (row 0 = initial eval).

    grad_norm is taken from the last minibatch of each epoch. Divergence
    aborts the loop and flags the partial metrics instead of raising.
    """
    loss_kind = "cross_entropy" if train_ds.task == "classification" else "mse"
    loss_spec = LossSpec(loss_kind, l2_alpha, freq_weighted)
    opt = make_optimizer(optimizer, lr, model.n_params)
    shuffle_rng = np.random.default_rng([seed, 3])

    metrics = RunMetrics()
    memory_units = model.solve.steps + 1 if grad_method == "discrete" else 3

    t_start = time.perf_counter()
    train_loss, train_acc = _evaluate(model, train_ds, loss_spec)
    test_loss, test_acc = _evaluate(model, test_ds, loss_spec)
    metrics.rows.append(EpochRow(
        0, train_loss, test_loss, train_acc, test_acc, float("nan"),
        (time.perf_counter() - t_start) * 1e3, memory_units,
    ))

    n = len(train_ds)
    steps_done = 0
    for epoch in range(1, epochs + 1):
        t_epoch = time.perf_counter()
        order = shuffle_rng.permutation(n)
        last_grad_norm = float("nan")
        try:
            for lo in range(0, n, batch):
                idx = order[lo:lo + batch]
                total, grad, info = loss_and_grad(
                    model, train_ds.inputs[idx], train_ds.targets[idx],
                    loss_spec, grad_method,
                )
                memory_units = info["activation_memory_units"]
                model.theta = optimizer_step(opt, model.theta, grad)
                last_grad_norm = float(np.linalg.norm(grad))
                steps_done += 1
                if max_steps is not None and steps_done >= max_steps:
                    break
            train_loss, train_acc = _evaluate(model, train_ds, loss_spec)
            test_loss, test_acc = _evaluate(model, test_ds, loss_spec)
        except DivergenceError:
            metrics.diverged = True
            break
        metrics.rows.append(EpochRow(
            epoch, train_loss, test_loss, train_acc, test_acc, last_grad_norm,
            (time.perf_counter() - t_epoch) * 1e3, memory_units,
        ))
        if max_steps is not None and steps_done >= max_steps:
            break
    return metrics
