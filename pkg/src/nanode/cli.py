"""Command-line entry points.

Commands: train, gradcheck, stability, orthobench, datagen. Exit codes:
0 success, 1 check failure, 2 invalid config, 3 fatal runtime divergence.

Every artifact except the timing files (timings.csv / timings.json /
orthobench_timings.csv) is byte-identical across reruns with the same
config and seed; wall-clock measurements live only in those files.
"""

import argparse
import json
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import config as cfgmod
from .errors import ConfigValidationError, ContractViolationError
from .grad import grad_adjoint, grad_discrete, grad_fd, max_rel_err
from .odeint import SolveSpec
from .ortho import HouseholderChain, OpCounter, chain_apply, chain_materialize
from .sensitivity import gradient_flow_report
from .train import TEST_SEED_OFFSET, gen_dataset, run_training

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_BAD_CONFIG = 2
EXIT_DIVERGED = 3

# Documented gradcheck tolerances.
TOL_JAC_FD = 1e-6
TOL_DISCRETE_FD = 1e-6
TOL_ADJOINT_DISCRETE = 1e-3


def _threads():
    try:
        return max(1, int(os.environ.get("NANODE_THREADS", "1")))
    except ValueError:
        return 1


def _say(args, *msg):
    if not args.quiet:
        print(*msg)


def _load_validated(args):
    raw = cfgmod.load_config(args.config)
    cfg = cfgmod.validate_config(raw)
    if args.seed is not None:
        cfg["train"]["seed"] = args.seed
    if args.out is not None:
        cfg["output"]["dir"] = args.out
    return cfg


def _outdir(cfg):
    path = cfg["output"]["dir"]
    os.makedirs(path, exist_ok=True)
    return path


def _write_json(path, payload):
    with open(path, "w") as fh:
        fh.write(cfgmod.canonical_json(payload))
        fh.write("\n")


def _datasets(cfg):
    t = cfg["task"]
    seed = cfg["train"]["seed"]
    train_ds = gen_dataset(t["name"], seed, t["n_train"], t.get("noise", 0.05))
    test_ds = gen_dataset(t["name"], seed + TEST_SEED_OFFSET, t["n_test"], t.get("noise", 0.05))
    return train_ds, test_ds


def cmd_train(args):
    cfg = _load_validated(args)
    out = _outdir(cfg)
    t_start = time.perf_counter()

    train_ds, test_ds = _datasets(cfg)
    model = cfgmod.build_model(cfg)
    tr = cfg["train"]
    metrics = run_training(
        model, train_ds, test_ds,
        epochs=tr["epochs"], batch=tr["batch"], lr=tr["lr"],
        optimizer=tr["optimizer"], l2_alpha=tr["l2_alpha"],
        freq_weighted=tr["freq_weighted_penalty"],
        grad_method=cfg["grad"]["method"], seed=tr["seed"],
        max_steps=tr["max_steps"],
    )

    metrics.to_csv(os.path.join(out, "metrics.csv"))
    metrics.timings_csv(os.path.join(out, "timings.csv"))
    last = metrics.rows[-1]
    summary = {
        "task": cfg["task"]["name"],
        "variant": cfg["model"]["variant"],
        "basis_kind": cfg["basis"]["kind"],
        "basis_order": cfg["basis"]["order"],
        "grad_method": cfg["grad"]["method"],
        "seed": tr["seed"],
        "parameter_count": model.n_params,
        "activation_memory_units": last.activation_memory_units,
        "epochs_run": last.epoch,
        "final_train_loss": last.train_loss,
        "final_test_loss": last.test_loss,
        "final_train_acc": last.train_acc,
        "final_test_acc": last.test_acc,
        "diverged": metrics.diverged,
    }
    cfgmod.save_checkpoint(os.path.join(out, "checkpoint.json"), model, cfg, summary)
    _write_json(os.path.join(out, "summary.json"), summary)
    _write_json(os.path.join(out, "timings.json"),
                {"total_wall_ms": (time.perf_counter() - t_start) * 1e3})

    _say(args, f"[train] {cfg['task']['name']} variant={summary['variant']} "
               f"params={summary['parameter_count']}")
    _say(args, f"[train] final train loss {last.train_loss:.6g} "
               f"test loss {last.test_loss:.6g} train acc {last.train_acc:.4g} "
               f"test acc {last.test_acc:.4g}")
    if metrics.diverged:
        _say(args, "[train] run diverged; partial metrics written")
        return EXIT_DIVERGED
    return EXIT_OK


def _gradcheck_instance(cfg, seed, corrupt):
    """Max relative errors (jac-vs-fd, discrete-vs-fd, adjoint-vs-discrete)
    for one randomly probed copy of the configured dynamics."""
    model = cfgmod.build_model(cfg)
    dyn = model.dynamics
    solve = model.solve
    rng = np.random.default_rng([cfg["train"]["seed"], 4, seed])
    theta = model.flow_theta().copy()
    theta += rng.normal(0.0, 0.2, theta.shape)
    x0 = rng.normal(0.0, 1.0, dyn.n)
    t_probe = 0.5 * solve.t1

    # jacobians against central differences
    h = 1e-6
    jx = dyn.jac_x(x0, t_probe, theta)
    jt = dyn.jac_theta(x0, t_probe, theta)
    if corrupt:
        jt = jt + 1e-3
    fd_x = np.zeros_like(jx)
    for i in range(dyn.n):
        xp = x0.copy(); xp[i] += h
        xm = x0.copy(); xm[i] -= h
        fd_x[:, i] = (dyn.f(xp, t_probe, theta) - dyn.f(xm, t_probe, theta)) / (2 * h)
    fd_t = np.zeros_like(jt)
    for i in range(theta.shape[0]):
        step = h * max(1.0, abs(theta[i]))
        tp = theta.copy(); tp[i] += step
        tm = theta.copy(); tm[i] -= step
        fd_t[:, i] = (dyn.f(x0, t_probe, tp) - dyn.f(x0, t_probe, tm)) / (2 * step)
    jac_err = max(max_rel_err(jx, fd_x), max_rel_err(jt, fd_t))

    # gradient routes on a linear probe loss c . x(T)
    c = rng.normal(0.0, 1.0, dyn.n)
    spec = SolveSpec(solve.method, solve.t0, solve.t1, solve.steps)
    gd = grad_discrete(dyn, x0, theta, spec, c)
    gf = grad_fd(dyn, x0, theta, spec, lambda xt: float(c @ xt))
    disc_err = max(max_rel_err(gd.d_theta, gf.d_theta), max_rel_err(gd.d_x0, gf.d_x0))
    try:
        ga = grad_adjoint(dyn, x0, theta, spec, c)
        adj_err = max(max_rel_err(ga.d_theta, gd.d_theta), max_rel_err(ga.d_x0, gd.d_x0))
    except ContractViolationError:
        adj_err = float("nan")  # bucketed steps not bucket-aligned
    return jac_err, disc_err, adj_err


def cmd_gradcheck(args):
    cfg = _load_validated(args)
    out = _outdir(cfg)
    corrupt = bool(os.environ.get("NANODE_GRADCHECK_CORRUPT"))
    seeds = list(range(args.instances))
    with ThreadPoolExecutor(max_workers=_threads()) as pool:
        results = list(pool.map(lambda s: _gradcheck_instance(cfg, s, corrupt), seeds))

    jac = max(r[0] for r in results)
    disc = max(r[1] for r in results)
    adj_vals = [r[2] for r in results if not np.isnan(r[2])]
    adj = max(adj_vals) if adj_vals else float("nan")

    checks = [
        ("jacobian_vs_fd", jac, TOL_JAC_FD),
        ("discrete_vs_fd", disc, TOL_DISCRETE_FD),
        ("adjoint_vs_discrete", adj, TOL_ADJOINT_DISCRETE),
    ]
    ok = True
    worst = None
    _say(args, f"{'check':24s} {'max rel err':>14s} {'tolerance':>12s}")
    for name, err, tol in checks:
        passed = bool(np.isnan(err)) or err <= tol
        ok = ok and passed
        if not passed and (worst is None or err / tol > worst[1]):
            worst = (name, err / tol)
        _say(args, f"{name:24s} {err:14.3e} {tol:12.0e}  {'ok' if passed else 'FAIL'}")
    _write_json(os.path.join(out, "gradcheck.json"), {
        "instances": args.instances,
        "checks": {name: {"max_rel_err": err, "tolerance": tol} for name, err, tol in checks},
        "pass": ok,
    })
    if not ok:
        _say(args, f"[gradcheck] FAILED, worst offender: {worst[0]}")
        return EXIT_CHECK_FAILED
    return EXIT_OK


def cmd_stability(args):
    cfg = _load_validated(args)
    out = _outdir(cfg)
    if args.checkpoint:
        model, cfg_ck, _ = cfgmod.load_checkpoint(args.checkpoint)
    else:
        model = cfgmod.build_model(cfg)

    train_ds, _ = _datasets(cfg)
    probe = model._stem_in(train_ds.inputs[:1], model.theta)[0]
    report = gradient_flow_report(model.dynamics, probe, model.flow_theta(), model.solve)
    report.to_csv(os.path.join(out, "stability.csv"), include_weight_norm=True)
    payload = {
        "diverged": report.diverged,
        "rows": len(report.rows),
        "max_norm_S": report.max_norm("norm_S"),
        "max_norm_A": report.max_norm("norm_A"),
        "max_norm_Phi": report.max_norm("norm_Phi"),
        "max_norm_W": report.max_norm("norm_W"),
        "max_skew_defect": report.max_norm("skew_defect"),
    }
    _write_json(os.path.join(out, "stability.json"), payload)
    _say(args, f"[stability] rows={payload['rows']} diverged={report.diverged} "
               f"max ||W||={payload['max_norm_W']:.6g} "
               f"max ||Phi||={payload['max_norm_Phi']:.6g}")
    return EXIT_OK


def _dense_apply_counted(w, x, counter):
    counter.mul += w.shape[0] * w.shape[1]
    counter.add += w.shape[0] * (w.shape[1] - 1)
    return w @ x


def cmd_orthobench(args):
    os.makedirs(args.out, exist_ok=True)
    rng = np.random.default_rng(args.seed if args.seed is not None else 0)
    n, d, repeats = args.N, args.d, args.repeats
    if n < 1 or d < 1 or repeats < 1:
        print("orthobench: N, d, repeats must be positive", file=sys.stderr)
        return EXIT_BAD_CONFIG
    chain = HouseholderChain(rng.normal(0.0, 1.0, (d, n)))
    x = rng.normal(0.0, 1.0, n)
    dense = chain_materialize(chain)

    # correctness cross-check before timing anything
    mismatch = float(np.max(np.abs(chain_apply(chain, x) - dense @ x)))
    if mismatch > 1e-10:
        print(f"orthobench: methods disagree by {mismatch:.3e}", file=sys.stderr)
        return EXIT_CHECK_FAILED

    counter_chain = OpCounter()
    chain_apply(chain, x, counter_chain)
    counter_dense = OpCounter()
    _dense_apply_counted(dense, x, counter_dense)

    t0 = time.perf_counter_ns()
    for _ in range(repeats):
        chain_apply(chain, x)
    ns_chain = (time.perf_counter_ns() - t0) / repeats
    t0 = time.perf_counter_ns()
    for _ in range(repeats):
        dense @ x
    ns_dense = (time.perf_counter_ns() - t0) / repeats

    with open(os.path.join(args.out, "orthobench.csv"), "w") as fh:
        fh.write("N,d,method,flop_count\n")
        fh.write(f"{n},{d},chain,{counter_chain.total}\n")
        fh.write(f"{n},{d},dense,{counter_dense.total}\n")
    with open(os.path.join(args.out, "orthobench_timings.csv"), "w") as fh:
        fh.write("N,d,method,ns_per_apply\n")
        fh.write(f"{n},{d},chain,{ns_chain}\n")
        fh.write(f"{n},{d},dense,{ns_dense}\n")
    _say(args, f"[orthobench] N={n} d={d} mismatch={mismatch:.2e}")
    _say(args, f"[orthobench] chain: {counter_chain.total} flops, {ns_chain:.0f} ns/apply")
    _say(args, f"[orthobench] dense: {counter_dense.total} flops, {ns_dense:.0f} ns/apply")
    return EXIT_OK


def cmd_datagen(args):
    if not args.config and not args.task:
        print("datagen needs --task or --config", file=sys.stderr)
        return EXIT_BAD_CONFIG
    if args.config:
        cfg = _load_validated(args)
        name = cfg["task"]["name"]
        n = cfg["task"]["n_train"]
        seed = cfg["train"]["seed"]
        noise = cfg["task"].get("noise", 0.05)
        out = _outdir(cfg)
    else:
        name, n, seed, noise = args.task, args.n, args.seed or 0, args.noise
        out = args.out or "."
        os.makedirs(out, exist_ok=True)
    ds = gen_dataset(name, seed, n, noise)
    path = os.path.join(out, f"{name}.csv")
    with open(path, "w") as fh:
        header = [f"x{i}" for i in range(ds.inputs.shape[1])] + ["target"]
        fh.write(",".join(header) + "\n")
        for row, tgt in zip(ds.inputs, np.asarray(ds.targets).reshape(len(ds), -1)):
            vals = [repr(v) for v in row] + [repr(t) for t in tgt]
            fh.write(",".join(vals) + "\n")
    _say(args, f"[datagen] wrote {len(ds)} samples to {path}")
    return EXIT_OK


def make_parser():
    parser = argparse.ArgumentParser(
        prog="nanode",
        description="Non-autonomous neural ODE experiments and diagnostics",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, needs_config=True):
        p.add_argument("--config", required=needs_config, help="path to a JSON run config")
        p.add_argument("--out", default=None, help="output directory (overrides config)")
        p.add_argument("--seed", type=int, default=None, help="seed override")
        p.add_argument("--quiet", action="store_true")

    common(sub.add_parser("train", help="run a training experiment"))
    p = sub.add_parser("gradcheck", help="cross-check every gradient route")
    common(p)
    p.add_argument("--instances", type=int, default=3)
    p = sub.add_parser("stability", help="emit gradient-flow diagnostics")
    common(p)
    p.add_argument("--checkpoint", default=None, help="load parameters from a checkpoint")
    p = sub.add_parser("orthobench", help="reflection chain vs dense matvec cost")
    p.add_argument("--N", type=int, required=True)
    p.add_argument("--d", type=int, required=True)
    p.add_argument("--repeats", type=int, default=1000)
    p.add_argument("--out", default=".")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--quiet", action="store_true")
    p = sub.add_parser("datagen", help="write a synthetic dataset to CSV")
    common(p, needs_config=False)
    p.add_argument("--task", default=None)
    p.add_argument("--n", type=int, default=256)
    p.add_argument("--noise", type=float, default=0.05)
    return parser


def main(argv=None):
    args = make_parser().parse_args(argv)
    handlers = {
        "train": cmd_train,
        "gradcheck": cmd_gradcheck,
        "stability": cmd_stability,
        "orthobench": cmd_orthobench,
        "datagen": cmd_datagen,
    }
    try:
        return handlers[args.command](args)
    except ConfigValidationError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_BAD_CONFIG
    except (OSError, json.JSONDecodeError) as exc:
        print(f"cannot read input: {exc}", file=sys.stderr)
        return EXIT_BAD_CONFIG


def entrypoint():
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
