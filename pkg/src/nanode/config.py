"""Run configuration schema, validation, model building, checkpoints.

Configs are plain JSON with a fixed nested key schema. Validation never
stops at the first problem: every violated key is collected so one error
message lists them all. Checkpoints echo the effective config plus the
flat parameter vector, which is enough to rebuild the model bit-exactly
(frozen random-feature draws are regenerated from the stored seed).
"""

import copy
import json

import numpy as np

from .dynamics import ACTIVATIONS, VARIANTS, GatedMixture, build_stack
from .errors import ConfigValidationError
from .model import NanodeModel
from .odeint import METHODS, SolveSpec
from .timebasis import KINDS, make_spec
from .train import TASKS

CHECKPOINT_VERSION = 1

# task -> (input dim, output dim, kind)
TASK_INFO = {
    "reflection1d": (1, 1, "regression"),
    "annuli2d": (2, 2, "classification"),
    "spirals2d": (2, 2, "classification"),
}

FIELD_KINDS = ("per_entry", "skew", "ortho", "hypernet")

DEFAULTS = {
    "task": {"name": "spirals2d", "n_train": 512, "n_test": 512, "noise": 0.05},
    "model": {
        "variant": "nanode",
        "state_dim": 8,
        "layers": 1,
        "activation": "tanh",
        "stems": "affine",
        "field": "per_entry",
        "mixture_size": 2,
    },
    "basis": {"kind": "trigonometric", "order": 4, "freq_scale": 1.0, "init": "fanin"},
    "ortho": {"enabled": False},
    "solver": {"method": "rk4", "steps": 32, "horizon": 1.0},
    "grad": {"method": "discrete"},
    "train": {
        "lr": 1e-3,
        "epochs": 50,
        "batch": 64,
        "l2_alpha": 0.0,
        "freq_weighted_penalty": False,
        "optimizer": "adam",
        "seed": 0,
        "max_steps": None,
    },
    "output": {"dir": "runs/out"},
}


def merge_defaults(raw):
    """Deep-merge a raw dict over the defaults; unknown keys are kept so
    validation can name them."""
    cfg = copy.deepcopy(DEFAULTS)
    for section, body in (raw or {}).items():
        if section not in cfg or not isinstance(body, dict):
            cfg[section] = body
            continue
        for key, value in body.items():
            cfg[section][key] = value
    return cfg


def _want(violations, cond, key, message):
    if not cond:
        violations.append(f"{key}: {message}")


def validate_config(raw):
    """Full config with defaults applied; raises listing every bad key."""
    cfg = merge_defaults(raw)
    v = []

    for section in cfg:
        if section not in DEFAULTS:
            v.append(f"{section}: unknown section")
    for section, body in DEFAULTS.items():
        got = cfg.get(section)
        if not isinstance(got, dict):
            v.append(f"{section}: must be an object")
            continue
        for key in got:
            if key not in body:
                v.append(f"{section}.{key}: unknown key")

    if isinstance(cfg.get("task"), dict):
        t = cfg["task"]
        _want(v, t.get("name") in TASKS, "task.name", f"must be one of {TASKS}")
        for key in ("n_train", "n_test"):
            _want(v, isinstance(t.get(key), int) and t.get(key, 0) >= 2, f"task.{key}",
                  "must be an integer >= 2")

    m = cfg.get("model", {})
    if isinstance(m, dict):
        _want(v, m.get("variant") in VARIANTS, "model.variant", f"must be one of {VARIANTS}")
        _want(v, isinstance(m.get("state_dim"), int) and m.get("state_dim", 0) >= 1,
              "model.state_dim", "must be a positive integer")
        _want(v, isinstance(m.get("layers"), int) and m.get("layers", 0) >= 1,
              "model.layers", "must be a positive integer")
        act = m.get("activation")
        acts = [act] if isinstance(act, str) else act
        _want(v, isinstance(acts, list) and all(a in ACTIVATIONS for a in acts),
              "model.activation", f"entries must be in {ACTIVATIONS}")
        _want(v, m.get("stems") in ("affine", "identity"), "model.stems",
              "must be 'affine' or 'identity'")
        _want(v, m.get("field") in FIELD_KINDS, "model.field", f"must be one of {FIELD_KINDS}")
        _want(v, isinstance(m.get("mixture_size"), int) and m.get("mixture_size", 0) >= 1,
              "model.mixture_size", "must be a positive integer")

    b = cfg.get("basis", {})
    if isinstance(b, dict):
        _want(v, b.get("kind") in KINDS, "basis.kind", f"must be one of {KINDS}")
        order = b.get("order")
        _want(v, isinstance(order, int) and order >= 0, "basis.order", "must be >= 0")
        if isinstance(order, int) and order == 0 and b.get("kind") not in ("constant", "trigonometric"):
            v.append("basis.order: must be >= 1 for this kind")
        _want(v, isinstance(b.get("freq_scale"), (int, float)) and b.get("freq_scale", 0) > 0,
              "basis.freq_scale", "must be positive")
        _want(v, b.get("init") in ("fanin", "scale1"), "basis.init",
              "must be 'fanin' or 'scale1'")

    o = cfg.get("ortho", {})
    if isinstance(o, dict):
        _want(v, isinstance(o.get("enabled"), bool), "ortho.enabled", "must be a boolean")

    s = cfg.get("solver", {})
    if isinstance(s, dict):
        _want(v, s.get("method") in METHODS, "solver.method", f"must be one of {METHODS}")
        _want(v, isinstance(s.get("steps"), int) and s.get("steps", 0) >= 1,
              "solver.steps", "must be a positive integer")
        _want(v, isinstance(s.get("horizon"), (int, float)) and s.get("horizon", 0) > 0,
              "solver.horizon", "must be positive")

    g = cfg.get("grad", {})
    if isinstance(g, dict):
        _want(v, g.get("method") in ("discrete", "adjoint"), "grad.method",
              "must be 'discrete' or 'adjoint'")

    tr = cfg.get("train", {})
    if isinstance(tr, dict):
        _want(v, isinstance(tr.get("lr"), (int, float)) and tr.get("lr", 0) > 0,
              "train.lr", "must be positive")
        _want(v, isinstance(tr.get("epochs"), int) and tr.get("epochs", -1) >= 0,
              "train.epochs", "must be >= 0")
        _want(v, isinstance(tr.get("batch"), int) and tr.get("batch", 0) >= 1,
              "train.batch", "must be a positive integer")
        _want(v, isinstance(tr.get("l2_alpha"), (int, float)) and tr.get("l2_alpha", -1) >= 0,
              "train.l2_alpha", "must be non-negative")
        _want(v, isinstance(tr.get("seed"), int), "train.seed", "must be an integer")
        _want(v, tr.get("optimizer") in ("sgd", "adam"), "train.optimizer",
              "must be 'sgd' or 'adam'")
        ms = tr.get("max_steps")
        _want(v, ms is None or (isinstance(ms, int) and ms >= 1), "train.max_steps",
              "must be null or a positive integer")

    # adjoint through bucketed bases needs bucket-aligned steps
    if (
        isinstance(b, dict) and isinstance(s, dict) and isinstance(g, dict)
        and b.get("kind") == "bucketed" and g.get("method") == "adjoint"
        and isinstance(b.get("order"), int) and isinstance(s.get("steps"), int)
        and b.get("order", 0) >= 1 and s.get("steps", 0) % b.get("order", 1) != 0
    ):
        v.append(
            "solver.steps, basis.order: adjoint gradients with bucketed bases "
            f"need steps divisible by the bucket count "
            f"(steps={s['steps']}, order={b['order']})"
        )

    out = cfg.get("output", {})
    if isinstance(out, dict):
        _want(v, isinstance(out.get("dir"), str) and out.get("dir"), "output.dir",
              "must be a non-empty string")

    if v:
        raise ConfigValidationError(v)
    return cfg


def canonical_json(obj):
    return json.dumps(obj, indent=2, sort_keys=True)


def load_config(path):
    with open(path) as fh:
        return json.load(fh)


def build_model(cfg):
    """Model from a validated config; consumes rng draws in a fixed order
    (frozen basis draws first, then stem/flow/head initialization)."""
    seed = cfg["train"]["seed"]
    rng = np.random.default_rng([seed, 2])
    m = cfg["model"]
    b = cfg["basis"]
    s = cfg["solver"]
    n = m["state_dim"]
    horizon = float(s["horizon"])
    in_dim, out_dim, _ = TASK_INFO[cfg["task"]["name"]]

    variant = m["variant"]
    field_kind = "ortho" if cfg["ortho"]["enabled"] else m["field"]
    activations = m["activation"]
    if isinstance(activations, str):
        activations = [activations] * m["layers"]

    if variant in ("autonomous", "append_time"):
        # weights are plain learned matrices: constant bases
        spec = make_spec("constant", 0, horizon, rng=rng)
    else:
        spec = make_spec(b["kind"], b["order"], horizon, b["freq_scale"], rng=rng)

    if variant == "gated_mixture":
        subs = [
            build_stack(n, m["layers"], spec, activations, field_kind, horizon=horizon)
            for _ in range(m["mixture_size"])
        ]
        dyn = GatedMixture(n, subs, horizon=horizon)
    else:
        dyn = build_stack(
            n, m["layers"], spec, activations,
            "hypernet" if variant == "hypernet" else field_kind,
            append_time=(variant == "append_time"),
            variant=variant, horizon=horizon,
        )

    solve = SolveSpec(s["method"], 0.0, horizon, s["steps"], store_all=True)
    model = NanodeModel(dyn, solve, in_dim, out_dim, stems=m["stems"])
    model.init_theta(rng, scheme=b["init"])
    return model


def save_checkpoint(path, model, cfg, summary=None):
    payload = {
        "format_version": CHECKPOINT_VERSION,
        "config": cfg,
        "views": [[v.name, v.offset, v.length] for v in model.views],
        "theta": [float(x) for x in model.theta],
        "summary": summary or {},
    }
    with open(path, "w") as fh:
        fh.write(canonical_json(payload))
        fh.write("\n")


def load_checkpoint(path):
    with open(path) as fh:
        payload = json.load(fh)
    if payload.get("format_version") != CHECKPOINT_VERSION:
        raise ConfigValidationError([
            f"checkpoint format_version: expected {CHECKPOINT_VERSION}, "
            f"got {payload.get('format_version')}"
        ])
    cfg = validate_config(payload["config"])
    model = build_model(cfg)
    theta = np.array(payload["theta"], dtype=float)
    if theta.shape != model.theta.shape:
        raise ConfigValidationError(["checkpoint theta: length mismatch with config"])
    model.theta = theta
    return model, cfg, payload.get("summary", {})
