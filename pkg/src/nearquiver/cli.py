"""Batch front end: ``nearquiver run <config.json> [--out DIR] [--seed N]``."""

from __future__ import annotations

import argparse
import hashlib
import json
import platform
import sys
import time
from pathlib import Path as FsPath

import jsonschema
import numpy as np

from . import __version__
from .algebra import activation, forward, typecheck
from .constants import TOLERANCES
from .errors import ConfigError, NumericalError, ValidationError
from .io import (
    alpha_from_json,
    alpha_to_json,
    decode_vector,
    dims_from_json,
    dump_json,
    ingest_csv,
    machine_from_json,
    qfa_from_json,
    quiver_from_json,
    rep_from_json,
    rep_to_json,
    tree_from_json,
)
from .learn import TrainConfig, cost, train
from .metrics import ChartCoords, gauge_fix, kahler_gram, metric_state
from .networks import linear_tree, network_tree, one_arrow, one_hidden_layer, two_hidden_layers
from .qfa import acceptance_probability, exact_distribution, qfa_program, sample_program
from .quiver import COMPLEX, REAL, random_rep

COMMANDS = ("train", "qfa-accept", "qfa-dist", "metric-check", "forward")

_QUIVER_PRESETS = {
    "one_arrow": lambda spec: one_arrow(),
    "one_hidden_layer": lambda spec: one_hidden_layer(spec.get("hidden", 2)),
    "two_hidden_layers": lambda spec: two_hidden_layers(spec.get("width", 2)),
}

_word = {"oneOf": [{"type": "string"}, {"type": "array", "items": {"type": "string"}}]}

CONFIG_SCHEMA = {
    "type": "object",
    "required": ["command"],
    "properties": {
        "command": {"enum": list(COMMANDS)},
        "seed": {"type": "integer", "minimum": 0},
        "field": {"enum": [REAL, COMPLEX]},
        "out": {"type": "string"},
        "quiver": {"type": "object"},
        "dims": {"type": "object", "required": ["d", "n"]},
        "tree": {"type": "object"},
        "rep": {"oneOf": [{"type": "string", "pattern": "^random:[0-9]*:[0-9.eE+-]+$"}, {"type": "object"}]},
        "alpha": {"oneOf": [{"type": "string"}, {"type": "number"}, {"type": "object"}]},
        "dataset": {
            "type": "object",
            "required": ["path", "inputs", "targets"],
            "properties": {
                "path": {"type": "string"},
                "inputs": {"type": "object", "additionalProperties": {"type": "array", "items": {"type": "string"}}},
                "targets": {"type": "array", "items": {"type": "string"}},
            },
        },
        "train": {
            "type": "object",
            "properties": {
                "lr": {"type": "number", "exclusiveMinimum": 0},
                "epochs": {"type": "integer", "minimum": 0},
                "batch_size": {"type": ["integer", "null"], "minimum": 1},
                "ridge": {"type": ["number", "null"], "minimum": 0},
                "refix_period": {"type": "integer", "minimum": 0},
                "backtrack": {"type": "boolean"},
                "learn_alpha": {"type": "boolean"},
            },
            "additionalProperties": False,
        },
        "inputs": {"type": "object"},
        "points": {"type": "integer", "minimum": 1},
        "scale": {"type": "number", "minimum": 0},
        "qfa": {"type": "object"},
        "machine": {"type": "object"},
        "program": {"type": "object"},
        "input": {"type": "array"},
        "word": _word,
        "mode": {"enum": ["exact", "sample"]},
        "samples": {"type": "integer", "minimum": 1},
    },
    "allOf": [
        {"if": {"properties": {"command": {"const": "train"}}}, "then": {"required": ["quiver", "dims", "tree", "rep", "alpha", "dataset"]}},
        {"if": {"properties": {"command": {"const": "forward"}}}, "then": {"required": ["quiver", "dims", "tree", "rep", "alpha", "inputs"]}},
        {"if": {"properties": {"command": {"const": "metric-check"}}}, "then": {"required": ["quiver", "dims", "alpha"]}},
        {"if": {"properties": {"command": {"const": "qfa-accept"}}}, "then": {"required": ["qfa", "word"]}},
        {"if": {"properties": {"command": {"const": "qfa-dist"}}}, "then": {"anyOf": [{"required": ["qfa", "word"]}, {"required": ["machine", "program", "input"]}]}},
    ],
}


class _Context:
    def __init__(self, cfg: dict, base: FsPath, seed: int):
        self.cfg = cfg
        self.base = base
        self.seed = seed

    def path(self, rel: str) -> FsPath:
        p = FsPath(rel)
        p = p if p.is_absolute() else self.base / p
        if not p.exists():
            raise ConfigError(f"referenced file {str(p)!r} does not exist")
        return p

    def load(self, obj):
        """Inline JSON, or ``{"file": path}`` read relative to the config."""
        if isinstance(obj, dict) and set(obj) == {"file"}:
            return json.loads(self.path(obj["file"]).read_text(encoding="utf-8"))
        return obj

    @property
    def field(self) -> str:
        return self.cfg.get("field", REAL)

    def quiver(self):
        spec = self.load(self.cfg["quiver"])
        if "preset" in spec:
            if spec["preset"] not in _QUIVER_PRESETS:
                raise ConfigError(f"unknown quiver preset {spec['preset']!r}")
            return _QUIVER_PRESETS[spec["preset"]](spec)
        return quiver_from_json(spec)

    def tree(self, q):
        spec = self.load(self.cfg["tree"])
        kind = spec.get("preset")
        if kind == "network":
            return network_tree(q, spec["output"], activation(spec.get("activation", "relu")))
        if kind == "linear":
            return linear_tree(q, spec["arrow"])
        if kind is not None:
            raise ConfigError(f"unknown tree preset {kind!r}")
        t = tree_from_json(spec, q)
        typecheck(t, q)
        return t

    def rep(self, q, dims, seed_offset: int = 0):
        spec = self.cfg["rep"]
        if isinstance(spec, str):
            _, seed, scale = spec.split(":")
            seed = int(seed) if seed else self.seed
            return random_rep(q, dims, seed + seed_offset, float(scale), self.field)
        r = rep_from_json(self.load(spec))
        if r.quiver != q:
            raise ConfigError("representation file describes a different quiver")
        return r


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True, separators=(",", ":")).encode()).hexdigest()


# -- commands ------------------------------------------------------------------


def _cmd_forward(ctx, out_dir):
    q = ctx.quiver()
    dims = dims_from_json(ctx.cfg["dims"], q)
    tree, r = ctx.tree(q), ctx.rep(q, dims)
    alpha = alpha_from_json(ctx.cfg["alpha"], q)
    decode = decode_vector if r.field == COMPLEX else (lambda v: np.asarray(v, dtype=float))
    inputs = {k: decode(v) for k, v in ctx.cfg["inputs"].items()}
    y = forward(tree, r, metric_state(r, alpha), inputs)
    out = y.tolist() if r.field == REAL else [[float(z.real), float(z.imag)] for z in np.ravel(y)]
    return {"output": out}


def _closed_form_deviation(r, st):
    """Scalar one-hidden-layer net at the moduli weights, gauge-fixed.

    Returns deviations of ``H_hk`` from ``1/(1+|x_k|^2)``, of ``H_out`` from
    ``1/(1+sum_k |w2_k|^2 |x_k|^2)``, and of ``H_out`` from the all-paths
    value ``1/(1+sum_k |w2_k|^2 (1+|x_k|^2))``, with ``x_k = (w1_1k, w1_2k)``.
    """
    hidden = [v for v in r.quiver.vertices if v.startswith("h")]
    dev_h = 0.0
    x2, full = {}, 1.0
    for k, h in enumerate(hidden, start=1):
        x2[k] = sum(abs(r.weights[f"a1_{j}{k}"][0, 0]) ** 2 for j in (1, 2))
        dev_h = max(dev_h, abs(st.H[h][0, 0].real - 1 / (1 + x2[k])))
        w2 = abs(r.weights[f"a2_{k}"][0, 0]) ** 2
        full += w2 * (1 + x2[k])
    reference = 1 / (1 + sum(abs(r.weights[f"a2_{k}"][0, 0]) ** 2 * x2[k] for k in x2))
    h_out = st.H["out"][0, 0].real
    return dev_h, abs(h_out - reference), abs(h_out - 1 / full)


def _cmd_metric_check(ctx, out_dir):
    q = ctx.quiver()
    dims = dims_from_json(ctx.cfg["dims"], q)
    alpha = alpha_from_json(ctx.cfg["alpha"], q)
    chart = ChartCoords(q, dims, ctx.field)
    n_points = ctx.cfg.get("points", 1 if "rep" in ctx.cfg else 100)
    scale = ctx.cfg.get("scale", 1.0)
    spec = ctx.cfg.get("quiver", {})
    closed_form = (
        isinstance(spec, dict)
        and spec.get("preset") == "one_hidden_layer"
        and all(v == 1 for v in dims.d.values())
        and all(v == 1 for v in dims.n.values())
        and alpha.name == "moduli"
    )
    points = []
    worst = {"hidden_metric": 0.0, "output_metric_reference": 0.0, "output_metric_all_paths": 0.0}
    for k in range(n_points):
        r = ctx.rep(q, dims, k) if "rep" in ctx.cfg else random_rep(q, dims, ctx.seed + k, scale, ctx.field)
        r, _ = gauge_fix(r, chart)
        st = metric_state(r, alpha)
        G = kahler_gram(r, alpha, chart, st)
        ev = np.linalg.eigvalsh(G)
        rec = {
            "min_gram_eigenvalue": st.min_eigenvalue,
            "kahler_eigenvalue_range": [float(ev[0]), float(ev[-1])] if ev.size else [],
            "log_det": float(sum(st.logdet.values())),
        }
        if closed_form:
            dh, do, df = _closed_form_deviation(r, st)
            rec.update({"hidden_metric_deviation": dh, "output_metric_reference_deviation": do, "output_metric_all_paths_deviation": df})
            worst["hidden_metric"] = max(worst["hidden_metric"], dh)
            worst["output_metric_reference"] = max(worst["output_metric_reference"], do)
            worst["output_metric_all_paths"] = max(worst["output_metric_all_paths"], df)
        points.append(rec)
    res = {"points": len(points), "min_gram_eigenvalue": min(p["min_gram_eigenvalue"] for p in points), "samples": points}
    if closed_form:
        res["max_deviation"] = worst
    return res


def _cmd_train(ctx, out_dir):
    q = ctx.quiver()
    dims = dims_from_json(ctx.cfg["dims"], q)
    tree, r0 = ctx.tree(q), ctx.rep(q, dims)
    alpha = alpha_from_json(ctx.cfg["alpha"], q)
    d = ctx.cfg["dataset"]
    ds = ingest_csv(ctx.path(d["path"]), d["inputs"], d["targets"])
    tcfg = TrainConfig(seed=ctx.seed, **ctx.cfg.get("train", {}))
    initial = cost(tree, r0, alpha, ds)
    r, trace, alpha = train(tree, r0, ds, tcfg, alpha)
    final = cost(tree, r, alpha, ds)
    (out_dir / "trace.jsonl").write_text(trace.to_jsonl(), encoding="utf-8")
    model = rep_to_json(r)
    model["alpha"] = alpha_to_json(alpha)
    dump_json(model, out_dir / "model.json")
    return {"initial_cost": initial, "final_cost": final, "steps": len(trace), "model": "model.json", "trace": "trace.jsonl"}


def _cmd_qfa_accept(ctx, out_dir):
    m = qfa_from_json(ctx.load(ctx.cfg["qfa"]))
    return {"pr": acceptance_probability(m, ctx.cfg["word"])}


def _cmd_qfa_dist(ctx, out_dir):
    cfg = ctx.cfg
    if "qfa" in cfg:
        m = qfa_from_json(ctx.load(cfg["qfa"]))
        tree, machine, inputs = qfa_program(m, cfg["word"])
    else:
        machine = machine_from_json(ctx.load(cfg["machine"]))
        tree = tree_from_json(ctx.load(cfg["program"]))
        inputs = decode_vector(cfg["input"])
    if cfg.get("mode", "exact") == "exact":
        dist = exact_distribution(tree, machine, inputs)
    else:
        dist = sample_program(tree, machine, inputs, np.random.default_rng(ctx.seed), cfg.get("samples", 100_000))
    payload = {"mode": cfg.get("mode", "exact"), "distribution": dist.to_json()}
    dump_json(payload, out_dir / "dist.json")
    res = {"outcomes": len(dist.probs), "total": dist.total, "dist": "dist.json"}
    if "qfa" in cfg:
        res["accept_mass"] = float(sum(dist[(j,)] for j in m.accept))
    return res


_HANDLERS = {
    "forward": _cmd_forward,
    "metric-check": _cmd_metric_check,
    "train": _cmd_train,
    "qfa-accept": _cmd_qfa_accept,
    "qfa-dist": _cmd_qfa_dist,
}


def _versions() -> dict:
    return {"nearquiver": __version__, "numpy": np.__version__, "python": platform.python_version()}


def run(config_path, out_dir=None, seed=None) -> int:
    """Execute one experiment; always writes ``result.json`` and returns the exit code."""
    t0 = time.perf_counter()
    config_path = FsPath(config_path)
    record = {"config": str(config_path), "tolerances": TOLERANCES.as_dict(), "versions": _versions()}
    out = FsPath(out_dir) if out_dir is not None else None
    code = 0
    try:
        try:
            cfg = json.loads(config_path.read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ConfigError(f"config file {str(config_path)!r} not found") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from None
        record["config_hash"] = config_hash(cfg)
        try:
            jsonschema.validate(cfg, CONFIG_SCHEMA)
        except jsonschema.ValidationError as exc:
            raise ConfigError(f"config schema violation at {list(exc.absolute_path)}: {exc.message}") from None
        seed_used = seed if seed is not None else cfg.get("seed", 0)
        record.update(command=cfg["command"], seed=seed_used)
        if out is None:
            out = config_path.parent / cfg.get("out", "out")
        out.mkdir(parents=True, exist_ok=True)
        ctx = _Context(cfg, config_path.parent, seed_used)
        record["result"] = _HANDLERS[cfg["command"]](ctx, out)
        record["status"] = "ok"
    except (ValidationError, KeyError, TypeError, ValueError) as exc:
        code = 2
        record.update(status="error", error={"kind": type(exc).__name__, "message": str(exc), "exit_code": 2})
    except (NumericalError, np.linalg.LinAlgError) as exc:
        code = 3
        record.update(status="error", error={"kind": type(exc).__name__, "message": str(exc), "exit_code": 3})
    record.setdefault("config_hash", None)
    record.setdefault("seed", seed)
    record["wall_time_s"] = time.perf_counter() - t0
    if out is None:
        out = config_path.parent / "out"
    out.mkdir(parents=True, exist_ok=True)
    dump_json(record, out / "result.json")
    if code:
        print(json.dumps(record["error"]), file=sys.stderr)
    return code


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="nearquiver", description=__doc__)
    sub = parser.add_subparsers(dest="action", required=True)
    p = sub.add_parser("run", help="run an experiment config")
    p.add_argument("config", help="path to a JSON experiment config")
    p.add_argument("--out", help="output directory (default: <config dir>/<config 'out' or 'out'>)")
    p.add_argument("--seed", type=int, help="override the config seed")
    args = parser.parse_args(argv)
    return run(args.config, args.out, args.seed)


if __name__ == "__main__":
    sys.exit(main())
