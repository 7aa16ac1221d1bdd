"""JSON encodings of quivers, representations, trees and automata; CSV datasets.

Complex entries are ``[re, im]`` pairs. Real entries are plain numbers.
Floats go through ``json``'s shortest round-trip formatting.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path as FsPath
from typing import Mapping, Sequence

import numpy as np

from .algebra import Act, HattedElement, Input, Sum, Term, activation
from .errors import BadHeader, ConfigError, NonNumericCell, ShapeMismatch
from .learn import Dataset
from .metrics import PRESETS, AlphaWeights, all_path_keys
from .qfa import HattedWord, Qfa, QuantumMachine, random_unitary
from .quiver import COMPLEX, REAL, DimData, FramedRep, Path, Quiver

# -- numbers and matrices ----------------------------------------------------


def encode_scalar(z):
    z = complex(z)
    return z.real if z.imag == 0 else [z.real, z.imag]


def decode_scalar(x) -> complex:
    if isinstance(x, (list, tuple)):
        if len(x) != 2:
            raise ConfigError(f"complex number must be a [re, im] pair, got {x!r}")
        return complex(float(x[0]), float(x[1]))
    if isinstance(x, bool) or not isinstance(x, (int, float)):
        raise ConfigError(f"not a number: {x!r}")
    return complex(float(x))


def encode_matrix(a, field: str) -> list:
    a = np.asarray(a)
    if field == REAL:
        return np.asarray(a, dtype=float).tolist()
    return [[[float(z.real), float(z.imag)] for z in row] for row in np.asarray(a, dtype=complex)]


def decode_matrix(rows, field: str, shape=None) -> np.ndarray:
    a = np.array(rows, dtype=float)
    if shape is not None and 0 in shape and a.size == 0:
        return np.zeros(shape, dtype=float if field == REAL else complex)
    if field != REAL:
        if a.ndim < 1 or a.shape[-1] != 2:
            raise ConfigError("complex matrix entries must be [re, im] pairs")
        a = a[..., 0] + 1j * a[..., 1]
    if shape is not None and a.shape != tuple(shape):
        raise ShapeMismatch(f"matrix has shape {a.shape}, expected {tuple(shape)}")
    return a


def encode_vector(v) -> list:
    return [[float(z.real), float(z.imag)] for z in np.asarray(v, dtype=complex)]


def decode_vector(xs) -> np.ndarray:
    return np.array([decode_scalar(x) for x in xs], dtype=complex)


# -- quivers and representations ----------------------------------------------


def quiver_to_json(q: Quiver) -> dict:
    return {"vertices": list(q.vertices), "arrows": [[a.id, a.tail, a.head] for a in q.arrows]}


def quiver_from_json(obj) -> Quiver:
    try:
        return Quiver(obj["vertices"], [tuple(a) for a in obj["arrows"]])
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"malformed quiver: {exc}") from None


def dims_to_json(dims: DimData) -> dict:
    return {"d": dict(dims.d), "n": dict(dims.n)}


def dims_from_json(obj, q: Quiver | None = None) -> DimData:
    if isinstance(obj, Mapping) and "d" in obj and "n" in obj:
        d, n = obj["d"], obj["n"]
        if q is not None:
            d = {v: d for v in q.vertices} if isinstance(d, int) else d
            n = {v: n for v in q.vertices} if isinstance(n, int) else n
        return DimData(d, n)
    raise ConfigError("dims must be {'d': ..., 'n': ...}")


def rep_to_json(r: FramedRep) -> dict:
    return {
        "field": r.field,
        "quiver": quiver_to_json(r.quiver),
        "dims": dims_to_json(r.dims),
        "weights": {k: encode_matrix(v, r.field) for k, v in r.weights.items()},
        "framings": {k: encode_matrix(v, r.field) for k, v in r.framings.items()},
    }


def rep_from_json(obj) -> FramedRep:
    field = obj.get("field", REAL)
    if field not in (REAL, COMPLEX):
        raise ConfigError(f"unknown field {field!r}")
    q = quiver_from_json(obj["quiver"])
    dims = dims_from_json(obj["dims"], q)
    w = {a.id: decode_matrix(obj["weights"][a.id], field, (dims.d[a.head], dims.d[a.tail])) for a in q.arrows}
    e = {v: decode_matrix(obj["framings"][v], field, (dims.d[v], dims.n[v])) for v in q.vertices}
    return FramedRep(q, dims, w, e, field)


def alpha_to_json(alpha: AlphaWeights) -> dict:
    return {
        "name": alpha.name,
        "paths": [{"vertex": v, "arrows": list(p.arrows), "value": x} for (v, p), x in alpha.items()],
    }


def alpha_from_json(obj, q: Quiver) -> AlphaWeights:
    """A preset name, a single number, or ``{"default": x, "paths": [...]}``."""
    if isinstance(obj, str):
        if obj not in PRESETS:
            raise ConfigError(f"unknown alpha preset {obj!r}; choose from {sorted(PRESETS)}")
        return AlphaWeights.preset(q, obj)
    if isinstance(obj, (int, float)) and not isinstance(obj, bool):
        return AlphaWeights.uniform(q, float(obj))
    if not isinstance(obj, Mapping):
        raise ConfigError(f"cannot read alpha from {obj!r}")
    default = obj.get("default")
    table = {k: default for k in all_path_keys(q)} if default is not None else {}
    for entry in obj.get("paths", []):
        p = Path(entry["vertex"], tuple(entry["arrows"]))
        p.check(q)
        table[(entry["vertex"], p)] = entry["value"]
    return AlphaWeights(q, table, obj.get("name", "custom"))


# -- trees -------------------------------------------------------------------


def coef_to_json(c) -> dict:
    if isinstance(c, HattedWord):
        return {"words": [{"c": encode_scalar(z), "word": list(w)} for z, w in c.terms]}
    return {
        "source": c.source,
        "target": c.target,
        "paths": [{"c": encode_scalar(z), "arrows": list(p.arrows)} for z, p in c.terms],
    }


def coef_from_json(obj, q: Quiver | None = None):
    if "words" in obj:
        return HattedWord(tuple((decode_scalar(t.get("c", 1.0)), tuple(t["word"])) for t in obj["words"]))
    src, tgt = obj["source"], obj["target"]
    terms = tuple((decode_scalar(t.get("c", 1.0)), Path(tgt, tuple(t["arrows"]))) for t in obj["paths"])
    h = HattedElement(src, tgt, terms)
    if q is not None:
        h.check(q)
    return h


def tree_to_json(node) -> dict:
    if isinstance(node, Sum):
        return {"type": "sum", "terms": [tree_to_json(t) for t in node.terms]}
    if isinstance(node, Term):
        return {"type": "term", "coef": coef_to_json(node.coef), "arg": tree_to_json(node.arg)}
    if isinstance(node, Input):
        return {"type": "input", "slot": node.slot, "framing": node.framing}
    if isinstance(node, Act):
        return {"type": "act", "activation": node.activation.name, "expr": tree_to_json(node.expr)}
    raise ConfigError(f"not a tree node: {node!r}")


def tree_from_json(obj, q: Quiver | None = None):
    kind = obj.get("type") if isinstance(obj, Mapping) else None
    if kind == "sum":
        return Sum(tuple(tree_from_json(t, q) for t in obj["terms"]))
    if kind == "term":
        return Term(coef_from_json(obj["coef"], q), tree_from_json(obj["arg"], q))
    if kind == "input":
        return Input(obj["slot"], obj.get("framing", obj["slot"]))
    if kind == "act":
        expr = tree_from_json(obj["expr"], q)
        if not isinstance(expr, Sum):
            raise ConfigError("an activation must wrap a sum")
        return Act(activation(obj["activation"]), expr)
    raise ConfigError(f"unknown tree node type {kind!r}")


# -- automata ----------------------------------------------------------------


def _unitary_from_json(spec, dim: int) -> np.ndarray:
    if isinstance(spec, str):
        if not spec.startswith("random:"):
            raise ConfigError(f"unitary spec {spec!r} must be a matrix or 'random:<seed>'")
        return random_unitary(dim, int(spec.split(":", 1)[1]))
    a = np.array(spec, dtype=float)
    if a.shape == (dim * dim, 2):
        a = a.reshape(dim, dim, 2)
    if a.shape != (dim, dim, 2):
        raise ShapeMismatch(f"unitary must be {dim}x{dim} [re, im] pairs")
    return a[..., 0] + 1j * a[..., 1]


def qfa_from_json(obj) -> Qfa:
    dim = int(obj["dim"])
    q0 = decode_vector(obj["q0"])
    if q0.shape != (dim,):
        raise ShapeMismatch(f"q0 has {q0.shape[0]} entries, dim is {dim}")
    alphabet = obj.get("alphabet", list(obj["unitaries"]))
    unitaries = {}
    for s in alphabet:
        if s not in obj["unitaries"]:
            raise ConfigError(f"no unitary given for symbol {s!r}")
        unitaries[s] = _unitary_from_json(obj["unitaries"][s], dim)
    return Qfa(q0, tuple(obj["accept"]), unitaries)


def qfa_to_json(m: Qfa) -> dict:
    return {
        "dim": m.dim,
        "q0": encode_vector(m.q0),
        "accept": list(m.accept),
        "alphabet": list(m.alphabet),
        "unitaries": {s: [[float(z.real), float(z.imag)] for z in u.ravel()] for s, u in m.unitaries.items()},
    }


def machine_from_json(obj) -> QuantumMachine:
    dim = int(obj["dim"])
    h = decode_matrix(obj["h"], COMPLEX, (dim, dim)) if "h" in obj else np.eye(dim)
    e = decode_matrix(obj["e"], COMPLEX) if "e" in obj else np.eye(dim)
    gens = {s: _unitary_from_json(u, dim) for s, u in obj["generators"].items()}
    return QuantumMachine(h, e, gens)


# -- CSV datasets ------------------------------------------------------------


def ingest_csv(path, input_cols: Mapping[str, Sequence[str]], target_cols: Sequence[str]) -> Dataset:
    """Read a headed CSV into a ``Dataset``; ``input_cols`` maps slot ids to column names.

    Rows and columns are numbered from 1 in ``NonNumericCell`` (the header is row 1).
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise BadHeader(f"{path}: empty file") from None
        wanted = [c for cols in input_cols.values() for c in cols] + list(target_cols)
        missing = [c for c in wanted if c not in header]
        if missing:
            raise BadHeader(f"{path}: missing columns {missing}; header is {header}")
        if len(set(header)) != len(header):
            raise BadHeader(f"{path}: duplicate column names")
        index = {c: header.index(c) for c in wanted}
        rows = []
        for rownum, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            vals = {}
            for c in wanted:
                cell = row[index[c]].strip() if index[c] < len(row) else ""
                try:
                    vals[c] = float(cell)
                except ValueError:
                    raise NonNumericCell(rownum, c, cell) from None
            rows.append(vals)
    if not rows:
        raise BadHeader(f"{path}: no data rows")
    inputs = {s: np.array([[r[c] for r in rows] for c in cols]) for s, cols in input_cols.items()}
    targets = np.array([[r[c] for r in rows] for c in target_cols])
    return Dataset(inputs, targets)


def write_csv(path, ds: Dataset, input_cols: Mapping[str, Sequence[str]], target_cols: Sequence[str]) -> None:
    """Inverse of ``ingest_csv``; floats are written with ``repr`` so they read back exactly."""
    header = [c for cols in input_cols.values() for c in cols] + list(target_cols)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for j in range(len(ds)):
            row = [ds.inputs[s][i, j] for s, cols in input_cols.items() for i in range(len(cols))]
            row += list(ds.targets[:, j])
            w.writerow([repr(float(x)) for x in row])


def dump_json(obj, path) -> None:
    FsPath(path).write_text(json.dumps(obj, indent=2, allow_nan=False) + "\n", encoding="utf-8")
