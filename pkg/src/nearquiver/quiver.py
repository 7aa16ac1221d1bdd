"""Quivers, dimension vectors, framed representations and the gauge action.

A framed representation assigns a ``d_h x d_t`` matrix to every arrow and a
``d_i x n_i`` framing matrix to every vertex.  The gauge group
``prod_i GL(d_i)`` acts by ``w_a -> g_h w_a g_t^{-1}`` and ``e_i -> g_i e_i``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Mapping

import numpy as np

from .constants import TOLERANCES
from .errors import (
    DanglingArrow,
    MixedField,
    OrientedCycle,
    ShapeMismatch,
    SingularGauge,
)

REAL = "real"
COMPLEX = "complex"
FIELDS = (REAL, COMPLEX)


@dataclass(frozen=True)
class Arrow:
    id: str
    tail: str
    head: str


@dataclass(frozen=True, eq=False)
class Quiver:
    vertices: tuple
    arrows: tuple

    def __init__(self, vertices, arrows):
        object.__setattr__(self, "vertices", tuple(str(v) for v in vertices))
        arrs = []
        for a in arrows:
            if not isinstance(a, Arrow):
                a = Arrow(*map(str, a))
            arrs.append(a)
        object.__setattr__(self, "arrows", tuple(arrs))
        # hashing walks every arrow; quivers are cache keys on hot paths
        object.__setattr__(self, "_hash", hash((self.vertices, self.arrows)))
        object.__setattr__(self, "_index", {a.id: a for a in self.arrows})

    def __hash__(self):
        return self._hash

    def __eq__(self, other):
        if self is other:
            return True
        return isinstance(other, Quiver) and self._hash == other._hash and (
            self.vertices == other.vertices and self.arrows == other.arrows
        )

    def arrow(self, arrow_id: str) -> Arrow:
        return self._index[arrow_id]

    def incoming(self, vertex: str) -> tuple:
        return tuple(a for a in self.arrows if a.head == vertex)

    def outgoing(self, vertex: str) -> tuple:
        return tuple(a for a in self.arrows if a.tail == vertex)

    def sources(self) -> tuple:
        """Vertices with no incoming arrows, in declaration order."""
        heads = {a.head for a in self.arrows}
        return tuple(v for v in self.vertices if v not in heads)

    def _arrow_index(self):
        return self._index


@lru_cache(maxsize=None)
def validate_quiver(q: Quiver) -> tuple:
    """Check the quiver is well formed and acyclic; return a topological order.

    Raises ``DanglingArrow`` for arrows touching undeclared vertices or for
    duplicate ids, and ``OrientedCycle`` (naming the cycle) otherwise.
    """
    verts = set(q.vertices)
    if len(verts) != len(q.vertices):
        raise DanglingArrow("duplicate vertex ids")
    if len({a.id for a in q.arrows}) != len(q.arrows):
        raise DanglingArrow("duplicate arrow ids")
    for a in q.arrows:
        if a.tail not in verts or a.head not in verts:
            raise DanglingArrow(f"arrow {a.id!r} ({a.tail} -> {a.head}) touches an undeclared vertex")

    # Kahn's algorithm, ties broken by declaration order
    indeg = {v: 0 for v in q.vertices}
    for a in q.arrows:
        indeg[a.head] += 1
    order = []
    ready = [v for v in q.vertices if indeg[v] == 0]
    while ready:
        v = ready.pop(0)
        order.append(v)
        for a in q.arrows:
            if a.tail == v:
                indeg[a.head] -= 1
                if indeg[a.head] == 0:
                    ready.append(a.head)
        ready.sort(key=q.vertices.index)
    if len(order) < len(q.vertices):
        raise OrientedCycle(_find_cycle(q, set(q.vertices) - set(order)))
    return tuple(order)


def _find_cycle(q, remaining):
    # every vertex left by Kahn's algorithm has an incoming arrow from the
    # remaining set, so walking backwards must revisit a vertex
    start = next(v for v in q.vertices if v in remaining)
    seen = [start]
    v = start
    while True:
        a = next(a for a in q.arrows if a.head == v and a.tail in remaining)
        v = a.tail
        if v in seen:
            cyc = seen[seen.index(v):]
            cyc.reverse()
            return cyc + [cyc[0]]
        seen.append(v)


@dataclass(frozen=True)
class DimData:
    """Representation dimensions ``d`` and framing dimensions ``n`` per vertex."""

    d: Mapping[str, int]
    n: Mapping[str, int]

    def __init__(self, d, n):
        d = {str(k): int(v) for k, v in d.items()}
        n = {str(k): int(v) for k, v in n.items()}
        if set(d) != set(n):
            raise ShapeMismatch("d and n must be given for the same vertices")
        for k, v in d.items():
            if v < 1:
                raise ShapeMismatch(f"d[{k!r}] = {v} must be >= 1")
        for k, v in n.items():
            if v < 0:
                raise ShapeMismatch(f"n[{k!r}] = {v} must be >= 0")
        object.__setattr__(self, "d", d)
        object.__setattr__(self, "n", n)

    @classmethod
    def uniform(cls, q: Quiver, d: int = 1, n: int = 1) -> "DimData":
        return cls({v: d for v in q.vertices}, {v: n for v in q.vertices})

    def __hash__(self):
        return hash((tuple(sorted(self.d.items())), tuple(sorted(self.n.items()))))

    def check(self, q: Quiver) -> None:
        if set(self.d) != set(q.vertices):
            raise ShapeMismatch("dimension data does not cover exactly the quiver's vertices")


@dataclass(frozen=True)
class Path:
    """A path ending at ``target``; ``arrows`` is listed in travel order.

    The empty arrow tuple is the trivial path at ``target``.
    """

    target: str
    arrows: tuple = ()

    def source(self, q: Quiver) -> str:
        if not self.arrows:
            return self.target
        return q.arrow(self.arrows[0]).tail

    def __len__(self):
        return len(self.arrows)

    def extend(self, arrow: Arrow) -> "Path":
        return Path(arrow.head, self.arrows + (arrow.id,))

    def prefix(self, q: Quiver) -> "Path":
        """The path with its last arrow removed."""
        last = q.arrow(self.arrows[-1])
        return Path(last.tail, self.arrows[:-1])

    def check(self, q: Quiver) -> None:
        if not self.arrows:
            if self.target not in q.vertices:
                raise ShapeMismatch(f"unknown vertex {self.target!r}")
            return
        try:
            arrs = [q.arrow(a) for a in self.arrows]
        except KeyError as exc:
            raise ShapeMismatch(f"unknown arrow {exc.args[0]!r}") from None
        for a, b in zip(arrs, arrs[1:]):
            if a.head != b.tail:
                raise ShapeMismatch(f"arrows {a.id!r} and {b.id!r} do not compose")
        if arrs[-1].head != self.target:
            raise ShapeMismatch("path does not end at its target")


@lru_cache(maxsize=None)
def enumerate_paths(q: Quiver, vertex: str) -> tuple:
    """All paths ending at ``vertex``, trivial path first.

    Ordered by length, then lexicographically on the arrow-id sequence.
    """
    validate_quiver(q)
    if vertex not in q.vertices:
        raise ShapeMismatch(f"unknown vertex {vertex!r}")
    out = [Path(vertex)]
    for a in q.incoming(vertex):
        out.extend(p.extend(a) for p in enumerate_paths(q, a.tail))
    return tuple(sorted(out, key=lambda p: (len(p.arrows), p.arrows)))


def _frozen(arr):
    arr = np.array(arr)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class FramedRep:
    quiver: Quiver
    dims: DimData
    weights: Mapping[str, np.ndarray]
    framings: Mapping[str, np.ndarray]
    field: str = REAL

    def __post_init__(self):
        if self.field not in FIELDS:
            raise ShapeMismatch(f"unknown field {self.field!r}")
        self.dims.check(self.quiver)
        dtype = np.float64 if self.field == REAL else np.complex128
        w, e = {}, {}
        for a in self.quiver.arrows:
            if a.id not in self.weights:
                raise ShapeMismatch(f"missing weight for arrow {a.id!r}")
            w[a.id] = _coerce(self.weights[a.id], dtype, (self.dims.d[a.head], self.dims.d[a.tail]), a.id)
        for v in self.quiver.vertices:
            if v not in self.framings:
                raise ShapeMismatch(f"missing framing for vertex {v!r}")
            e[v] = _coerce(self.framings[v], dtype, (self.dims.d[v], self.dims.n[v]), v)
        if set(self.weights) - set(w) or set(self.framings) - set(e):
            raise ShapeMismatch("representation has entries for unknown arrows or vertices")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "framings", e)

    @property
    def dtype(self):
        return np.float64 if self.field == REAL else np.complex128

    def replace(self, weights=None, framings=None) -> "FramedRep":
        return FramedRep(
            self.quiver,
            self.dims,
            dict(self.weights if weights is None else weights),
            dict(self.framings if framings is None else framings),
            self.field,
        )

    def to_complex(self) -> "FramedRep":
        return FramedRep(self.quiver, self.dims, self.weights, self.framings, COMPLEX)

    def parameters(self):
        """Yield ``(kind, key, array)`` over every parameter block in a fixed order."""
        for a in self.quiver.arrows:
            yield "w", a.id, self.weights[a.id]
        for v in self.quiver.vertices:
            yield "e", v, self.framings[v]

    def allclose(self, other: "FramedRep", atol=1e-12) -> bool:
        return all(
            np.allclose(x, y, rtol=0, atol=atol)
            for (_, _, x), (_, _, y) in zip(self.parameters(), other.parameters())
        )


def _coerce(m, dtype, shape, name):
    m = np.asarray(m)
    if m.shape != shape:
        raise ShapeMismatch(f"{name!r}: expected shape {shape}, got {m.shape}")
    if dtype == np.float64 and np.iscomplexobj(m):
        if np.any(m.imag != 0):
            raise MixedField(f"{name!r}: complex entries in a real representation")
        m = m.real
    return _frozen(m.astype(dtype))


@dataclass(frozen=True, eq=False)
class GaugeElement:
    mats: Mapping[str, np.ndarray]

    def __post_init__(self):
        m = {}
        for v, g in self.mats.items():
            g = np.asarray(g)
            if g.ndim != 2 or g.shape[0] != g.shape[1]:
                raise ShapeMismatch(f"gauge block at {v!r} must be square")
            if g.size and np.linalg.cond(g) > TOLERANCES.gauge_condition_max:
                raise SingularGauge(f"gauge block at {v!r} is numerically singular")
            m[v] = _frozen(g)
        object.__setattr__(self, "mats", m)

    @classmethod
    def identity(cls, dims: DimData, field: str = REAL) -> "GaugeElement":
        dtype = np.float64 if field == REAL else np.complex128
        g = cls.__new__(cls)
        object.__setattr__(g, "mats", {v: _frozen(np.eye(k, dtype=dtype)) for v, k in dims.d.items()})
        return g

    def __matmul__(self, other: "GaugeElement") -> "GaugeElement":
        return GaugeElement({v: self.mats[v] @ other.mats[v] for v in self.mats})

    def inverse(self) -> "GaugeElement":
        return GaugeElement({v: np.linalg.inv(g) for v, g in self.mats.items()})

    @property
    def is_complex(self) -> bool:
        return any(np.iscomplexobj(g) and np.any(g.imag != 0) for g in self.mats.values())


def eval_path(r: FramedRep, p: Path) -> np.ndarray:
    """``w_{a_k} ... w_{a_1} e^{(t(p))}``; the trivial path returns ``e^{(target)}``."""
    p.check(r.quiver)
    out = r.framings[p.source(r.quiver)]
    for aid in p.arrows:
        out = r.weights[aid] @ out
    return out


def act(g: GaugeElement, r: FramedRep) -> FramedRep:
    if set(g.mats) != set(r.quiver.vertices):
        raise ShapeMismatch("gauge element must have one block per vertex")
    for v, m in g.mats.items():
        if m.shape != (r.dims.d[v], r.dims.d[v]):
            raise ShapeMismatch(f"gauge block at {v!r} has shape {m.shape}")
    if r.field == REAL and g.is_complex:
        raise MixedField("complex gauge element acting on a real representation")
    inv = {v: np.linalg.inv(m) for v, m in g.mats.items()}
    w = {a.id: g.mats[a.head] @ r.weights[a.id] @ inv[a.tail] for a in r.quiver.arrows}
    e = {v: g.mats[v] @ r.framings[v] for v in r.quiver.vertices}
    if r.field == REAL:
        w = {k: np.real(x) for k, x in w.items()}
        e = {k: np.real(x) for k, x in e.items()}
    return r.replace(w, e)


def random_rep(
    q: Quiver,
    dims: DimData,
    seed=None,
    scale: float = 1.0,
    field: str = REAL,
) -> FramedRep:
    """I.i.d. Gaussian entries with standard deviation ``scale``.

    Complex entries have independent real and imaginary parts, each with
    variance ``scale**2 / 2``.
    """
    if scale < 0:
        raise ValueError("scale must be non-negative")
    validate_quiver(q)
    rng = np.random.default_rng(seed)

    def draw(shape):
        if field == REAL:
            return scale * rng.standard_normal(shape)
        return scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2)

    w = {a.id: draw((dims.d[a.head], dims.d[a.tail])) for a in q.arrows}
    e = {v: draw((dims.d[v], dims.n[v])) for v in q.vertices}
    return FramedRep(q, dims, w, e, field)


def random_gauge(dims: DimData, seed=None, field: str = REAL, max_condition: float = 1e3) -> GaugeElement:
    """Random invertible gauge element whose blocks have condition number below ``max_condition``."""
    rng = np.random.default_rng(seed)
    mats = {}
    for v, k in dims.d.items():
        while True:
            g = rng.standard_normal((k, k))
            if field == COMPLEX:
                g = g + 1j * rng.standard_normal((k, k))
            if np.linalg.cond(g) < max_condition:
                break
        mats[v] = g
    return GaugeElement(mats)
