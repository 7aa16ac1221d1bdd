"""Algorithm trees over the augmented path algebra, and their differentials.

An algorithm tree is built from four node types::

    Sum(terms)            a formal sum; all terms land in the same framing
    Term(coef, arg)       a hatted linear coefficient applied to an argument
    Input(slot, framing)  a leaf fed with a vector in ``F_framing``
    Act(activation, sum)  a pointwise activation or a measurement

Hatted coefficients ``e_t^* (sum_k c_k w_{gamma_k}) e_s`` use the metric
adjoint ``e^* = e^+ H``.  ``differentiate`` produces the degree-one form tree
(Leibniz rule on terms, chain rule through activations) and ``backprop``
evaluates it at a machine by reverse traversal, differentiating through the
bundle metrics as well.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .errors import (
    MeasurementInDeterministicContext,
    ShapeMismatch,
    TypeCheckFailure,
)
from .metrics import MetricState
from .quiver import REAL, FramedRep, Path, Quiver, enumerate_paths


# -- activations -----------------------------------------------------------


@dataclass(frozen=True)
class ActivationSpec:
    name: str
    fn: Callable = field(compare=False, repr=False, default=None)
    deriv: Callable = field(compare=False, repr=False, default=None)
    is_measurement: bool = field(compare=False, default=False)
    holomorphic: bool = field(compare=False, default=False)

    @property
    def is_pointwise(self) -> bool:
        return not self.is_measurement


def _relu(x):
    return np.maximum(x, 0.0)


def _relu_deriv(x):
    # subgradient 0 at the kink
    return (x > 0).astype(float)


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def _sigmoid_deriv(x):
    s = _sigmoid(x)
    return s * (1.0 - s)


RELU = ActivationSpec("relu", _relu, _relu_deriv)
IDENTITY = ActivationSpec("identity", lambda x: x, lambda x: np.ones_like(x), holomorphic=True)
TANH = ActivationSpec("tanh", np.tanh, lambda x: 1.0 - np.tanh(x) ** 2, holomorphic=True)
SIGMOID = ActivationSpec("sigmoid", _sigmoid, _sigmoid_deriv, holomorphic=True)
SOFTPLUS = ActivationSpec("softplus", lambda x: np.logaddexp(0.0, x), _sigmoid)
MEASURE = ActivationSpec("measure", is_measurement=True)

ACTIVATIONS = {a.name: a for a in (RELU, IDENTITY, TANH, SIGMOID, SOFTPLUS, MEASURE)}


def activation(name: str) -> ActivationSpec:
    try:
        return ACTIVATIONS[name]
    except KeyError:
        raise TypeCheckFailure(f"unknown activation {name!r}") from None


# -- coefficients ----------------------------------------------------------


@dataclass(frozen=True)
class HattedElement:
    """``e_target^* (sum_k c_k w_{gamma_k}) e_source`` for paths ``source -> target``."""

    source: str
    target: str
    terms: tuple  # ((complex coefficient, Path), ...)

    @classmethod
    def of(cls, q: Quiver, *arrow_ids: str, coef: complex = 1.0) -> "HattedElement":
        """Hatted element of the single path through ``arrow_ids`` (travel order)."""
        if not arrow_ids:
            raise TypeCheckFailure("use HattedElement.trivial for the empty path")
        arrs = [q.arrow(a) for a in arrow_ids]
        p = Path(arrs[-1].head, tuple(arrow_ids))
        p.check(q)
        return cls(arrs[0].tail, p.target, ((complex(coef), p),))

    @classmethod
    def trivial(cls, vertex: str, coef: complex = 1.0) -> "HattedElement":
        return cls(vertex, vertex, ((complex(coef), Path(vertex)),))

    def __add__(self, other: "HattedElement") -> "HattedElement":
        if (self.source, self.target) != (other.source, other.target):
            raise TypeCheckFailure("cannot add hatted elements with different endpoints")
        return HattedElement(self.source, self.target, self.terms + other.terms)

    def scaled(self, c: complex) -> "HattedElement":
        return HattedElement(self.source, self.target, tuple((c * k, p) for k, p in self.terms))

    def check(self, q: Quiver) -> None:
        for _, p in self.terms:
            p.check(q)
            if p.target != self.target or p.source(q) != self.source:
                raise TypeCheckFailure(f"path {p.arrows} does not run {self.source} -> {self.target}")


def _coef_array(c: complex, field_: str):
    if field_ == REAL:
        if c.imag != 0:
            raise TypeCheckFailure("complex coefficient in a real algorithm run")
        return c.real
    return c


def hatted_eval(h: HattedElement, r: FramedRep, m: MetricState) -> np.ndarray:
    """Matrix ``e_t^+ H_t (sum_k c_k w_{gamma_k} e_s)`` of shape ``(n_t, n_s)``."""
    if m.rep is not r and not m.rep.allclose(r, atol=0):
        raise ShapeMismatch("metric state was computed at a different representation")
    h.check(r.quiver)
    return _hatted_matrix(h, r, m)


def _hatted_matrix(h, r, m):
    prods = _products_by_path(m)
    M = sum(_coef_array(c, r.field) * prods[p] for c, p in h.terms)
    return r.framings[h.target].conj().T @ m.H[h.target] @ M


def _products_by_path(m: MetricState) -> dict:
    cache = m.__dict__.get("_by_path")
    if cache is None:
        q = m.rep.quiver
        cache = {p: P for v in q.vertices for p, P in zip(enumerate_paths(q, v), m.products[v])}
        object.__setattr__(m, "_by_path", cache)
    return cache


# -- trees -----------------------------------------------------------------


@dataclass(frozen=True)
class Input:
    slot: str
    framing: str


@dataclass(frozen=True)
class Act:
    activation: ActivationSpec
    expr: "Sum"


@dataclass(frozen=True)
class Term:
    coef: object
    arg: object  # Input | Act


@dataclass(frozen=True)
class Sum:
    terms: tuple

    def __post_init__(self):
        if not self.terms:
            raise TypeCheckFailure("empty sum")
        targets = {t.coef.target for t in self.terms}
        if len(targets) != 1:
            raise TypeCheckFailure(f"terms of a sum land in different framings {sorted(targets)}")

    @property
    def target(self) -> str:
        return self.terms[0].coef.target

    def __add__(self, other: "Sum") -> "Sum":
        return Sum(self.terms + other.terms)


def term(coef, arg) -> Sum:
    """A one-term sum; the usual way to build leaves of a tree."""
    return Sum((Term(coef, arg),))


def output_framing(node) -> str:
    if isinstance(node, Input):
        return node.framing
    if isinstance(node, Act):
        return node.expr.target
    if isinstance(node, Term):
        return node.coef.target
    return node.target


def input_slots(tree: Sum) -> dict:
    """``{slot: framing}`` for every input leaf."""
    cached = tree.__dict__.get("_slots")
    if cached is not None:
        return dict(cached)
    slots = {}

    def walk(node):
        if isinstance(node, Sum):
            for t in node.terms:
                walk(t.arg)
        elif isinstance(node, Act):
            walk(node.expr)
        elif isinstance(node, Input):
            if slots.setdefault(node.slot, node.framing) != node.framing:
                raise TypeCheckFailure(f"slot {node.slot!r} used with two framings")

    walk(tree)
    object.__setattr__(tree, "_slots", dict(slots))
    return slots


def typecheck(tree: Sum, q: Quiver | None = None) -> str:
    """Check coefficient endpoints against argument framings; return the root framing."""

    def walk(node):
        if isinstance(node, Input):
            if q is not None and node.framing not in q.vertices:
                raise TypeCheckFailure(f"input {node.slot!r} names unknown framing {node.framing!r}")
            return node.framing
        if isinstance(node, Act):
            return walk(node.expr)
        if isinstance(node, Sum):
            outs = {walk(t) for t in node.terms}
            if len(outs) != 1:
                raise TypeCheckFailure("terms of a sum land in different framings")
            return outs.pop()
        if isinstance(node, Term):
            src = walk(node.arg)
            if node.coef.source != src:
                raise TypeCheckFailure(
                    f"coefficient expects framing {node.coef.source!r} but its argument lives in {src!r}"
                )
            if q is not None:
                node.coef.check(q)
            return node.coef.target
        raise TypeCheckFailure(f"not a tree node: {node!r}")

    input_slots(tree)
    return walk(tree)


def compose(outer: Sum, inner: Mapping[str, Sum]) -> Sum:
    """Substitute trees for input slots (near-ring composition ``outer o inner``).

    The substituted tree is wrapped in an identity activation so the result
    stays inside the tree grammar.
    """

    def sub(node):
        if isinstance(node, Input):
            if node.slot in inner:
                z = inner[node.slot]
                if z.target != node.framing:
                    raise TypeCheckFailure(f"slot {node.slot!r} expects framing {node.framing!r}, got {z.target!r}")
                return Act(IDENTITY, z)
            return node
        if isinstance(node, Act):
            return Act(node.activation, sub(node.expr))
        if isinstance(node, Sum):
            return Sum(tuple(Term(t.coef, sub(t.arg)) for t in node.terms))
        raise TypeCheckFailure(f"not a tree node: {node!r}")

    return sub(outer)


# -- evaluation ------------------------------------------------------------


class _Evaluator:
    """Forward values with per-node caching for one machine and one input batch."""

    def __init__(self, coef_matrix, inputs, field_):
        self.coef_matrix = coef_matrix
        self.field = field_
        self._K = {}
        self._vals = {}
        self.inputs = inputs

    def K(self, coef):
        k = self._K.get(coef)
        if k is None:
            k = self._K[coef] = self.coef_matrix(coef)
        return k

    def value(self, node):
        key = id(node)
        hit = self._vals.get(key)
        if hit is not None:
            return hit[1]
        if isinstance(node, Input):
            v = self.inputs[node.slot]
        elif isinstance(node, Act):
            a = node.activation
            if a.is_measurement:
                raise MeasurementInDeterministicContext(
                    "measurement nodes are random; use qfa.exact_distribution or qfa.sample_program"
                )
            z = self.value(node.expr)
            if self.field != REAL and not a.holomorphic:
                raise TypeCheckFailure(f"activation {a.name!r} is not defined on complex framings")
            v = a.fn(z)
        elif isinstance(node, Sum):
            v = None
            for t in node.terms:
                y = self.K(t.coef) @ self.value(t.arg)
                v = y if v is None else v + y
        else:
            raise TypeCheckFailure(f"not a tree node: {node!r}")
        # keep the node alive so its id is not recycled during this evaluation
        self._vals[key] = (node, v)
        return v


def _prepare_inputs(tree, r, inputs):
    slots = input_slots(tree)
    batched = False
    out = {}
    for slot, fr in slots.items():
        if slot not in inputs:
            raise TypeCheckFailure(f"missing input for slot {slot!r}")
        x = np.asarray(inputs[slot])
        if r.field == REAL and np.iscomplexobj(x):
            raise TypeCheckFailure(f"complex input for slot {slot!r} in a real run")
        x = x.astype(r.dtype)
        if x.ndim == 1:
            x = x[:, None]
        else:
            batched = True
        if x.shape[0] != r.dims.n[fr]:
            raise ShapeMismatch(f"slot {slot!r}: expected {r.dims.n[fr]} framing coordinates, got {x.shape[0]}")
        out[slot] = x
    widths = {x.shape[1] for x in out.values()}
    if len(widths) > 1:
        raise ShapeMismatch("input batches have different sizes")
    return out, batched


def _quiver_evaluator(tree, r, m, inputs):
    if m.rep is not r and not m.rep.allclose(r, atol=0):
        raise ShapeMismatch("metric state was computed at a different representation")
    if tree.__dict__.get("_checked_for") is not r.quiver:
        typecheck(tree, r.quiver)
        object.__setattr__(tree, "_checked_for", r.quiver)
    xs, batched = _prepare_inputs(tree, r, inputs)

    def coef_matrix(h):
        if not isinstance(h, HattedElement):
            raise TypeCheckFailure(f"coefficient {h!r} cannot act on a quiver representation")
        return _hatted_matrix(h, r, m)

    return _Evaluator(coef_matrix, xs, r.field), batched


def forward(tree: Sum, r: FramedRep, m: MetricState, inputs: Mapping) -> np.ndarray:
    """Run the algorithm on machine ``r``.

    ``inputs`` maps slot ids to vectors (``(n,)``) or column batches
    (``(n, B)``); the output has the matching shape.
    """
    ev, batched = _quiver_evaluator(tree, r, m, inputs)
    out = ev.value(tree)
    return out if batched else out[:, 0]


# -- differential forms ----------------------------------------------------


@dataclass(frozen=True)
class FormSum:
    terms: tuple


@dataclass(frozen=True)
class DCoef:
    """``d(coef)`` applied to the zero-form value of ``arg`` (a leaf)."""

    coef: object
    arg: object


@dataclass(frozen=True)
class CoefOf:
    """``coef`` applied to a one-form."""

    coef: object
    form: object


@dataclass(frozen=True)
class DAct:
    """First differential of ``activation`` evaluated at ``at``, applied to ``form``."""

    activation: ActivationSpec
    at: Sum
    form: FormSum


def differentiate(tree: Sum) -> FormSum:
    """Degree-one form tree of an algorithm tree.

    ``d(c . x) = dc . x + c . dx`` on each term, ``d(sigma o E) = D sigma|_E (dE)``
    through activations, and ``d(input) = 0``.  Purely symbolic.
    """
    typecheck(tree)

    def d_sum(s: Sum) -> FormSum:
        out = []
        for t in s.terms:
            out.append(DCoef(t.coef, t.arg))
            if isinstance(t.arg, Act):
                a = t.arg
                if a.activation.is_measurement:
                    raise MeasurementInDeterministicContext("measurement nodes have no differential")
                out.append(CoefOf(t.coef, DAct(a.activation, a.expr, d_sum(a.expr))))
        return FormSum(tuple(out))

    return d_sum(tree)


@dataclass
class GradientRecord:
    """Partial derivatives of a real functional for every parameter entry.

    Real mode stores ordinary partials.  Complex mode stores
    ``dL/dx + i dL/dy`` per entry; ``wirtinger()`` converts to the pair
    ``(dL/dz, dL/dzbar)``.
    """

    weights: dict
    framings: dict
    field: str = REAL

    @classmethod
    def zeros_like(cls, r: FramedRep) -> "GradientRecord":
        return cls(
            {k: np.zeros_like(v) for k, v in r.weights.items()},
            {k: np.zeros_like(v) for k, v in r.framings.items()},
            r.field,
        )

    def wirtinger(self):
        conj = lambda d: {k: 0.5 * np.conj(v) for k, v in d.items()}
        half = lambda d: {k: 0.5 * v for k, v in d.items()}
        return (
            GradientRecord(conj(self.weights), conj(self.framings), self.field),
            GradientRecord(half(self.weights), half(self.framings), self.field),
        )

    def blocks(self):
        return [*self.weights.values(), *self.framings.values()]

    def as_vector(self) -> np.ndarray:
        return np.concatenate([b.reshape(-1) for b in self.blocks()])

    def norm(self) -> float:
        return float(np.linalg.norm(self.as_vector()))

    def __add__(self, other):
        return GradientRecord(
            {k: v + other.weights[k] for k, v in self.weights.items()},
            {k: v + other.framings[k] for k, v in self.framings.items()},
            self.field,
        )

    def __mul__(self, c):
        return GradientRecord(
            {k: c * v for k, v in self.weights.items()},
            {k: c * v for k, v in self.framings.items()},
            self.field,
        )

    __rmul__ = __mul__


def backprop(tree: Sum, r: FramedRep, m: MetricState, inputs: Mapping, seed_covector) -> GradientRecord:
    """Gradient of ``Re <seed_covector, forward(tree, r)>`` with respect to every entry of ``r``.

    The seed may be a vector or a batch matching the forward output; batch
    columns are summed.  Dependence of the bundle metrics on ``r`` is
    included.
    """
    ev, _ = _quiver_evaluator(tree, r, m, inputs)
    out = ev.value(tree)
    seed = np.asarray(seed_covector)
    if seed.ndim == 1:
        seed = seed[:, None]
    if seed.shape != out.shape:
        raise ShapeMismatch(f"seed covector shape {seed.shape} does not match output {out.shape}")
    if r.field == REAL and np.iscomplexobj(seed):
        raise ShapeMismatch("complex seed covector in a real run")

    # reverse traversal of the form tree collects dL/dK for every coefficient
    gK = {}

    def visit(node, G):
        if isinstance(node, FormSum):
            for t in node.terms:
                visit(t, G)
        elif isinstance(node, DCoef):
            x = ev.value(node.arg)
            upd = G @ x.conj().T
            gK[node.coef] = gK[node.coef] + upd if node.coef in gK else upd
        elif isinstance(node, CoefOf):
            visit(node.form, ev.K(node.coef).conj().T @ G)
        elif isinstance(node, DAct):
            z = ev.value(node.at)
            visit(node.form, np.conj(node.activation.deriv(z)) * G)

    visit(differentiate(tree), seed)
    return _coefficient_pullback(gK, r, m)


def _coefficient_pullback(gK, r: FramedRep, m: MetricState) -> GradientRecord:
    q = r.quiver
    prods = _products_by_path(m)
    gP = {}
    gH = {}

    def add(store, key, val):
        store[key] = store[key] + val if key in store else val

    for h, G in gK.items():
        t = h.target
        H = m.H[t]
        et = r.framings[t]
        M = sum(_coef_array(c, r.field) * prods[p] for c, p in h.terms)
        add(gP, Path(t), H @ M @ G.conj().T)
        add(gH, t, et @ G @ M.conj().T)
        gM = H @ et @ G
        for c, p in h.terms:
            add(gP, p, np.conj(_coef_array(c, r.field)) * gM)

    for t, GH in gH.items():
        H = m.H[t]
        GS = -H @ GH @ H
        GS = GS + GS.conj().T
        for p, P, lam in zip(enumerate_paths(q, t), m.products[t], m.weights[t]):
            if P.shape[1]:
                add(gP, p, GS @ (P * lam))

    # reverse pass over the path products, longest paths first; a path's
    # prefix is strictly shorter, so popping the longest pending key is safe
    grad = GradientRecord.zeros_like(r)
    while gP:
        p = max(gP, key=lambda p: len(p.arrows))
        G = gP.pop(p)
        if not p.arrows:
            grad.framings[p.target] = grad.framings[p.target] + G
            continue
        pre = p.prefix(q)
        a = p.arrows[-1]
        grad.weights[a] = grad.weights[a] + G @ prods[pre].conj().T
        add(gP, pre, r.weights[a].conj().T @ G)
    return _finish(grad, r)


def _finish(grad, r):
    if r.field == REAL:
        grad.weights = {k: np.real(v) for k, v in grad.weights.items()}
        grad.framings = {k: np.real(v) for k, v in grad.framings.items()}
    return grad
