"""Quantum finite automata and measurement programs on quantum computing machines.

Basis indices are 0-based throughout.
"""

from __future__ import annotations

import itertools
from collections import Counter
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .algebra import MEASURE, Act, HattedElement, Input, Sum, Term, _hatted_matrix, input_slots, typecheck
from .constants import TOLERANCES
from .errors import (
    NonMeasurementActivation,
    ShapeMismatch,
    TooManyMeasurements,
    TypeCheckFailure,
    UnknownSymbol,
    ValidationError,
    ZeroVector,
)
from .metrics import MetricState

FRAMING = "F"


def random_unitary(dim: int, seed=None) -> np.ndarray:
    """Haar-distributed unitary: QR of a complex Gaussian with the phases of ``R`` divided out."""
    rng = np.random.default_rng(seed)
    z = (rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))) / np.sqrt(2)
    q, r = np.linalg.qr(z)
    d = np.diag(r)
    return q * (d / np.abs(d))


def _is_unitary(u, h=None, tol=TOLERANCES.unitarity):
    n = u.shape[0]
    h = np.eye(n) if h is None else h
    return np.linalg.norm(u.conj().T @ h @ u - h) <= tol


def _word(w) -> tuple:
    return tuple(w) if not isinstance(w, tuple) else w


@dataclass(frozen=True, eq=False)
class Qfa:
    q0: np.ndarray
    accept: tuple
    unitaries: Mapping[str, np.ndarray]

    def __post_init__(self):
        q0 = np.asarray(self.q0, dtype=complex)
        if q0.ndim != 1:
            raise ShapeMismatch("initial state must be a vector")
        if abs(np.linalg.norm(q0) - 1) > TOLERANCES.unit_norm:
            raise ValidationError(f"initial state has norm {np.linalg.norm(q0)}, expected 1")
        dim = q0.shape[0]
        acc = tuple(sorted(set(int(j) for j in self.accept)))
        if not acc or acc[0] < 0 or acc[-1] >= dim:
            raise ValidationError(f"accept set {acc} must be a nonempty subset of 0..{dim - 1}")
        us = {}
        for s, u in self.unitaries.items():
            u = np.asarray(u, dtype=complex)
            if u.shape != (dim, dim):
                raise ShapeMismatch(f"unitary for {s!r} has shape {u.shape}")
            if not _is_unitary(u):
                raise ValidationError(f"operator for {s!r} is not unitary")
            u.setflags(write=False)
            us[str(s)] = u
        q0.setflags(write=False)
        object.__setattr__(self, "q0", q0)
        object.__setattr__(self, "accept", acc)
        object.__setattr__(self, "unitaries", us)

    @property
    def dim(self) -> int:
        return self.q0.shape[0]

    @property
    def alphabet(self) -> tuple:
        return tuple(self.unitaries)

    @property
    def projection(self) -> np.ndarray:
        p = np.zeros((self.dim, self.dim))
        p[self.accept, self.accept] = 1.0
        return p


def random_qfa(dim: int, alphabet: Sequence[str], seed=None, n_accept: int | None = None) -> Qfa:
    rng = np.random.default_rng(seed)
    q0 = rng.standard_normal(dim) + 1j * rng.standard_normal(dim)
    q0 /= np.linalg.norm(q0)
    k = n_accept if n_accept is not None else int(rng.integers(1, dim + 1))
    acc = rng.choice(dim, size=k, replace=False)
    us = {s: random_unitary(dim, rng) for s in alphabet}
    return Qfa(q0, tuple(acc), us)


def word_operator(m: Qfa, w) -> np.ndarray:
    """``U_w = U_{w_1} U_{w_2} ... U_{w_n}``; the empty word gives the identity."""
    out = np.eye(m.dim, dtype=complex)
    for s in _word(w):
        try:
            out = out @ m.unitaries[s]
        except KeyError:
            raise UnknownSymbol(f"symbol {s!r} is not in the alphabet {m.alphabet}") from None
    return out


def acceptance_probability(m: Qfa, w) -> float:
    """``|| <q0| U_w P ||^2``."""
    row = m.q0.conj() @ word_operator(m, w)
    # clamp the last-ulp overshoot of a unit vector's squared norm
    return min(float(np.sum(np.abs(row[list(m.accept)]) ** 2)), 1.0)


# -- machines and programs -------------------------------------------------


@dataclass(frozen=True, eq=False)
class QuantumMachine:
    """Hermitian state space ``(C^dim, h)``, isometric framing ``e: C^n -> C^dim``, unitary generators."""

    h: np.ndarray
    e: np.ndarray
    generators: Mapping[str, np.ndarray]

    def __post_init__(self):
        h = np.asarray(self.h, dtype=complex)
        e = np.asarray(self.e, dtype=complex)
        dim = h.shape[0]
        if h.shape != (dim, dim) or e.ndim != 2 or e.shape[0] != dim:
            raise ShapeMismatch("metric must be square and the framing must map into the state space")
        if np.linalg.norm(h - h.conj().T) > TOLERANCES.unitarity:
            raise ValidationError("state-space metric is not Hermitian")
        if np.linalg.norm(e.conj().T @ h @ e - np.eye(e.shape[1])) > TOLERANCES.unitarity:
            raise ValidationError("framing is not an isometric embedding")
        gens = {}
        for s, u in self.generators.items():
            u = np.asarray(u, dtype=complex)
            if u.shape != (dim, dim) or not _is_unitary(u, h):
                raise ValidationError(f"generator {s!r} is not unitary for the metric")
            gens[str(s)] = u
        object.__setattr__(self, "h", h)
        object.__setattr__(self, "e", e)
        object.__setattr__(self, "generators", gens)

    @property
    def dim(self) -> int:
        return self.h.shape[0]

    @property
    def n(self) -> int:
        return self.e.shape[1]

    def word_operator(self, w) -> np.ndarray:
        out = np.eye(self.dim, dtype=complex)
        for s in _word(w):
            try:
                out = out @ self.generators[s]
            except KeyError:
                raise UnknownSymbol(f"symbol {s!r} is not a generator") from None
        return out

    def act(self, g) -> "QuantumMachine":
        """Change of basis on the state space: ``h -> g^-+ h g^-1, e -> g e, U -> g U g^-1``."""
        g = np.asarray(g, dtype=complex)
        gi = np.linalg.inv(g)
        return QuantumMachine(
            gi.conj().T @ self.h @ gi,
            g @ self.e,
            {s: g @ u @ gi for s, u in self.generators.items()},
        )


@dataclass(frozen=True)
class HattedWord:
    """``e^* (sum_k c_k U_{w_k}) e`` on a quantum machine, with ``e^* = e^+ h``."""

    terms: tuple  # ((complex, word tuple), ...)
    source: str = FRAMING
    target: str = FRAMING

    @classmethod
    def of(cls, word, coef: complex = 1.0) -> "HattedWord":
        return cls(((complex(coef), _word(word)),))

    def matrix(self, m: QuantumMachine) -> np.ndarray:
        M = sum(c * m.word_operator(w) for c, w in self.terms)
        return m.e.conj().T @ m.h @ M @ m.e


def measurement_program(word) -> Sum:
    """``sigma^F`` applied to ``e^* U_word e`` on the input slot ``q``."""
    inner = Sum((Term(HattedWord.of(word), Input("q", FRAMING)),))
    return Sum((Term(HattedWord(((1.0, ()),)), Act(MEASURE, inner)),))


def qfa_machine(m: Qfa) -> QuantumMachine:
    """The machine realizing ``m``: identity framing, generators ``U_sigma^+``.

    The automaton acts on row vectors from the right; on column vectors this
    is ``|q> -> U_sigma^+ |q>``, so a word ``w`` becomes the reversed word of
    adjoint generators.
    """
    return QuantumMachine(np.eye(m.dim), np.eye(m.dim), {s: u.conj().T for s, u in m.unitaries.items()})


def qfa_program(m: Qfa, w):
    """One-measurement program whose accept-set mass equals ``acceptance_probability(m, w)``.

    Returns ``(tree, machine, inputs)``.
    """
    return measurement_program(tuple(reversed(_word(w)))), qfa_machine(m), {"q": m.q0}


@dataclass
class OutcomeDistribution:
    """Probabilities of measurement-outcome sequences (in tree traversal order)."""

    probs: dict

    def __getitem__(self, key):
        return self.probs.get(tuple(key), 0.0)

    @property
    def total(self) -> float:
        return float(sum(self.probs.values()))

    def marginal(self, position: int) -> dict:
        out = Counter()
        for k, p in self.probs.items():
            out[k[position]] += p
        return dict(out)

    def tv_distance(self, other: "OutcomeDistribution") -> float:
        keys = set(self.probs) | set(other.probs)
        return 0.5 * sum(abs(self[k] - other[k]) for k in keys)

    def to_json(self) -> list:
        return [{"outcomes": list(k), "p": p} for k, p in sorted(self.probs.items())]


def born_probabilities(v) -> np.ndarray:
    v = np.asarray(v)
    nrm2 = np.sum(np.abs(v) ** 2, axis=0)
    if np.any(nrm2 == 0):
        raise ZeroVector("cannot measure the zero vector")
    return np.abs(v) ** 2 / nrm2


def measure(v, rng) -> int:
    """Born-rule sample: index ``j`` with probability ``|<v/|v|, e_j>|^2``."""
    p = born_probabilities(np.asarray(v, dtype=complex))
    return int(rng.choice(len(p), p=p))


def _backend(tree, machine, inputs):
    """Coefficient evaluator and input vectors for a quantum machine or a quiver ``MetricState``."""
    slots = input_slots(tree)
    if not isinstance(inputs, Mapping):
        if len(slots) != 1:
            raise TypeCheckFailure("a bare input vector needs a tree with exactly one slot")
        inputs = {next(iter(slots)): inputs}
    if isinstance(machine, QuantumMachine):
        width = {s: machine.n for s in slots}

        def coef(c):
            if not isinstance(c, HattedWord):
                raise TypeCheckFailure(f"coefficient {c!r} cannot act on a quantum machine")
            return c.matrix(machine)

    elif isinstance(machine, MetricState):
        r = machine.rep
        typecheck(tree, r.quiver)
        width = {s: r.dims.n[fr] for s, fr in slots.items()}

        def coef(c):
            if not isinstance(c, HattedElement):
                raise TypeCheckFailure(f"coefficient {c!r} cannot act on a quiver representation")
            return _hatted_matrix(c, r, machine)

    else:
        raise TypeCheckFailure(f"cannot run a program on {type(machine).__name__}")
    xs = {}
    for s in slots:
        if s not in inputs:
            raise TypeCheckFailure(f"missing input for slot {s!r}")
        x = np.asarray(inputs[s], dtype=complex)
        if x.shape != (width[s],):
            raise ShapeMismatch(f"slot {s!r} expects a vector of length {width[s]}")
        xs[s] = x
    cache = {}

    def cached(c):
        if c not in cache:
            cache[c] = coef(c)
        return cache[c]

    return cached, xs


def _count_measurements(node) -> int:
    if isinstance(node, Sum):
        return sum(_count_measurements(t.arg) for t in node.terms)
    if isinstance(node, Act):
        return int(node.activation.is_measurement) + _count_measurements(node.expr)
    return 0


def _check_activation(a):
    # identity is allowed so that composed programs stay measurable
    if not a.is_measurement and a.name != "identity":
        raise NonMeasurementActivation(f"activation {a.name!r} is not a measurement")


def exact_distribution(tree: Sum, machine, inputs) -> OutcomeDistribution:
    """Enumerate every measurement branch and return the joint outcome distribution.

    ``machine`` is a ``QuantumMachine`` (coefficients are ``HattedWord``) or a
    ``MetricState`` of a framed representation (coefficients are
    ``HattedElement``).
    """
    k = _count_measurements(tree)
    if k > TOLERANCES.max_exact_measurements:
        raise TooManyMeasurements(f"{k} measurement nodes; exact enumeration is capped at {TOLERANCES.max_exact_measurements}")
    coef, xs = _backend(tree, machine, inputs)

    def branches(node):
        if isinstance(node, Input):
            return [(1.0, (), xs[node.slot])]
        if isinstance(node, Act):
            _check_activation(node.activation)
            inner = branches(node.expr)
            if not node.activation.is_measurement:
                return inner
            out = []
            for p, o, v in inner:
                probs = born_probabilities(v)
                for j in np.flatnonzero(probs):
                    eps = np.zeros_like(v)
                    eps[j] = 1.0
                    out.append((p * probs[j], o + (int(j),), eps))
            return out
        per_term = [[(p, o, coef(t.coef) @ v) for p, o, v in branches(t.arg)] for t in node.terms]
        out = []
        for combo in itertools.product(*per_term):
            p = float(np.prod([c[0] for c in combo]))
            o = sum((c[1] for c in combo), ())
            out.append((p, o, sum(c[2] for c in combo)))
        return out

    probs = Counter()
    for p, o, _ in branches(tree):
        probs[o] += p
    return OutcomeDistribution(dict(probs))


def sample_program(tree: Sum, machine, inputs, rng, n_samples: int) -> OutcomeDistribution:
    """Monte Carlo counterpart of ``exact_distribution``: ``n_samples`` independent runs."""
    coef, xs = _backend(tree, machine, inputs)
    xs = {s: np.repeat(x[:, None], n_samples, axis=1) for s, x in xs.items()}

    def run(node):
        if isinstance(node, Input):
            return xs[node.slot], []
        if isinstance(node, Act):
            _check_activation(node.activation)
            v, outs = run(node.expr)
            if not node.activation.is_measurement:
                return v, outs
            p = born_probabilities(v)
            u = rng.random(n_samples)
            idx = np.minimum((np.cumsum(p, axis=0) < u).sum(axis=0), p.shape[0] - 1)
            # guard against round-off selecting a zero-probability index
            bad = p[idx, np.arange(n_samples)] == 0
            if np.any(bad):
                idx[bad] = np.argmax(p[:, bad], axis=0)
            eps = np.zeros_like(v)
            eps[idx, np.arange(n_samples)] = 1.0
            return eps, outs + [idx]
        total, outs = None, []
        for t in node.terms:
            v, o = run(t.arg)
            y = coef(t.coef) @ v
            total = y if total is None else total + y
            outs += o
        return total, outs

    _, outs = run(tree)
    if not outs:
        return OutcomeDistribution({(): 1.0})
    keys = np.stack(outs, axis=1)
    uniq, counts = np.unique(keys, axis=0, return_counts=True)
    return OutcomeDistribution({tuple(int(x) for x in k): c / n_samples for k, c in zip(uniq, counts)})
