"""Ready-made quivers and algorithm trees for layered networks."""

from __future__ import annotations

from .algebra import RELU, Act, ActivationSpec, HattedElement, Input, Sum, Term
from .quiver import DimData, Quiver, validate_quiver


def one_arrow() -> Quiver:
    """``u --a--> v``."""
    return Quiver(["u", "v"], [("a", "u", "v")])


def one_hidden_layer(hidden: int = 2) -> Quiver:
    """Two inputs, ``hidden`` hidden vertices, one output; fully connected.

    Arrow ``a1_{j}{k}`` runs ``in{j} -> h{k}`` and ``a2_{k}`` runs ``h{k} -> out``.
    """
    hs = [f"h{k}" for k in range(1, hidden + 1)]
    arrows = [(f"a1_{j}{k}", f"in{j}", f"h{k}") for k in range(1, hidden + 1) for j in (1, 2)]
    arrows += [(f"a2_{k}", f"h{k}", "out") for k in range(1, hidden + 1)]
    return Quiver(["in1", "in2", *hs, "out"], arrows)


def two_hidden_layers(width: int = 2) -> Quiver:
    l1 = [f"h{k}" for k in range(1, width + 1)]
    l2 = [f"g{k}" for k in range(1, width + 1)]
    arrows = [(f"a1_{j}{k}", f"in{j}", f"h{k}") for k in range(1, width + 1) for j in (1, 2)]
    arrows += [(f"a2_{j}{k}", f"h{j}", f"g{k}") for k in range(1, width + 1) for j in range(1, width + 1)]
    arrows += [(f"a3_{k}", f"g{k}", "out") for k in range(1, width + 1)]
    return Quiver(["in1", "in2", *l1, *l2, "out"], arrows)


def network_tree(q: Quiver, output: str, activation: ActivationSpec = RELU) -> Sum:
    """The layered algorithm at ``output``.

    Source vertices become input slots named after the vertex.  Every other
    vertex sums hatted arrows from its predecessors, each predecessor's value
    passed through ``activation`` unless the predecessor is a source.  For
    ``one_hidden_layer`` this is ``sum_k a2_k sigma_k(sum_j a1_jk in_j)``.
    """
    validate_quiver(q)
    sources = set(q.sources())
    if output in sources:
        raise ValueError("output vertex has no incoming arrows")
    memo = {}

    def value(v):
        if v in memo:
            return memo[v]
        terms = []
        for a in q.incoming(v):
            t = a.tail
            arg = Input(t, t) if t in sources else Act(activation, value(t))
            terms.append(Term(HattedElement.of(q, a.id), arg))
        memo[v] = Sum(tuple(terms))
        return memo[v]

    return value(output)


def linear_tree(q: Quiver, arrow_id: str) -> Sum:
    """A single hatted arrow applied to the input at its tail."""
    a = q.arrow(arrow_id)
    return Sum((Term(HattedElement.of(q, arrow_id), Input(a.tail, a.tail)),))


def uniform_dims(q: Quiver, d: int = 1, n: int = 1) -> DimData:
    return DimData.uniform(q, d, n)
