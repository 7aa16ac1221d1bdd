import numpy as np
import pytest

from nearquiver.errors import DanglingArrow, MixedField, OrientedCycle, ShapeMismatch, SingularGauge
from nearquiver.networks import one_hidden_layer, two_hidden_layers
from nearquiver.quiver import (
    COMPLEX,
    DimData,
    GaugeElement,
    Path,
    Quiver,
    act,
    enumerate_paths,
    eval_path,
    random_gauge,
    random_rep,
    validate_quiver,
)

from conftest import diamond


def test_topological_order_respects_arrows():
    q = two_hidden_layers(3)
    order = validate_quiver(q)
    pos = {v: i for i, v in enumerate(order)}
    assert all(pos[a.tail] < pos[a.head] for a in q.arrows)


def test_cycle_is_named():
    q = Quiver(["a", "b", "c"], [("x", "a", "b"), ("y", "b", "c"), ("z", "c", "a")])
    with pytest.raises(OrientedCycle) as info:
        validate_quiver(q)
    cyc = info.value.cycle
    assert cyc[0] == cyc[-1] and set(cyc) == {"a", "b", "c"}


def test_loop_is_a_cycle():
    with pytest.raises(OrientedCycle):
        validate_quiver(Quiver(["a"], [("l", "a", "a")]))


@pytest.mark.parametrize(
    "arrows",
    [[("x", "a", "nowhere")], [("x", "a", "b"), ("x", "a", "b")]],
    ids=["undeclared-vertex", "duplicate-id"],
)
def test_dangling_arrows(arrows):
    with pytest.raises(DanglingArrow):
        validate_quiver(Quiver(["a", "b"], arrows))


def test_path_counts():
    # in_j -> h_k -> out: trivial + 2 arrows + 4 two-step paths into out
    q = one_hidden_layer(2)
    assert len(enumerate_paths(q, "out")) == 1 + 2 + 4
    assert len(enumerate_paths(q, "h1")) == 3
    assert enumerate_paths(q, "in1") == (Path("in1"),)
    # diamond: trivial, lt, rt, st, sl.lt, sr.rt
    assert len(enumerate_paths(diamond(), "t")) == 1 + 3 + 2


def test_path_order_is_trivial_then_length():
    ps = enumerate_paths(two_hidden_layers(2), "out")
    assert ps[0].arrows == ()
    assert [len(p) for p in ps] == sorted(len(p) for p in ps)


def test_eval_path_is_ordered_product(rng):
    q = two_hidden_layers(2)
    dims = DimData({v: 2 for v in q.vertices}, {v: 3 for v in q.vertices})
    r = random_rep(q, dims, seed=1)
    p = Path("out", ("a1_11", "a2_12", "a3_2"))
    expected = r.weights["a3_2"] @ r.weights["a2_12"] @ r.weights["a1_11"] @ r.framings["in1"]
    np.testing.assert_allclose(eval_path(r, p), expected, rtol=1e-14)


def test_noncomposable_path_rejected():
    q = one_hidden_layer(2)
    with pytest.raises(ShapeMismatch):
        Path("out", ("a1_11", "a2_2")).check(q)


def test_gauge_action_is_a_group_action():
    q = diamond()
    dims = DimData({v: 2 for v in q.vertices}, {v: 3 for v in q.vertices})
    r = random_rep(q, dims, seed=3, field=COMPLEX)
    g = random_gauge(dims, seed=4, field=COMPLEX)
    h = random_gauge(dims, seed=5, field=COMPLEX)
    assert act(g @ h, r).allclose(act(g, act(h, r)), atol=1e-10)
    assert act(g.inverse(), act(g, r)).allclose(r, atol=1e-10)
    assert act(GaugeElement.identity(dims, COMPLEX), r).allclose(r, atol=0)


def test_path_products_are_equivariant():
    q = two_hidden_layers(2)
    dims = DimData({v: 2 for v in q.vertices}, {v: 2 for v in q.vertices})
    r = random_rep(q, dims, seed=7)
    g = random_gauge(dims, seed=8)
    rg = act(g, r)
    for p in enumerate_paths(q, "out"):
        np.testing.assert_allclose(eval_path(rg, p), g.mats["out"] @ eval_path(r, p), atol=1e-10)


def test_singular_gauge_rejected():
    with pytest.raises(SingularGauge):
        GaugeElement({"a": np.array([[1.0, 2.0], [2.0, 4.0]])})


def test_complex_gauge_on_real_rep_rejected():
    q = Quiver(["a", "b"], [("x", "a", "b")])
    dims = DimData.uniform(q, 1, 1)
    r = random_rep(q, dims, seed=0)
    with pytest.raises(MixedField):
        act(GaugeElement({"a": np.array([[1j]]), "b": np.array([[1.0]])}), r)


def test_shape_mismatch_on_construction():
    q = Quiver(["a", "b"], [("x", "a", "b")])
    dims = DimData({"a": 2, "b": 1}, {"a": 2, "b": 1})
    r = random_rep(q, dims, seed=0)
    with pytest.raises(ShapeMismatch):
        r.replace(weights={"x": np.ones((2, 2))})


def test_zero_framing_dimension_allowed():
    q = Quiver(["a", "b"], [("x", "a", "b")])
    r = random_rep(q, DimData({"a": 1, "b": 1}, {"a": 1, "b": 0}), seed=0)
    assert r.framings["b"].shape == (1, 0)


def test_rep_is_immutable():
    q = Quiver(["a", "b"], [("x", "a", "b")])
    r = random_rep(q, DimData.uniform(q), seed=0)
    with pytest.raises(ValueError):
        r.weights["x"][0, 0] = 5.0
