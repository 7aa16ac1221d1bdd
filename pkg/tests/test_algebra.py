import numpy as np
import pytest

from nearquiver.algebra import (
    ACTIVATIONS,
    MEASURE,
    RELU,
    TANH,
    Act,
    CoefOf,
    DAct,
    DCoef,
    FormSum,
    HattedElement,
    Input,
    Sum,
    Term,
    backprop,
    compose,
    differentiate,
    forward,
    hatted_eval,
    input_slots,
    term,
    typecheck,
)
from nearquiver.errors import MeasurementInDeterministicContext, ShapeMismatch, TypeCheckFailure
from nearquiver.learn import Dataset, cost, euclidean_gradient
from nearquiver.metrics import AlphaWeights, ChartCoords, metric_state
from nearquiver.networks import linear_tree, network_tree, one_arrow, one_hidden_layer, two_hidden_layers
from nearquiver.quiver import COMPLEX, DimData, Quiver, act, random_gauge, random_rep

from conftest import diamond, fd_gradient, inputs_for, random_tree, rel_err, space_like_rep


def scalar_network(weights=None, alpha="euclidean"):
    q = one_hidden_layer(2)
    chart = ChartCoords(q, DimData.uniform(q))
    z = np.ones(chart.dim) if weights is None else np.asarray(weights, dtype=float)
    r = chart.rep(z)
    a = AlphaWeights.preset(q, alpha)
    return q, r, a, network_tree(q, "out")


# -- activations -------------------------------------------------------------


@pytest.mark.parametrize("name", [n for n, a in ACTIVATIONS.items() if not a.is_measurement])
def test_activation_derivative_matches_fd(name):
    a = ACTIVATIONS[name]
    x = np.random.default_rng(0).uniform(-3, 3, 100)
    x = x[np.abs(x) > 1e-3]
    h = 1e-6
    fd = (a.fn(x + h) - a.fn(x - h)) / (2 * h)
    assert np.max(np.abs(fd - a.deriv(x)) / np.maximum(np.abs(fd), 1e-3)) < 1e-6


def test_relu_subgradient_at_zero():
    assert RELU.deriv(np.array([0.0]))[0] == 0.0


# -- hatted coefficients -------------------------------------------------------


def test_euclidean_scalar_coefficient_is_weight():
    q = one_arrow()
    r = ChartCoords(q, DimData.uniform(q)).rep(np.array([2.5]))
    K = hatted_eval(HattedElement.of(q, "a"), r, metric_state(r, AlphaWeights.euclidean(q)))
    assert K[0, 0] == 2.5


def test_moduli_first_layer_coefficient():
    q = one_hidden_layer(2)
    chart = ChartCoords(q, DimData.uniform(q))
    z = np.random.default_rng(4).normal(size=chart.dim)
    r = chart.rep(z)
    m = metric_state(r, AlphaWeights.moduli(q))
    for k in (1, 2):
        x2 = r.weights[f"a1_1{k}"][0, 0] ** 2 + r.weights[f"a1_2{k}"][0, 0] ** 2
        for j in (1, 2):
            K = hatted_eval(HattedElement.of(q, f"a1_{j}{k}"), r, m)[0, 0]
            assert K == pytest.approx(r.weights[f"a1_{j}{k}"][0, 0] / (1 + x2), abs=1e-14)


def test_hatted_eval_is_gauge_invariant():
    q = diamond()
    dims = DimData({v: 2 for v in q.vertices}, {v: 3 for v in q.vertices})
    r = random_rep(q, dims, seed=1, field=COMPLEX)
    g = random_gauge(dims, seed=2, field=COMPLEX)
    a = AlphaWeights.moduli(q)
    h = HattedElement.of(q, "sl", "lt") + HattedElement.of(q, "st", coef=0.5 - 1j)
    rg = act(g, r)
    np.testing.assert_allclose(hatted_eval(h, rg, metric_state(rg, a)), hatted_eval(h, r, metric_state(r, a)), atol=1e-8)


def test_hatted_eval_rejects_stale_state():
    q = one_arrow()
    r1, r2 = random_rep(q, DimData.uniform(q), seed=1), random_rep(q, DimData.uniform(q), seed=2)
    with pytest.raises(ShapeMismatch):
        hatted_eval(HattedElement.of(q, "a"), r1, metric_state(r2, AlphaWeights.moduli(q)))


# -- forward -------------------------------------------------------------------


def test_forward_all_ones_network():
    _, r, a, t = scalar_network()
    out = forward(t, r, metric_state(r, a), {"in1": [1.0], "in2": [1.0]})
    assert out[0] == pytest.approx(4.0, abs=1e-15)


def test_forward_zero_input():
    q, r, a, t = scalar_network(np.random.default_rng(0).normal(size=6), "moduli")
    assert forward(t, r, metric_state(r, a), {"in1": [0.0], "in2": [0.0]})[0] == 0.0


def test_forward_batch_matches_columns():
    q, r, a, t = scalar_network(np.random.default_rng(1).normal(size=6), "moduli")
    m = metric_state(r, a)
    X = np.random.default_rng(2).normal(size=(2, 5))
    batch = forward(t, r, m, {"in1": X[:1], "in2": X[1:]})
    cols = [forward(t, r, m, {"in1": X[:1, j], "in2": X[1:, j]})[0] for j in range(5)]
    np.testing.assert_allclose(batch[0], cols, rtol=1e-14)


def test_measurement_rejected_in_forward():
    q = one_arrow()
    r = random_rep(q, DimData.uniform(q), seed=0)
    t = term(HattedElement.trivial("v"), Act(MEASURE, linear_tree(q, "a")))
    with pytest.raises(MeasurementInDeterministicContext):
        forward(t, r, metric_state(r, AlphaWeights.moduli(q)), {"u": [1.0]})


def test_relu_rejected_on_complex_data():
    q = one_arrow()
    r = random_rep(q, DimData.uniform(q), seed=0, field=COMPLEX)
    t = term(HattedElement.trivial("v"), Act(RELU, linear_tree(q, "a")))
    with pytest.raises(TypeCheckFailure):
        forward(t, r, metric_state(r, AlphaWeights.moduli(q)), {"u": [1.0]})


def test_typecheck_catches_wrong_framing():
    q = one_hidden_layer(2)
    bad = term(HattedElement.of(q, "a2_1"), Input("x", "in1"))
    with pytest.raises(TypeCheckFailure):
        typecheck(bad, q)


def test_sum_terms_must_share_target():
    q = one_hidden_layer(2)
    with pytest.raises(TypeCheckFailure):
        Sum((Term(HattedElement.of(q, "a1_11"), Input("in1", "in1")), Term(HattedElement.trivial("in1"), Input("in1", "in1"))))


def test_missing_input_slot():
    q, r, a, t = scalar_network()
    with pytest.raises(TypeCheckFailure):
        forward(t, r, metric_state(r, a), {"in1": [1.0]})


@pytest.mark.parametrize("alpha", ["moduli", "euclidean", "hyperbolic"])
def test_forward_gauge_invariant(alpha):
    q = two_hidden_layers(2)
    dims = DimData({v: 2 for v in q.vertices}, {v: 2 for v in q.vertices})
    a = AlphaWeights.preset(q, alpha)
    t = network_tree(q, "out", TANH)
    rng = np.random.default_rng(7)
    r = space_like_rep(q, dims, a, seed=3)
    g = random_gauge(dims, seed=4)
    xs = inputs_for({"in1": "in1", "in2": "in2"}, dims, rng)
    rg = act(g, r)
    np.testing.assert_allclose(forward(t, rg, metric_state(rg, a), xs), forward(t, r, metric_state(r, a), xs), atol=1e-8)


# -- differentiation -----------------------------------------------------------


def test_linear_differential_has_no_activation_nodes():
    q = one_arrow()
    t = linear_tree(q, "a")
    d = differentiate(t)
    assert d == FormSum((DCoef(t.terms[0].coef, t.terms[0].arg),))


def test_network_differential_structure():
    q = one_hidden_layer(2)
    t = network_tree(q, "out")
    d = differentiate(t)
    # per output edge: dK2 on the hidden value, and K2 over D relu over (dK1_1k + dK1_2k)
    assert len(d.terms) == 4
    for k in range(2):
        dc, co = d.terms[2 * k], d.terms[2 * k + 1]
        assert isinstance(dc, DCoef) and isinstance(co, CoefOf)
        assert dc.coef == co.coef == HattedElement.of(q, f"a2_{k + 1}")
        assert isinstance(co.form, DAct) and co.form.activation is RELU
        inner = co.form.form
        assert [type(x) for x in inner.terms] == [DCoef, DCoef]
        assert {x.coef for x in inner.terms} == {HattedElement.of(q, f"a1_{j}{k + 1}") for j in (1, 2)}


def test_differential_is_additive():
    q = one_hidden_layer(2)
    t1 = network_tree(q, "out")
    t2 = Sum((Term(HattedElement.of(q, "a1_11", "a2_1"), Input("in1", "in1")),))
    assert differentiate(t1 + t2) == FormSum(differentiate(t1).terms + differentiate(t2).terms)


def test_linear_scalar_gradient():
    q = one_arrow()
    r = ChartCoords(q, DimData.uniform(q)).rep(np.array([0.7]))
    m = metric_state(r, AlphaWeights.euclidean(q))
    g = backprop(linear_tree(q, "a"), r, m, {"u": [3.0]}, np.array([1.0]))
    assert g.weights["a"][0, 0] == pytest.approx(3.0)


def _check_backprop(t, r, a, ds, tol=1e-6):
    g = euclidean_gradient(t, r, a, ds)
    fw, fe = fd_gradient(lambda s: cost(t, s, a, ds), r)
    ana = np.concatenate([*(g.weights[k].ravel() for k in fw), *(g.framings[k].ravel() for k in fe)])
    num = np.concatenate([*(v.ravel() for v in fw.values()), *(v.ravel() for v in fe.values())])
    assert rel_err(ana, num) < tol


@pytest.mark.parametrize("alpha", ["euclidean", "moduli", "hyperbolic"])
def test_backprop_network(alpha):
    q = one_hidden_layer(2)
    dims = DimData.uniform(q)
    a = AlphaWeights.preset(q, alpha)
    rng = np.random.default_rng(21)
    r = random_rep(q, dims, seed=5, scale=0.4 if alpha == "hyperbolic" else 1.0)
    r = r.replace(framings={v: np.array([[1.0 + 0.1 * rng.normal()]]) for v in q.vertices})
    ds = Dataset({"in1": rng.normal(size=(1, 6)), "in2": rng.normal(size=(1, 6))}, rng.normal(size=(1, 6)))
    _check_backprop(network_tree(q, "out"), r, a, ds)


def test_backprop_wide_framings_and_mixed_alpha():
    q = diamond()
    dims = DimData({"s": 2, "l": 2, "r": 1, "t": 2}, {"s": 3, "l": 2, "r": 2, "t": 3})
    rng = np.random.default_rng(3)
    a = AlphaWeights(q, {k: rng.uniform(0.2, 1.0) for k in AlphaWeights.moduli(q).keys()})
    r = random_rep(q, dims, seed=6)
    t = random_tree(q, "t", np.random.default_rng(8), depth=2, activations=(TANH,))
    slots = input_slots(t)
    ds = Dataset({s: rng.normal(size=(dims.n[f], 5)) for s, f in slots.items()}, rng.normal(size=(3, 5)))
    _check_backprop(t, r, a, ds)


def test_backprop_complex_mode():
    q = diamond()
    dims = DimData({v: 2 for v in q.vertices}, {v: 2 for v in q.vertices})
    r = random_rep(q, dims, seed=9, field=COMPLEX)
    a = AlphaWeights.moduli(q)
    t = Sum((Term(HattedElement.of(q, "sl", "lt", coef=0.3 + 0.4j), Input("s", "s")), Term(HattedElement.of(q, "st"), Input("s", "s"))))
    rng = np.random.default_rng(2)
    x = rng.normal(size=(2, 3)) + 1j * rng.normal(size=(2, 3))
    y = rng.normal(size=(2, 3)) + 1j * rng.normal(size=(2, 3))

    def loss(s):
        out = forward(t, s, metric_state(s, a), {"s": x})
        return float(np.sum(np.abs(out - y) ** 2))

    m = metric_state(r, a)
    out = forward(t, r, m, {"s": x})
    g = backprop(t, r, m, {"s": x}, 2 * (out - y))
    fw, fe = fd_gradient(loss, r)
    ana = np.concatenate([*(g.weights[k].ravel() for k in fw), *(g.framings[k].ravel() for k in fe)])
    num = np.concatenate([*(v.ravel() for v in fw.values()), *(v.ravel() for v in fe.values())])
    assert rel_err(ana, num) < 1e-6
    dz, dzbar = g.wirtinger()
    np.testing.assert_allclose(dzbar.weights["st"], 0.5 * g.weights["st"])


def test_cost_flat_along_gauge_orbits():
    q = two_hidden_layers(2)
    dims = DimData({v: 2 for v in q.vertices}, {v: 3 for v in q.vertices})
    a = AlphaWeights.moduli(q)
    t = network_tree(q, "out", TANH)
    rng = np.random.default_rng(0)
    r = random_rep(q, dims, seed=1)
    ds = Dataset({"in1": rng.normal(size=(3, 4)), "in2": rng.normal(size=(3, 4))}, rng.normal(size=(3, 4)))
    xi = {v: rng.normal(size=(2, 2)) for v in q.vertices}
    # tangent of the orbit at r: w -> xi_h w - w xi_t, e -> xi e
    dw = {b.id: xi[b.head] @ r.weights[b.id] - r.weights[b.id] @ xi[b.tail] for b in q.arrows}
    de = {v: xi[v] @ r.framings[v] for v in q.vertices}
    h = 1e-6

    def moved(s):
        return r.replace({k: r.weights[k] + s * dw[k] for k in dw}, {k: r.framings[k] + s * de[k] for k in de})

    deriv = (cost(t, moved(h), a, ds) - cost(t, moved(-h), a, ds)) / (2 * h)
    assert abs(deriv) < 1e-6


# -- near-ring laws ------------------------------------------------------------


def test_right_distributivity():
    q = two_hidden_layers(2)
    dims = DimData({v: 1 for v in q.vertices}, {v: 2 for v in q.vertices})
    for seed in range(10):
        rng = np.random.default_rng(100 + seed)
        r = random_rep(q, dims, seed=seed)
        m = metric_state(r, AlphaWeights.moduli(q))
        # both summands read slot h1 so the substitution touches each of them
        x = random_tree(q, "out", rng) + term(HattedElement.of(q, "a2_11", "a3_1"), Input("h1", "h1"))
        y = random_tree(q, "out", rng) + term(HattedElement.of(q, "a2_12", "a3_2"), Input("h1", "h1"))
        z = random_tree(q, "h1", rng, depth=2)
        lhs = compose(x + y, {"h1": z})
        rhs = compose(x, {"h1": z}) + compose(y, {"h1": z})
        xs = inputs_for(input_slots(lhs), dims, rng)
        np.testing.assert_allclose(forward(lhs, r, m, xs), forward(rhs, r, m, xs), atol=1e-10)


def test_left_distributivity_fails_for_relu():
    q = Quiver(["u", "v", "w"], [("a", "u", "v"), ("b", "v", "w")])
    r = ChartCoords(q, DimData.uniform(q)).rep(np.array([1.0, 1.0]))
    m = metric_state(r, AlphaWeights.euclidean(q))
    x = term(HattedElement.of(q, "a"), Input("u", "u"))
    y = term(HattedElement.of(q, "a", coef=-1.0), Input("u", "u"))
    z = term(HattedElement.of(q, "b"), Act(RELU, term(HattedElement.trivial("v"), Input("v", "v"))))
    left = forward(compose(z, {"v": x + y}), r, m, {"u": [1.0]})
    split = forward(compose(z, {"v": x}) + compose(z, {"v": y}), r, m, {"u": [1.0]})
    # relu(x - x) = 0 while relu(x) + relu(-x) = |x|
    assert left[0] == 0.0 and split[0] == 1.0
