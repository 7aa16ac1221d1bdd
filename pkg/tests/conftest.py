import numpy as np
import pytest

from nearquiver.algebra import RELU, TANH, Act, HattedElement, Input, Sum, Term
from nearquiver.metrics import AlphaWeights, ChartCoords, is_space_like, metric_state
from nearquiver.networks import one_arrow, one_hidden_layer, two_hidden_layers
from nearquiver.quiver import COMPLEX, REAL, DimData, FramedRep, Path, Quiver, act, enumerate_paths, random_gauge, validate_quiver

# acceptance results collected here and echoed in the terminal summary
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[n])


def diamond() -> Quiver:
    """Two routes from ``s`` to ``t`` plus a shortcut; exercises multi-path sums."""
    return Quiver(["s", "l", "r", "t"], [("sl", "s", "l"), ("sr", "s", "r"), ("lt", "l", "t"), ("rt", "r", "t"), ("st", "s", "t")])


TEST_QUIVERS = {
    "one_arrow": one_arrow,
    "one_hidden_layer": lambda: one_hidden_layer(2),
    "two_hidden_layers": lambda: two_hidden_layers(2),
    "diamond": diamond,
}


def space_like_rep(q, dims, alpha, seed, scale=1.0, field=REAL, tries=200, margin=0.0):
    """A random space-like rep for ``alpha``, moved off the chart slice by a random gauge.

    Shrinks the chart coordinates (framing block fixed to the identity) until
    every Gram eigenvalue exceeds ``margin``; at the origin they all equal 1.
    """
    rng = np.random.default_rng(seed)
    chart = ChartCoords(q, dims, field)
    z = rng.normal(size=chart.dim) * scale
    if field == COMPLEX:
        z = z + 1j * rng.normal(size=chart.dim) * scale
    for k in range(tries):
        r = chart.rep(z * 0.9**k)
        if is_space_like(r, alpha) and metric_state(r, alpha).min_eigenvalue > margin:
            return act(random_gauge(dims, rng, field, max_condition=10.0), r)
    raise RuntimeError("no space-like rep found")


def fd_gradient(f, r: FramedRep, h=1e-6, order=2):
    """Central differences of a real functional in every entry of ``r``.

    ``order`` 2 is the three-point stencil, 4 the five-point one. Complex reps
    get ``df/dx + i df/dy`` per entry.
    """
    out_w, out_e = {}, {}

    def partials(block_of, replace):
        g = np.zeros(block_of.shape, dtype=r.dtype)
        for idx in np.ndindex(block_of.shape):
            steps = [1.0] if r.field == REAL else [1.0, 1j]
            for s in steps:

                def at(t):
                    m = block_of.copy()
                    m[idx] += t * h * s
                    return f(replace(m))

                if order == 2:
                    d = (at(1) - at(-1)) / (2 * h)
                else:
                    d = (8 * (at(1) - at(-1)) - (at(2) - at(-2))) / (12 * h)
                g[idx] += d if s == 1.0 else 1j * d
        return g

    for k, w in r.weights.items():
        out_w[k] = partials(np.array(w), lambda m, k=k: r.replace(weights={**r.weights, k: m}))
    for k, e in r.framings.items():
        out_e[k] = partials(np.array(e), lambda m, k=k: r.replace(framings={**r.framings, k: m}))
    return out_w, out_e


def _affine_chart(chart: ChartCoords):
    """The chart as ``z -> base + sum_k z_k delta_k`` on weights and framings."""
    base = chart.rep(np.zeros(chart.dim, dtype=chart.dtype))
    unit = [chart.rep(np.eye(chart.dim, dtype=chart.dtype)[k]) for k in range(chart.dim)]
    w = {a: (base.weights[a], np.stack([u.weights[a] - base.weights[a] for u in unit])) for a in base.weights}
    e = {v: (base.framings[v], np.stack([u.framings[v] - base.framings[v] for u in unit])) for v in base.framings}
    return w, e


def batched_potential(chart: ChartCoords, alpha: AlphaWeights, Z) -> np.ndarray:
    """``sum_i log det S_i`` at every row of ``Z``, written independently of the library's metric code."""
    q, dims = chart.quiver, chart.dims
    w_aff, e_aff = _affine_chart(chart)
    W = {a: b0 + np.einsum("bk,kij->bij", Z, D) for a, (b0, D) in w_aff.items()}
    E = {v: b0 + np.einsum("bk,kij->bij", Z, D) for v, (b0, D) in e_aff.items()}
    prods = {}
    for v in validate_quiver(q):
        prods[Path(v)] = E[v]
        for a in q.incoming(v):
            for p in enumerate_paths(q, a.tail):
                prods[p.extend(a)] = W[a.id] @ prods[p]
    total = np.zeros(len(Z))
    for v in q.vertices:
        S = np.zeros((len(Z), dims.d[v], dims.d[v]), dtype=complex)
        for p in enumerate_paths(q, v):
            P = prods[p]
            lam = np.full(P.shape[-1], alpha.value(v, p))
            if not p.arrows:
                lam[: min(dims.d[v], dims.n[v])] = 1.0
            S += (P * lam) @ np.conj(np.swapaxes(P, 1, 2))
        total += np.linalg.slogdet(S)[1]
    return total


def fd_kahler(r: FramedRep, alpha: AlphaWeights, chart: ChartCoords, h=1e-4):
    """``d_mu dbar_nu`` of the log-det potential by finite differences on the complexified chart."""
    cchart = ChartCoords(r.quiver, r.dims, COMPLEX, chart.epsilons)
    z0 = cchart.coords(r.to_complex())
    n = len(z0)
    # real directions x_k then imaginary directions y_k
    dirs = np.concatenate([np.eye(n), 1j * np.eye(n)]).astype(complex)
    m = 2 * n
    iu, ju = np.triu_indices(m, 1)
    steps = [np.zeros((1, n))]
    steps += [dirs, -dirs]
    pair_p, pair_m = dirs[iu] + dirs[ju], dirs[iu] - dirs[ju]
    steps += [pair_p, pair_m, -pair_m, -pair_p]
    f = batched_potential(cchart, alpha, z0 + h * np.concatenate(steps))
    f0, fp, fm = f[0], f[1 : 1 + m], f[1 + m : 1 + 2 * m]
    k = len(iu)
    fpp, fpm, fmp, fmm = (f[1 + 2 * m + j * k : 1 + 2 * m + (j + 1) * k] for j in range(4))
    R = np.zeros((m, m))
    R[np.arange(m), np.arange(m)] = (fp - 2 * f0 + fm) / h**2
    R[iu, ju] = R[ju, iu] = (fpp - fpm - fmp + fmm) / (4 * h**2)
    xx, yy, xy, yx = R[:n, :n], R[n:, n:], R[:n, n:], R[n:, :n]
    return 0.25 * ((xx + yy) + 1j * (xy - yx))


def random_tree(q: Quiver, target: str, rng, depth=2, activations=(TANH, RELU), coef_field=REAL):
    """A random algorithm tree landing in ``target``; leaves are slots named after their vertex."""
    candidates = [p for p in enumerate_paths(q, target)]
    terms = []
    for _ in range(int(rng.integers(1, 3))):
        p = candidates[int(rng.integers(len(candidates)))]
        src = p.source(q)
        c = float(rng.normal()) if coef_field == REAL else complex(rng.normal(), rng.normal())
        coef = HattedElement(src, target, ((c, p),))
        if depth > 0 and rng.random() < 0.6:
            act = activations[int(rng.integers(len(activations)))]
            arg = Act(act, random_tree(q, src, rng, depth - 1, activations, coef_field))
        else:
            arg = Input(src, src)
        terms.append(Term(coef, arg))
    return Sum(tuple(terms))


def inputs_for(tree_slots, dims: DimData, rng, field=REAL, batch=None):
    shape = lambda n: (n,) if batch is None else (n, batch)
    out = {}
    for slot, fr in tree_slots.items():
        x = rng.normal(size=shape(dims.n[fr]))
        if field == COMPLEX:
            x = x + 1j * rng.normal(size=shape(dims.n[fr]))
        out[slot] = x
    return out


def rel_err(a, b):
    a, b = np.asarray(a), np.asarray(b)
    scale = max(np.linalg.norm(b), 1e-300)
    return float(np.linalg.norm(a - b) / scale)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
