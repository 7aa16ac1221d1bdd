"""Equivariant bundle metrics, space-like loci and the Kahler metric on charts.

For each vertex ``i`` the weighted Gram matrix is

    S_i(alpha) = eps_i eps_i^+ + alpha_triv b_i b_i^+
                 + sum_{gamma != triv} alpha_gamma P_gamma P_gamma^+,

where ``P_gamma = w_gamma e^{(t(gamma))}`` runs over all paths into ``i`` and
``e^{(i)} = (eps_i | b_i)`` splits the framing into its leading square block
and the remaining columns.  The bundle metric is ``H_i = S_i^{-1}``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .constants import TOLERANCES
from .errors import NotSpaceLike, RankDeficientFraming, ShapeMismatch
from .quiver import (
    REAL,
    DimData,
    FramedRep,
    GaugeElement,
    Path,
    Quiver,
    act,
    enumerate_paths,
    validate_quiver,
)

MODULI = "moduli"
EUCLIDEAN = "euclidean"
HYPERBOLIC = "hyperbolic"
PRESETS = {MODULI: 1.0, EUCLIDEAN: 0.0, HYPERBOLIC: -1.0}


class AlphaWeights:
    """A real weight ``alpha_gamma`` for every path ``gamma`` into every vertex.

    The weight of the trivial path at ``i`` multiplies only the ``b_i b_i^+``
    block; ``eps_i eps_i^+`` always enters with weight one.
    """

    def __init__(self, quiver: Quiver, table: Mapping, name: str = "custom"):
        keys = all_path_keys(quiver)
        table = {k: float(v) for k, v in table.items()}
        if set(table) != set(keys):
            missing = [k for k in keys if k not in table]
            extra = [k for k in table if k not in set(keys)]
            raise ShapeMismatch(f"alpha table keys differ from the path set (missing {missing[:3]}, extra {extra[:3]})")
        self.quiver = quiver
        self.name = name
        self._table = {k: table[k] for k in keys}
        self._columns = {}

    @classmethod
    def uniform(cls, quiver: Quiver, value: float, name: str = "custom") -> "AlphaWeights":
        return cls(quiver, {k: value for k in all_path_keys(quiver)}, name)

    @classmethod
    def preset(cls, quiver: Quiver, name: str) -> "AlphaWeights":
        if name not in PRESETS:
            raise ShapeMismatch(f"unknown alpha preset {name!r}")
        return cls.uniform(quiver, PRESETS[name], name)

    @classmethod
    def moduli(cls, quiver):
        return cls.preset(quiver, MODULI)

    @classmethod
    def euclidean(cls, quiver):
        return cls.preset(quiver, EUCLIDEAN)

    @classmethod
    def hyperbolic(cls, quiver):
        return cls.preset(quiver, HYPERBOLIC)

    def __getitem__(self, key) -> float:
        return self._table[key]

    def value(self, vertex: str, path: Path) -> float:
        return self._table[(vertex, path)]

    def keys(self):
        return list(self._table)

    def items(self):
        return list(self._table.items())

    def as_vector(self) -> np.ndarray:
        return np.array(list(self._table.values()))

    def with_vector(self, vec) -> "AlphaWeights":
        return AlphaWeights(self.quiver, dict(zip(self._table, map(float, vec))), self.name)

    @property
    def is_euclidean(self) -> bool:
        return all(v == 0.0 for v in self._table.values())

    def __eq__(self, other):
        return isinstance(other, AlphaWeights) and self.quiver == other.quiver and self._table == other._table

    def __repr__(self):
        return f"AlphaWeights(name={self.name!r}, n_paths={len(self._table)})"


def all_path_keys(quiver: Quiver) -> list:
    return [(v, p) for v in quiver.vertices for p in enumerate_paths(quiver, v)]


def split_width(dims: DimData, vertex: str) -> int:
    """Number of framing columns that belong to the square block ``eps``."""
    return min(dims.d[vertex], dims.n[vertex])


def path_products(r: FramedRep) -> dict:
    """``{vertex: [P_gamma for gamma in enumerate_paths(q, vertex)]}`` via dynamic programming."""
    q = r.quiver
    order = validate_quiver(q)
    prods = {}
    for v in order:
        prods[Path(v)] = r.framings[v]
        for a in q.incoming(v):
            w = r.weights[a.id]
            for p in enumerate_paths(q, a.tail):
                prods[p.extend(a)] = w @ prods[p]
    return {v: [prods[p] for p in enumerate_paths(q, v)] for v in q.vertices}


def column_weights(r: FramedRep, alpha: AlphaWeights, vertex: str) -> list:
    """Per-column weights for each path block of ``rho_i``."""
    key = (vertex, r.dims)
    hit = alpha._columns.get(key)
    if hit is not None:
        return hit
    out = []
    for p in enumerate_paths(r.quiver, vertex):
        a = alpha.value(vertex, p)
        n_src = r.dims.n[p.source(r.quiver)]
        lam = np.full(n_src, a)
        if not p.arrows:
            lam[: split_width(r.dims, vertex)] = 1.0
        lam.setflags(write=False)
        out.append(lam)
    alpha._columns[key] = out
    return out


def _weighted_gram(prods, lams, d, dtype):
    s = np.zeros((d, d), dtype=dtype)
    for P, lam in zip(prods, lams):
        if P.shape[1]:
            s += (P * lam) @ P.conj().T
    return s


def gram(r: FramedRep, vertex: str, alpha: AlphaWeights) -> np.ndarray:
    """The matrix inside the inverse of ``H_i(alpha)``."""
    prods = path_products(r)[vertex]
    return _weighted_gram(prods, column_weights(r, alpha, vertex), r.dims.d[vertex], r.dtype)


@dataclass(frozen=True, eq=False)
class MetricState:
    """Snapshot of all vertex metrics at one ``(rep, alpha)``."""

    rep: FramedRep
    alpha: AlphaWeights
    products: Mapping[str, list]
    weights: Mapping[str, list]
    gram: Mapping[str, np.ndarray]
    H: Mapping[str, np.ndarray]
    chol: Mapping[str, np.ndarray]
    logdet: Mapping[str, float]
    lowest: Mapping[str, float]

    @property
    def min_eigenvalue(self) -> float:
        return min(self.lowest.values())


def metric_state(r: FramedRep, alpha: AlphaWeights) -> MetricState:
    """Factor every vertex Gram; raise ``NotSpaceLike`` at the first failing vertex."""
    if alpha.quiver != r.quiver:
        raise ShapeMismatch("alpha weights belong to a different quiver")
    prods = path_products(r)
    lams, grams, Hs, chols, logdets, lows = {}, {}, {}, {}, {}, {}
    for v in validate_quiver(r.quiver):
        lams[v] = column_weights(r, alpha, v)
        s = _weighted_gram(prods[v], lams[v], r.dims.d[v], r.dtype)
        s = 0.5 * (s + s.conj().T)
        try:
            L = np.linalg.cholesky(s)
        except np.linalg.LinAlgError:
            raise NotSpaceLike(v, np.linalg.eigvalsh(s)[0]) from None
        diag = np.real(np.diag(L))
        tr = np.real(np.trace(s))
        lo = s[0, 0].real if s.shape[0] == 1 else np.linalg.eigvalsh(s)[0]
        if lo <= TOLERANCES.gram_relative_floor * tr:
            raise NotSpaceLike(v, lo)
        H = np.linalg.inv(s)
        grams[v] = s
        Hs[v] = 0.5 * (H + H.conj().T)
        chols[v] = L
        logdets[v] = float(2.0 * np.sum(np.log(diag)))
        lows[v] = float(lo)
    return MetricState(r, alpha, prods, lams, grams, Hs, chols, logdets, lows)


def is_space_like(r: FramedRep, alpha: AlphaWeights) -> bool:
    try:
        metric_state(r, alpha)
    except NotSpaceLike:
        return False
    return True


class ChartCoords:
    """Gauge-fixed chart: the leading square framing block at each vertex is frozen.

    Free coordinates are every arrow weight entry followed by every entry of
    the remaining framing columns ``b_i``, all row-major, arrows and vertices
    in declaration order.
    """

    def __init__(self, quiver: Quiver, dims: DimData, field: str = REAL, epsilons: Mapping | None = None):
        validate_quiver(quiver)
        dims.check(quiver)
        for v in quiver.vertices:
            if dims.n[v] < dims.d[v]:
                raise RankDeficientFraming(f"vertex {v!r} has n={dims.n[v]} < d={dims.d[v]}; no gauge-fixed chart")
        self.quiver, self.dims, self.field = quiver, dims, field
        dtype = np.float64 if field == REAL else np.complex128
        eps = {}
        for v in quiver.vertices:
            m = np.eye(dims.d[v], dtype=dtype) if epsilons is None or v not in epsilons else np.asarray(epsilons[v], dtype=dtype)
            if m.shape != (dims.d[v], dims.d[v]):
                raise ShapeMismatch(f"chart block at {v!r} must be {dims.d[v]}x{dims.d[v]}")
            if np.linalg.cond(m) > TOLERANCES.gauge_condition_max:
                raise RankDeficientFraming(f"chart block at {v!r} is singular")
            m.setflags(write=False)
            eps[v] = m
        self.epsilons = eps
        self.dtype = dtype
        slots = []
        for a in quiver.arrows:
            rows, cols = dims.d[a.head], dims.d[a.tail]
            slots.append(("w", a.id, rows, cols, 0))
        for v in quiver.vertices:
            rows, cols = dims.d[v], dims.n[v] - dims.d[v]
            slots.append(("b", v, rows, cols, dims.d[v]))
        self._slots = []
        off = 0
        for kind, key, rows, cols, c0 in slots:
            self._slots.append((kind, key, rows, cols, c0, off))
            off += rows * cols
        self.dim = off

    def offset(self, kind: str, key: str) -> int:
        for k, kk, _, _, _, off in self._slots:
            if k == kind and kk == key:
                return off
        raise KeyError((kind, key))

    def labels(self) -> list:
        out = []
        for kind, key, rows, cols, c0, _ in self._slots:
            out += [(kind, key, p, c0 + q) for p in range(rows) for q in range(cols)]
        return out

    def in_slice(self, r: FramedRep, atol: float = 1e-9) -> bool:
        for v in self.quiver.vertices:
            blk = r.framings[v][:, : self.dims.d[v]]
            if np.array_equal(blk, self.epsilons[v]):
                continue
            if atol == 0 or not np.allclose(blk, self.epsilons[v], rtol=0, atol=atol):
                return False
        return True

    def coords(self, r: FramedRep) -> np.ndarray:
        if r.quiver != self.quiver or r.dims != self.dims:
            raise ShapeMismatch("representation does not match the chart's quiver/dimensions")
        if not self.in_slice(r):
            raise ShapeMismatch("representation is not in the chart's gauge slice")
        parts = []
        for kind, key, rows, cols, c0, _ in self._slots:
            m = r.weights[key] if kind == "w" else r.framings[key][:, c0:]
            parts.append(np.asarray(m, dtype=self.dtype).reshape(-1))
        return np.concatenate(parts) if parts else np.zeros(0, self.dtype)

    def rep(self, vec) -> FramedRep:
        vec = np.asarray(vec)
        if vec.shape != (self.dim,):
            raise ShapeMismatch(f"coordinate vector must have shape ({self.dim},)")
        w, e = {}, {}
        for kind, key, rows, cols, c0, off in self._slots:
            block = vec[off : off + rows * cols].reshape(rows, cols)
            if kind == "w":
                w[key] = block
            else:
                e[key] = np.concatenate([self.epsilons[key], block], axis=1)
        return FramedRep(self.quiver, self.dims, w, e, self.field)

    def flatten_gradient(self, grad) -> np.ndarray:
        """Restrict a gradient record (same layout as a rep) to chart coordinates."""
        parts = []
        for kind, key, rows, cols, c0, _ in self._slots:
            m = grad.weights[key] if kind == "w" else grad.framings[key][:, c0:]
            parts.append(np.asarray(m).reshape(-1))
        return np.concatenate(parts) if parts else np.zeros(0)

    def path_jacobian(self, r: FramedRep, vertex: str, products=None) -> np.ndarray:
        """``D[mu] = d rho_vertex / d z_mu``, shape ``(dim, d_vertex, total columns)``."""
        q, dims = self.quiver, self.dims
        paths = enumerate_paths(q, vertex)
        widths = [dims.n[p.source(q)] for p in paths]
        D = np.zeros((self.dim, dims.d[vertex], sum(widths)), dtype=self.dtype)
        c0 = 0
        for p, width in zip(paths, widths):
            src = p.source(q)
            mats = [r.weights[aid] for aid in p.arrows]
            # suffixes[j] = w_{a_j} ... w_{a_1} e_src (j arrows applied)
            suffixes = [r.framings[src]]
            for m in mats:
                suffixes.append(m @ suffixes[-1])
            # prefixes[j] = w_{a_k} ... w_{a_{j+1}}
            prefixes = [np.eye(dims.d[vertex], dtype=self.dtype)]
            for m in reversed(mats):
                prefixes.append(prefixes[-1] @ m)
            prefixes.reverse()
            for j, aid in enumerate(p.arrows):
                L = prefixes[j + 1]
                R = suffixes[j]
                off = self.offset("w", aid)
                rows, cols = L.shape[1], R.shape[0]
                block = np.einsum("xp,qy->pqxy", L, R).reshape(rows * cols, L.shape[0], width)
                D[off : off + rows * cols, :, c0 : c0 + width] += block
            dsrc = dims.d[src]
            nb = dims.n[src] - dsrc
            if nb:
                Wg = prefixes[0]
                off = self.offset("b", src)
                for pp in range(dsrc):
                    for qq in range(nb):
                        D[off + pp * nb + qq, :, c0 + dsrc + qq] += Wg[:, pp]
            c0 += width
        return D


def gauge_fix(r: FramedRep, chart: ChartCoords | None = None):
    """Move ``r`` into the chart slice; return ``(rep, gauge element used)``.

    The gauge element is ``g_i = eps_chart eps_i^{-1}``, the unique one that
    carries the leading framing block onto the chart's frozen block.
    """
    if chart is None:
        chart = ChartCoords(r.quiver, r.dims, r.field)
    if chart.in_slice(r, atol=0):
        return r, GaugeElement.identity(r.dims, r.field)
    mats = {}
    for v in r.quiver.vertices:
        d, n = r.dims.d[v], r.dims.n[v]
        if n < d:
            raise RankDeficientFraming(f"vertex {v!r}: framing has {n} < {d} columns")
        eps = r.framings[v][:, :d]
        if np.linalg.cond(eps) > TOLERANCES.gauge_condition_max:
            raise RankDeficientFraming(f"vertex {v!r}: leading framing block is singular")
        mats[v] = chart.epsilons[v] @ np.linalg.inv(eps)
    g = GaugeElement(mats)
    fixed = act(g, r)
    # pin the frozen block exactly so the result is in the slice bit-for-bit
    e = {v: np.concatenate([chart.epsilons[v], fixed.framings[v][:, r.dims.d[v]:]], axis=1) for v in r.quiver.vertices}
    return fixed.replace(framings=e), g


def log_det_potential(r: FramedRep, alpha: AlphaWeights) -> float:
    """``sum_i log det S_i(alpha)``; the Kahler potential of the moduli metric."""
    st = metric_state(r, alpha)
    return sum(st.logdet.values())


def kahler_gram(r: FramedRep, alpha: AlphaWeights, chart: ChartCoords | None = None, state: MetricState | None = None) -> np.ndarray:
    """``G[mu, nu] = d_mu dbar_nu sum_i log det S_i(alpha)`` over chart coordinates.

    Computed analytically from ``rho_i`` and its holomorphic Jacobian:

        G = sum_i tr(S^-1 dρ_mu Λ dρ_nu^+) - tr(S^-1 A_mu S^-1 A_nu^+),
        A_mu = dρ_mu Λ ρ^+.

    For a real representation the same Hermitian form is evaluated at the
    real point; it is then real symmetric and returned as a real array.
    """
    if chart is None:
        chart = ChartCoords(r.quiver, r.dims, r.field)
    if not chart.in_slice(r):
        raise ShapeMismatch("representation is not in the chart's gauge slice")
    st = state if state is not None else metric_state(r, alpha)
    G = np.zeros((chart.dim, chart.dim), dtype=np.complex128)
    for v in r.quiver.vertices:
        D = chart.path_jacobian(r, v)
        if not D.size or not np.any(D):
            continue
        rho = np.concatenate(st.products[v], axis=1)
        lam = np.concatenate(st.weights[v])
        Sinv = st.H[v]
        C = np.einsum("ab,mbc->mac", Sinv, D)
        T1 = np.einsum("mab,b,nab->mn", C, lam, D.conj())
        A = np.einsum("mab,b,cb->mac", D, lam, rho.conj())
        Y = np.einsum("ab,mbc->mac", Sinv, A)
        Z = np.einsum("mab,bc->mac", A, Sinv)
        T2 = np.einsum("mab,nab->mn", Y, Z.conj())
        G += T1 - T2
    G = 0.5 * (G + G.conj().T)
    if r.field == REAL:
        return np.ascontiguousarray(G.real)
    return G
