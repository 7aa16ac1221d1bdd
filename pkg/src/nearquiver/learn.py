"""Squared-error cost over datasets and Riemannian gradient descent on gauge-fixed charts."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
import numpy as np

from .algebra import GradientRecord, Sum, backprop, forward, input_slots, typecheck
from .constants import TOLERANCES
from .errors import NotSpaceLike, ShapeMismatch, StepRejected
from .metrics import AlphaWeights, ChartCoords, gauge_fix, kahler_gram, metric_state
from .quiver import FramedRep


@dataclass
class Dataset:
    """Samples stored column-wise: ``inputs[slot]`` has shape ``(n_slot, N)``, ``targets`` ``(n_out, N)``."""

    inputs: dict
    targets: np.ndarray

    def __post_init__(self):
        self.inputs = {k: np.atleast_2d(np.asarray(v, dtype=float)) for k, v in self.inputs.items()}
        self.targets = np.atleast_2d(np.asarray(self.targets, dtype=float))
        sizes = {v.shape[1] for v in self.inputs.values()} | {self.targets.shape[1]}
        if len(sizes) != 1:
            raise ShapeMismatch("inputs and targets disagree on the number of samples")

    @classmethod
    def from_samples(cls, samples) -> "Dataset":
        """Build from ``[(inputs_by_slot, target_vector), ...]``."""
        samples = list(samples)
        slots = samples[0][0].keys()
        inputs = {s: np.stack([np.atleast_1d(x[s]) for x, _ in samples], axis=1) for s in slots}
        targets = np.stack([np.atleast_1d(y) for _, y in samples], axis=1)
        return cls(inputs, targets)

    def __len__(self):
        return self.targets.shape[1]

    def subset(self, idx) -> "Dataset":
        return Dataset({k: v[:, idx] for k, v in self.inputs.items()}, self.targets[:, idx])

    def samples(self):
        for j in range(len(self)):
            yield {k: v[:, j] for k, v in self.inputs.items()}, self.targets[:, j]

    def check(self, tree: Sum, r: FramedRep) -> None:
        slots = input_slots(tree)
        if set(slots) != set(self.inputs):
            raise ShapeMismatch(f"dataset slots {sorted(self.inputs)} do not match tree slots {sorted(slots)}")
        for s, fr in slots.items():
            if self.inputs[s].shape[0] != r.dims.n[fr]:
                raise ShapeMismatch(f"slot {s!r} has {self.inputs[s].shape[0]} coordinates, framing needs {r.dims.n[fr]}")
        out = typecheck(tree, r.quiver)
        if self.targets.shape[0] != r.dims.n[out]:
            raise ShapeMismatch("target width does not match the output framing")


def cost(tree: Sum, r: FramedRep, alpha: AlphaWeights, ds: Dataset, state=None) -> float:
    """Mean squared error ``mean_x |tree(x) - f(x)|^2``."""
    m = state if state is not None else metric_state(r, alpha)
    out = forward(tree, r, m, ds.inputs)
    return float(np.mean(np.sum(np.abs(out - ds.targets) ** 2, axis=0)))


def euclidean_gradient(tree: Sum, r: FramedRep, alpha: AlphaWeights, ds: Dataset, state=None) -> GradientRecord:
    m = state if state is not None else metric_state(r, alpha)
    out = forward(tree, r, m, ds.inputs)
    seed = 2.0 * (out - ds.targets) / len(ds)
    return backprop(tree, r, m, ds.inputs, seed)


@dataclass
class TrainConfig:
    lr: float = 0.1
    epochs: int = 100
    batch_size: int | None = None  # None: full batch
    ridge: float | None = None  # None: ridge_scale * trace(G) / dim(G)
    seed: int = 0
    refix_period: int = 1
    backtrack: bool = False
    learn_alpha: bool = False
    max_halvings: int = TOLERANCES.max_step_halvings

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError("learning rate must be positive")
        if self.ridge is not None and self.ridge < 0:
            raise ValueError("ridge must be non-negative")
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")


@dataclass
class StepRecord:
    epoch: int
    step: int
    cost: float
    grad_norm: float
    step_norm: float
    min_gram_eigenvalue: float
    halvings: int
    alpha: list = field(default_factory=list)


@dataclass
class TrainTrace:
    records: list = field(default_factory=list)

    def append(self, rec: StepRecord) -> None:
        self.records.append(rec)

    def __len__(self):
        return len(self.records)

    @property
    def costs(self) -> np.ndarray:
        return np.array([r.cost for r in self.records])

    def to_jsonl(self) -> str:
        return "".join(json.dumps(asdict(r)) + "\n" for r in self.records)

    @classmethod
    def from_jsonl(cls, text: str) -> "TrainTrace":
        return cls([StepRecord(**json.loads(line)) for line in text.splitlines() if line.strip()])


def descent_metric(r: FramedRep, alpha: AlphaWeights, chart: ChartCoords, state=None) -> np.ndarray:
    """The positive metric used to turn the cost differential into a step.

    All-zero alpha gives the flat identity.  Otherwise the Kahler Gram is
    used as is when every alpha is non-negative, negated when every alpha is
    non-positive, and replaced by its spectral absolute value when the signs
    are mixed.
    """
    if alpha.is_euclidean:
        return np.eye(chart.dim)
    G = kahler_gram(r, alpha, chart, state)
    a = alpha.as_vector()
    if np.all(a >= 0):
        return G
    if np.all(a <= 0):
        return -G
    w, V = np.linalg.eigh(G)
    return (V * np.abs(w)) @ V.conj().T


@dataclass
class StepDiagnostics:
    cost: float
    grad_norm: float
    step_norm: float
    min_gram_eigenvalue: float
    halvings: int
    ridge: float
    residual: float


def riemannian_step(tree: Sum, r: FramedRep, alpha: AlphaWeights, ds: Dataset, cfg: TrainConfig, chart: ChartCoords | None = None):
    """One preconditioned step ``(G + ridge I) delta = -grad`` in chart coordinates.

    Steps leaving the space-like locus (or, with ``cfg.backtrack``, raising
    the cost) are halved up to ``cfg.max_halvings`` times before
    ``StepRejected`` is raised.
    """
    if chart is None:
        chart = ChartCoords(r.quiver, r.dims, r.field)
    z = chart.coords(r)
    m = metric_state(r, alpha)
    c0 = cost(tree, r, alpha, ds, m)
    g = chart.flatten_gradient(euclidean_gradient(tree, r, alpha, ds, m))
    G = descent_metric(r, alpha, chart, m)
    if alpha.is_euclidean:
        ridge = 0.0 if cfg.ridge is None else cfg.ridge
    elif cfg.ridge is None:
        ridge = TOLERANCES.ridge_scale * float(np.real(np.trace(G))) / max(chart.dim, 1)
    else:
        ridge = cfg.ridge
    A = G.T + ridge * np.eye(chart.dim)
    if ridge == 0.0 and alpha.is_euclidean:
        delta = -g
    else:
        delta = np.linalg.solve(A, -g)
    gnorm = float(np.linalg.norm(g))
    residual = float(np.linalg.norm(A @ delta + g) / gnorm) if gnorm else 0.0
    if not np.any(delta):
        return r, StepDiagnostics(c0, gnorm, 0.0, m.min_eigenvalue, 0, ridge, residual)

    scale = cfg.lr
    for halvings in range(cfg.max_halvings + 1):
        cand = chart.rep(z + scale * delta)
        try:
            mc = metric_state(cand, alpha)
        except NotSpaceLike:
            scale *= 0.5
            continue
        if cfg.backtrack and cost(tree, cand, alpha, ds, mc) > c0:
            scale *= 0.5
            continue
        diag = StepDiagnostics(
            c0, gnorm, float(scale * np.linalg.norm(delta)), mc.min_eigenvalue, halvings, ridge, residual
        )
        return cand, diag
    raise StepRejected(f"no acceptable step after {cfg.max_halvings} halvings")


def alpha_gradient(tree: Sum, r: FramedRep, alpha: AlphaWeights, ds: Dataset, h: float = TOLERANCES.alpha_fd_step) -> np.ndarray:
    """Central finite-difference gradient of the cost in every alpha entry.

    Entries whose perturbation leaves the space-like locus get gradient 0.
    """
    a0 = alpha.as_vector()
    out = np.zeros_like(a0)
    for k in range(len(a0)):
        ap, am = a0.copy(), a0.copy()
        ap[k] += h
        am[k] -= h
        try:
            out[k] = (cost(tree, r, alpha.with_vector(ap), ds) - cost(tree, r, alpha.with_vector(am), ds)) / (2 * h)
        except NotSpaceLike:
            out[k] = 0.0
    return out


def train(tree: Sum, r0: FramedRep, ds: Dataset, cfg: TrainConfig, alpha: AlphaWeights, chart: ChartCoords | None = None):
    """Mini-batch Riemannian descent; returns ``(final rep, trace, final alpha)``.

    Deterministic for a fixed ``cfg.seed``: the batch order comes from a
    generator seeded with it.
    """
    trace = TrainTrace()
    if cfg.epochs == 0:
        return r0, trace, alpha
    ds.check(tree, r0)
    if chart is None:
        chart = ChartCoords(r0.quiver, r0.dims, r0.field)
    r = r0 if chart.in_slice(r0, atol=0) else gauge_fix(r0, chart)[0]
    rng = np.random.default_rng(cfg.seed)
    bs = len(ds) if cfg.batch_size is None else min(cfg.batch_size, len(ds))
    full_batch = bs == len(ds)
    step = 0
    for epoch in range(cfg.epochs):
        order = np.arange(len(ds)) if full_batch else rng.permutation(len(ds))
        for start in range(0, len(ds), bs):
            batch = ds if full_batch else ds.subset(order[start : start + bs])
            r, diag = riemannian_step(tree, r, alpha, batch, cfg, chart)
            if cfg.learn_alpha:
                alpha = _alpha_step(tree, r, alpha, batch, cfg)
            step += 1
            if cfg.refix_period and step % cfg.refix_period == 0:
                r = gauge_fix(r, chart)[0]
            trace.append(
                StepRecord(
                    epoch,
                    step,
                    diag.cost,
                    diag.grad_norm,
                    diag.step_norm,
                    diag.min_gram_eigenvalue,
                    diag.halvings,
                    alpha.as_vector().tolist() if cfg.learn_alpha else [],
                )
            )
    return r, trace, alpha


def _alpha_step(tree, r, alpha, ds, cfg):
    a = alpha.as_vector()
    g = alpha_gradient(tree, r, alpha, ds)
    scale = cfg.lr
    for _ in range(cfg.max_halvings + 1):
        new = alpha.with_vector(np.clip(a - scale * g, TOLERANCES.alpha_min, TOLERANCES.alpha_max))
        try:
            metric_state(r, new)
            return new
        except NotSpaceLike:
            scale *= 0.5
    return alpha

