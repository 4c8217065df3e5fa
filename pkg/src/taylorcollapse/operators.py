"""PDE operators built on Taylor-mode jets.

Every operator here is a weighted sum of top coefficients of K-jets seeded
with ``x1 = v`` and ``x2 = ... = xK = 0`` over one or more groups of
directions. :class:`OperatorProgram` captures that structure once and can be
evaluated as a standard graph (replicates pushed down) or as a collapsed
graph (sums pulled up).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from itertools import permutations, product
from typing import Sequence

import numpy as np

from .collapse import collapse, push_replicate_down, vector_counts, vectors_per_node
from .graph import Builder, EvalStats, Graph, GraphError, evaluate
from .taylor import Jet, _Trace, jet_eval, trace_function

MODES = ("standard", "collapsed")


# ---------------------------------------------------------------------------
# Interpolation coefficients


def generalized_binomial(a: Fraction, b: int) -> Fraction:
    """``prod_{l<b} (a - l) / (b - l)``; equals 1 when ``b == 0``."""
    out = Fraction(1)
    for l in range(b):
        out *= (Fraction(a) - l) / (b - l)
    return out


@lru_cache(maxsize=None)
def gamma(i: tuple[int, ...], j: tuple[int, ...]) -> Fraction:
    """Exact interpolation coefficient for mixed partial ``i`` and jet direction ``j``."""
    i, j = tuple(i), tuple(j)
    if len(i) != len(j) or min(i + j) < 0:
        raise ValueError(f"multi-indices {i} and {j} must be non-negative and equally long")
    K = sum(i)
    if sum(j) != K or K == 0:
        raise ValueError(f"|i| = {sum(i)} and |j| = {sum(j)} must agree and be positive")
    total = Fraction(0)
    for m in product(*(range(il + 1) for il in i)):
        norm = sum(m)
        if norm == 0:
            continue
        term = Fraction((-1) ** (K - norm))
        for il, ml, jl in zip(i, m, j):
            term *= math.comb(il, ml) * generalized_binomial(Fraction(K * ml, norm), jl)
        total += term * Fraction(norm, K) ** K
    return total


def compositions(total: int, parts: int):
    """All ``j`` in N^parts with entries summing to ``total``, in lexicographic order."""
    if parts == 1:
        yield (total,)
        return
    for first in range(total, -1, -1):
        for rest in compositions(total - first, parts - 1):
            yield (first,) + rest


@dataclass(frozen=True)
class LoopGroup:
    """Jets along all direction vectors with a given pattern of non-zero weights.

    ``pattern`` lists the weights in descending order, e.g. ``(3, 1)`` stands
    for every ``3 e_a + e_b`` with ``a != b``.
    """

    pattern: tuple[int, ...]
    coefficient: Fraction
    count: int

    def directions(self, dim: int) -> np.ndarray:
        vecs = []
        for dims in permutations(range(dim), len(self.pattern)):
            # equal weights are interchangeable: keep increasing dims only
            if any(self.pattern[a] == self.pattern[a + 1] and dims[a] > dims[a + 1]
                   for a in range(len(dims) - 1)):
                continue
            v = np.zeros(dim)
            v[list(dims)] = self.pattern
            vecs.append(v)
        return np.array(vecs).reshape(len(vecs), dim)


def _orbit_size(pattern: tuple[int, ...], dim: int) -> int:
    if len(pattern) > dim:
        return 0
    n = math.perm(dim, len(pattern))
    for w in set(pattern):
        n //= math.factorial(pattern.count(w))
    return n


@dataclass(frozen=True)
class InterpolationPlan:
    """Jet family reconstructing ``sum_d <d^K f, e_{d_1}^{i_1} ... e_{d_I}^{i_I}>``.

    ``members`` lists every ``j`` with ``|j| = K`` and its coefficient.
    ``reductions`` merges the sum over basis indices into loop groups, valid
    for the standard basis in ``dim`` dimensions.
    """

    i: tuple[int, ...]
    dim: int
    members: tuple[tuple[tuple[int, ...], Fraction], ...]
    reductions: tuple[LoopGroup, ...]

    @property
    def degree(self) -> int:
        return sum(self.i)

    @property
    def slots(self) -> int:
        return len(self.i)

    @property
    def jets(self) -> int:
        return sum(g.count for g in self.reductions)


def interpolation_plan(i: Sequence[int], dim: int) -> InterpolationPlan:
    """Build the member list and the symmetry-reduced loop groups for ``i``."""
    i = tuple(int(v) for v in i)
    if dim < 1:
        raise ValueError(f"dimension must be positive, got {dim}")
    K = sum(i)
    members = tuple((j, gamma(i, j)) for j in compositions(K, len(i)))
    coeffs: dict[tuple[int, ...], Fraction] = {}
    for j, g in members:
        if g == 0:
            continue
        nonzero = [w for w in j if w > 0]
        free = len(j) - len(nonzero)
        # Map each non-zero slot to a dimension; the free slots contribute a
        # factor dim each. Group by the sorted weight pattern of the result,
        # counting only hits on one canonical representative per pattern.
        for assign in product(range(len(nonzero)), repeat=len(nonzero)):
            vec = [0] * len(nonzero)
            for w, d in zip(nonzero, assign):
                vec[d] += w
            pattern = tuple(sorted((w for w in vec if w), reverse=True))
            if tuple(vec[: len(pattern)]) != pattern:
                continue
            coeffs[pattern] = coeffs.get(pattern, Fraction(0)) + g * dim**free / math.factorial(K)
    groups = tuple(
        LoopGroup(p, c, _orbit_size(p, dim))
        for p, c in sorted(coeffs.items(), key=lambda kv: (len(kv[0]), [-w for w in kv[0]]))
        if c != 0 and _orbit_size(p, dim) > 0
    )
    return InterpolationPlan(i, dim, members, groups)


# ---------------------------------------------------------------------------
# Directions


@dataclass(frozen=True)
class DirectionSet:
    """Directions for seeding jets.

    Use :meth:`basis`, :meth:`columns` or :meth:`sampled`. Sampled vectors
    come from numpy's Philox counter-based generator keyed by ``seed``.
    """

    kind: str
    dim: int
    matrix: np.ndarray | None = None
    samples: int = 0
    distribution: str = "gaussian"
    seed: int = 0

    @classmethod
    def basis(cls, dim: int) -> "DirectionSet":
        if dim < 1:
            raise ValueError(f"dimension must be positive, got {dim}")
        return cls("basis", dim)

    @classmethod
    def columns(cls, sigma) -> "DirectionSet":
        sigma = np.asarray(sigma, dtype=np.float64)
        if sigma.ndim != 2 or 0 in sigma.shape:
            raise ValueError(f"sigma must be a non-empty matrix, got shape {sigma.shape}")
        return cls("columns", sigma.shape[0], matrix=sigma)

    @classmethod
    def sampled(cls, dim: int, samples: int, distribution: str = "gaussian", seed: int = 0) -> "DirectionSet":
        if dim < 1:
            raise ValueError(f"dimension must be positive, got {dim}")
        if samples < 1:
            raise ValueError(f"need at least one sample, got {samples}")
        if distribution not in ("gaussian", "rademacher"):
            raise ValueError(f"unknown distribution {distribution!r}")
        return cls("sampled", dim, samples=samples, distribution=distribution, seed=seed)

    @property
    def count(self) -> int:
        if self.kind == "basis":
            return self.dim
        if self.kind == "columns":
            return self.matrix.shape[1]
        return self.samples

    def vectors(self) -> np.ndarray:
        """Directions as rows of a ``(count, dim)`` array."""
        if self.kind == "basis":
            return np.eye(self.dim)
        if self.kind == "columns":
            return self.matrix.T.copy()
        return sample_directions(self.samples, self.dim, self.distribution, self.seed)


def make_rng(seed: int) -> np.random.Generator:
    """Counter-based generator (Philox) keyed by a 64-bit seed."""
    return np.random.Generator(np.random.Philox(int(seed) & (2**64 - 1)))


def sample_directions(samples: int, dim: int, distribution: str, seed: int) -> np.ndarray:
    rng = make_rng(seed)
    if distribution == "gaussian":
        return rng.standard_normal((samples, dim))
    if distribution == "rademacher":
        return rng.integers(0, 2, size=(samples, dim)).astype(np.float64) * 2.0 - 1.0
    raise ValueError(f"unknown distribution {distribution!r}")


@dataclass(frozen=True)
class WeightedLaplacianSpec:
    """Weighting ``sigma @ sigma.T`` given by its factor ``sigma`` of shape (D, R)."""

    sigma: np.ndarray

    def __post_init__(self):
        sigma = np.asarray(self.sigma, dtype=np.float64)
        if sigma.ndim != 2 or 0 in sigma.shape:
            raise ValueError(f"sigma must be a non-empty (D, R) matrix, got shape {sigma.shape}")
        object.__setattr__(self, "sigma", sigma)

    @property
    def dim(self) -> int:
        return self.sigma.shape[0]

    @property
    def rank(self) -> int:
        return self.sigma.shape[1]

    @property
    def weighting(self) -> np.ndarray:
        return self.sigma @ self.sigma.T

    @classmethod
    def from_weighting(cls, weighting, tol: float = 1e-12) -> "WeightedLaplacianSpec":
        """Factor a positive semi-definite weighting, dropping its null space."""
        weighting = np.asarray(weighting, dtype=np.float64)
        if weighting.ndim != 2 or weighting.shape[0] != weighting.shape[1]:
            raise ValueError(f"weighting must be square, got shape {weighting.shape}")
        if not np.allclose(weighting, weighting.T):
            raise ValueError("weighting must be symmetric")
        vals, vecs = np.linalg.eigh(weighting)
        scale = max(1.0, float(np.abs(vals).max()))
        if vals.min() < -tol * scale:
            raise ValueError("indefinite weightings are not supported")
        keep = vals > tol * scale
        return cls(vecs[:, keep] * np.sqrt(vals[keep]))


# ---------------------------------------------------------------------------
# Operator programs


@dataclass(frozen=True)
class DirectionGroup:
    name: str
    directions: np.ndarray  # (R, D)
    weight: float


@dataclass
class OperatorProgram:
    """A weighted sum of degree-K directional derivatives over direction groups."""

    degree: int
    groups: list[DirectionGroup] = field(default_factory=list)

    def graph(self, fn: Graph, mode: str = "collapsed") -> Graph:
        """Operator graph for ``fn`` in the given mode (or ``"captured"``)."""
        captured = build_operator_graph(fn, self)
        if mode == "captured":
            return captured
        if mode == "standard":
            return push_replicate_down(captured)
        if mode == "collapsed":
            return collapse(captured)[0]
        raise ValueError(f"unknown mode {mode!r}")

    def bindings(self, x0: np.ndarray) -> dict[str, np.ndarray]:
        out = {"x0": x0}
        for g in self.groups:
            dirs = g.directions
            out[f"v_{g.name}"] = np.broadcast_to(dirs[:, None, :], (dirs.shape[0],) + x0.shape)
        return out

    def run(self, fn: Graph, x0, mode: str = "collapsed", stats: EvalStats | None = None,
            graph: Graph | None = None) -> np.ndarray:
        x0 = np.asarray(x0, dtype=np.float64)
        single = x0.ndim == 1
        batch = x0[None] if single else x0
        if graph is None:
            graph = self.graph(fn, mode)
        result = evaluate(graph, self.bindings(batch), stats)["result"]
        return result[0] if single else result


def _single_io(fn: Graph) -> tuple[str, str]:
    leaves, outputs = fn.leaves(), fn.outputs()
    if len(leaves) != 1 or len(outputs) != 1:
        raise GraphError("operators need a function graph with one leaf and one output")
    return next(iter(leaves)), next(iter(outputs))


def build_operator_graph(fn: Graph, program: OperatorProgram) -> Graph:
    """Capture the standard jets of ``program`` and the weighted sum of their tops."""
    xname, oname = _single_io(fn)
    K = program.degree
    b = Builder({g.name: g.directions.shape[0] for g in program.groups}, fn.params)
    be = _Trace(b)
    x0 = b.add("leaf", name="x0")
    terms = []
    primal = None
    for g in program.groups:
        v = b.add("leaf", name=f"v_{g.name}", group=g.name)
        xr = b.add("replicate", x0, group=g.name)
        outs = trace_function(be, fn, {xname: [xr, v] + [None] * (K - 1)}, K)
        primal = outs[oname][0]
        top = outs[oname][K]
        if top is None:
            continue
        term = b.add("sum", top)
        if g.weight != 1.0:
            term = b.add("scale", term, c=float(g.weight))
        terms.append(term)
    if not terms:
        if primal is None:
            raise GraphError("operator has no direction groups")
        # Structurally zero operator (e.g. a linear f).
        terms.append(b.add("scale", b.add("sum", primal), c=0.0))
    acc = terms[0]
    for t in terms[1:]:
        acc = b.add("add", acc, t)
    b.add("output", acc, name="result")
    return b.graph


def _check_mode(mode: str) -> None:
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")


def _dim(x0) -> int:
    dim = np.shape(x0)[-1] if np.ndim(x0) else 0
    if dim < 1:
        raise ValueError("input dimension must be at least 1")
    return dim


def laplacian_program(dim: int, directions: DirectionSet | None = None) -> OperatorProgram:
    directions = directions or DirectionSet.basis(dim)
    if directions.dim != dim:
        raise ValueError(f"directions live in {directions.dim} dimensions, input has {dim}")
    weight = 1.0 if directions.kind != "sampled" else 1.0 / directions.count
    return OperatorProgram(2, [DirectionGroup("r", directions.vectors(), weight)])


def laplacian(fn: Graph, x0, mode: str = "collapsed", directions: DirectionSet | None = None) -> np.ndarray:
    """Exact (basis directions) or Hutchinson (sampled directions) Laplacian of ``fn`` at ``x0``."""
    _check_mode(mode)
    return laplacian_program(_dim(x0), directions).run(fn, x0, mode)


def weighted_laplacian_program(spec: WeightedLaplacianSpec, directions: DirectionSet | None = None) -> OperatorProgram:
    if directions is None or directions.kind == "columns":
        vecs = spec.sigma.T.copy()
        weight = 1.0
    elif directions.kind == "sampled":
        if directions.dim != spec.rank:
            raise ValueError(f"sampled directions must have dimension R={spec.rank}")
        vecs = directions.vectors() @ spec.sigma.T
        weight = 1.0 / directions.count
    else:
        raise ValueError("weighted Laplacian takes column or sampled directions")
    return OperatorProgram(2, [DirectionGroup("r", vecs, weight)])


def weighted_laplacian(fn: Graph, x0, spec: WeightedLaplacianSpec, mode: str = "collapsed",
                       directions: DirectionSet | None = None) -> np.ndarray:
    """``<d^2 f(x0), sigma sigma^T>`` per output component, exact or sampled."""
    _check_mode(mode)
    if _dim(x0) != spec.dim:
        raise ValueError(f"sigma has {spec.dim} rows, input has dimension {_dim(x0)}")
    return weighted_laplacian_program(spec, directions).run(fn, x0, mode)


def mixed_partial_program(i: Sequence[int], dim: int) -> OperatorProgram:
    """Program for ``sum_{d in [D]^I} <d^K f, e_{d_1}^{i_1} (x) ... (x) e_{d_I}^{i_I}>``."""
    plan = interpolation_plan(i, dim)
    groups = [DirectionGroup(f"r{n}", g.directions(dim), float(g.coefficient))
              for n, g in enumerate(plan.reductions)]
    return OperatorProgram(plan.degree, groups)


def biharmonic_program(dim: int) -> OperatorProgram:
    return mixed_partial_program((2, 2), dim)


def biharmonic_exact(fn: Graph, x0, mode: str = "collapsed") -> np.ndarray:
    """Biharmonic operator via the symmetry-reduced interpolation family."""
    _check_mode(mode)
    return biharmonic_program(_dim(x0)).run(fn, x0, mode)


def biharmonic_stochastic_program(dim: int, samples: int, seed: int = 0,
                                  normalization: str = "unbiased") -> OperatorProgram:
    if samples < 1:
        raise ValueError(f"need at least one sample, got {samples}")
    vecs = sample_directions(samples, dim, "gaussian", seed)
    if normalization == "unbiased":
        weight = 1.0 / (3.0 * samples)
    elif normalization == "paper":
        weight = dim / samples
    else:
        raise ValueError(f"unknown normalization {normalization!r}")
    return OperatorProgram(4, [DirectionGroup("r", vecs, weight)])


def biharmonic_stochastic(fn: Graph, x0, samples: int, seed: int = 0, mode: str = "collapsed",
                          normalization: str = "unbiased") -> np.ndarray:
    """Monte-Carlo biharmonic from Gaussian directions.

    With standard normal ``v``, ``E <d^4 f, v^4> = 3 * biharmonic``, so the
    default normalization averages and divides by 3. ``normalization="paper"``
    uses a ``D / S`` factor instead.
    """
    _check_mode(mode)
    return biharmonic_stochastic_program(_dim(x0), samples, seed, normalization).run(fn, x0, mode)


def biharmonic_6jet(fn: Graph, x0) -> np.ndarray:
    """Biharmonic operator from three hand-picked 6-jets per index pair."""
    x0 = np.asarray(x0, dtype=np.float64)
    dim = _dim(x0)
    eye = np.eye(dim)
    pairs = [(a, c) for a in range(dim) for c in range(dim)]
    first = np.array([eye[a] for a, _ in pairs])
    second = np.array([eye[c] for _, c in pairs])
    shape = (len(pairs),) + x0.shape
    x1 = np.broadcast_to(first.reshape((len(pairs),) + (1,) * (x0.ndim - 1) + (dim,)), shape)
    x2 = np.broadcast_to(second.reshape((len(pairs),) + (1,) * (x0.ndim - 1) + (dim,)), shape)
    tops = []
    for sign in (1.0, -1.0, 0.0):
        seed = Jet(x0, [x1, sign * x2 if sign else None] + [None] * 4, batched=True)
        tops.append(jet_eval(fn, seed).coefficient(6))
    per_pair = (tops[0] + tops[1] - 2.0 * tops[2]) / 90.0
    return per_pair.sum(axis=0)


def interpolation_identity_check(fn: Graph, x0, directions, i: Sequence[int]):
    """Compare an interpolated mixed partial against the derivative-tensor oracle.

    ``directions`` holds one vector per slot of ``i``. Returns
    ``(interpolated, oracle, residual)``.
    """
    from .harness import oracle_derivative

    i = tuple(int(v) for v in i)
    directions = np.asarray(directions, dtype=np.float64)
    if directions.shape[0] != len(i):
        raise ValueError(f"need {len(i)} directions, got {directions.shape[0]}")
    K = sum(i)
    if K > 4:
        raise ValueError("identity check supports K <= 4")
    members = [(j, gamma(i, j)) for j in compositions(K, len(i))]
    members = [(j, g) for j, g in members if g != 0]
    vecs = np.array([np.asarray(j, dtype=np.float64) @ directions for j, _ in members])
    seed = Jet.seed(np.asarray(x0, dtype=np.float64), vecs, K, batched=True)
    tops = jet_eval(fn, seed).coefficient(K)
    weights = np.array([float(g) / math.factorial(K) for _, g in members])
    interpolated = np.tensordot(weights, tops, axes=1)
    tensor = oracle_derivative(fn, x0, K).tensor
    for slot, power in zip(directions, i):
        for _ in range(power):
            tensor = tensor @ slot
    return interpolated, tensor, np.abs(interpolated - tensor)


# ---------------------------------------------------------------------------
# Cost model

OPERATORS = ("laplacian", "weighted-laplacian", "biharmonic")


def _jet_groups(op: str, dim: int, count: int | None, exact: bool) -> tuple[int, list[int]]:
    if op not in OPERATORS:
        raise ValueError(f"unknown operator {op!r}")
    if dim < 1:
        raise ValueError(f"dimension must be positive, got {dim}")
    if not exact:
        if count is None or count < 1:
            raise ValueError("stochastic counts need a positive sample count")
        return (4 if op == "biharmonic" else 2), [count]
    if op == "laplacian":
        return 2, [dim]
    if op == "weighted-laplacian":
        return 2, [dim if count is None else count]
    plan = interpolation_plan((2, 2), dim)
    return 4, [g.count for g in plan.reductions]


def count_vectors(op: str, mode: str, dim: int, count: int | None = None, exact: bool = True) -> int:
    """Vectors propagated per function node.

    ``count`` is the rank R for an exact weighted Laplacian and the sample
    count S for stochastic operators. The standard mode propagates the
    shared primal plus ``K`` coefficients per jet; the collapsed mode keeps
    ``K - 1`` per jet plus one summed top per direction group.
    """
    _check_mode(mode)
    K, groups = _jet_groups(op, dim, count, exact)
    jets = sum(groups)
    if mode == "standard":
        return 1 + K * jets
    return 1 + (K - 1) * jets + len(groups)


def delta_vectors(op: str, mode: str, dim: int, count: int | None = None, exact: bool = True) -> int:
    """Extra vectors per added datum (exact) or per added sample (stochastic)."""
    if exact:
        return count_vectors(op, mode, dim, count, True)
    return count_vectors(op, mode, dim, count + 1, False) - count_vectors(op, mode, dim, count, False)


def theoretical_ratio(op: str, dim: int, count: int | None = None, exact: bool = True, digits: int = 2) -> float:
    """Collapsed over standard vector increments, rounded to ``digits``."""
    count = count if count is not None or exact else 1
    ratio = Fraction(delta_vectors(op, "collapsed", dim, count, exact), delta_vectors(op, "standard", dim, count, exact))
    return round(float(ratio), digits)


def biharmonic_closed_form(dim: int, mode: str) -> Fraction:
    """Closed-form vector counts for the exact biharmonic operator."""
    _check_mode(mode)
    D = Fraction(dim)
    if mode == "standard":
        return 6 * D**2 - 2 * D + 1
    return Fraction(9, 2) * D**2 - Fraction(3, 2) * D + 4


def instrumented_vectors(fn: Graph, program: OperatorProgram, mode: str) -> int:
    """Vector count measured on the operator graph of ``program``."""
    return vectors_per_node(program.graph(fn, mode))


__all__ = [
    "gamma", "generalized_binomial", "compositions", "interpolation_plan", "InterpolationPlan", "LoopGroup",
    "DirectionSet", "WeightedLaplacianSpec", "OperatorProgram", "DirectionGroup", "build_operator_graph",
    "laplacian", "weighted_laplacian", "biharmonic_exact", "biharmonic_stochastic", "biharmonic_6jet",
    "interpolation_identity_check", "count_vectors", "delta_vectors", "theoretical_ratio",
    "biharmonic_closed_form", "instrumented_vectors", "laplacian_program", "weighted_laplacian_program",
    "biharmonic_program", "biharmonic_stochastic_program", "mixed_partial_program", "sample_directions",
    "make_rng", "vector_counts",
]
