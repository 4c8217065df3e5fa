"""Verification oracles and the benchmark MLP.

The oracles do not use the Taylor rules: derivatives come from nested
first-order dual numbers or from finite differences of plain evaluations.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

from .graph import Graph, GraphError, apply_op, evaluate
from .taylor import Jet, jet_eval


# ---------------------------------------------------------------------------
# Nested dual numbers


class Dual:
    """First-order dual number whose parts may themselves be duals."""

    __slots__ = ("primal", "tangent")
    # make ``ndarray * Dual`` defer to Dual.__rmul__
    __array_ufunc__ = None

    def __init__(self, primal, tangent):
        self.primal = primal
        self.tangent = tangent

    def __add__(self, other):
        if isinstance(other, Dual):
            return Dual(self.primal + other.primal, self.tangent + other.tangent)
        return Dual(self.primal + other, self.tangent)

    __radd__ = __add__

    def __mul__(self, other):
        if isinstance(other, Dual):
            return Dual(self.primal * other.primal, self.primal * other.tangent + self.tangent * other.primal)
        return Dual(self.primal * other, self.tangent * other)

    __rmul__ = __mul__

    def __neg__(self):
        return Dual(-self.primal, -self.tangent)

    def __sub__(self, other):
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other


def _dual_op(op: str, attrs, args, graph: Graph):
    """Evaluate ``op`` on arrays or (nested) duals."""
    if not any(isinstance(a, Dual) for a in args):
        return apply_op(op, attrs, list(args), graph)
    if op == "add":
        return args[0] + args[1]
    if op == "mul":
        return args[0] * args[1]
    x = args[0]
    a, t = x.primal, x.tangent
    if op == "neg":
        return -x
    if op == "scale":
        return x * float(attrs["c"])
    if op == "linear":
        return Dual(_dual_op("linear", attrs, [a], graph), _dual_op("linear", attrs, [t], graph))
    if op == "affine":
        return Dual(_dual_op("affine", attrs, [a], graph), _dual_op("linear", {"W": attrs["W"]}, [t], graph))
    if op == "sin":
        return Dual(_dual_op("sin", {}, [a], graph), _dual_op("cos", {}, [a], graph) * t)
    if op == "cos":
        return Dual(_dual_op("cos", {}, [a], graph), -_dual_op("sin", {}, [a], graph) * t)
    if op == "exp":
        e = _dual_op("exp", {}, [a], graph)
        return Dual(e, e * t)
    if op == "tanh":
        y = _dual_op("tanh", {}, [a], graph)
        return Dual(y, (1.0 - y * y) * t)
    if op == "poly":
        coeffs = tuple(attrs["coeffs"])
        deriv = tuple(n * c for n, c in enumerate(coeffs))[1:] or (0.0,)
        return Dual(_dual_op("poly", attrs, [a], graph), _dual_op("poly", {"coeffs": deriv}, [a], graph) * t)
    raise GraphError(f"dual evaluation does not support {op!r}")


def evaluate_dual(fn: Graph, inputs: dict[str, Any]) -> dict[str, Any]:
    """Evaluate a function graph on arrays or duals."""
    values: list[Any] = [None] * len(fn.nodes)
    out = {}
    for i, node in enumerate(fn.nodes):
        attrs = dict(node.attrs)
        if node.op == "leaf":
            values[i] = inputs[attrs["name"]]
        elif node.op == "output":
            values[i] = values[node.inputs[0]]
            out[attrs["name"]] = values[i]
        else:
            values[i] = _dual_op(node.op, attrs, [values[j] for j in node.inputs], fn)
    return out


def _single_io(fn: Graph) -> tuple[str, str]:
    leaves, outputs = fn.leaves(), fn.outputs()
    if len(leaves) != 1 or len(outputs) != 1:
        raise GraphError("expected a function graph with one leaf and one output")
    return next(iter(leaves)), next(iter(outputs))


def _innermost_tangent(value, depth: int):
    for _ in range(depth):
        if not isinstance(value, Dual):
            return 0.0
        value = value.tangent
    return value


def nested_directional(fn: Graph, x0, tangents: Sequence[np.ndarray]) -> np.ndarray:
    """``d^k f`` applied to one tangent per nesting level.

    Each tangent broadcasts against ``x0``; extra leading axes index
    direction tuples. Returns the innermost tangent of the nested output.
    """
    xname, oname = _single_io(fn)
    x: Any = np.asarray(x0, dtype=np.float64)
    for t in tangents:
        x = Dual(x, np.asarray(t, dtype=np.float64))
    y = evaluate_dual(fn, {xname: x})[oname]
    primal = np.asarray(evaluate(fn, {xname: np.asarray(x0, dtype=np.float64)})[oname])
    shape = np.broadcast_shapes(*(np.shape(t) for t in tangents), np.shape(x0))[:-1] + primal.shape[-1:]
    return np.broadcast_to(_innermost_tangent(y, len(tangents)), shape)


@dataclass
class DerivativeTensor:
    """``d^k f(x0)`` with shape ``batch + (C,) + (D,) * k``."""

    order: int
    tensor: np.ndarray

    def is_symmetric(self, rtol: float = 1e-8, atol: float = 1e-10) -> bool:
        k = self.order
        lead = self.tensor.ndim - k
        scale = max(1.0, float(np.abs(self.tensor).max(initial=0.0)))
        for a in range(k - 1):
            axes = list(range(self.tensor.ndim))
            axes[lead + a], axes[lead + a + 1] = axes[lead + a + 1], axes[lead + a]
            if not np.allclose(self.tensor, self.tensor.transpose(axes), rtol=rtol, atol=atol * scale):
                return False
        return True

    def trace(self) -> np.ndarray:
        """Trace over the last two derivative axes."""
        return np.trace(self.tensor, axis1=-2, axis2=-1)


def oracle_derivative(fn: Graph, x0, k: int) -> DerivativeTensor:
    """Full derivative tensor from ``k`` nested levels of dual numbers."""
    if not 1 <= k <= 4:
        raise ValueError(f"oracle order must be in [1, 4], got {k}")
    x0 = np.asarray(x0, dtype=np.float64)
    dim = x0.shape[-1]
    batch = x0.ndim - 1
    tangents = []
    for level in range(k):
        shape = [1] * k + [1] * batch + [dim]
        shape[level] = dim
        e = np.zeros(shape)
        idx = [0] * len(shape)
        for d in range(dim):
            idx[level] = d
            idx[-1] = d
            e[tuple(idx)] = 1.0
        tangents.append(e)
    y = nested_directional(fn, x0, tangents)
    # axes: (D,)*k + batch + (C,)  ->  batch + (C,) + (D,)*k
    order = list(range(k, y.ndim)) + list(range(k))
    return DerivativeTensor(k, np.ascontiguousarray(y.transpose(order)))


def _basis_tangent(dim: int, batch: int, axis: int, axes: int) -> np.ndarray:
    shape = [1] * axes + [1] * batch + [dim]
    shape[axis] = dim
    return np.eye(dim).reshape(shape)


def nested_laplacian(fn: Graph, x0, directions: np.ndarray | None = None, weight: float = 1.0) -> np.ndarray:
    """Laplacian by forward-over-forward duals along each direction (basis by default)."""
    x0 = np.asarray(x0, dtype=np.float64)
    dim, batch = x0.shape[-1], x0.ndim - 1
    if directions is None:
        t = _basis_tangent(dim, batch, 0, 1)
    else:
        directions = np.asarray(directions, dtype=np.float64)
        t = directions.reshape((directions.shape[0],) + (1,) * batch + (dim,))
    return weight * nested_directional(fn, x0, [t, t]).sum(axis=0)


def nested_biharmonic(fn: Graph, x0) -> np.ndarray:
    """Biharmonic as the Laplacian of the Laplacian with four nested dual levels."""
    x0 = np.asarray(x0, dtype=np.float64)
    dim, batch = x0.shape[-1], x0.ndim - 1
    a = _basis_tangent(dim, batch, 0, 2)
    b = _basis_tangent(dim, batch, 1, 2)
    return nested_directional(fn, x0, [a, a, b, b]).sum(axis=(0, 1))


def nested_biharmonic_stochastic(fn: Graph, x0, directions: np.ndarray) -> np.ndarray:
    """Average of ``<d^4 f, v^4> / 3`` over Gaussian directions via nested duals."""
    x0 = np.asarray(x0, dtype=np.float64)
    t = directions.reshape((directions.shape[0],) + (1,) * (x0.ndim - 1) + (x0.shape[-1],))
    return nested_directional(fn, x0, [t, t, t, t]).mean(axis=0) / 3.0


def full_tensor_biharmonic(fn: Graph, x0) -> np.ndarray:
    """Contract the materialized fourth derivative with ``e_a^2 (x) e_b^2``."""
    tensor = oracle_derivative(fn, x0, 4).tensor
    return np.einsum("...aabb->...", tensor)


# ---------------------------------------------------------------------------
# Finite differences

_STENCILS = {
    1: ({1: 0.5, -1: -0.5}, 1),
    2: ({1: 1.0, 0: -2.0, -1: 1.0}, 2),
    3: ({2: 0.5, 1: -1.0, -1: 1.0, -2: -0.5}, 3),
    4: ({2: 1.0, 1: -4.0, 0: 6.0, -1: -4.0, -2: 1.0}, 4),
}


def finite_difference(fn: Graph, x0, v, k: int, h: float = 1e-2) -> np.ndarray:
    """k-th directional derivative of ``fn`` at ``x0`` along ``v``.

    Second-order central stencils at steps ``h`` and ``h/2`` are combined by
    one Richardson step, leaving an O(h^4) truncation error.
    """
    if k not in _STENCILS:
        raise ValueError(f"finite differences support k in 1..4, got {k}")
    xname, oname = _single_io(fn)
    x0 = np.asarray(x0, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    weights, power = _STENCILS[k]

    def stencil(step: float) -> np.ndarray:
        acc = 0.0
        for offset, w in weights.items():
            acc = acc + w * np.asarray(evaluate(fn, {xname: x0 + offset * step * v})[oname])
        return acc / step**power

    coarse, fine = stencil(h), stencil(h / 2)
    return (4.0 * fine - coarse) / 3.0


# ---------------------------------------------------------------------------
# Nesting operators on graphs


def laplacian_of_graph(graph: Graph, x0, constants: dict[str, Any], leaf: str = "x0", output: str = "result"):
    """Exact Laplacian of a graph output with respect to ``leaf``.

    Uses one unbatched 2-jet per basis direction, so ``graph`` may itself be
    batched over inner directions.
    """
    x0 = np.asarray(x0, dtype=np.float64)
    dim = x0.shape[-1]
    total = 0.0
    for d in range(dim):
        e = np.zeros_like(x0)
        e[..., d] = 1.0
        out = jet_eval(graph, {leaf: Jet.seed(x0, e, 2)}, constants)
        if isinstance(out, dict):
            out = out[output]
        total = total + out.coefficient(2)
    return total


def biharmonic_via_nested_laplacian(fn: Graph, x0, mode: str = "collapsed") -> np.ndarray:
    """Outer Taylor-mode Laplacian of the inner Laplacian operator graph."""
    from .operators import laplacian_program

    x0 = np.asarray(x0, dtype=np.float64)
    single = x0.ndim == 1
    batch = x0[None] if single else x0
    program = laplacian_program(batch.shape[-1])
    graph = program.graph(fn, mode)
    constants = {k: v for k, v in program.bindings(batch).items() if k != "x0"}
    out = laplacian_of_graph(graph, batch, constants)
    return out[0] if single else out


# ---------------------------------------------------------------------------
# Benchmark MLP


def paper_widths(dim: int) -> list[int]:
    return [dim, 768, 768, 512, 512, 1]


def small_widths(dim: int) -> list[int]:
    return [dim, 64, 64, 1]


@dataclass(frozen=True)
class MlpSpec:
    """Layer widths ``[D, h1, ..., C]`` of a tanh MLP and its parameter seed."""

    widths: tuple[int, ...]
    activation: str = "tanh"
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        if len(self.widths) < 2 or min(self.widths) < 1:
            raise ValueError(f"widths must be at least two positive integers, got {self.widths}")
        if self.activation not in ("tanh", "sin", "cos", "exp"):
            raise ValueError(f"unsupported activation {self.activation!r}")


def build_mlp(spec: MlpSpec) -> Graph:
    """Affine layers with the activation between them (none after the last).

    Weights and biases are drawn uniformly from ``[-1/sqrt(fan_in), 1/sqrt(fan_in)]``
    with the Philox generator keyed by ``spec.seed``.
    """
    from .operators import make_rng

    rng = make_rng(spec.seed)
    g = Graph()
    h = g.add("leaf", name="x")
    layers = len(spec.widths) - 1
    for n, (fan_in, fan_out) in enumerate(zip(spec.widths[:-1], spec.widths[1:])):
        bound = 1.0 / np.sqrt(fan_in)
        g.params[f"l{n}.W"] = rng.uniform(-bound, bound, size=(fan_out, fan_in))
        g.params[f"l{n}.b"] = rng.uniform(-bound, bound, size=fan_out)
        h = g.add("affine", h, W=f"l{n}.W", b=f"l{n}.b")
        if n < layers - 1:
            h = g.add(spec.activation, h)
    g.add("output", h, name="f")
    return g


def primitive_count(fn: Graph) -> int:
    return sum(1 for n in fn.nodes if n.op not in ("leaf", "output"))
