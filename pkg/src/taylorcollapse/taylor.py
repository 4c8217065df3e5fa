"""Taylor-mode propagation of K-jets.

The propagation rules are written once against a small backend interface.
An eager backend runs them on arrays (:func:`jet_eval`,
:func:`propagate_primitive`); a tracing backend records them as graph nodes
(:func:`capture`). Both therefore execute the same primitive sequence.

A coefficient equal to ``None`` is a structural zero: terms containing it
are dropped rather than computed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from itertools import product
from typing import Any, Mapping, Sequence

import numpy as np

from .graph import Builder, Graph, GraphError, apply_op, make_spec, parse_spec

MAX_DEGREE = 8


# ---------------------------------------------------------------------------
# Partitions


@dataclass(frozen=True)
class Partition:
    """An integer partition of ``sum(parts)`` with its Faà di Bruno multiplicity."""

    parts: tuple[int, ...]
    nu: int

    @property
    def degree(self) -> int:
        return sum(self.parts)

    def __len__(self) -> int:
        return len(self.parts)


def multiplicity(parts: Sequence[int]) -> int:
    """``k! / (prod_s n_s! * prod_s s!)`` where ``n_s`` counts part ``s``."""
    k = sum(parts)
    denom = 1
    for s in set(parts):
        denom *= math.factorial(parts.count(s))
    for s in parts:
        denom *= math.factorial(s)
    nu, rem = divmod(math.factorial(k), denom)
    assert rem == 0
    return nu


def _descending(k: int, largest: int):
    if k == 0:
        yield ()
        return
    for first in range(min(k, largest), 0, -1):
        for rest in _descending(k - first, first):
            yield (first,) + rest


@lru_cache(maxsize=None)
def partitions(k: int) -> tuple[Partition, ...]:
    """All partitions of ``k`` ordered lexicographically on their descending parts."""
    if not isinstance(k, int) or not 1 <= k <= MAX_DEGREE:
        raise ValueError(f"degree must be an integer in [1, {MAX_DEGREE}], got {k!r}")
    return tuple(Partition(p, multiplicity(p)) for p in sorted(_descending(k, k)))


PARTITION_TABLE: Mapping[int, tuple[Partition, ...]] = {k: partitions(k) for k in range(1, MAX_DEGREE + 1)}


@lru_cache(maxsize=None)
def tanh_derivative_poly(order: int) -> tuple[float, ...]:
    """Coefficients (ascending powers of T) of the ``order``-th derivative of tanh in T = tanh."""
    coeffs = [0, 1]
    for _ in range(order):
        deriv = [i * c for i, c in enumerate(coeffs)][1:] or [0]
        # multiply by (1 - T^2)
        out = [0] * (len(deriv) + 2)
        for i, c in enumerate(deriv):
            out[i] += c
            out[i + 2] -= c
        while len(out) > 1 and out[-1] == 0:
            out.pop()
        coeffs = out
    return tuple(float(c) for c in coeffs)


def _poly_derivative(coeffs: tuple[float, ...]) -> tuple[float, ...] | None:
    deriv = tuple(i * c for i, c in enumerate(coeffs))[1:]
    if not any(deriv):
        return None
    return deriv


# ---------------------------------------------------------------------------
# Backends


@dataclass
class _Val:
    data: np.ndarray
    group: str | None


class _Eager:
    def __init__(self, graph: Graph | None = None, groups: Mapping[str, int] | None = None):
        self.graph = graph
        self.groups = dict(groups or {})

    def group(self, v: _Val) -> str | None:
        return v.group

    def op(self, op: str, inputs: Sequence[_Val], tag=None, **attrs) -> _Val:
        args = [v.data for v in inputs]
        size = self.groups.get(attrs.get("group")) if op == "replicate" else None
        data = apply_op(op, attrs, args, self.graph, size)
        if op == "replicate":
            group = attrs["group"]
        elif op == "sum":
            group = None
        elif op == "contract":
            terms, out = parse_spec(attrs["spec"])
            group = next((v.group for v, t in zip(inputs, terms) if t == "r..."), None) if out == "r..." else None
        else:
            group = next((v.group for v in inputs if v.group is not None), None)
        return _Val(data, group)

    def tag(self, v, tag) -> None:
        pass


class _Trace:
    def __init__(self, builder: Builder):
        self.b = builder

    def group(self, v: int) -> str | None:
        return self.b.graph.nodes[v].group

    def op(self, op: str, inputs: Sequence[int], tag=None, **attrs) -> int:
        return self.b.add(op, *inputs, tag=tag, **attrs)

    def tag(self, v: int, tag) -> None:
        self.b.retag(v, tag)


# ---------------------------------------------------------------------------
# Rules


def _contract(be, operands, out_batched: bool):
    spec = make_spec([be.group(v) is not None for v in operands], out_batched)
    return be.op("contract", operands, spec=spec)


def _sum_terms(be, terms):
    if not terms:
        return None
    acc = terms[0]
    for t in terms[1:]:
        acc = be.op("add", [acc, t])
    return acc


def _scaled(be, v, c):
    return v if c == 1 else be.op("scale", [v], c=float(c))


class _Ladder:
    """Lazily built derivatives ``d_m = f^{(m)}(x0)`` of an elementwise op."""

    def __init__(self, be, op: str, attrs: Mapping[str, Any], x0, f0):
        self.be, self.op, self.attrs, self.x0 = be, op, attrs, x0
        self.cache: dict[int, Any] = {0: f0}
        self._sin = None

    def __call__(self, m: int):
        if m not in self.cache:
            self.cache[m] = self._build(m)
        return self.cache[m]

    def _build(self, m: int):
        be, op = self.be, self.op
        if op == "exp":
            return self(0)
        if op == "tanh":
            return be.op("poly", [self(0)], coeffs=tanh_derivative_poly(m))
        if op == "poly":
            coeffs = tuple(self.attrs["coeffs"])
            for _ in range(m):
                coeffs = _poly_derivative(coeffs)
                if coeffs is None:
                    return None
            return be.op("poly", [self.x0], coeffs=coeffs)
        if op in ("sin", "cos"):
            if m >= 4:
                return self(m - 4)
            if m >= 2:
                return be.op("neg", [self(m - 2)])
            # m == 1
            if op == "sin":
                return be.op("cos", [self.x0])
            return be.op("neg", [be.op("sin", [self.x0])])
        raise GraphError(f"no derivative ladder for {op!r}")


def _rule_elementwise(be, op, attrs, x, K, fused):
    f0 = be.op(op, [x[0]], **attrs)
    d = _Ladder(be, op, attrs, x[0], f0)
    out = [f0]
    for k in range(1, K + 1):
        terms = []
        for part in partitions(k):
            factors = [x[s] for s in part.parts]
            if any(v is None for v in factors):
                continue
            deriv = d(len(part))
            if deriv is None:
                continue
            operands = [deriv] + factors
            batched = any(be.group(v) is not None for v in operands)
            term = _contract(be, operands, batched and not (fused and k == K))
            terms.append(_scaled(be, term, part.nu))
        out.append(_sum_terms(be, terms))
    return out


def _rule_mul(be, a, b, K, fused):
    out = [be.op("mul", [a[0], b[0]])]
    for k in range(1, K + 1):
        terms = []
        for i in range(k + 1):
            if a[i] is None or b[k - i] is None:
                continue
            operands = [a[i], b[k - i]]
            batched = any(be.group(v) is not None for v in operands)
            term = _contract(be, operands, batched and not (fused and k == K))
            terms.append(_scaled(be, term, math.comb(k, i)))
        out.append(_sum_terms(be, terms))
    return out


def _rule_add(be, a, b, K):
    out = []
    for k in range(K + 1):
        if a[k] is None:
            out.append(b[k])
        elif b[k] is None:
            out.append(a[k])
        else:
            out.append(be.op("add", [a[k], b[k]]))
    return out


def _compositions(k: int, n: int):
    for combo in product(range(k + 1), repeat=n):
        if sum(combo) == k:
            yield combo


def _rule_contract(be, spec, xs, K, fused):
    if fused:
        raise GraphError("contract does not support collapsed top coefficients")
    out = []
    for k in range(K + 1):
        terms = []
        for combo in _compositions(k, len(xs)):
            operands = [x[c] for x, c in zip(xs, combo)]
            if any(v is None for v in operands):
                continue
            coef = math.factorial(k)
            for c in combo:
                coef //= math.factorial(c)
            terms.append(_scaled(be, be.op("contract", operands, spec=spec), coef))
        out.append(_sum_terms(be, terms))
    return out


def propagate(be, op: str, attrs: Mapping[str, Any], jets: Sequence[Sequence[Any]], K: int, fused: bool = False):
    """Apply the Taylor rule of ``op`` to coefficient lists ``[x0, ..., xK]``."""
    if op in ("sin", "cos", "tanh", "exp", "poly"):
        return _rule_elementwise(be, op, attrs, jets[0], K, fused)
    if op == "affine":
        x = jets[0]
        out = [be.op("affine", [x[0]], **attrs)]
        out += [None if v is None else be.op("linear", [v], W=attrs["W"]) for v in x[1:]]
        return out
    if op in ("linear", "neg", "scale"):
        return [None if v is None else be.op(op, [v], **attrs) for v in jets[0]]
    if op == "add":
        return _rule_add(be, jets[0], jets[1], K)
    if op == "mul":
        return _rule_mul(be, jets[0], jets[1], K, fused)
    if op == "contract":
        return _rule_contract(be, attrs["spec"], jets, K, fused)
    if op in ("replicate", "sum"):
        if fused:
            raise GraphError(f"{op} does not support collapsed top coefficients")
        return [None if v is None else be.op(op, [v], **attrs) for v in jets[0]]
    raise GraphError(f"unsupported primitive {op!r}")


def trace_function(be, fn: Graph, leaf_jets: Mapping[str, Sequence[Any]], K: int, fused: bool = False):
    """Propagate jets through every node of ``fn``; return output jets by name."""
    values: list[Any] = [None] * len(fn.nodes)
    outputs: dict[str, list] = {}
    for i, node in enumerate(fn.nodes):
        attrs = dict(node.attrs)
        if node.op == "leaf":
            values[i] = list(leaf_jets[attrs["name"]])
            continue
        ins = [values[j] for j in node.inputs]
        if node.op == "output":
            values[i] = ins[0]
            outputs[attrs["name"]] = ins[0]
            continue
        coeffs = propagate(be, node.op, attrs, ins, K, fused)
        for k, v in enumerate(coeffs):
            if v is not None:
                be.tag(v, (i, k))
        values[i] = coeffs
    return outputs


# ---------------------------------------------------------------------------
# Jets


@dataclass
class Jet:
    """A K-jet ``(x0, x1, ..., xK)``.

    ``coeffs[k - 1]`` holds ``x_k``; ``None`` marks a structural zero. When
    ``batched`` the coefficients carry a leading direction axis of extent R.
    With ``collapsed_top`` the top coefficient stores the sum over that axis.
    """

    primal: np.ndarray
    coeffs: list[np.ndarray | None]
    batched: bool = False
    collapsed_top: bool = False

    def __post_init__(self):
        self.primal = np.asarray(self.primal, dtype=np.float64)
        self.coeffs = [None if c is None else np.asarray(c, dtype=np.float64) for c in self.coeffs]
        if not self.coeffs:
            raise ValueError("a jet needs degree >= 1")
        if self.collapsed_top and not self.batched:
            raise ValueError("collapsed_top requires a batched jet")
        sizes = set()
        for k, c in enumerate(self.coeffs, start=1):
            if c is None:
                continue
            lead = self._is_batched(k)
            expect = c.shape[1:] if lead else c.shape
            if expect != self.primal.shape:
                raise ValueError(f"coefficient {k} has shape {c.shape}, primal {self.primal.shape}")
            if lead:
                sizes.add(c.shape[0])
        if len(sizes) > 1:
            raise ValueError(f"coefficients disagree on direction count: {sorted(sizes)}")

    def _is_batched(self, k: int) -> bool:
        return self.batched and not (self.collapsed_top and k == self.degree)

    @property
    def degree(self) -> int:
        return len(self.coeffs)

    @property
    def directions(self) -> int | None:
        for k, c in enumerate(self.coeffs, start=1):
            if c is not None and self._is_batched(k):
                return c.shape[0]
        return None

    def coefficient(self, k: int) -> np.ndarray:
        """``x_k`` with structural zeros materialized."""
        if k == 0:
            return self.primal
        c = self.coeffs[k - 1]
        if c is not None:
            return c
        shape = self.primal.shape
        if self._is_batched(k):
            shape = (self.directions or 1,) + shape
        return np.zeros(shape)

    @classmethod
    def seed(cls, x0, v, degree: int, batched: bool = False) -> "Jet":
        """Jet ``(x0, v, 0, ..., 0)``."""
        return cls(x0, [v] + [None] * (degree - 1), batched=batched)

    def collapse(self) -> "Jet":
        """Sum the top coefficient over the direction axis."""
        if not self.batched or self.collapsed_top:
            raise ValueError("only a standard batched jet can be collapsed")
        top = self.coeffs[-1]
        coeffs = self.coeffs[:-1] + [None if top is None else top.sum(axis=0)]
        return Jet(self.primal, coeffs, batched=True, collapsed_top=True)

    def _values(self, group: str | None) -> list:
        vals = [_Val(self.primal, None)]
        for k, c in enumerate(self.coeffs, start=1):
            vals.append(None if c is None else _Val(c, group if self._is_batched(k) else None))
        return vals


@dataclass(frozen=True)
class Primitive:
    """A primitive with concrete attributes, e.g. ``Primitive("affine", {"W": W, "b": b})``."""

    op: str
    attrs: Mapping[str, Any] = field(default_factory=dict)


def propagate_primitive(prim: Primitive, *jets: Jet) -> Jet:
    """Propagate jets through a single primitive."""
    if prim.op not in ("affine", "linear", "sin", "cos", "tanh", "exp", "neg", "scale", "add", "mul", "poly"):
        raise GraphError(f"unsupported primitive {prim.op!r}")
    if not jets:
        raise GraphError("no input jets")
    first = jets[0]
    for j in jets[1:]:
        if (j.degree, j.batched, j.collapsed_top) != (first.degree, first.batched, first.collapsed_top):
            raise GraphError("input jets disagree on degree or batching")
        if j.batched and j.directions not in (None, first.directions):
            raise GraphError("input jets disagree on direction count")
    K = first.degree
    be = _Eager()
    out = propagate(be, prim.op, dict(prim.attrs), [j._values("r") for j in jets], K, first.collapsed_top)
    return Jet(out[0].data, [None if v is None else v.data for v in out[1:]],
               batched=first.batched, collapsed_top=first.collapsed_top)


def jet_eval(graph: Graph, seed: Jet | Mapping[str, Jet], constants: Mapping[str, Any] | None = None,
             replicate_primal: bool = True):
    """Evaluate ``graph`` on jets.

    ``seed`` is a single jet for a one-leaf graph or a mapping from leaf
    names to jets. Other leaves are bound to constant jets from
    ``constants``. For a batched standard seed the primal is replicated over
    the direction axis first, as :func:`capture` does.

    Returns a jet (single output) or a mapping from output names to jets.
    """
    leaves = graph.leaves()
    if isinstance(seed, Jet):
        seeded = [n for n in leaves if n not in (constants or {})]
        if len(seeded) != 1:
            raise GraphError(f"a single seed needs exactly one unbound leaf, found {seeded}")
        seed = {seeded[0]: seed}
    jets = list(seed.values())
    K = jets[0].degree
    if any(j.degree != K for j in jets):
        raise GraphError("seeds disagree on degree")
    batched = any(j.batched for j in jets)
    collapsed = any(j.collapsed_top for j in jets)
    if batched and graph.groups:
        raise GraphError("batched seeds cannot be pushed through a graph that is already batched")
    R = next((j.directions for j in jets if j.directions), None)
    groups = dict(graph.groups)
    if batched:
        groups["r"] = R or 1
    be = _Eager(graph, groups)
    replicate = batched and not collapsed and replicate_primal
    leaf_jets = {}
    for name, idx in leaves.items():
        if name in seed:
            vals = seed[name]._values("r")
            if replicate:
                vals[0] = be.op("replicate", [vals[0]], group="r")
            leaf_jets[name] = vals
        elif constants is not None and name in constants:
            leaf_jets[name] = [_Val(np.asarray(constants[name], dtype=np.float64), graph.nodes[idx].group)] + [None] * K
        else:
            raise GraphError(f"leaf {name!r} is neither seeded nor bound")
    outs = trace_function(be, graph, leaf_jets, K, fused=collapsed)
    result = {}
    for name, vals in outs.items():
        primal = vals[0].data
        if replicate and vals[0].group == "r":
            primal = primal[0]
        result[name] = Jet(primal, [None if v is None else v.data for v in vals[1:]],
                           batched=batched, collapsed_top=collapsed)
    if len(result) == 1:
        return next(iter(result.values()))
    return result


def capture(fn: Graph, degree: int, directions: int = 1, live: Sequence[int] | None = None,
            group: str = "r") -> Graph:
    """Record the standard batched K-jet computation of ``fn`` as a graph.

    Each leaf ``x`` of ``fn`` becomes an unbatched leaf ``x0`` that is
    replicated over ``directions`` copies, plus batched leaves ``x{k}_{group}``
    for the live orders ``k`` (all of ``1..degree`` by default; the rest are
    structural zeros). Each output ``f`` yields outputs ``f{k}_{group}`` for
    ``k < degree`` and ``f{degree}``, the sum of the top coefficient.
    """
    if not 1 <= degree <= MAX_DEGREE:
        raise ValueError(f"degree must be in [1, {MAX_DEGREE}]")
    live = set(range(1, degree + 1) if live is None else live)
    b = Builder({group: directions}, fn.params)
    be = _Trace(b)
    leaf_jets = {}
    leaf_names = list(fn.leaves())
    primals = {x: b.add("leaf", name=f"{x}0") for x in leaf_names}
    for x in leaf_names:
        coeffs = [b.add("leaf", name=f"{x}{k}_{group}", group=group) if k in live else None
                  for k in range(1, degree + 1)]
        leaf_jets[x] = [b.add("replicate", primals[x], group=group)] + coeffs
    outs = trace_function(be, fn, leaf_jets, degree)
    pending = []
    for name, vals in outs.items():
        pending += [(v, f"{name}{k}_{group}") for k, v in enumerate(vals[:-1]) if v is not None]
        if vals[-1] is not None:
            pending.append((b.add("sum", vals[-1]), f"{name}{degree}"))
    for v, name in pending:
        b.add("output", v, name=name)
    return b.graph
