"""Compute-graph IR for jet computations.

A :class:`Graph` is an append-ordered list of :class:`Node` records. Append
order is also the evaluation order. Every node has a statically inferred
batching: ``None`` for unbatched values, or the name of a direction group
whose extent ``R`` is recorded in ``Graph.groups``. Batched values carry the
direction axis as their leading dimension.

Node vocabulary:

* ``leaf[name, group?]``: graph input
* ``replicate[group]``: broadcast an unbatched value along a new leading axis
* ``sum``: reduce the leading (direction) axis
* ``contract[spec]``: einsum over operands, the index ``r`` marks the direction axis
* ``output[name]``: labelled graph result
* primitives: ``affine``, ``linear``, ``sin``, ``cos``, ``tanh``, ``exp``,
  ``neg``, ``poly``, ``scale``, ``add``, ``mul``
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field, replace
from typing import Any, Iterable, Mapping

import numpy as np

UNARY_OPS = ("sin", "cos", "tanh", "exp", "neg")
PRIMITIVE_OPS = UNARY_OPS + ("affine", "linear", "poly", "scale", "add", "mul")
STRUCTURAL_OPS = ("leaf", "replicate", "sum", "contract", "output")
ALL_OPS = STRUCTURAL_OPS + PRIMITIVE_OPS

_ARITY = {op: 1 for op in UNARY_OPS + ("affine", "linear", "poly", "scale")}
_ARITY.update(add=2, mul=2, leaf=0, replicate=1, sum=1, output=1)

HEADER = "taylorcollapse-ir 1"


class GraphError(ValueError):
    """Raised for ill-formed graphs (bad arity, batching mismatch, ...)."""


class ParseError(ValueError):
    """Raised by :func:`parse` with the offending line number."""

    def __init__(self, lineno: int, message: str):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


@dataclass(frozen=True)
class Node:
    """One IR node.

    ``tag`` optionally records ``(function_node, coefficient)`` for nodes that
    hold a Taylor coefficient of a function-graph node; the cost counters
    use it.
    """

    op: str
    inputs: tuple[int, ...] = ()
    attrs: tuple[tuple[str, Any], ...] = ()
    group: str | None = None
    tag: tuple[int, int] | None = None

    def attr(self, key: str, default: Any = None) -> Any:
        for k, v in self.attrs:
            if k == key:
                return v
        return default

    @property
    def batched(self) -> bool:
        return self.group is not None


def _freeze(value: Any) -> Any:
    if isinstance(value, (list, tuple)):
        return tuple(_freeze(v) for v in value)
    if isinstance(value, np.generic):
        return value.item()
    return value


# ---------------------------------------------------------------------------
# Contraction specs


def parse_spec(spec: str) -> tuple[list[str], str]:
    """Split ``"...,r...->r..."`` into operand terms and the output term."""
    if "->" not in spec:
        raise GraphError(f"contract spec {spec!r} lacks '->'")
    lhs, out = spec.split("->")
    terms = lhs.split(",")
    for term in terms + [out]:
        if term not in ("...", "r..."):
            raise GraphError(f"contract term {term!r} must be '...' or 'r...'")
    return terms, out


def make_spec(batched: Iterable[bool], out_batched: bool) -> str:
    terms = ["r..." if b else "..." for b in batched]
    return ",".join(terms) + "->" + ("r..." if out_batched else "...")


# ---------------------------------------------------------------------------
# Graph


@dataclass
class Graph:
    """Append-ordered compute graph."""

    nodes: list[Node] = field(default_factory=list)
    groups: dict[str, int] = field(default_factory=dict)
    params: dict[str, np.ndarray | None] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.nodes)

    def add(self, op: str, *inputs: int, tag: tuple[int, int] | None = None, **attrs) -> int:
        """Append a node, checking arity and batching; return its id."""
        frozen = tuple((k, _freeze(v)) for k, v in attrs.items())
        group = infer_group(self, op, tuple(inputs), frozen)
        self.nodes.append(Node(op, tuple(inputs), frozen, group, tag))
        return len(self.nodes) - 1

    def add_group(self, name: str, size: int) -> None:
        if size < 1:
            raise GraphError(f"group {name!r} needs a positive size, got {size}")
        if self.groups.get(name, size) != size:
            raise GraphError(f"group {name!r} already has size {self.groups[name]}")
        self.groups[name] = int(size)

    def leaves(self) -> dict[str, int]:
        return {n.attr("name"): i for i, n in enumerate(self.nodes) if n.op == "leaf"}

    def outputs(self) -> dict[str, int]:
        return {n.attr("name"): i for i, n in enumerate(self.nodes) if n.op == "output"}

    def consumers(self) -> list[list[int]]:
        out: list[list[int]] = [[] for _ in self.nodes]
        for i, node in enumerate(self.nodes):
            for j in node.inputs:
                out[j].append(i)
        return out

    def structurally_equal(self, other: "Graph") -> bool:
        shapes = lambda g: {k: None if v is None else np.shape(v) for k, v in g.params.items()}
        return (
            self.nodes == other.nodes
            and self.groups == other.groups
            and shapes(self) == shapes(other)
        )

    def param(self, ref: Any) -> np.ndarray:
        if isinstance(ref, str):
            value = self.params.get(ref)
            if value is None:
                raise GraphError(f"parameter {ref!r} is not bound")
            return value
        return np.asarray(ref, dtype=np.float64)


def infer_group(graph: Graph, op: str, inputs: tuple[int, ...], attrs) -> str | None:
    """Return the batching of a prospective node or raise :class:`GraphError`."""
    if op not in ALL_OPS:
        raise GraphError(f"unknown op {op!r}")
    for i in inputs:
        if not 0 <= i < len(graph.nodes):
            raise GraphError(f"{op}: input %{i} does not precede the node")
        if graph.nodes[i].op == "output":
            raise GraphError(f"{op}: output nodes cannot be consumed")
    if op != "contract" and len(inputs) != _ARITY[op]:
        raise GraphError(f"{op} takes {_ARITY[op]} inputs, got {len(inputs)}")
    get = dict(attrs).get
    in_groups = [graph.nodes[i].group for i in inputs]

    if op == "leaf":
        if not isinstance(get("name"), str):
            raise GraphError("leaf needs a string name")
        group = get("group")
        if group is not None and group not in graph.groups:
            raise GraphError(f"leaf uses undeclared group {group!r}")
        return group
    if op == "replicate":
        group = get("group")
        if group not in graph.groups:
            raise GraphError(f"replicate uses undeclared group {group!r}")
        if in_groups[0] is not None:
            raise GraphError("replicate needs an unbatched input")
        return group
    if op == "sum":
        if in_groups[0] is None:
            raise GraphError("sum needs a batched input")
        return None
    if op == "output":
        if not isinstance(get("name"), str):
            raise GraphError("output needs a string name")
        return in_groups[0]

    batched = {g for g in in_groups if g is not None}
    if len(batched) > 1:
        raise GraphError(f"{op} mixes direction groups {sorted(batched)}")
    group = batched.pop() if batched else None

    if op == "contract":
        spec = get("spec")
        if not isinstance(spec, str):
            raise GraphError("contract needs a spec")
        terms, out = parse_spec(spec)
        if len(terms) != len(inputs) or not inputs:
            raise GraphError(f"spec {spec!r} has {len(terms)} operands, got {len(inputs)}")
        for term, g in zip(terms, in_groups):
            if (term == "r...") != (g is not None):
                raise GraphError(f"spec {spec!r} disagrees with operand batching")
        if out == "r...":
            if group is None:
                raise GraphError(f"spec {spec!r} outputs 'r' without a batched operand")
            return group
        return None
    if op in ("affine", "linear"):
        if get("W") is None or (op == "affine" and get("b") is None):
            raise GraphError(f"{op} needs parameter references")
    if op == "scale" and not isinstance(get("c"), (int, float)):
        raise GraphError("scale needs a numeric c")
    if op == "poly" and not get("coeffs"):
        raise GraphError("poly needs coefficients")
    return group


# ---------------------------------------------------------------------------
# Evaluation


def _horner(coeffs, x: np.ndarray) -> np.ndarray:
    acc = np.full_like(x, coeffs[-1], dtype=np.float64)
    for c in reversed(coeffs[:-1]):
        acc = acc * x + c
    return acc


def apply_op(op: str, attrs: Mapping[str, Any], args: list[np.ndarray], graph: Graph | None = None,
             group_size: int | None = None) -> np.ndarray:
    """Run one primitive or structural op on concrete arrays."""
    param = graph.param if graph is not None else (lambda v: np.asarray(v, dtype=np.float64))
    if op == "sin":
        return np.sin(args[0])
    if op == "cos":
        return np.cos(args[0])
    if op == "tanh":
        return np.tanh(args[0])
    if op == "exp":
        return np.exp(args[0])
    if op == "neg":
        return np.negative(args[0])
    if op == "scale":
        return args[0] * float(attrs["c"])
    if op == "poly":
        return _horner(attrs["coeffs"], args[0])
    if op == "add":
        return args[0] + args[1]
    if op == "mul":
        return args[0] * args[1]
    if op == "affine":
        return args[0] @ param(attrs["W"]).T + param(attrs["b"])
    if op == "linear":
        return args[0] @ param(attrs["W"]).T
    if op == "contract":
        return np.einsum(attrs["spec"], *args)
    if op == "replicate":
        return np.broadcast_to(args[0], (group_size,) + args[0].shape)
    if op == "sum":
        return args[0].sum(axis=0)
    raise GraphError(f"cannot apply op {op!r}")


def op_flops(op: str, attrs: Mapping[str, Any], args: list[np.ndarray], out: np.ndarray,
             graph: Graph | None = None) -> int:
    """Scalar multiply-add proxy for one op."""
    if op in ("replicate", "leaf", "output"):
        return 0
    if op in ("affine", "linear"):
        return int(out.size * args[0].shape[-1])
    if op == "poly":
        return int(out.size * max(1, len(attrs["coeffs"]) - 1))
    if op == "sum":
        return int(args[0].size)
    if op == "contract":
        # Operands share a trailing shape, so the largest one spans the
        # full index space (times R when any operand is batched).
        return int(max(a.size for a in args) * max(1, len(args) - 1))
    return int(out.size)


@dataclass
class EvalStats:
    flops: int = 0
    per_node: list[int] = field(default_factory=list)


def evaluate(graph: Graph, bindings: Mapping[str, Any], stats: EvalStats | None = None) -> dict[str, np.ndarray]:
    """Evaluate ``graph`` on leaf ``bindings`` and return its outputs by name."""
    values: list[np.ndarray | None] = [None] * len(graph.nodes)
    results: dict[str, np.ndarray] = {}
    for i, node in enumerate(graph.nodes):
        attrs = dict(node.attrs)
        if node.op == "leaf":
            name = attrs["name"]
            if name not in bindings:
                raise GraphError(f"leaf {name!r} is unbound")
            value = np.asarray(bindings[name], dtype=np.float64)
            if node.group is not None and value.shape[:1] != (graph.groups[node.group],):
                raise GraphError(
                    f"leaf {name!r} expects leading extent {graph.groups[node.group]}, got shape {value.shape}")
            values[i] = value
            if stats is not None:
                stats.per_node.append(0)
            continue
        args = [values[j] for j in node.inputs]
        if node.op == "output":
            values[i] = args[0]
            results[attrs["name"]] = args[0]
            if stats is not None:
                stats.per_node.append(0)
            continue
        size = graph.groups.get(attrs.get("group")) if node.op == "replicate" else None
        out = apply_op(node.op, attrs, args, graph, size)
        values[i] = out
        if stats is not None:
            cost = op_flops(node.op, attrs, args, out, graph)
            stats.per_node.append(cost)
            stats.flops += cost
    return results


# ---------------------------------------------------------------------------
# Text format

_LINE = re.compile(r"^%(\d+) = ([a-z_]+)\[(.*)\]\((.*)\) : (\S+)(?: @(\d+)\.(\d+))?$")


def _format_attrs(attrs) -> str:
    return ", ".join(f"{k}={json.dumps(list(v) if isinstance(v, tuple) else v)}" for k, v in attrs)


def _parse_attrs(text: str, lineno: int) -> tuple[tuple[str, Any], ...]:
    decoder = json.JSONDecoder()
    out = []
    pos = 0
    text = text.strip()
    while pos < len(text):
        m = re.match(r"\s*([A-Za-z_][A-Za-z0-9_]*)=", text[pos:])
        if not m:
            raise ParseError(lineno, f"bad attribute list {text!r}")
        pos += m.end()
        try:
            value, end = decoder.raw_decode(text, pos)
        except json.JSONDecodeError as exc:
            raise ParseError(lineno, f"bad attribute value: {exc.msg}") from None
        out.append((m.group(1), _freeze(value)))
        pos = end
        rest = text[pos:].lstrip()
        if rest.startswith(","):
            pos = len(text) - len(rest) + 1
        elif rest:
            raise ParseError(lineno, f"unexpected text {rest!r}")
        else:
            pos = len(text)
    return tuple(out)


def serialize(graph: Graph) -> str:
    """Render ``graph`` in the line-oriented text format."""
    lines = [HEADER]
    for name, size in graph.groups.items():
        lines.append(f"group {name} {size}")
    for name, value in graph.params.items():
        shape = "?" if value is None else "x".join(str(d) for d in np.shape(value)) or "scalar"
        lines.append(f"param {name} {shape}")
    for i, node in enumerate(graph.nodes):
        ins = ", ".join(f"%{j}" for j in node.inputs)
        line = f"%{i} = {node.op}[{_format_attrs(node.attrs)}]({ins}) : {node.group or '-'}"
        if node.tag is not None:
            line += f" @{node.tag[0]}.{node.tag[1]}"
        lines.append(line)
    return "\n".join(lines) + "\n"


def parse(text: str, params: Mapping[str, np.ndarray] | None = None) -> Graph:
    """Parse the text format; ``params`` optionally supplies parameter values."""
    lines = text.splitlines()
    if not lines or lines[0].strip() != HEADER:
        raise ParseError(1, f"expected header {HEADER!r}")
    graph = Graph()
    for lineno, raw in enumerate(lines[1:], start=2):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("group "):
            parts = line.split()
            if len(parts) != 3 or not parts[2].isdigit():
                raise ParseError(lineno, f"bad group line {line!r}")
            graph.add_group(parts[1], int(parts[2]))
            continue
        if line.startswith("param "):
            parts = line.split()
            if len(parts) != 3:
                raise ParseError(lineno, f"bad param line {line!r}")
            graph.params[parts[1]] = None if params is None else params.get(parts[1])
            continue
        m = _LINE.match(line)
        if not m:
            raise ParseError(lineno, f"cannot parse {line!r}")
        idx, op, attr_text, in_text, batching = m.group(1, 2, 3, 4, 5)
        if int(idx) != len(graph.nodes):
            raise ParseError(lineno, f"expected node id %{len(graph.nodes)}, got %{idx}")
        inputs = []
        for tok in filter(None, (t.strip() for t in in_text.split(","))):
            if not re.fullmatch(r"%\d+", tok):
                raise ParseError(lineno, f"bad input reference {tok!r}")
            inputs.append(int(tok[1:]))
        tag = (int(m.group(6)), int(m.group(7))) if m.group(6) else None
        try:
            attrs = _parse_attrs(attr_text, lineno)
            group = infer_group(graph, op, tuple(inputs), attrs)
        except GraphError as exc:
            raise ParseError(lineno, str(exc)) from None
        if (group or "-") != batching:
            raise ParseError(lineno, f"declared batching {batching!r} but inferred {group or '-'!r}")
        graph.nodes.append(Node(op, tuple(inputs), attrs, group, tag))
    return graph


# ---------------------------------------------------------------------------
# Rebuilding helpers shared by rewrite passes


class Builder:
    """Graph under construction with optional hash-consing of pure nodes."""

    def __init__(self, groups: Mapping[str, int], params: Mapping[str, Any], cse: bool = False):
        self.graph = Graph(groups=dict(groups), params=dict(params))
        self.cse = cse
        self._memo: dict[tuple, int] = {}

    def add(self, op: str, *inputs: int, tag=None, **attrs) -> int:
        key = (op, inputs, tuple((k, _freeze(v)) for k, v in attrs.items()))
        if self.cse and op not in ("leaf", "output") and key in self._memo:
            self.retag(self._memo[key], tag)
            return self._memo[key]
        idx = self.graph.add(op, *inputs, tag=tag, **attrs)
        if self.cse and op not in ("leaf", "output"):
            self._memo[key] = idx
        return idx

    def retag(self, idx: int, tag) -> None:
        node = self.graph.nodes[idx]
        if node.tag is None and tag is not None and node.op not in ("leaf", "output"):
            self.graph.nodes[idx] = replace(node, tag=tag)


def prune(graph: Graph) -> Graph:
    """Drop nodes that do not reach an output (leaves are kept) and renumber."""
    live = [n.op in ("leaf", "output") for n in graph.nodes]
    for i in range(len(graph.nodes) - 1, -1, -1):
        if live[i]:
            for j in graph.nodes[i].inputs:
                live[j] = True
    remap: dict[int, int] = {}
    out = Graph(groups=dict(graph.groups), params=dict(graph.params))
    for i, node in enumerate(graph.nodes):
        if live[i]:
            remap[i] = len(out.nodes)
            out.nodes.append(replace(node, inputs=tuple(remap[j] for j in node.inputs)))
    return out
