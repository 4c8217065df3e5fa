"""Rewrite passes that turn a standard Taylor-mode graph into collapsed form.

:func:`push_replicate_down` moves ``replicate`` nodes towards the outputs so
that work on replicated values happens once, unbatched.
:func:`pull_sum_up` moves the final ``sum`` nodes towards the leaves through
nodes that are linear in their batched operand, so the top coefficient is
summed before it is propagated.
"""

from __future__ import annotations

from dataclasses import dataclass

from .graph import Builder, Graph, make_spec, parse_spec, prune

_ELEMENTWISE = ("sin", "cos", "tanh", "exp", "neg", "poly", "scale", "affine", "linear")


@dataclass
class RewriteReport:
    replicates_moved: int = 0
    sums_moved: int = 0
    nodes_before: int = 0
    nodes_after: int = 0
    batched_vectors_before: int = 0
    batched_vectors_after: int = 0

    @property
    def moves(self) -> int:
        return self.replicates_moved + self.sums_moved


def _attrs(node) -> dict:
    return dict(node.attrs)


def push_replicate_down(g: Graph, report: RewriteReport | None = None) -> Graph:
    """Defer every ``replicate`` until a consumer needs a materialized batched value."""
    b = Builder(g.groups, g.params, cse=True)
    # old id -> (new id, group of a deferred replicate or None)
    env: list[tuple[int, str | None]] = []
    moved = 0

    def materialize(i: int) -> int:
        new, group = env[i]
        return new if group is None else b.add("replicate", new, group=group)

    for node in g.nodes:
        attrs = _attrs(node)
        ins = [env[i] for i in node.inputs]
        deferred = {grp for _, grp in ins if grp is not None}
        genuine = any(g.nodes[i].group is not None and env[i][1] is None for i in node.inputs)
        if node.op == "leaf":
            env.append((b.add("leaf", **attrs), None))
        elif node.op == "replicate":
            env.append((ins[0][0], attrs["group"]))
        elif node.op == "output":
            env.append((b.add("output", materialize(node.inputs[0]), **attrs), None))
        elif node.op == "sum":
            new, group = ins[0]
            if group is not None:
                moved += 1
                env.append((b.add("scale", new, tag=node.tag, c=float(g.groups[group])), None))
            else:
                env.append((b.add("sum", new, tag=node.tag), None))
        elif node.op == "contract":
            terms, out = parse_spec(attrs["spec"])
            if deferred:
                moved += 1
            operands = [new for new, _ in ins]
            new_terms = ["..." if grp is not None else t for t, (_, grp) in zip(terms, ins)]
            if genuine:
                spec = ",".join(new_terms) + "->" + out
                env.append((b.add("contract", *operands, tag=node.tag, spec=spec), None))
            elif out == "r...":
                spec = ",".join(new_terms) + "->..."
                group = deferred.pop() if deferred else None
                env.append((b.add("contract", *operands, tag=node.tag, spec=spec), group))
            else:
                # Full reduction over replicated operands: R copies of one product.
                spec = ",".join(new_terms) + "->..."
                value = b.add("contract", *operands, spec=spec)
                if deferred:
                    value = b.add("scale", value, tag=node.tag, c=float(g.groups[deferred.pop()]))
                env.append((value, None))
        else:
            # Primitive: elementwise or broadcasting binary op.
            operands = [new for new, _ in ins]
            if deferred:
                moved += 1
            group = None if genuine or not deferred else deferred.pop()
            env.append((b.add(node.op, *operands, tag=node.tag, **attrs), group))
    out = prune(b.graph)
    if report is not None:
        report.replicates_moved += moved
    return out


def pull_sum_up(g: Graph, report: RewriteReport | None = None) -> Graph:
    """Move each ``sum`` over directions upward through linear positions."""
    consumers = g.consumers()
    b = Builder(g.groups, g.params, cse=True)
    env: list[int] = []
    memo: dict[int, int] = {}
    moved = 0

    def size(i: int) -> float:
        return float(g.groups[g.nodes[i].group])

    def pull(i: int) -> int:
        nonlocal moved
        if i in memo:
            return memo[i]
        node = g.nodes[i]
        attrs = _attrs(node)
        sole = len(consumers[i]) == 1
        result = None
        if sole and node.op == "add":
            parts = []
            for j in node.inputs:
                if g.nodes[j].group is not None:
                    parts.append(pull(j))
                else:
                    parts.append(b.add("scale", env[j], c=size(i)))
            result = b.add("add", *parts, tag=node.tag)
        elif sole and node.op in ("scale", "neg", "linear"):
            result = b.add(node.op, pull(node.inputs[0]), tag=node.tag, **attrs)
        elif sole and node.op == "replicate":
            result = b.add("scale", env[node.inputs[0]], tag=node.tag, c=size(i))
        elif sole and node.op == "mul":
            batched = [g.nodes[j].group is not None for j in node.inputs]
            if sum(batched) == 1:
                operands = [pull(j) if bt else env[j] for j, bt in zip(node.inputs, batched)]
                result = b.add("mul", *operands, tag=node.tag)
            else:
                spec = make_spec([True, True], False)
                result = b.add("contract", *(env[j] for j in node.inputs), tag=node.tag, spec=spec)
        elif sole and node.op == "contract":
            terms, _ = parse_spec(attrs["spec"])
            batched = [t == "r..." for t in terms]
            if sum(batched) == 1:
                operands = [pull(j) if bt else env[j] for j, bt in zip(node.inputs, batched)]
                spec = make_spec([False] * len(terms), False)
            else:
                operands = [env[j] for j in node.inputs]
                spec = make_spec(batched, False)
            result = b.add("contract", *operands, tag=node.tag, spec=spec)
        if result is None:
            result = b.add("sum", env[i])
        else:
            moved += 1
        memo[i] = result
        return result

    for i, node in enumerate(g.nodes):
        attrs = _attrs(node)
        if node.op == "sum":
            env.append(pull(node.inputs[0]))
            if node.tag is not None:
                b.retag(env[-1], node.tag)
        else:
            env.append(b.add(node.op, *(env[j] for j in node.inputs), tag=node.tag, **attrs))
    out = prune(b.graph)
    if report is not None:
        report.sums_moved += moved
    return out


def collapse(g: Graph) -> tuple[Graph, RewriteReport]:
    """Run :func:`push_replicate_down` then :func:`pull_sum_up`."""
    report = RewriteReport(nodes_before=len(g), batched_vectors_before=vectors_per_node(g))
    out = pull_sum_up(push_replicate_down(g, report), report)
    report.nodes_after = len(out)
    report.batched_vectors_after = vectors_per_node(out)
    return out, report


# ---------------------------------------------------------------------------
# Vector counting


def uniform_nodes(g: Graph) -> list[bool]:
    """Batched nodes whose value is identical across directions (derived only from replicates)."""
    uniform = []
    for node in g.nodes:
        if node.op == "replicate":
            uniform.append(True)
        elif node.op == "leaf" or node.group is None:
            uniform.append(False)
        else:
            uniform.append(all(uniform[j] or g.nodes[j].group is None for j in node.inputs))
    return uniform


def vector_counts(g: Graph) -> dict[int, int]:
    """Number of vectors each function node propagates.

    A node tagged with ``(function_node, k)`` holds coefficient ``k`` of that
    function node. It contributes ``R`` vectors when batched over a group of
    extent ``R`` with direction-dependent values, and 1 otherwise.
    """
    uniform = uniform_nodes(g)
    counts: dict[int, int] = {}
    for i, node in enumerate(g.nodes):
        if node.tag is None:
            continue
        weight = g.groups[node.group] if node.group is not None and not uniform[i] else 1
        counts[node.tag[0]] = counts.get(node.tag[0], 0) + weight
    return counts


def vectors_per_node(g: Graph) -> int:
    """Largest per-function-node vector count in ``g`` (0 for untagged graphs)."""
    return max(vector_counts(g).values(), default=0)
