import itertools
from pathlib import Path

import numpy as np
import pytest

from conftest import rel_err
from taylorcollapse import functions as F
from taylorcollapse.graph import Graph, GraphError, ParseError, evaluate, parse, serialize
from taylorcollapse.harness import MlpSpec, build_mlp
from taylorcollapse.taylor import Jet, capture, jet_eval

GOLDEN = Path(__file__).parent / "golden"


def strip_comments(text: str) -> str:
    return "\n".join(l for l in text.splitlines() if not l.startswith("#")) + "\n"


class TestCapture:
    def test_sin_two_jet_structure(self):
        g = capture(F.elementwise("sin"), 2, directions=4)
        ops = [n.op for n in g.nodes]
        compute = [o for o in ops if o not in ("leaf", "output")]
        assert sorted(compute) == sorted(
            ["replicate", "sin", "cos", "neg", "contract", "contract", "contract", "add", "sum"])
        assert ops.count("leaf") == 3 and ops.count("output") == 3
        assert len(g) == 15

    def test_affine_only_program(self):
        g = capture(F.linear(np.array([[1.0, 2.0]])), 3, directions=2)
        assert not any(n.op == "contract" for n in g.nodes)
        assert sum(n.op == "replicate" for n in g.nodes) == 1

    def test_mlp_node_count_grows_linearly_with_layers(self):
        sizes = [len(capture(build_mlp(MlpSpec([2] + [4] * depth + [1])), 2, directions=3)) for depth in (1, 2, 3, 4)]
        steps = np.diff(sizes)
        assert len(set(steps)) == 1

    @pytest.mark.parametrize("K", [1, 2, 3])
    def test_evaluate_matches_jet_eval_bit_for_bit(self, K, rng):
        fn = build_mlp(MlpSpec([3, 6, 6, 2], seed=K))
        R = 4
        x0 = rng.normal(size=(5, 3))
        coeffs = [rng.normal(size=(R, 5, 3)) for _ in range(K)]
        jet = jet_eval(fn, Jet(x0, coeffs, batched=True))
        g = capture(fn, K, directions=R)
        bind = {"x0": x0, **{f"x{k}_r": c for k, c in enumerate(coeffs, start=1)}}
        out = evaluate(g, bind)
        np.testing.assert_array_equal(out["f0_r"][0], jet.primal)
        for k in range(1, K):
            np.testing.assert_array_equal(out[f"f{k}_r"], jet.coeffs[k - 1])
        np.testing.assert_array_equal(out[f"f{K}"], jet.coeffs[-1].sum(axis=0))


class TestEvaluate:
    @pytest.fixture
    def sin_graph(self):
        return capture(F.elementwise("sin"), 2, directions=2)

    def test_sin_values(self, sin_graph):
        rows = np.array([[1.0], [2.0]])
        zero = np.zeros((2, 1))
        out = evaluate(sin_graph, {"x0": np.array([0.0]), "x1_r": rows, "x2_r": zero})
        np.testing.assert_allclose(out["f2"], [0.0], atol=1e-300)
        out = evaluate(sin_graph, {"x0": np.array([np.pi / 4]), "x1_r": rows, "x2_r": zero})
        np.testing.assert_allclose(out["f2"], [-(np.sqrt(2) / 2) * 5], rtol=1e-15)

    def test_identity_graph(self):
        g = Graph()
        g.add("output", g.add("leaf", name="x"), name="y")
        np.testing.assert_array_equal(evaluate(g, {"x": [1.0, 2.0]})["y"], [1.0, 2.0])

    def test_rebinding_is_pure(self, sin_graph):
        bind = lambda x: {"x0": np.array([x]), "x1_r": np.ones((2, 1)), "x2_r": np.ones((2, 1))}
        first = evaluate(sin_graph, bind(0.3))
        evaluate(sin_graph, bind(1.1))
        again = evaluate(sin_graph, bind(0.3))
        for k in first:
            np.testing.assert_array_equal(first[k], again[k])

    def test_unbound_leaf(self, sin_graph):
        with pytest.raises(GraphError, match="unbound"):
            evaluate(sin_graph, {"x0": np.zeros(1)})


class TestSerialization:
    def test_empty_graph(self):
        text = serialize(Graph())
        assert text.strip() == "taylorcollapse-ir 1"
        assert parse(text).structurally_equal(Graph())

    def test_sin_graph_line_count(self):
        text = serialize(capture(F.elementwise("sin"), 2, directions=4))
        body = [l for l in text.splitlines() if l.startswith("%")]
        assert len(body) == 15

    def test_golden_before(self):
        g = capture(F.elementwise("sin"), 2, directions=4)
        golden = (GOLDEN / "sin2_before.ir").read_text()
        assert serialize(g) == strip_comments(golden)
        assert parse(golden).structurally_equal(g)

    @pytest.mark.parametrize("K", [1, 2, 4])
    def test_round_trip(self, K):
        fn = build_mlp(MlpSpec([2, 3, 1]))
        g = capture(fn, K, directions=3)
        text = serialize(g)
        parsed = parse(text, params=fn.params)
        assert parsed.structurally_equal(g)
        assert serialize(parsed) == text

    def test_malformed_line_reports_line_number(self):
        with pytest.raises(ParseError, match="line 3"):
            parse("taylorcollapse-ir 1\ngroup r 2\nfoo(\n")

    def test_missing_header(self):
        with pytest.raises(ParseError, match="line 1"):
            parse("%0 = leaf[name=\"x\"]() : -\n")

    def test_batching_mismatch_is_rejected(self):
        text = 'taylorcollapse-ir 1\n%0 = leaf[name="x"]() : r\n'
        with pytest.raises(ParseError, match="line 2"):
            parse(text)


# ---------------------------------------------------------------------------
# Typechecking fuzz: every single-node extension of a small seed graph is
# checked against an independent batching model.

LEAVES = {"u": None, "b": "r", "c": "s"}
SIZES = {"r": 2, "s": 3}


def reference_batching(op, groups, spec=None, attr_group=None):
    """Expected batching, or 'error'."""
    batched = [g for g in groups if g is not None]
    if op == "replicate":
        return attr_group if groups[0] is None else "error"
    if op == "sum":
        return None if groups[0] is not None else "error"
    if len(set(batched)) > 1:
        return "error"
    group = batched[0] if batched else None
    if op == "contract":
        ins, out = spec.split("->")
        terms = ins.split(",")
        if any((t == "r...") != (g is not None) for t, g in zip(terms, groups)):
            return "error"
        if out == "r...":
            return group if group is not None else "error"
        return None
    return group


def candidate_nodes():
    names = list(LEAVES)
    for op in ("sin", "sum", "neg"):
        for a in names:
            yield op, (a,), {}
    for a in names:
        for grp in SIZES:
            yield "replicate", (a,), {"group": grp}
    for op in ("add", "mul"):
        for a, b in itertools.product(names, repeat=2):
            yield op, (a, b), {}
    for n in (1, 2, 3):
        for ins in itertools.product(names, repeat=n):
            for terms in itertools.product(["...", "r..."], repeat=n):
                for out in ("...", "r..."):
                    yield "contract", ins, {"spec": ",".join(terms) + "->" + out}


def test_batching_inference_exhaustive():
    checked = accepted = 0
    for op, ins, attrs in candidate_nodes():
        g = Graph(groups=dict(SIZES))
        ids = {name: g.add("leaf", name=name, **({"group": grp} if grp else {})) for name, grp in LEAVES.items()}
        expected = reference_batching(op, [LEAVES[i] for i in ins], attrs.get("spec"), attrs.get("group"))
        checked += 1
        if expected == "error":
            with pytest.raises(GraphError):
                g.add(op, *(ids[i] for i in ins), **attrs)
            continue
        node = g.add(op, *(ids[i] for i in ins), **attrs)
        assert g.nodes[node].group == expected
        g.add("output", node, name="y")
        trailing = (5,)
        bind = {n: np.ones(((SIZES[grp],) if grp else ()) + trailing) for n, grp in LEAVES.items()}
        y = evaluate(g, bind)["y"]
        assert y.shape == (((SIZES[expected],) if expected else ()) + trailing)
        accepted += 1
    assert checked > 400 and 0 < accepted < checked


def test_graph_rejects_forward_references_and_bad_arity():
    g = Graph()
    with pytest.raises(GraphError):
        g.add("sin", 0)
    x = g.add("leaf", name="x")
    with pytest.raises(GraphError):
        g.add("add", x)
    with pytest.raises(GraphError):
        g.add("frobnicate", x)
