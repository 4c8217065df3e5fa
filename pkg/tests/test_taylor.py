import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import FAA_DI_BRUNO_TABLE, rel_err
from taylorcollapse import functions as F
from taylorcollapse.graph import GraphError
from taylorcollapse.harness import MlpSpec, build_mlp, finite_difference, nested_directional
from taylorcollapse.taylor import (MAX_DEGREE, PARTITION_TABLE, Jet, Primitive, jet_eval, multiplicity, partitions,
                                   propagate_primitive, tanh_derivative_poly)


class TestPartitions:
    def test_degree_two(self):
        assert [(p.parts, p.nu) for p in partitions(2)] == [((1, 1), 1), ((2,), 1)]

    def test_degree_four_multiplicities(self):
        nus = {p.parts: p.nu for p in partitions(4)}
        assert nus == {(4,): 1, (3, 1): 4, (2, 2): 3, (2, 1, 1): 6, (1, 1, 1, 1): 1}

    def test_degree_six_triple_two(self):
        assert {p.parts: p.nu for p in partitions(6)}[(2, 2, 2)] == 15

    @pytest.mark.parametrize("k", range(1, MAX_DEGREE + 1))
    def test_matches_reference_table(self, k):
        got = {p.parts: (p.nu, len(p)) for p in partitions(k)}
        want = {parts: (coef, order) for coef, order, parts in FAA_DI_BRUNO_TABLE[k]}
        assert got == want

    def test_counts_and_trivial_partition(self):
        assert len(partitions(4)) == 5
        assert len(partitions(8)) == 22
        for k, table in PARTITION_TABLE.items():
            assert (k,) in {p.parts for p in table}
            assert next(p for p in table if p.parts == (k,)).nu == 1

    def test_order_is_lexicographic_and_duplicate_free(self):
        for k in range(1, MAX_DEGREE + 1):
            parts = [p.parts for p in partitions(k)]
            assert parts == sorted(set(parts))
            assert all(list(p) == sorted(p, reverse=True) and sum(p) == k for p in parts)

    @pytest.mark.parametrize("k", [0, 9, -1])
    def test_out_of_range(self, k):
        with pytest.raises(ValueError):
            partitions(k)

    @given(st.integers(1, MAX_DEGREE))
    def test_multiplicities_count_set_partitions(self, k):
        # The multiplicities count set partitions of {1..k}: they sum to the Bell number.
        bell = [1, 1, 2, 5, 15, 52, 203, 877, 4140]
        assert sum(p.nu for p in partitions(k)) == bell[k]


def test_tanh_derivative_polynomials():
    t = 0.37
    T = math.tanh(t)
    first = np.polynomial.polynomial.polyval(T, tanh_derivative_poly(1))
    assert first == pytest.approx(1 - T**2)
    second = np.polynomial.polynomial.polyval(T, tanh_derivative_poly(2))
    assert second == pytest.approx(-2 * T * (1 - T**2))


class TestPropagatePrimitive:
    def test_sin_at_zero(self):
        out = propagate_primitive(Primitive("sin"), Jet([0.0], [[1.0], [0.0]]))
        np.testing.assert_allclose(out.primal, [0.0])
        np.testing.assert_allclose(out.coeffs[0], [1.0])
        np.testing.assert_allclose(out.coeffs[1], [0.0], atol=1e-300)

    def test_affine(self):
        prim = Primitive("affine", {"W": np.array([[2.0]]), "b": np.array([1.0])})
        out = propagate_primitive(prim, Jet([3.0], [[1.0], [0.0]]))
        np.testing.assert_array_equal(out.primal, [7.0])
        np.testing.assert_array_equal(out.coeffs[0], [2.0])
        np.testing.assert_array_equal(out.coeffs[1], [0.0])

    def test_tanh_fourth_coefficient(self):
        out = propagate_primitive(Primitive("tanh"), Jet.seed([0.3], [1.0], 4))
        # sympy: diff(tanh(x), x, 4) at x = 3/10
        np.testing.assert_allclose(out.coeffs[3], [3.7224858166137200730], rtol=1e-13)
        fd = finite_difference(F.elementwise("tanh"), np.array([0.3]), np.array([1.0]), 4)
        np.testing.assert_allclose(out.coeffs[3], fd, rtol=1e-6)

    def test_hadamard_leibniz(self):
        a = Jet([2.0], [[1.0], [3.0], [0.5]])
        b = Jet([5.0], [[-1.0], [2.0], [4.0]])
        out = propagate_primitive(Primitive("mul"), a, b)
        # (a b)''' = a''' b + 3 a'' b' + 3 a' b'' + a b'''
        assert out.coeffs[2][0] == pytest.approx(0.5 * 5 + 3 * 3 * -1 + 3 * 1 * 2 + 2 * 4)

    def test_unsupported_and_mixed(self):
        with pytest.raises(GraphError):
            propagate_primitive(Primitive("sqrt"), Jet([1.0], [[1.0]]))
        with pytest.raises(GraphError):
            propagate_primitive(Primitive("add"), Jet([1.0], [[1.0]]),
                                Jet([1.0], [[[1.0]]], batched=True))

    @pytest.mark.parametrize("op", ["sin", "cos", "tanh", "exp", "neg", "scale", "affine", "add", "mul"])
    @pytest.mark.parametrize("K", [1, 2, 3, 4])
    def test_collapsed_top_commutes_with_propagation(self, op, K):
        rng = np.random.default_rng(K)
        R, D = 3, 4
        attrs = {}
        if op == "scale":
            attrs = {"c": -1.7}
        if op == "affine":
            attrs = {"W": rng.normal(size=(2, D)), "b": rng.normal(size=2)}
        arity = 2 if op in ("add", "mul") else 1
        jets = [Jet(rng.normal(size=D) * 0.5, [rng.normal(size=(R, D)) for _ in range(K)], batched=True)
                for _ in range(arity)]
        prim = Primitive(op, attrs)
        standard = propagate_primitive(prim, *jets).collapse()
        collapsed = propagate_primitive(prim, *[j.collapse() for j in jets])
        assert collapsed.collapsed_top
        np.testing.assert_allclose(collapsed.coeffs[-1], standard.coeffs[-1], rtol=1e-12, atol=1e-12)
        for k in range(K - 1):
            np.testing.assert_array_equal(collapsed.coeffs[k], standard.coeffs[k])


class TestJetEval:
    def test_sin_matches_closed_formula(self):
        g = F.elementwise("sin")
        x0 = np.array([0.4, -1.2])
        x1 = np.array([[1.0, 2.0], [0.5, -1.0]])
        x2 = np.array([[0.3, 0.1], [-0.2, 0.7]])
        out = jet_eval(g, Jet(x0, [x1, x2], batched=True))
        np.testing.assert_allclose(out.coeffs[1], -np.sin(x0) * x1 * x1 + np.cos(x0) * x2, rtol=1e-15)

    def test_identity(self):
        seed = Jet([1.0, 2.0], [[0.5, 0.5], [1.0, -1.0]])
        out = jet_eval(F.identity(), seed)
        np.testing.assert_array_equal(out.primal, seed.primal)
        for a, b in zip(out.coeffs, seed.coeffs):
            np.testing.assert_array_equal(a, b)

    def test_linear_map_kills_second_coefficient(self):
        q, _ = np.linalg.qr(np.random.default_rng(0).normal(size=(3, 3)))
        out = jet_eval(F.linear(q), Jet.seed(np.ones(3), np.eye(3)[1], 2))
        assert out.coeffs[1] is None or not np.any(out.coeffs[1])

    def test_first_order_matches_dual_numbers(self, rng):
        for seed in range(5):
            fn = build_mlp(MlpSpec([4, 16, 16, 3], seed=seed))
            x0, v = rng.normal(size=4), rng.normal(size=4)
            out = jet_eval(fn, Jet.seed(x0, v, 1))
            dual = nested_directional(fn, x0, [v])
            np.testing.assert_allclose(out.coeffs[0], dual, rtol=1e-12, atol=1e-14)

    @pytest.mark.parametrize("K", [1, 2, 3, 4])
    def test_coefficients_match_finite_differences(self, K, rng):
        fn = build_mlp(MlpSpec([3, 10, 10, 2], seed=K))
        x0, v = rng.normal(size=3), rng.normal(size=3)
        out = jet_eval(fn, Jet.seed(x0, v, K))
        for k in range(1, K + 1):
            fd = finite_difference(fn, x0, v, k)
            assert rel_err(out.coefficient(k), fd) < 1e-4

    def test_batched_standard_primal_is_unbatched(self, small_mlp, rng):
        seed = Jet.seed(rng.normal(size=(2, 3)), rng.normal(size=(4, 2, 3)), 2, batched=True)
        out = jet_eval(small_mlp, seed)
        assert out.primal.shape == (2, 1)
        assert out.coeffs[0].shape == (4, 2, 1)


def test_multiplicity_formula():
    assert multiplicity((2, 2, 1, 1)) == 45
    assert multiplicity((3, 2, 2, 1)) == 840


def test_jet_validation():
    with pytest.raises(ValueError):
        Jet([1.0], [])
    with pytest.raises(ValueError):
        Jet([1.0, 2.0], [[1.0]])
    with pytest.raises(ValueError):
        Jet([1.0], [[1.0]], collapsed_top=True)
