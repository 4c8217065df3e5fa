"""Taylor-mode automatic differentiation with a collapsing graph rewrite.

The package propagates K-jets through small numpy programs, captures the
propagation as a graph IR, and rewrites that graph so the highest-order
coefficients are summed over directions before they are propagated. On top
of this it builds Laplacian, weighted Laplacian and biharmonic operators,
reference oracles and a CSV benchmark command.
"""

from .collapse import RewriteReport, collapse, pull_sum_up, push_replicate_down, vectors_per_node
from .graph import EvalStats, Graph, GraphError, Node, ParseError, evaluate, parse, serialize
from .harness import (MlpSpec, build_mlp, finite_difference, full_tensor_biharmonic, nested_laplacian,
                      oracle_derivative)
from .operators import (DirectionSet, WeightedLaplacianSpec, biharmonic_6jet, biharmonic_exact,
                        biharmonic_stochastic, count_vectors, gamma, interpolation_plan, laplacian,
                        theoretical_ratio, weighted_laplacian)
from .taylor import Jet, Partition, capture, jet_eval, partitions, propagate_primitive

__version__ = "0.1.0"

__all__ = [
    "Graph", "Node", "GraphError", "ParseError", "EvalStats", "evaluate", "serialize", "parse",
    "Jet", "Partition", "partitions", "propagate_primitive", "jet_eval", "capture",
    "RewriteReport", "collapse", "push_replicate_down", "pull_sum_up", "vectors_per_node",
    "DirectionSet", "WeightedLaplacianSpec", "laplacian", "weighted_laplacian", "biharmonic_exact",
    "biharmonic_stochastic", "biharmonic_6jet", "gamma", "interpolation_plan", "count_vectors",
    "theoretical_ratio", "MlpSpec", "build_mlp", "oracle_derivative", "nested_laplacian",
    "full_tensor_biharmonic", "finite_difference",
]
