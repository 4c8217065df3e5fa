import numpy as np
import pytest

from taylorcollapse.harness import MlpSpec, build_mlp

# Faà di Bruno coefficients of f_k, transcribed term by term from the
# reference table: (coefficient, derivative order, partition of k).
FAA_DI_BRUNO_TABLE = {
    1: [(1, 1, (1,))],
    2: [(1, 2, (1, 1)), (1, 1, (2,))],
    3: [(1, 3, (1, 1, 1)), (3, 2, (2, 1)), (1, 1, (3,))],
    4: [(1, 4, (1, 1, 1, 1)), (6, 3, (2, 1, 1)), (4, 2, (3, 1)), (3, 2, (2, 2)), (1, 1, (4,))],
    5: [(1, 5, (1,) * 5), (10, 4, (2, 1, 1, 1)), (10, 3, (3, 1, 1)), (15, 3, (2, 2, 1)), (5, 2, (4, 1)),
        (10, 2, (3, 2)), (1, 1, (5,))],
    6: [(1, 6, (1,) * 6), (15, 5, (2, 1, 1, 1, 1)), (20, 4, (3, 1, 1, 1)), (45, 4, (2, 2, 1, 1)),
        (15, 3, (4, 1, 1)), (60, 3, (3, 2, 1)), (15, 3, (2, 2, 2)), (6, 2, (5, 1)), (15, 2, (4, 2)),
        (10, 2, (3, 3)), (1, 1, (6,))],
    7: [(1, 7, (1,) * 7), (21, 6, (2, 1, 1, 1, 1, 1)), (35, 5, (3, 1, 1, 1, 1)), (105, 5, (2, 2, 1, 1, 1)),
        (35, 4, (4, 1, 1, 1)), (210, 4, (3, 2, 1, 1)), (105, 4, (2, 2, 2, 1)), (21, 3, (5, 1, 1)),
        (105, 3, (4, 2, 1)), (70, 3, (3, 3, 1)), (105, 3, (3, 2, 2)), (7, 2, (6, 1)), (21, 2, (5, 2)),
        (35, 2, (4, 3)), (1, 1, (7,))],
    8: [(1, 8, (1,) * 8), (28, 7, (2, 1, 1, 1, 1, 1, 1)), (56, 6, (3, 1, 1, 1, 1, 1)),
        (210, 6, (2, 2, 1, 1, 1, 1)), (70, 5, (4, 1, 1, 1, 1)), (560, 5, (3, 2, 1, 1, 1)),
        (420, 5, (2, 2, 2, 1, 1)), (56, 4, (5, 1, 1, 1)), (420, 4, (4, 2, 1, 1)), (280, 4, (3, 3, 1, 1)),
        (840, 4, (3, 2, 2, 1)), (105, 4, (2, 2, 2, 2)), (28, 3, (6, 1, 1)), (168, 3, (5, 2, 1)),
        (280, 3, (4, 3, 1)), (210, 3, (4, 2, 2)), (280, 3, (3, 3, 2)), (8, 2, (7, 1)), (28, 2, (6, 2)),
        (56, 2, (5, 3)), (35, 2, (4, 4)), (1, 1, (8,))],
}


def rel_err(a, b):
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-300))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_mlp():
    return build_mlp(MlpSpec([3, 8, 8, 1], seed=7))
