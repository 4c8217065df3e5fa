"""Small closed-form test functions expressed as function graphs."""

from __future__ import annotations

import numpy as np

from .graph import Graph

UNARY = ("sin", "cos", "tanh", "exp")


def _finish(g: Graph, h: int) -> Graph:
    g.add("output", h, name="f")
    return g


def _project(g: Graph, x: int, rows, name: str) -> int:
    rows = np.atleast_2d(np.asarray(rows, dtype=np.float64))
    g.params[f"{name}.W"] = rows
    g.params[f"{name}.b"] = np.zeros(rows.shape[0])
    return g.add("affine", x, W=f"{name}.W", b=f"{name}.b")


def elementwise(op: str) -> Graph:
    """``f(x) = op(x)`` applied entrywise."""
    g = Graph()
    return _finish(g, g.add(op, g.add("leaf", name="x")))


def identity() -> Graph:
    g = Graph()
    return _finish(g, g.add("leaf", name="x"))


def linear(W, b=None) -> Graph:
    W = np.atleast_2d(np.asarray(W, dtype=np.float64))
    g = Graph()
    g.params["W"] = W
    g.params["b"] = np.zeros(W.shape[0]) if b is None else np.asarray(b, dtype=np.float64)
    return _finish(g, g.add("affine", g.add("leaf", name="x"), W="W", b="b"))


def quadratic(B) -> Graph:
    """``f(x) = 0.5 * ||B x||^2``; its Hessian is ``B^T B``."""
    B = np.atleast_2d(np.asarray(B, dtype=np.float64))
    g = Graph()
    h = _project(g, g.add("leaf", name="x"), B, "B")
    sq = g.add("mul", h, h)
    return _finish(g, _project(g, sq, 0.5 * np.ones((1, B.shape[0])), "half"))


def half_norm_squared(dim: int) -> Graph:
    return quadratic(np.eye(dim))


def norm_fourth(dim: int) -> Graph:
    """``f(x) = ||x||^4``."""
    g = Graph()
    x = g.add("leaf", name="x")
    s = _project(g, g.add("mul", x, x), np.ones((1, dim)), "ones")
    return _finish(g, g.add("mul", s, s))


def monomial(exponents) -> Graph:
    """``f(x) = prod_d x_d ** exponents[d]``."""
    exponents = [int(e) for e in exponents]
    dim = len(exponents)
    g = Graph()
    x = g.add("leaf", name="x")
    acc = None
    for d, e in enumerate(exponents):
        if e == 0:
            continue
        coord = _project(g, x, np.eye(dim)[d], f"e{d}")
        for _ in range(e):
            acc = coord if acc is None else g.add("mul", acc, coord)
    if acc is None:
        ones = _project(g, x, np.zeros(dim), "zero")
        acc = g.add("exp", ones)
    return _finish(g, acc)


def sin_plus_square() -> Graph:
    """``f(x) = sin(x_1) + x_2^2`` on R^2."""
    g = Graph()
    x = g.add("leaf", name="x")
    a = g.add("sin", _project(g, x, [1.0, 0.0], "e0"))
    c = _project(g, x, [0.0, 1.0], "e1")
    return _finish(g, g.add("add", a, g.add("mul", c, c)))


def random_function(rng: np.random.Generator, dim: int, width: int = 3, depth: int = 4) -> Graph:
    """Random graph mixing every primitive; inputs stay O(1) so ``exp`` is tame."""
    g = Graph()
    x = g.add("leaf", name="x")
    pool = [x]
    widths = {x: dim}
    n = 0

    def affine(h: int, out: int) -> int:
        nonlocal n
        W = rng.uniform(-1, 1, size=(out, widths[h])) / np.sqrt(widths[h])
        g.params[f"a{n}.W"], g.params[f"a{n}.b"] = W, rng.uniform(-0.5, 0.5, size=out)
        node = g.add("affine", h, W=f"a{n}.W", b=f"a{n}.b")
        n += 1
        widths[node] = out
        return node

    h = affine(x, width)
    pool = [h]
    for _ in range(depth):
        kind = rng.choice(["unary", "unary", "add", "mul", "scale", "neg", "affine", "linear", "poly"])
        a = pool[rng.integers(len(pool))]
        if kind == "unary":
            node = g.add(str(rng.choice(UNARY)), a)
        elif kind in ("add", "mul"):
            b = pool[rng.integers(len(pool))]
            if widths[b] != widths[a]:
                b = affine(b, widths[a])
            node = g.add(kind, a, b)
            if kind == "mul":
                node = g.add("tanh", node)
                widths[node] = widths[a]
        elif kind == "scale":
            node = g.add("scale", a, c=float(rng.uniform(-1.5, 1.5)))
        elif kind == "neg":
            node = g.add("neg", a)
        elif kind == "linear":
            g.params[f"m{n}.W"] = rng.uniform(-1, 1, size=(widths[a], widths[a])) / np.sqrt(widths[a])
            node = g.add("linear", a, W=f"m{n}.W")
            n += 1
        elif kind == "poly":
            node = g.add("poly", a, coeffs=tuple(float(c) for c in rng.uniform(-1, 1, size=rng.integers(2, 5))))
        else:
            node = g.add("tanh", affine(a, width))
        widths[node] = width if kind == "affine" else widths[a]
        pool.append(node)
    # always finish through sin and tanh so every run has nonlinear tops
    last = g.add("sin", g.add("tanh", pool[-1]))
    widths[last] = widths[pool[-1]]
    return _finish(g, affine(last, 2))
