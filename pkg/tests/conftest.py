import numpy as np
import pytest

from fillin.autodiff import Tape
from fillin.sparse import GraphView, SparseSymMatrix


def tridiagonal(n, diag=2.0, off=-1.0):
    D = np.diag(np.full(n, diag))
    if n > 1:
        D += np.diag(np.full(n - 1, off), 1) + np.diag(np.full(n - 1, off), -1)
    return SparseSymMatrix.from_dense(D)


def star(n, center=0):
    """Arrowhead pattern: ``center`` touches every other node."""
    D = np.eye(n) * n
    D[center, :] = D[:, center] = -1.0
    D[center, center] = float(n)
    return SparseSymMatrix.from_dense(D)


def from_edges(n, edges):
    D = np.eye(n) * (n + 1.0)
    for u, v in edges:
        D[u, v] = D[v, u] = -1.0
    return SparseSymMatrix.from_dense(D)


def random_tree_edges(n, rng):
    return [(int(rng.integers(0, v)), v) for v in range(1, n)]


def random_pattern_matrix(n, density, rng):
    """Random symmetric matrix with a nonzero diagonal (values irrelevant for fill)."""
    M = rng.random((n, n)) < density
    M = np.triu(M, 1)
    M = M | M.T
    D = np.where(M, -rng.uniform(0.1, 1.0, (n, n)), 0.0)
    D = np.triu(D, 1)
    D = D + D.T
    np.fill_diagonal(D, 1.0 + np.abs(D).sum(axis=1))
    return SparseSymMatrix.from_dense(D)


def two_cliques(k):
    edges = [(i, j) for i in range(k) for j in range(i + 1, k)]
    edges += [(k + i, k + j) for i in range(k) for j in range(i + 1, k)]
    edges.append((k - 1, k))
    return GraphView.from_edges(2 * k, edges)


def fd_gradient(f, x, h=1e-5):
    """Central differences of scalar ``f`` at array ``x``."""
    x = np.array(x, dtype=float)
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        xp, xm = x.copy(), x.copy()
        xp[idx] += h
        xm[idx] -= h
        g[idx] = (f(xp) - f(xm)) / (2 * h)
    return g


def tape_gradient(build, x):
    """Value and gradient of ``build(tensor)`` (a scalar tensor) at ``x``."""
    tape = Tape()
    p = tape.param(x)
    out = build(p)
    (g,) = tape.backward(out, [p])
    return float(out.value), g


def rel_err(g, g_ref):
    scale = max(np.linalg.norm(g_ref), 1e-8)
    return np.linalg.norm(np.asarray(g) - np.asarray(g_ref)) / scale


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# ---------------------------------------------------------------- acceptance summary

ACCEPTANCE: dict[int, list] = {}


def record_criterion(number, part, ok, detail):
    ACCEPTANCE.setdefault(number, []).append((part, bool(ok), detail))


def acceptance_lines():
    lines = []
    for number in sorted(ACCEPTANCE):
        parts = ACCEPTANCE[number]
        ok = all(p[1] for p in parts)
        body = "; ".join(f"{name}: {'ok' if good else 'FAILED'} ({detail})"
                         for name, good, detail in parts)
        lines.append(f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {body}")
    return lines


def pytest_terminal_summary(terminalreporter):
    lines = acceptance_lines()
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
