"""Baseline fill-reducing orderings.

All functions map a :class:`GraphView` to a :class:`Permutation` in the
``old_of_new`` convention.  Disconnected graphs are handled component by
component, components taken in ascending order of their smallest node.
"""
from __future__ import annotations

import enum
import heapq
import warnings
from collections import deque

import numpy as np
import scipy.linalg
import scipy.sparse as sp
from scipy.sparse.linalg import lobpcg

from .sparse import GraphView, Permutation

DENSE_EIG_MAX = 64
TIE_DECIMALS = 9


class OrderingMethod(str, enum.Enum):
    NATURAL = "natural"
    RCM = "rcm"
    MINIMUM_DEGREE = "md"
    FIEDLER = "fiedler"
    PFM = "pfm"


class EigenConvergenceError(RuntimeError):
    def __init__(self, residual: float, max_iter: int):
        super().__init__(
            f"Fiedler eigensolver did not converge in {max_iter} iterations "
            f"(best residual {residual:.3e})"
        )
        self.residual = residual


def natural(n: int) -> Permutation:
    return Permutation.identity(n)


# ---------------------------------------------------------------- Cuthill-McKee

def _bfs_levels(G: GraphView, start: int, allowed: np.ndarray) -> list[list[int]]:
    seen = {start}
    levels = [[start]]
    while True:
        nxt = []
        for v in levels[-1]:
            for w in G.neighbors(v):
                w = int(w)
                if allowed[w] and w not in seen:
                    seen.add(w)
                    nxt.append(w)
        if not nxt:
            return levels
        levels.append(nxt)


def pseudo_peripheral_node(G: GraphView, component: np.ndarray) -> int:
    """Repeated BFS from a minimum-degree node until eccentricity stops growing."""
    deg = G.degree
    allowed = np.zeros(G.n, dtype=bool)
    allowed[component] = True
    v = int(component[np.argmin(deg[component])])
    levels = _bfs_levels(G, v, allowed)
    while True:
        last = levels[-1]
        w = min(last, key=lambda u: (deg[u], u))
        cand = _bfs_levels(G, w, allowed)
        if len(cand) <= len(levels):
            return v
        v, levels = w, cand


def cuthill_mckee(G: GraphView) -> Permutation:
    deg = G.degree
    order: list[int] = []
    visited = np.zeros(G.n, dtype=bool)
    for comp in G.components():
        start = pseudo_peripheral_node(G, comp)
        visited[start] = True
        queue = deque([start])
        while queue:
            v = queue.popleft()
            order.append(v)
            nbrs = [int(w) for w in G.neighbors(v) if not visited[w]]
            nbrs.sort(key=lambda u: (deg[u], u))
            for w in nbrs:
                visited[w] = True
                queue.append(w)
    return Permutation(np.array(order, dtype=np.int64))


def reverse_cuthill_mckee(G: GraphView) -> Permutation:
    return cuthill_mckee(G).reversed()


# ---------------------------------------------------------------- minimum degree

def minimum_degree(G: GraphView) -> Permutation:
    """Exact greedy minimum degree on the elimination graph.

    Ties go to the smallest node index.  A lazy heap keyed by
    ``(degree, index)`` tracks candidates; stale entries are skipped.
    """
    adj = [set(int(w) for w in G.neighbors(v)) for v in range(G.n)]
    heap = [(len(adj[v]), v) for v in range(G.n)]
    heapq.heapify(heap)
    eliminated = np.zeros(G.n, dtype=bool)
    order = []
    while heap:
        d, v = heapq.heappop(heap)
        if eliminated[v] or d != len(adj[v]):
            continue
        eliminated[v] = True
        order.append(v)
        nbrs = adj[v]
        for u in nbrs:
            adj[u].discard(v)
            adj[u].update(nbrs)
            adj[u].discard(u)
            heapq.heappush(heap, (len(adj[u]), u))
        adj[v] = set()
    return Permutation(np.array(order, dtype=np.int64))


# ---------------------------------------------------------------- spectral

def _orient(x: np.ndarray) -> np.ndarray:
    # fixes the eigenvector sign: positive correlation with node index
    idx = np.arange(len(x)) - (len(x) - 1) / 2.0
    s = float(idx @ x)
    if abs(s) < 1e-12:
        k = int(np.argmax(np.abs(x)))
        s = x[k]
    return -x if s < 0 else x


def fiedler_vector(G: GraphView, tol: float = 1e-6, max_iter: int = 5000,
                   weighted: bool = False) -> np.ndarray:
    """Per-component Fiedler vectors of the combinatorial Laplacian.

    Each component's vector is unit-norm and orthogonal to the constant
    vector on that component.  Singleton components get 0; two-node
    components get ``[-1, 1] / sqrt(2)``.
    """
    x = np.zeros(G.n)
    Lfull = G.laplacian(weighted=weighted)
    for comp in G.components():
        m = len(comp)
        if m == 1:
            continue
        Lc = Lfull[comp][:, comp]
        x[comp] = _orient(_component_fiedler(Lc, tol, max_iter))
    return x


def _component_fiedler(Lc: sp.csr_matrix, tol: float, max_iter: int) -> np.ndarray:
    m = Lc.shape[0]
    if m <= DENSE_EIG_MAX:
        _, vecs = scipy.linalg.eigh(Lc.toarray(), subset_by_index=[1, 1])
        v = vecs[:, 0]
        return v / np.linalg.norm(v)

    ones = np.ones((m, 1)) / np.sqrt(m)
    rng = np.random.default_rng(m)
    k = 3
    X0 = rng.standard_normal((m, k))
    X0 -= ones @ (ones.T @ X0)
    # Jacobi preconditioner on the deflated operator
    d = Lc.diagonal().copy()
    d[d == 0] = 1.0
    M = sp.diags(1.0 / d)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)
        vals, vecs = lobpcg(Lc, X0, M=M, Y=ones, tol=tol / 10, maxiter=max_iter, largest=False)
    j = int(np.argmin(vals))
    v = vecs[:, j]
    v -= ones[:, 0] * (ones[:, 0] @ v)
    v /= np.linalg.norm(v)
    lam = float(v @ (Lc @ v))
    resid = float(np.linalg.norm(Lc @ v - lam * v))
    if resid > tol:
        raise EigenConvergenceError(resid, max_iter)
    return v


def fiedler_ordering(G: GraphView, tol: float = 1e-6, max_iter: int = 5000,
                     weighted: bool = False) -> Permutation:
    """Ascending Fiedler value within each component, ties by node index.

    Values are rounded to ``TIE_DECIMALS`` so that entries equal up to
    solver noise fall back to the index tie-break.
    """
    x = fiedler_vector(G, tol=tol, max_iter=max_iter, weighted=weighted)
    order = []
    for comp in G.components():
        keys = np.round(x[comp], TIE_DECIMALS)
        order.extend(comp[np.lexsort((comp, keys))].tolist())
    return Permutation(np.array(order, dtype=np.int64))


def order(G: GraphView, method: str | OrderingMethod) -> Permutation:
    """Dispatch for the graph-only methods (PFM needs a trained model)."""
    method = OrderingMethod(method)
    if method is OrderingMethod.NATURAL:
        return natural(G.n)
    if method is OrderingMethod.RCM:
        return reverse_cuthill_mckee(G)
    if method is OrderingMethod.MINIMUM_DEGREE:
        return minimum_degree(G)
    if method is OrderingMethod.FIEDLER:
        return fiedler_ordering(G)
    raise ValueError("the pfm method requires a trained checkpoint; use fillin.pfm.infer_ordering")
