"""Structural fill-in of no-pivot Cholesky under a given ordering.

``symbolic_fill`` simulates elimination on the graph; ``brute_force_fill``
runs dense Boolean Gaussian elimination and exists only as an independent
check of the former.  Numerical cancellation is ignored throughout.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from .sparse import Permutation, PermutationError, SparseSymMatrix, apply_permutation

ORACLE_MAX_N = 512
PIVOT_TOL = 1e-12


class OracleBoundError(ValueError):
    pass


class NotSPDError(ArithmeticError):
    def __init__(self, pivot: int, value: float):
        super().__init__(f"matrix is not positive definite: pivot {pivot} = {value:.3e}")
        self.pivot = pivot
        self.value = value


@dataclass(frozen=True)
class FillReport:
    nnz_A: int
    nnz_L: int
    fill_count: int
    fill_ratio: float

    @classmethod
    def from_counts(cls, n: int, nnz_A: int, nnz_L: int) -> "FillReport":
        fill = 2 * nnz_L - n - nnz_A
        return cls(nnz_A=nnz_A, nnz_L=nnz_L, fill_count=fill, fill_ratio=fill / nnz_A)

    def to_json(self) -> str:
        return json.dumps(asdict(self))


@dataclass(frozen=True)
class FactorPattern:
    """Row indices of each column of L, diagonal included, ascending."""

    n: int
    columns: tuple

    @property
    def nnz(self) -> int:
        return sum(len(c) for c in self.columns)

    def dense(self) -> np.ndarray:
        P = np.zeros((self.n, self.n), dtype=bool)
        for j, rows in enumerate(self.columns):
            P[rows, j] = True
        return P

    def report(self, A: SparseSymMatrix) -> FillReport:
        return FillReport.from_counts(self.n, A.nnz, self.nnz)


def _permuted(A: SparseSymMatrix, p: Permutation | None) -> SparseSymMatrix:
    if p is None:
        return A
    if p.n != A.n:
        raise PermutationError(f"permutation of size {p.n} does not match matrix of size {A.n}")
    return apply_permutation(A, p)


def symbolic_fill(A: SparseSymMatrix, p: Permutation | None = None) -> FillReport:
    """Exact structural fill via elimination-graph simulation.

    At step ``k`` the not-yet-eliminated neighbors of ``k`` become a clique;
    the column of L at ``k`` is ``k`` plus exactly those neighbors.
    """
    B = _permuted(A, p)
    n = B.n
    later = [set(int(j) for j in B.row(i) if j > i) for i in range(n)]
    # only edges to later nodes are kept: eliminated nodes never matter again
    nnz_L = n
    for k in range(n):
        nbrs = later[k]
        nnz_L += len(nbrs)
        if len(nbrs) < 2:
            continue
        ordered = sorted(nbrs)
        for idx, u in enumerate(ordered[:-1]):
            later[u].update(ordered[idx + 1:])
        later[k] = set()
    return FillReport.from_counts(n, A.nnz, nnz_L)


def factor_pattern(A: SparseSymMatrix, p: Permutation | None = None) -> FactorPattern:
    """Column structure of L via the same elimination-graph simulation."""
    B = _permuted(A, p)
    n = B.n
    later = [set(int(j) for j in B.row(i) if j > i) for i in range(n)]
    cols = []
    for k in range(n):
        ordered = sorted(later[k])
        cols.append(np.array([k] + ordered, dtype=np.int64))
        for idx, u in enumerate(ordered[:-1]):
            later[u].update(ordered[idx + 1:])
    return FactorPattern(n, tuple(cols))


def brute_force_fill(A: SparseSymMatrix, p: Permutation | None = None,
                     max_n: int = ORACLE_MAX_N) -> FactorPattern:
    """Dense Boolean elimination on the permuted pattern (independent oracle)."""
    if A.n > max_n:
        raise OracleBoundError(f"n={A.n} exceeds brute-force oracle bound {max_n}")
    if p is not None and p.n != A.n:
        raise PermutationError(f"permutation of size {p.n} does not match matrix of size {A.n}")
    pat = A.pattern()
    if p is not None:
        pat = pat[np.ix_(p.old_of_new, p.old_of_new)]
    n = A.n
    for k in range(n):
        rows = pat[k + 1:, k]
        cols = pat[k, k + 1:]
        pat[k + 1:, k + 1:] |= np.outer(rows, cols)
    lower = np.tril(pat)
    return FactorPattern(n, tuple(np.flatnonzero(lower[:, j]) for j in range(n)))


def dense_cholesky(A: np.ndarray, tol: float = PIVOT_TOL) -> np.ndarray:
    """Left-looking Cholesky; raises NotSPDError with the failing pivot."""
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError("dense_cholesky expects a square matrix")
    n = A.shape[0]
    L = np.zeros_like(A)
    for j in range(n):
        d = A[j, j] - L[j, :j] @ L[j, :j]
        if not d > tol:
            raise NotSPDError(j, float(d))
        L[j, j] = np.sqrt(d)
        L[j + 1:, j] = (A[j + 1:, j] - L[j + 1:, :j] @ L[j, :j]) / L[j, j]
    return L
