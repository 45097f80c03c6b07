"""Sparse symmetric matrices, permutations and their graph view.

Matrices are kept in full symmetric CSR storage (both triangles plus the
diagonal).  Permutations always use the ``old_of_new`` convention:
``old_of_new[i]`` is the original index placed at new position ``i``, so the
permuted matrix satisfies ``B[i, j] = A[old_of_new[i], old_of_new[j]]``.
"""
from __future__ import annotations

import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np
import scipy.sparse as sp

MAX_GENERATED_N = 4_000_000
SYMMETRY_RTOL = 1e-12


class MatrixFormatError(ValueError):
    """Raised for malformed or unsupported matrix input."""


class PermutationError(ValueError):
    """Raised for non-bijective or mis-sized permutations."""


@dataclass(frozen=True, eq=False)
class SparseSymMatrix:
    n: int
    row_ptr: np.ndarray
    col_idx: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        for arr in (self.row_ptr, self.col_idx, self.values):
            arr.setflags(write=False)

    @property
    def nnz(self) -> int:
        return int(self.row_ptr[-1])

    @classmethod
    def from_scipy(cls, M, validate: bool = True) -> "SparseSymMatrix":
        """Build from any scipy sparse matrix holding full symmetric storage."""
        M = sp.csr_matrix(M, dtype=np.float64)
        M.sum_duplicates()
        M.sort_indices()
        out = cls(
            n=M.shape[0],
            row_ptr=np.asarray(M.indptr, dtype=np.int64).copy(),
            col_idx=np.asarray(M.indices, dtype=np.int64).copy(),
            values=np.asarray(M.data, dtype=np.float64).copy(),
        )
        if validate:
            out.validate()
        return out

    @classmethod
    def from_dense(cls, D: np.ndarray, validate: bool = True) -> "SparseSymMatrix":
        D = np.asarray(D, dtype=np.float64)
        rows, cols = np.nonzero(D)
        M = sp.csr_matrix((D[rows, cols], (rows, cols)), shape=D.shape)
        return cls.from_scipy(M, validate=validate)

    def to_scipy(self) -> sp.csr_matrix:
        return sp.csr_matrix(
            (self.values.copy(), self.col_idx.copy(), self.row_ptr.copy()),
            shape=(self.n, self.n),
        )

    def to_dense(self) -> np.ndarray:
        return self.to_scipy().toarray()

    def row(self, i: int) -> np.ndarray:
        return self.col_idx[self.row_ptr[i]:self.row_ptr[i + 1]]

    def pattern(self) -> np.ndarray:
        """Dense boolean structural pattern."""
        P = np.zeros((self.n, self.n), dtype=bool)
        rows = np.repeat(np.arange(self.n), np.diff(self.row_ptr))
        P[rows, self.col_idx] = True
        return P

    def validate(self) -> None:
        n = self.n
        if n < 1:
            raise MatrixFormatError("empty matrix")
        if len(self.row_ptr) != n + 1 or self.row_ptr[0] != 0:
            raise MatrixFormatError("row_ptr has wrong length or origin")
        if np.any(np.diff(self.row_ptr) < 0):
            raise MatrixFormatError("row_ptr is not monotone")
        if len(self.col_idx) != self.nnz or len(self.values) != self.nnz:
            raise MatrixFormatError("col_idx/values length does not match nnz")
        if self.nnz and (self.col_idx.min() < 0 or self.col_idx.max() >= n):
            raise MatrixFormatError("column index out of range")
        for i in range(n):
            cols = self.row(i)
            if len(cols) > 1 and np.any(np.diff(cols) <= 0):
                raise MatrixFormatError(f"row {i}: column indices not strictly increasing")
        A = self.to_scipy()
        diag = A.diagonal()
        has_diag = np.zeros(n, dtype=bool)
        rows = np.repeat(np.arange(n), np.diff(self.row_ptr))
        has_diag[rows[rows == self.col_idx]] = True
        missing = np.flatnonzero(~has_diag)
        if missing.size:
            raise MatrixFormatError(f"missing diagonal entries at rows {missing[:10].tolist()}")
        zero_diag = np.flatnonzero(diag == 0.0)
        if zero_diag.size:
            raise MatrixFormatError(f"zero diagonal entries at rows {zero_diag[:10].tolist()}")
        AT = A.T.tocsr()
        AT.sort_indices()
        if not (np.array_equal(AT.indptr, A.indptr) and np.array_equal(AT.indices, A.indices)):
            raise MatrixFormatError("matrix is structurally asymmetric")
        diff = np.abs(AT.data - A.data)
        scale = np.maximum(np.abs(A.data), np.abs(AT.data))
        if np.any(diff > SYMMETRY_RTOL * scale):
            raise MatrixFormatError("matrix values are not symmetric")


@dataclass(frozen=True, eq=False)
class Permutation:
    old_of_new: np.ndarray
    new_of_old: np.ndarray = field(init=False)

    def __post_init__(self):
        p = np.asarray(self.old_of_new, dtype=np.int64).copy()
        if p.ndim != 1:
            raise PermutationError("permutation must be one-dimensional")
        n = len(p)
        if n and (p.min() < 0 or p.max() >= n or len(np.unique(p)) != n):
            raise PermutationError("permutation is not a bijection on 0..n-1")
        inv = np.empty(n, dtype=np.int64)
        inv[p] = np.arange(n)
        p.setflags(write=False)
        inv.setflags(write=False)
        object.__setattr__(self, "old_of_new", p)
        object.__setattr__(self, "new_of_old", inv)

    @property
    def n(self) -> int:
        return len(self.old_of_new)

    @classmethod
    def identity(cls, n: int) -> "Permutation":
        return cls(np.arange(n))

    def compose(self, other: "Permutation") -> "Permutation":
        """Return ``self ∘ other``: apply ``other`` first, then ``self``."""
        if self.n != other.n:
            raise PermutationError("cannot compose permutations of different sizes")
        return Permutation(other.old_of_new[self.old_of_new])

    def reversed(self) -> "Permutation":
        return Permutation(self.old_of_new[::-1])

    def matrix(self) -> np.ndarray:
        """Dense permutation matrix with ``P[i, old_of_new[i]] = 1``."""
        P = np.zeros((self.n, self.n))
        P[np.arange(self.n), self.old_of_new] = 1.0
        return P

    def __eq__(self, other) -> bool:
        return isinstance(other, Permutation) and np.array_equal(self.old_of_new, other.old_of_new)

    def __hash__(self):
        return hash(self.old_of_new.tobytes())

    def __repr__(self) -> str:
        return f"Permutation({self.old_of_new.tolist()})"


@dataclass(frozen=True, eq=False)
class GraphView:
    """Undirected adjacency of the off-diagonal structure.

    ``adj_ptr``/``adj_idx`` are CSR-style neighbor lists sorted by index;
    ``weights`` holds ``|a_ij|`` for each listed edge.
    """

    n: int
    adj_ptr: np.ndarray
    adj_idx: np.ndarray
    weights: np.ndarray

    @property
    def degree(self) -> np.ndarray:
        return np.diff(self.adj_ptr)

    @property
    def num_edges(self) -> int:
        return len(self.adj_idx) // 2

    def neighbors(self, v: int) -> np.ndarray:
        return self.adj_idx[self.adj_ptr[v]:self.adj_ptr[v + 1]]

    def neighbor_weights(self, v: int) -> np.ndarray:
        return self.weights[self.adj_ptr[v]:self.adj_ptr[v + 1]]

    def adjacency(self) -> sp.csr_matrix:
        return sp.csr_matrix(
            (self.weights, self.adj_idx, self.adj_ptr), shape=(self.n, self.n)
        )

    def laplacian(self, weighted: bool = False) -> sp.csr_matrix:
        W = self.adjacency()
        if not weighted:
            W = W.copy()
            W.data[:] = 1.0
        d = np.asarray(W.sum(axis=1)).ravel()
        return (sp.diags(d) - W).tocsr()

    def components(self) -> list[np.ndarray]:
        """Connected components, each sorted, ordered by smallest member."""
        ncomp, labels = sp.csgraph.connected_components(self.adjacency(), directed=False)
        comps = [np.flatnonzero(labels == c) for c in range(ncomp)]
        comps.sort(key=lambda c: c[0])
        return comps

    @classmethod
    def from_edges(cls, n: int, edges: Iterable[tuple[int, int]], weights=None) -> "GraphView":
        edges = list(edges)
        w = np.ones(len(edges)) if weights is None else np.asarray(weights, dtype=float)
        if edges:
            u, v = np.array(edges, dtype=np.int64).T
        else:
            u = v = np.zeros(0, dtype=np.int64)
        M = sp.coo_matrix((np.r_[w, w], (np.r_[u, v], np.r_[v, u])), shape=(n, n)).tocsr()
        M.sum_duplicates()
        M.sort_indices()
        return cls(n, M.indptr.astype(np.int64), M.indices.astype(np.int64), M.data.astype(float))


def apply_permutation(A: SparseSymMatrix, p: Permutation) -> SparseSymMatrix:
    if p.n != A.n:
        raise PermutationError(f"permutation of size {p.n} does not match matrix of size {A.n}")
    M = A.to_scipy()[p.old_of_new][:, p.old_of_new]
    return SparseSymMatrix.from_scipy(M, validate=False)


def to_graph(A: SparseSymMatrix) -> GraphView:
    M = A.to_scipy().tocoo()
    off = M.row != M.col
    G = sp.csr_matrix((np.abs(M.data[off]), (M.row[off], M.col[off])), shape=(A.n, A.n))
    G.sort_indices()
    return GraphView(A.n, G.indptr.astype(np.int64), G.indices.astype(np.int64), G.data.astype(float))


# ---------------------------------------------------------------- Matrix Market

def parse_matrix_market(source) -> SparseSymMatrix:
    """Parse a coordinate-format Matrix Market stream, path or bytes."""
    if isinstance(source, (str, Path)):
        text = Path(source).read_text()
    elif isinstance(source, bytes):
        text = source.decode()
    elif hasattr(source, "read"):
        data = source.read()
        text = data.decode() if isinstance(data, bytes) else data
    else:
        raise TypeError(f"unsupported source type {type(source).__name__}")

    lines = text.splitlines()
    if not lines:
        raise MatrixFormatError("empty input")
    header = lines[0].split()
    if len(header) < 5 or header[0].lower() != "%%matrixmarket":
        raise MatrixFormatError("missing %%MatrixMarket header")
    obj, fmt, field_, symm = (h.lower() for h in header[1:5])
    if obj != "matrix" or fmt != "coordinate":
        raise MatrixFormatError("only 'matrix coordinate' files are supported")
    if field_ not in ("real", "integer"):
        raise MatrixFormatError(f"unsupported field '{field_}'")
    if symm not in ("symmetric", "general"):
        raise MatrixFormatError(f"unsupported symmetry '{symm}'")

    body = (ln for ln in lines[1:] if ln.strip() and not ln.lstrip().startswith("%"))
    try:
        size = next(body).split()
        nrows, ncols, nentries = int(size[0]), int(size[1]), int(size[2])
    except (StopIteration, ValueError, IndexError):
        raise MatrixFormatError("malformed size line") from None
    if nrows != ncols:
        raise MatrixFormatError("matrix is not square")
    if nrows < 1 or nentries < 1:
        raise MatrixFormatError("empty matrix")

    rows = np.empty(nentries, dtype=np.int64)
    cols = np.empty(nentries, dtype=np.int64)
    vals = np.empty(nentries)
    count = 0
    for ln in body:
        if count >= nentries:
            raise MatrixFormatError("more entries than declared")
        parts = ln.split()
        try:
            i, j, v = int(parts[0]), int(parts[1]), float(parts[2])
        except (ValueError, IndexError):
            raise MatrixFormatError(f"malformed entry line: {ln!r}") from None
        if not (1 <= i <= nrows and 1 <= j <= ncols):
            raise MatrixFormatError(f"index ({i},{j}) out of range for {nrows}x{ncols} matrix")
        rows[count], cols[count], vals[count] = i - 1, j - 1, v
        count += 1
    if count != nentries:
        raise MatrixFormatError(f"expected {nentries} entries, found {count}")

    if symm == "symmetric":
        off = rows != cols
        rows, cols, vals = np.r_[rows, cols[off]], np.r_[cols, rows[off]], np.r_[vals, vals[off]]
    M = sp.coo_matrix((vals, (rows, cols)), shape=(nrows, nrows)).tocsr()
    return SparseSymMatrix.from_scipy(M)


def write_matrix_market(A: SparseSymMatrix, sink) -> None:
    """Write the lower triangle in symmetric coordinate format."""
    M = sp.tril(A.to_scipy()).tocoo()
    order = np.lexsort((M.row, M.col))
    buf = io.StringIO()
    buf.write("%%MatrixMarket matrix coordinate real symmetric\n")
    buf.write(f"{A.n} {A.n} {M.nnz}\n")
    for k in order:
        buf.write(f"{M.row[k] + 1} {M.col[k] + 1} {float(M.data[k])!r}\n")
    _write_text(buf.getvalue(), sink)


# ---------------------------------------------------------------- permutation files

def write_permutation(p: Permutation, sink) -> None:
    _write_text("".join(f"{int(i)}\n" for i in p.old_of_new), sink)


def read_permutation(source) -> Permutation:
    if isinstance(source, (str, Path)):
        text = Path(source).read_text()
    elif hasattr(source, "read"):
        text = source.read()
    else:
        text = str(source)
    try:
        values = [int(tok) for tok in text.split()]
    except ValueError:
        raise PermutationError("permutation file contains non-integer content") from None
    return Permutation(np.array(values, dtype=np.int64))


def _write_text(text: str, sink) -> None:
    if isinstance(sink, (str, Path)):
        Path(sink).write_text(text)
    else:
        sink.write(text)


# ---------------------------------------------------------------- generators

def generate_grid_laplacian(rows: int, cols: int, max_n: int = MAX_GENERATED_N) -> SparseSymMatrix:
    """5-point Laplacian shifted by the identity (diagonal = degree + 1).

    Node ``(r, c)`` has index ``r * cols + c``.
    """
    if rows < 1 or cols < 1:
        raise ValueError("grid dimensions must be >= 1")
    n = rows * cols
    if n > max_n:
        raise ValueError(f"grid of {n} nodes exceeds the configured maximum {max_n}")
    idx = np.arange(n).reshape(rows, cols)
    horiz = np.stack([idx[:, :-1].ravel(), idx[:, 1:].ravel()], axis=1)
    vert = np.stack([idx[:-1, :].ravel(), idx[1:, :].ravel()], axis=1)
    edges = np.concatenate([horiz, vert])
    u, v = edges[:, 0], edges[:, 1]
    W = sp.coo_matrix((np.ones(2 * len(u)), (np.r_[u, v], np.r_[v, u])), shape=(n, n)).tocsr()
    deg = np.asarray(W.sum(axis=1)).ravel()
    return SparseSymMatrix.from_scipy(sp.diags(deg + 1.0) - W)


def generate_random_spd(n: int, density: float, seed: int) -> SparseSymMatrix:
    """Random symmetric pattern, diagonally dominant values.

    Off-diagonal pairs are drawn so the stored entry count is close to
    ``density * n**2``; the diagonal is ``1 + sum |off-diagonal|`` per row.
    """
    if not (0.0 < density <= 1.0):
        raise ValueError("density must lie in (0, 1]")
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    iu, ju = np.triu_indices(n, k=1)
    npairs = len(iu)
    target = max(0.0, density * n * n - n) / 2.0
    k = min(npairs, int(round(target)))
    chosen = rng.choice(npairs, size=k, replace=False) if k else np.zeros(0, dtype=np.int64)
    chosen.sort()
    u, v = iu[chosen], ju[chosen]
    w = -rng.uniform(0.1, 1.0, size=k)
    W = sp.coo_matrix((np.r_[w, w], (np.r_[u, v], np.r_[v, u])), shape=(n, n)).tocsr()
    diag = 1.0 + np.asarray(abs(W).sum(axis=1)).ravel()
    return SparseSymMatrix.from_scipy(sp.diags(diag) + W)
