"""Dense/sparse kernels shared by every other module.

Dense matrices are plain 2-D float64 ndarrays. Sparse matrices are CSR
(`SparseMatrix`). Everything here is a pure function; nothing mutates its
inputs, so all of it is safe to call from multiple threads.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class NormalizationUndefined(ValueError):
    """Symmetric edge normalization hit a node with incident weight sum <= 0.

    Happens with negative weights (e.g. adjacency built from reduced
    features). Use min-max edge scaling or post-aggregation standardization
    instead.
    """


def as_dense(values, n_rows=None, n_cols=None) -> np.ndarray:
    """Coerce to a C-contiguous float64 2-D array, optionally checking shape."""
    m = np.ascontiguousarray(values, dtype=np.float64)
    if m.ndim != 2:
        raise ValueError(f"expected a 2-D array, got ndim={m.ndim}")
    if n_rows is not None and m.shape != (n_rows, n_cols):
        raise ValueError(f"expected shape ({n_rows}, {n_cols}), got {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError("dense matrix contains NaN/Inf")
    return m


@dataclass
class SparseMatrix:
    """Compressed sparse row matrix over float64 values.

    row_offsets has length n_rows+1 and is non-decreasing; col_indices are
    strictly increasing within each row. Instances are treated as immutable
    after construction.
    """

    n_rows: int
    n_cols: int
    row_offsets: np.ndarray
    col_indices: np.ndarray
    values: np.ndarray
    _transpose_cache: "SparseMatrix | None" = field(
        default=None, repr=False, compare=False
    )
    _row_indices_cache: "np.ndarray | None" = field(
        default=None, repr=False, compare=False
    )
    _dense_cache: "np.ndarray | None" = field(
        default=None, repr=False, compare=False
    )

    def __post_init__(self):
        self.row_offsets = np.ascontiguousarray(self.row_offsets, dtype=np.int64)
        self.col_indices = np.ascontiguousarray(self.col_indices, dtype=np.int64)
        self.values = np.ascontiguousarray(self.values, dtype=np.float64)
        if self.row_offsets.shape != (self.n_rows + 1,):
            raise ValueError("row_offsets must have length n_rows+1")
        if self.row_offsets[0] != 0 or self.row_offsets[-1] != len(self.values):
            raise ValueError("row_offsets must start at 0 and end at nnz")
        if np.any(np.diff(self.row_offsets) < 0):
            raise ValueError("row_offsets must be non-decreasing")
        if len(self.col_indices) != len(self.values):
            raise ValueError("col_indices and values length mismatch")
        if len(self.col_indices) and (
            self.col_indices.min() < 0 or self.col_indices.max() >= self.n_cols
        ):
            raise ValueError("column index out of range")
        for r in range(self.n_rows):
            lo, hi = self.row_offsets[r], self.row_offsets[r + 1]
            if hi - lo > 1 and np.any(np.diff(self.col_indices[lo:hi]) <= 0):
                raise ValueError(f"columns not strictly increasing in row {r}")
        if len(self.values) and not np.all(np.isfinite(self.values)):
            raise ValueError("sparse values contain NaN/Inf")

    # -- constructors ------------------------------------------------------

    @classmethod
    def from_dense(cls, dense, tol: float = 0.0) -> "SparseMatrix":
        d = as_dense(dense)
        mask = np.abs(d) > tol
        rows, cols = np.nonzero(mask)
        return cls.from_coo(d.shape[0], d.shape[1], rows, cols, d[rows, cols])

    @classmethod
    def from_coo(cls, n_rows, n_cols, rows, cols, vals, sum_duplicates=True):
        """Build from triplets; duplicate (row, col) entries are summed."""
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        vals = np.asarray(vals, dtype=np.float64)
        if len(rows):
            order = np.lexsort((cols, rows))
            rows, cols, vals = rows[order], cols[order], vals[order]
            if sum_duplicates:
                keep = np.ones(len(rows), dtype=bool)
                keep[1:] = (rows[1:] != rows[:-1]) | (cols[1:] != cols[:-1])
                group = np.cumsum(keep) - 1
                summed = np.zeros(group[-1] + 1)
                np.add.at(summed, group, vals)
                rows, cols, vals = rows[keep], cols[keep], summed
        offsets = np.zeros(n_rows + 1, dtype=np.int64)
        np.add.at(offsets, rows + 1, 1)
        offsets = np.cumsum(offsets)
        return cls(n_rows, n_cols, offsets, cols, vals)

    @classmethod
    def identity(cls, n) -> "SparseMatrix":
        idx = np.arange(n, dtype=np.int64)
        return cls(n, n, np.arange(n + 1, dtype=np.int64), idx, np.ones(n))

    # -- views -------------------------------------------------------------

    @property
    def nnz(self) -> int:
        return len(self.values)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n_rows, self.n_cols)

    def row_indices(self) -> np.ndarray:
        """Row index of every stored entry (COO expansion of the offsets)."""
        if self._row_indices_cache is None:
            object.__setattr__(self, "_row_indices_cache", np.repeat(
                np.arange(self.n_rows, dtype=np.int64),
                np.diff(self.row_offsets)))
        return self._row_indices_cache

    def to_dense(self) -> np.ndarray:
        out = np.zeros((self.n_rows, self.n_cols))
        out[self.row_indices(), self.col_indices] = self.values
        return out

    # matrices this small are faster through BLAS than through the
    # gather/segment-sum path; the product is identical either way
    _DENSE_MATMUL_LIMIT = 1 << 22

    def _dense_for_matmul(self) -> "np.ndarray | None":
        if self.n_rows * self.n_cols > self._DENSE_MATMUL_LIMIT:
            return None
        if self._dense_cache is None:
            object.__setattr__(self, "_dense_cache", self.to_dense())
        return self._dense_cache

    def transpose(self) -> "SparseMatrix":
        """CSR transpose; cached, since training reuses it every step."""
        if self._transpose_cache is None:
            t = SparseMatrix.from_coo(
                self.n_cols,
                self.n_rows,
                self.col_indices,
                self.row_indices(),
                self.values,
                sum_duplicates=False,
            )
            object.__setattr__(self, "_transpose_cache", t)
        return self._transpose_cache

    def with_values(self, new_values) -> "SparseMatrix":
        """Same sparsity pattern, different values."""
        new_values = np.asarray(new_values, dtype=np.float64)
        if new_values.shape != self.values.shape:
            raise ValueError("value count must match the sparsity pattern")
        return SparseMatrix(
            self.n_rows, self.n_cols, self.row_offsets, self.col_indices, new_values
        )

    def row_sums(self) -> np.ndarray:
        out = np.zeros(self.n_rows)
        np.add.at(out, self.row_indices(), self.values)
        return out

    def column(self, j) -> np.ndarray:
        """Column j as a dense vector."""
        if not 0 <= j < self.n_cols:
            raise IndexError(f"column {j} out of range for {self.shape}")
        out = np.zeros(self.n_rows)
        hit = self.col_indices == j
        out[self.row_indices()[hit]] = self.values[hit]
        return out


def spmm(a: SparseMatrix, b: np.ndarray) -> np.ndarray:
    """Sparse @ dense with per-row accumulation (deterministic)."""
    b = np.asarray(b, dtype=np.float64)
    if b.ndim != 2 or a.n_cols != b.shape[0]:
        raise ValueError(
            f"shape mismatch in spmm: sparse {a.shape} @ dense {b.shape}"
        )
    dense = a._dense_for_matmul()
    if dense is not None:
        return dense @ b
    out = np.zeros((a.n_rows, b.shape[1]))
    if a.nnz == 0:
        return out
    contrib = a.values[:, None] * b[a.col_indices]
    nonempty = np.flatnonzero(np.diff(a.row_offsets))
    # reduceat over starts of non-empty rows: empty rows in between would
    # corrupt segment boundaries if passed directly.
    out[nonempty] = np.add.reduceat(contrib, a.row_offsets[nonempty], axis=0)
    return out


def symmetric_edge_normalize(endpoints_a, endpoints_b, weights, n_nodes):
    """Divide each undirected edge weight by sqrt(sum_a) * sqrt(sum_b).

    The sums are the incident-weight totals of the edge's two endpoints,
    with each edge listed once and counted at both ends. Node ids live in a
    single [0, n_nodes) space.
    """
    a = np.asarray(endpoints_a, dtype=np.int64)
    b = np.asarray(endpoints_b, dtype=np.int64)
    w = np.asarray(weights, dtype=np.float64)
    if not np.all(np.isfinite(w)):
        raise ValueError("edge weights must be finite")
    incident = np.zeros(n_nodes)
    np.add.at(incident, a, w)
    np.add.at(incident, b, w)
    touched = np.zeros(n_nodes, dtype=bool)
    touched[a] = True
    touched[b] = True
    if np.any(incident[touched] <= 0):
        raise NormalizationUndefined(
            "incident weight sum <= 0 on some node; symmetric normalization is "
            "undefined. Use min_max_scale on the edges or post-aggregation "
            "standardization instead."
        )
    return w / (np.sqrt(incident[a]) * np.sqrt(incident[b]))


def min_max_scale(values) -> np.ndarray:
    """Affine map onto [0, 1]; a constant array maps to all zeros."""
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        raise ValueError("min_max_scale needs a nonempty array")
    if not np.all(np.isfinite(v)):
        raise ValueError("min_max_scale needs finite values")
    lo, hi = v.min(), v.max()
    if hi == lo:
        return np.zeros_like(v)
    return (v - lo) / (hi - lo)


def standardize_rows(m: np.ndarray) -> np.ndarray:
    """Per-row mean 0 / population std 1; zero-variance rows become zeros."""
    m = as_dense(m)
    mean = m.mean(axis=1, keepdims=True)
    std = m.std(axis=1, keepdims=True)
    out = np.where(std > 0, (m - mean) / np.where(std > 0, std, 1.0), 0.0)
    return out


def l2_normalize_rows(m: np.ndarray) -> np.ndarray:
    """Unit Euclidean norm per row; all-zero rows stay zero."""
    m = as_dense(m)
    norms = np.linalg.norm(m, axis=1, keepdims=True)
    return np.where(norms > 0, m / np.where(norms > 0, norms, 1.0), 0.0)


def cosine_similarity_columns(m: SparseMatrix, i: int, j: int) -> float:
    """Cosine of columns i and j; 0 when either column is all zero."""
    ci, cj = m.column(i), m.column(j)
    ni, nj = np.linalg.norm(ci), np.linalg.norm(cj)
    if ni == 0 or nj == 0:
        return 0.0
    return float(ci @ cj / (ni * nj))


def tfidf(m: SparseMatrix) -> SparseMatrix:
    """TF-IDF weighting: row-normalized counts scaled by log(1 + N/(1+df)).

    Preserves the sparsity pattern exactly. Requires non-negative entries.
    """
    if m.nnz and m.values.min() < 0:
        raise ValueError("tfidf requires non-negative entries")
    row_totals = m.row_sums()
    rows = m.row_indices()
    denom = np.where(row_totals > 0, row_totals, 1.0)
    tf = m.values / denom[rows]
    df = np.zeros(m.n_cols)
    np.add.at(df, m.col_indices, (m.values != 0).astype(np.float64))
    idf = np.log(1.0 + m.n_rows / (1.0 + df))
    return m.with_values(tf * idf[m.col_indices])


def truncated_svd(m: SparseMatrix, rank: int, seed: int):
    """Top-`rank` left singular vectors and singular values, seeded.

    Randomized range finder (oversampling 8, power iterations with QR
    re-orthonormalization). Keeps iterating past the 2 baseline power steps
    until the singular values stabilize, so desk-scale results match a dense
    SVD to ~1e-9.

    Returns (U, s) with U of shape (n_rows, rank), s non-increasing.
    """
    if rank < 1 or rank > min(m.n_rows, m.n_cols):
        raise ValueError(
            f"rank must be in [1, min{m.shape}], got {rank}"
        )
    rng = np.random.default_rng(seed)
    width = min(rank + 8, min(m.n_rows, m.n_cols))
    mt = m.transpose()
    omega = rng.standard_normal((m.n_cols, width))
    q, _ = np.linalg.qr(spmm(m, omega))
    prev = None
    for it in range(40):
        q, _ = np.linalg.qr(spmm(m, spmm(mt, q)))
        b = spmm(mt, q).T  # q^T m, shape (width, n_cols)
        ub, s, _ = np.linalg.svd(b, full_matrices=False)
        if it >= 1 and prev is not None:  # two baseline power iterations
            denom = np.where(prev[:rank] > 0, prev[:rank], 1.0)
            if np.max(np.abs(s[:rank] - prev[:rank]) / denom) < 1e-9:
                break
        prev = s
    u = q @ ub[:, :rank]
    return u, s[:rank].copy()


def lsi_embedding(m: SparseMatrix, rank: int, seed: int) -> np.ndarray:
    """Latent semantic indexing coordinates: TF-IDF, then U * diag(s)."""
    u, s = truncated_svd(tfidf(m), rank, seed)
    return u * s
