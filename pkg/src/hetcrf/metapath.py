"""PathSim similarity, top-K neighbor filtering, symmetric normalization,
attention-weighted fusion, and the meta-path-connection-count positive
sample machinery.

All operations are pure functions over SparseAdj / dense arrays.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from .errors import ConfigError
from .graph import SparseAdj


class PosMatrix:
    """Sparse boolean positive-pair matrix over target nodes.

    Row i lists the positive set of anchor i; the diagonal is always true
    (each node is its own positive).
    """

    __slots__ = ("mat",)

    def __init__(self, mat):
        m = sp.csr_matrix(mat, dtype=np.float64)
        m.setdiag(1.0)
        m.data = (m.data > 0).astype(np.float64)
        m.eliminate_zeros()
        m.sort_indices()
        self.mat = m

    @classmethod
    def identity(cls, n):
        return cls(sp.identity(n, format="csr"))

    @property
    def n(self):
        return self.mat.shape[0]

    def positives(self, i):
        s, e = self.mat.indptr[i], self.mat.indptr[i + 1]
        return self.mat.indices[s:e]

    def to_dense(self):
        return np.asarray(self.mat.todense()) > 0

    def equals(self, other):
        return self.n == other.n and (self.mat != other.mat).nnz == 0


def pathsim_matrix(counts: SparseAdj, diagnostics: dict | None = None) -> SparseAdj:
    """PS(i, j) = 2 c_ij / (c_ii + c_jj) on the sparse support of the
    path-count matrix; pairs with c_ii + c_jj = 0 get PS = 0.
    """
    m = counts.mat.tocoo()
    diag = counts.mat.diagonal()
    denom = diag[m.row] + diag[m.col]
    bad = denom <= 0
    if diagnostics is not None:
        diagnostics["degenerate_pairs"] = int(bad.sum())
    vals = np.where(bad, 0.0, 2.0 * m.data / np.where(bad, 1.0, denom))
    out = sp.coo_matrix((vals, (m.row, m.col)), shape=counts.shape)
    return SparseAdj(out)


def topk_filter(sim: SparseAdj, k_sim: int) -> SparseAdj:
    """Keep the K largest off-diagonal scores per row (ties to the smaller
    column index). Row-wise: the result is not symmetrized.
    """
    if k_sim < 1:
        raise ConfigError(f"K_sim must be >= 1, got {k_sim}")
    rows, cols, vals = [], [], []
    for i in range(sim.shape[0]):
        idx, w = sim.row(i)
        keep = (idx != i) & (w > 0)
        idx, w = idx[keep], w[keep]
        if len(idx) > k_sim:
            # stable sort on index, then stable descending sort on score
            order = np.argsort(-w, kind="stable")[:k_sim]
            idx, w = idx[order], w[order]
        rows.extend([i] * len(idx))
        cols.extend(idx.tolist())
        vals.extend(w.tolist())
    return SparseAdj(sp.coo_matrix((vals, (rows, cols)), shape=sim.shape))


def sym_normalize(adj: SparseAdj) -> SparseAdj:
    """D^{-1/2} A D^{-1/2} with D_ii the weighted row sum; zero-degree rows
    stay zero."""
    deg = np.asarray(adj.mat.sum(axis=1)).ravel()
    inv = np.zeros_like(deg)
    nz = deg > 0
    inv[nz] = 1.0 / np.sqrt(deg[nz])
    d = sp.diags(inv)
    return SparseAdj(d @ adj.mat @ d)


def fuse_adjacency(norm_adjs: list, alpha) -> SparseAdj:
    """Entrywise weighted sum of normalized similarity adjacencies."""
    alpha = np.asarray(alpha, dtype=np.float64)
    if len(norm_adjs) != len(alpha):
        raise ConfigError("one weight per adjacency required")
    shape = norm_adjs[0].shape
    acc = None
    for a, adj in zip(alpha, norm_adjs):
        if adj.shape != shape:
            raise ConfigError(f"shape mismatch {adj.shape} vs {shape}")
        term = a * adj.mat
        acc = term if acc is None else acc + term
    return SparseAdj(acc)


def metapath_connection_counts(metapath_adjs: list) -> SparseAdj:
    """C_i(j) = number of meta-paths under which j neighbors i; diagonal
    excluded."""
    acc = None
    for adj in metapath_adjs:
        b = adj.boolean().mat
        acc = b if acc is None else acc + b
    return SparseAdj(acc).without_diagonal()


def build_positive_matrix(counts: SparseAdj, t_pos: int) -> PosMatrix:
    """Per anchor, the T_pos neighbors with the most connecting meta-paths
    (descending count, ties to smaller index), plus self."""
    if t_pos < 1:
        raise ConfigError(f"T_pos must be >= 1, got {t_pos}")
    rows, cols = [], []
    for i in range(counts.shape[0]):
        idx, w = counts.row(i)
        keep = idx != i
        idx, w = idx[keep], w[keep]
        if len(idx) > t_pos:
            order = np.argsort(-w, kind="stable")[:t_pos]
            idx = idx[order]
        rows.extend([i] * len(idx))
        cols.extend(idx.tolist())
    n = counts.shape[0]
    base = sp.coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
    return PosMatrix(base)


def khop_combine(p: PosMatrix, k: int) -> PosMatrix:
    """OR of the 1..k-hop boolean powers of the positive matrix."""
    if k < 1:
        raise ConfigError(f"hop count k must be >= 1, got {k}")
    base = p.mat
    acc = base.copy()
    cur = base
    for _ in range(1, k):
        cur = cur @ base
        cur.data = (cur.data > 0).astype(np.float64)
        acc = acc + cur
    return PosMatrix(acc)
