"""Seeded Lloyd k-means and the cluster-based positive augmentation:
per-cluster deviated-node selection by mean cosine distance to the rest of
the graph, merged into every cluster member's positive set."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import ConfigError
from .metapath import PosMatrix


@dataclass
class Clustering:
    assignments: np.ndarray   # cluster index per node
    centroids: np.ndarray
    seed: int
    n_iter: int

    @property
    def n_clusters(self):
        return self.centroids.shape[0]

    def members(self, k):
        return np.nonzero(self.assignments == k)[0]


def _kmeanspp_init(h, s, rng):
    n = h.shape[0]
    centers = np.empty((s, h.shape[1]))
    first = rng.integers(n)
    centers[0] = h[first]
    d2 = np.sum((h - centers[0]) ** 2, axis=1)
    for k in range(1, s):
        total = d2.sum()
        if total <= 0:
            idx = rng.integers(n)
        else:
            idx = int(np.searchsorted(np.cumsum(d2 / total), rng.random()))
            idx = min(idx, n - 1)
        centers[k] = h[idx]
        d2 = np.minimum(d2, np.sum((h - centers[k]) ** 2, axis=1))
    return centers


def kmeans(h: np.ndarray, s: int, seed: int, max_iter: int = 100) -> Clustering:
    """Lloyd's algorithm with seeded k-means++ init; empty clusters are
    re-seeded from the point farthest from its centroid."""
    h = np.asarray(h, dtype=np.float64)
    n = h.shape[0]
    if s > n:
        raise ConfigError(f"S={s} clusters exceed {n} points")
    if s < 1:
        raise ConfigError("S must be >= 1")
    if not np.all(np.isfinite(h)):
        raise ConfigError("kmeans requires finite rows")
    rng = np.random.default_rng(seed)
    centers = _kmeanspp_init(h, s, rng)
    assign = np.zeros(n, dtype=np.int64)
    it = 0
    for it in range(1, max_iter + 1):
        d2 = ((h[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        new_assign = d2.argmin(axis=1)
        for k in range(s):
            mask = new_assign == k
            if mask.any():
                centers[k] = h[mask].mean(axis=0)
            else:
                far = int(d2[np.arange(n), new_assign].argmax())
                centers[k] = h[far]
                new_assign[far] = k
        if np.array_equal(new_assign, assign) and it > 1:
            assign = new_assign
            break
        assign = new_assign
    return Clustering(assign, centers, seed, it)


def inertia(h: np.ndarray, clustering: Clustering) -> float:
    diff = h - clustering.centroids[clustering.assignments]
    return float(np.sum(diff * diff))


def _cosine_distance_matrix(h, diagnostics=None):
    norms = np.linalg.norm(h, axis=1)
    zero = norms == 0
    if diagnostics is not None:
        diagnostics["zero_norm_rows"] = int(zero.sum())
    safe = np.where(zero, 1.0, norms)
    u = h / safe[:, None]
    d = 1.0 - u @ u.T
    # zero-norm rows: distance defined as 1 to everything
    d[zero, :] = 1.0
    d[:, zero] = 1.0
    return d


def deviated_nodes(clustering: Clustering, h: np.ndarray, k_dev: int,
                   diagnostics: dict | None = None) -> list:
    """Per cluster, the K_dev members with the largest mean cosine distance
    to nodes outside the cluster (ties to smaller index)."""
    if k_dev < 1:
        raise ConfigError("K_dev must be >= 1")
    h = np.asarray(h, dtype=np.float64)
    d = _cosine_distance_matrix(h, diagnostics)
    out = []
    for k in range(clustering.n_clusters):
        members = clustering.members(k)
        outside = np.nonzero(clustering.assignments != k)[0]
        if len(outside) == 0:
            mean_d = np.zeros(len(members))
        else:
            mean_d = d[np.ix_(members, outside)].mean(axis=1)
        order = np.argsort(-mean_d, kind="stable")[:min(k_dev, len(members))]
        out.append(np.sort(members[order]))
    return out


def augment_positives(p: PosMatrix, clustering: Clustering,
                      s_sets: list) -> PosMatrix:
    """P(i) <- P(i) union S_k for every i in cluster k; never removes."""
    n = p.n
    rows, cols = [], []
    for k, s_k in enumerate(s_sets):
        members = clustering.members(k)
        for j in s_k:
            rows.extend(members.tolist())
            cols.extend([int(j)] * len(members))
    if not rows:
        return PosMatrix(p.mat.copy())
    extra = sp.coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
    return PosMatrix(p.mat + extra.tocsr())
