"""Heterogeneous graph data model, dataset I/O, meta-path algebra and a
synthetic planted-partition generator.

A dataset directory looks like::

    schema.json          node types + counts, relations, metapaths, target type
    edges_<rel>.tsv      two integer columns, 0-based "src dst"
    features_<type>.csv  one row per node, comma-separated floats (optional)
    labels.tsv           "node_id class_id" for target-type nodes
    splits.json          {"40": {"train": [...], "val": [...], "test": [...]}}

Missing feature files yield ABSENT features for that type; consumers fall
back to one-hot node-identity rows.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import ConfigError, ParseError, SchemaError


class SparseAdj:
    """Immutable nonnegative sparse matrix in canonical CSR form.

    The unit of all meta-path algebra: no duplicate entries, finite
    nonnegative weights, sorted column indices per row.
    """

    __slots__ = ("mat",)

    def __init__(self, mat):
        m = sp.csr_matrix(mat, dtype=np.float64)
        m.sum_duplicates()
        m.sort_indices()
        m.eliminate_zeros()
        if m.nnz and (not np.all(np.isfinite(m.data)) or m.data.min() < 0):
            raise ValueError("SparseAdj requires finite nonnegative weights")
        self.mat = m

    @classmethod
    def from_edges(cls, shape, rows, cols, vals=None):
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        if vals is None:
            vals = np.ones(len(rows))
        if len(rows) and (rows.min() < 0 or rows.max() >= shape[0]
                          or cols.min() < 0 or cols.max() >= shape[1]):
            raise ValueError(f"edge index out of bounds for shape {shape}")
        return cls(sp.coo_matrix((vals, (rows, cols)), shape=shape))

    @classmethod
    def from_dense(cls, arr):
        return cls(sp.csr_matrix(np.asarray(arr, dtype=np.float64)))

    @classmethod
    def identity(cls, n):
        return cls(sp.identity(n, format="csr"))

    @property
    def shape(self):
        return self.mat.shape

    @property
    def nnz(self):
        return self.mat.nnz

    def to_dense(self):
        return np.asarray(self.mat.todense(), dtype=np.float64)

    def boolean(self):
        b = self.mat.copy()
        b.data = np.ones_like(b.data)
        return SparseAdj(b)

    def without_diagonal(self):
        m = self.mat.tolil(copy=True)
        m.setdiag(0.0)
        return SparseAdj(m.tocsr())

    def transpose(self):
        return SparseAdj(self.mat.T.tocsr())

    def matmul(self, other: "SparseAdj") -> "SparseAdj":
        return SparseAdj(self.mat @ other.mat)

    def row(self, i):
        """(col indices, weights) of row i."""
        s, e = self.mat.indptr[i], self.mat.indptr[i + 1]
        return self.mat.indices[s:e], self.mat.data[s:e]

    def equals(self, other: "SparseAdj") -> bool:
        return (self.shape == other.shape
                and (self.mat != other.mat).nnz == 0)


@dataclass(frozen=True)
class Relation:
    name: str
    src: str
    dst: str
    adj: SparseAdj


@dataclass(frozen=True)
class MetaPathSpec:
    """Ordered relation chain; a leading '~' reverses the relation."""
    name: str
    chain: tuple

    def __post_init__(self):
        object.__setattr__(self, "chain", tuple(self.chain))
        if len(self.chain) < 2:
            raise SchemaError(f"metapath {self.name}: chain length must be >= 2")


@dataclass
class HeteroGraph:
    node_counts: dict            # type name -> node count
    relations: dict              # relation name -> Relation
    features: dict               # type name -> ndarray or None (ABSENT)
    target_type: str
    metapaths: list = field(default_factory=list)
    labels: np.ndarray | None = None
    splits: dict | None = None

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.target_type not in self.node_counts:
            raise SchemaError(f"unknown target type {self.target_type!r}")
        for rel in self.relations.values():
            for t in (rel.src, rel.dst):
                if t not in self.node_counts:
                    raise SchemaError(f"relation {rel.name}: unknown type {t!r}")
            want = (self.node_counts[rel.src], self.node_counts[rel.dst])
            if rel.adj.shape != want:
                raise SchemaError(
                    f"relation {rel.name}: shape {rel.adj.shape} != {want}")
        for t, x in self.features.items():
            if x is not None and x.shape[0] != self.node_counts[t]:
                raise SchemaError(
                    f"features[{t}]: {x.shape[0]} rows != {self.node_counts[t]} nodes")
        for mp in self.metapaths:
            types = self.chain_types(mp)
            if types[0] != self.target_type or types[-1] != self.target_type:
                raise SchemaError(
                    f"metapath {mp.name} must start and end at {self.target_type!r}")
        if self.labels is not None:
            n = self.node_counts[self.target_type]
            if len(self.labels) != n:
                raise SchemaError(f"labels cover {len(self.labels)} of {n} target nodes")

    @property
    def n_target(self):
        return self.node_counts[self.target_type]

    def relation_adj(self, step: str) -> tuple:
        """Resolve one chain step to (src type, dst type, SparseAdj)."""
        name = step.lstrip("~")
        if name not in self.relations:
            raise SchemaError(f"unknown relation {name!r} in metapath chain")
        rel = self.relations[name]
        if step.startswith("~"):
            return rel.dst, rel.src, rel.adj.transpose()
        return rel.src, rel.dst, rel.adj

    def chain_types(self, spec: MetaPathSpec) -> list:
        types = None
        for step in spec.chain:
            src, dst, _ = self.relation_adj(step)
            if types is None:
                types = [src]
            elif types[-1] != src:
                raise SchemaError(
                    f"metapath {spec.name}: step {step!r} expects source {src!r}, "
                    f"chain is at {types[-1]!r}")
            types.append(dst)
        return types

    def target_features(self) -> np.ndarray:
        """Target-type features, identity fallback when ABSENT."""
        return type_features(self, self.target_type)


def type_features(graph: HeteroGraph, t: str) -> np.ndarray:
    x = graph.features.get(t)
    if x is None:
        return np.eye(graph.node_counts[t])
    return x


def count_metapath_paths(graph: HeteroGraph, spec: MetaPathSpec) -> SparseAdj:
    """Path-instance counts: the plain product of the chain's adjacencies.

    Diagonal retained; count(i, i) is the number of closed path instances,
    needed by the PathSim denominator.
    """
    graph.chain_types(spec)
    prod = None
    for step in spec.chain:
        _, _, adj = graph.relation_adj(step)
        prod = adj if prod is None else prod.matmul(adj)
    return prod


def compose_metapath_adjacency(graph: HeteroGraph, spec: MetaPathSpec) -> SparseAdj:
    """Boolean meta-path adjacency: >= 1 path instance, self-loops removed."""
    counts = count_metapath_paths(graph, spec)
    out = counts.boolean()
    if out.shape[0] == out.shape[1]:
        out = out.without_diagonal()
    return out


# ---------------------------------------------------------------------------
# dataset I/O

def _read_json(path):
    try:
        with open(path) as f:
            return json.load(f)
    except json.JSONDecodeError as e:
        raise ParseError(f"{path}:{e.lineno}: {e.msg}") from e
    except OSError as e:
        raise ParseError(f"{path}: {e}") from e


def _read_edges(path):
    rows, cols = [], []
    with open(path) as f:
        for ln, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 2:
                raise ParseError(f"{path}:{ln}: expected two columns, got {len(parts)}")
            try:
                rows.append(int(parts[0]))
                cols.append(int(parts[1]))
            except ValueError as e:
                raise ParseError(f"{path}:{ln}: non-integer node id") from e
    return rows, cols


def load_dataset(path: str) -> HeteroGraph:
    schema_path = os.path.join(path, "schema.json")
    if not os.path.exists(schema_path):
        raise ParseError(f"{schema_path}: missing schema.json")
    schema = _read_json(schema_path)
    try:
        node_counts = {str(k): int(v) for k, v in schema["node_types"].items()}
        target_type = schema["target_type"]
        rel_specs = schema["relations"]
        mp_specs = schema.get("metapaths", [])
    except (KeyError, TypeError) as e:
        raise ParseError(f"{schema_path}: missing or malformed field: {e}") from e

    relations = {}
    for r in rel_specs:
        name, src, dst = r["name"], r["src"], r["dst"]
        if src not in node_counts or dst not in node_counts:
            raise SchemaError(f"relation {name}: unknown endpoint type")
        rows, cols = _read_edges(os.path.join(path, f"edges_{name}.tsv"))
        shape = (node_counts[src], node_counts[dst])
        try:
            adj = SparseAdj.from_edges(shape, rows, cols)
        except ValueError as e:
            raise ParseError(f"edges_{name}.tsv: {e}") from e
        relations[name] = Relation(name, src, dst, adj)

    features = {}
    for t, n in node_counts.items():
        fpath = os.path.join(path, f"features_{t}.csv")
        if os.path.exists(fpath):
            try:
                x = np.loadtxt(fpath, delimiter=",", ndmin=2)
            except ValueError as e:
                raise ParseError(f"{fpath}: {e}") from e
            features[t] = x
        else:
            features[t] = None

    metapaths = [MetaPathSpec(m["name"], tuple(m["chain"])) for m in mp_specs]

    labels = None
    lpath = os.path.join(path, "labels.tsv")
    if os.path.exists(lpath):
        labels = np.full(node_counts[target_type], -1, dtype=np.int64)
        with open(lpath) as f:
            for ln, line in enumerate(f, 1):
                line = line.strip()
                if not line:
                    continue
                parts = line.split()
                if len(parts) != 2:
                    raise ParseError(f"{lpath}:{ln}: expected 'node class'")
                labels[int(parts[0])] = int(parts[1])
        if (labels < 0).any():
            raise ParseError(f"{lpath}: labels do not cover all target nodes")

    splits = None
    spath = os.path.join(path, "splits.json")
    if os.path.exists(spath):
        raw = _read_json(spath)
        splits = {k: {s: list(map(int, idx)) for s, idx in v.items()}
                  for k, v in raw.items()}

    return HeteroGraph(node_counts, relations, features, target_type,
                       metapaths, labels, splits)


def save_dataset(graph: HeteroGraph, path: str):
    os.makedirs(path, exist_ok=True)
    schema = {
        "node_types": dict(graph.node_counts),
        "target_type": graph.target_type,
        "relations": [{"name": r.name, "src": r.src, "dst": r.dst}
                      for r in graph.relations.values()],
        "metapaths": [{"name": m.name, "chain": list(m.chain)}
                      for m in graph.metapaths],
    }
    with open(os.path.join(path, "schema.json"), "w") as f:
        json.dump(schema, f, indent=1)
    for r in graph.relations.values():
        coo = r.adj.mat.tocoo()
        order = np.lexsort((coo.col, coo.row))
        with open(os.path.join(path, f"edges_{r.name}.tsv"), "w") as f:
            for i in order:
                f.write(f"{coo.row[i]}\t{coo.col[i]}\n")
    for t, x in graph.features.items():
        if x is not None:
            np.savetxt(os.path.join(path, f"features_{t}.csv"), x,
                       delimiter=",", fmt="%.17g")
    if graph.labels is not None:
        with open(os.path.join(path, "labels.tsv"), "w") as f:
            for i, c in enumerate(graph.labels):
                f.write(f"{i}\t{c}\n")
    if graph.splits is not None:
        with open(os.path.join(path, "splits.json"), "w") as f:
            json.dump(graph.splits, f)


# ---------------------------------------------------------------------------
# synthetic generator

@dataclass
class SyntheticSpec:
    n_classes: int = 3
    nodes_per_class: int = 100
    n_metapaths: int = 2
    p_intra: float = 0.05
    p_inter: float = 0.004
    feature_mode: str = "noisy-one-hot"   # or "absent"
    feature_dim: int | None = None        # default n_classes
    noise_scale: float = 8.0
    intermediates_per_class: int = 30

    def validate(self):
        for p in (self.p_intra, self.p_inter):
            if not 0.0 <= p <= 1.0:
                raise ConfigError(f"edge probability {p} outside [0, 1]")
        if self.feature_mode not in ("noisy-one-hot", "absent"):
            raise ConfigError(f"unknown feature mode {self.feature_mode!r}")
        if self.n_classes < 2 or self.nodes_per_class < 1 or self.n_metapaths < 1:
            raise ConfigError("need >= 2 classes, >= 1 node per class, >= 1 metapath")


def generate_synthetic(spec: SyntheticSpec, seed: int) -> HeteroGraph:
    """Planted-partition heterogeneous graph with ground-truth labels.

    Each metapath m gets its own intermediate node type i<m>; target nodes
    attach to class-aligned intermediates with p_intra and to off-class
    intermediates with p_inter, so the composed target-intermediate-target
    adjacency is denser within classes.
    """
    spec.validate()
    rng = np.random.default_rng(seed)
    n = spec.n_classes * spec.nodes_per_class
    labels = np.repeat(np.arange(spec.n_classes), spec.nodes_per_class)

    node_counts = {"t": n}
    relations = {}
    metapaths = []
    n_inter = spec.n_classes * spec.intermediates_per_class
    inter_labels = np.repeat(np.arange(spec.n_classes), spec.intermediates_per_class)
    for m in range(spec.n_metapaths):
        t_inter = f"i{m}"
        node_counts[t_inter] = n_inter
        same = labels[:, None] == inter_labels[None, :]
        probs = np.where(same, spec.p_intra, spec.p_inter)
        edges = rng.random((n, n_inter)) < probs
        rows, cols = np.nonzero(edges)
        rel = f"t_{t_inter}"
        relations[rel] = Relation(rel, "t", t_inter,
                                  SparseAdj.from_edges((n, n_inter), rows, cols))
        metapaths.append(MetaPathSpec(f"mp{m}", (rel, f"~{rel}")))

    features = {t: None for t in node_counts}
    if spec.feature_mode == "noisy-one-hot":
        d = spec.feature_dim or spec.n_classes
        centers = np.zeros((spec.n_classes, d))
        for c in range(spec.n_classes):
            centers[c, c % d] = 1.0
        features["t"] = centers[labels] + spec.noise_scale * rng.standard_normal((n, d))

    splits = {str(rate): make_split(labels, rate / 100.0, seed)
              for rate in (20, 40, 60)}
    return HeteroGraph(node_counts, relations, features, "t",
                       metapaths, labels, splits)


def make_split(labels, train_frac, seed):
    """Stratified train split at the given label rate; remainder halved
    into val/test."""
    rng = np.random.default_rng((seed, int(round(train_frac * 1000))))
    train, val, test = [], [], []
    for c in np.unique(labels):
        idx = np.nonzero(labels == c)[0]
        idx = rng.permutation(idx)
        k = max(1, int(round(train_frac * len(idx))))
        train.extend(idx[:k].tolist())
        rest = idx[k:]
        h = len(rest) // 2
        val.extend(rest[:h].tolist())
        test.extend(rest[h:].tolist())
    return {"train": sorted(train), "val": sorted(val), "test": sorted(test)}
