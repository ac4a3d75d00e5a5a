"""HAN-style encoder/decoder, schema aggregation over heterogeneous
neighbors, GCN view embeddings and adjacency reconstruction.

Node-level attention follows the usual HAN recipe: per meta-path masked
additive attention with multi-head concatenation. Semantic attention scores
each meta-path embedding with q^T tanh(W h + b) averaged over nodes and
softmax-normalizes across meta-paths.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import diffcore as dc
from .errors import ConfigError, ContractError, SchemaError
from .graph import HeteroGraph, SparseAdj, type_features

_ACTS = {
    "elu": dc.elu,
    "tanh": dc.tanh,
    "prelu": lambda v: dc.leaky_relu(v, 0.25),
    "linear": lambda v: v,
}


def activation(name: str):
    try:
        return _ACTS[name]
    except KeyError:
        raise ConfigError(f"unknown activation {name!r}") from None


def glorot(rng, rows, cols):
    limit = np.sqrt(6.0 / (rows + cols))
    return rng.uniform(-limit, limit, size=(rows, cols))


@dataclass
class HanParams:
    """One HAN layer: per-head shared projections, per-metapath per-head
    attention vectors, and the semantic attention triple (q, W, b)."""
    w_heads: list                 # [head] in_dim x head_dim
    attn_src: list                # [metapath][head] head_dim x 1
    attn_dst: list
    w_sem: dc.DiffValue           # out_dim x out_dim
    b_sem: dc.DiffValue           # 1 x out_dim
    q_sem: dc.DiffValue           # out_dim x 1
    act: str = "elu"

    @property
    def heads(self):
        return len(self.w_heads)

    @property
    def out_dim(self):
        return sum(w.shape[1] for w in self.w_heads)

    def named(self, prefix):
        for h, w in enumerate(self.w_heads):
            yield f"{prefix}.w_head{h}", w
        for m, (srcs, dsts) in enumerate(zip(self.attn_src, self.attn_dst)):
            for h, (s, d) in enumerate(zip(srcs, dsts)):
                yield f"{prefix}.a_src{m}_{h}", s
                yield f"{prefix}.a_dst{m}_{h}", d
        yield f"{prefix}.w_sem", self.w_sem
        yield f"{prefix}.b_sem", self.b_sem
        yield f"{prefix}.q_sem", self.q_sem


def init_han(rng, in_dim, out_dim, n_metapaths, heads, act="elu") -> HanParams:
    if heads < 1 or out_dim % heads:
        raise ConfigError(f"out_dim {out_dim} must split across {heads} heads")
    hd = out_dim // heads
    w_heads = [dc.leaf(glorot(rng, in_dim, hd)) for _ in range(heads)]
    attn_src = [[dc.leaf(glorot(rng, hd, 1)) for _ in range(heads)]
                for _ in range(n_metapaths)]
    attn_dst = [[dc.leaf(glorot(rng, hd, 1)) for _ in range(heads)]
                for _ in range(n_metapaths)]
    return HanParams(
        w_heads, attn_src, attn_dst,
        w_sem=dc.leaf(glorot(rng, out_dim, out_dim)),
        b_sem=dc.leaf(np.zeros((1, out_dim))),
        q_sem=dc.leaf(glorot(rng, out_dim, 1)),
        act=act,
    )


def _attention_masks(metapath_adjs):
    """Dense self-loop-augmented boolean masks, one per meta-path."""
    masks = []
    for adj in metapath_adjs:
        m = (adj.to_dense() > 0).astype(np.float64)
        np.fill_diagonal(m, 1.0)
        masks.append(m)
    return masks


def node_attention(mask: np.ndarray, x: dc.DiffValue, params: HanParams,
                   mp_index: int) -> dc.DiffValue:
    """Masked additive attention over one meta-path adjacency, heads
    concatenated."""
    act = activation(params.act)
    heads = []
    for h, w in enumerate(params.w_heads):
        p = dc.matmul(x, w)
        f_src = dc.matmul(p, params.attn_src[mp_index][h])
        f_dst = dc.matmul(p, params.attn_dst[mp_index][h])
        e = dc.leaky_relu(dc.outer_sum(f_src, f_dst))
        a = dc.masked_row_softmax(e, mask)
        heads.append(act(dc.matmul(a, p)))
    return heads[0] if len(heads) == 1 else dc.concat_cols(heads)


def semantic_attention(h_list: list, q: dc.DiffValue, w: dc.DiffValue,
                       b: dc.DiffValue) -> tuple:
    """Scores s = mean_i q^T tanh(W h_i + b), softmax to alpha, weighted sum.

    Returns (alpha vector len(h_list) x 1, pooled embedding).
    """
    scores = []
    for h in h_list:
        t = dc.tanh(dc.add(dc.matmul(h, dc.transpose(w)), b))
        scores.append(dc.vmean(dc.matmul(t, q)))
    alpha = dc.softmax_vec(dc.concat_rows(scores))
    pooled = None
    for m, h in enumerate(h_list):
        term = dc.smul(dc.row_select(alpha, [m]), h)
        pooled = term if pooled is None else dc.add(pooled, term)
    return alpha, pooled


def han_encode(metapath_adjs: list, x: dc.DiffValue, params: HanParams) -> tuple:
    """Returns (pooled H, per-metapath embeddings, semantic alpha)."""
    if not metapath_adjs:
        raise ConfigError("han_encode: empty metapath list")
    if len(metapath_adjs) != len(params.attn_src):
        raise ConfigError(
            f"han_encode: {len(metapath_adjs)} metapaths vs parameters for "
            f"{len(params.attn_src)}")
    masks = _attention_masks(metapath_adjs)
    h_list = [node_attention(m, x, params, i) for i, m in enumerate(masks)]
    alpha, pooled = semantic_attention(h_list, params.q_sem, params.w_sem,
                                       params.b_sem)
    return pooled, h_list, alpha


def han_decode(metapath_adjs: list, h: dc.DiffValue, params: HanParams) -> tuple:
    """Single HAN layer used as decoder; same return contract as the
    encoder so callers can use per-metapath outputs or the pooled one."""
    return han_encode(metapath_adjs, h, params)


@dataclass
class SchemaParams:
    """Per-neighbor-type transformations into the hidden space."""
    w_by_type: dict               # neighbor type -> DiffValue (d_type x hidden)
    act: str = "elu"

    def named(self, prefix):
        for t, w in sorted(self.w_by_type.items()):
            yield f"{prefix}.w_{t}", w


def init_schema(rng, graph: HeteroGraph, hidden: int, act="elu") -> SchemaParams:
    w = {}
    for rel in graph.relations.values():
        if rel.src == graph.target_type and rel.dst != graph.target_type:
            t = rel.dst
        elif rel.dst == graph.target_type and rel.src != graph.target_type:
            t = rel.src
        else:
            continue
        if t not in w:
            d = type_features(graph, t).shape[1]
            w[t] = dc.leaf(glorot(rng, d, hidden))
    return SchemaParams(w, act)


def schema_aggregate(h_feat: dc.DiffValue, graph: HeteroGraph,
                     params: SchemaParams) -> dc.DiffValue:
    """H_agg_i = act(h_i + sum over neighbor types of W_T-projected
    neighbor features), 1-hop heterogeneous neighbors."""
    act = activation(params.act)
    total = h_feat
    for t, w in sorted(params.w_by_type.items()):
        rel_adj = _target_to_type_adj(graph, t)
        feats = dc.constant(type_features(graph, t))
        total = dc.add(total, dc.sp_matmul(rel_adj, dc.matmul(feats, w)))
    return act(total)


def _target_to_type_adj(graph: HeteroGraph, t: str) -> SparseAdj:
    for rel in graph.relations.values():
        if rel.src == graph.target_type and rel.dst == t:
            return rel.adj
        if rel.dst == graph.target_type and rel.src == t:
            return rel.adj.transpose()
    raise SchemaError(f"no relation between {graph.target_type!r} and {t!r}")


def gcn_layer(norm_adj: SparseAdj, h: dc.DiffValue, w: dc.DiffValue,
              act="elu") -> dc.DiffValue:
    """Z = act(A_norm @ H @ W)."""
    return activation(act)(dc.matmul(dc.sp_matmul(norm_adj, h), w))


@dataclass
class ViewParams:
    """Shared GCN weight plus the view attention triple (a, W_att, b_att)."""
    gcn_w: dc.DiffValue
    w_att: dc.DiffValue
    b_att: dc.DiffValue
    a_att: dc.DiffValue
    act: str = "elu"
    gcn_w_fusion: dc.DiffValue | None = None   # set when weights are untied

    def named(self, prefix):
        yield f"{prefix}.gcn_w", self.gcn_w
        yield f"{prefix}.w_att", self.w_att
        yield f"{prefix}.b_att", self.b_att
        yield f"{prefix}.a_att", self.a_att
        if self.gcn_w_fusion is not None:
            yield f"{prefix}.gcn_w_fusion", self.gcn_w_fusion

    def fusion_weight(self):
        return self.gcn_w if self.gcn_w_fusion is None else self.gcn_w_fusion


def init_view(rng, hidden: int, act="elu", tie_weights=True) -> ViewParams:
    return ViewParams(
        gcn_w=dc.leaf(glorot(rng, hidden, hidden)),
        w_att=dc.leaf(glorot(rng, hidden, hidden)),
        b_att=dc.leaf(np.zeros((1, hidden))),
        a_att=dc.leaf(glorot(rng, hidden, 1)),
        act=act,
        gcn_w_fusion=None if tie_weights else dc.leaf(glorot(rng, hidden, hidden)),
    )


def schema_view_embed(h_agg: dc.DiffValue, norm_adjs: list,
                      params: ViewParams) -> tuple:
    """Per-metapath GCN propagation pooled by view attention.

    Returns (Z_schema, beta)."""
    z_list = [gcn_layer(a, h_agg, params.gcn_w, params.act) for a in norm_adjs]
    beta, pooled = semantic_attention(z_list, params.a_att, params.w_att,
                                      params.b_att)
    return pooled, beta


def fusion_view_embed(h_mp: dc.DiffValue, norm_adjs: list,
                      alpha: dc.DiffValue, params: ViewParams) -> dc.DiffValue:
    """Z_fusion = act((sum_phi alpha_phi A_norm_phi) @ H_mp @ W), with the
    generative channel's semantic weights."""
    if len(norm_adjs) != alpha.shape[0]:
        raise ConfigError("fusion_view_embed: one alpha per adjacency required")
    if abs(float(alpha.data.sum()) - 1.0) > 1e-6:
        raise ContractError(f"fusion alpha sums to {alpha.data.sum()}, expected 1")
    acc = None
    for m, adj in enumerate(norm_adjs):
        term = dc.smul(dc.row_select(alpha, [m]), dc.sp_matmul(adj, h_mp))
        acc = term if acc is None else dc.add(acc, term)
    return activation(params.act)(dc.matmul(acc, params.fusion_weight()))


def reconstruct_adjacency(z: dc.DiffValue) -> dc.DiffValue:
    """A' = sigmoid of the node-by-node Gram matrix; symmetric by
    construction."""
    return dc.sigmoid(dc.matmul(z, dc.transpose(z)))
