"""End-to-end training of both channels: masked reconstruction, view
construction with GCN re-aggregation, positive-sample augmentation and the
combined objective, plus binary checkpointing.

One training thread owns all mutable state; per-epoch mask seeds derive
from (seed, epoch) so an interrupted run resumes on the same trajectory.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import struct
from dataclasses import dataclass, field

import numpy as np

from . import diffcore as dc
from . import encoders as enc
from . import masking
from . import metapath as mp
from . import objectives as obj
from .cluster import augment_positives, deviated_nodes, kmeans
from .errors import CheckpointError, ConfigError, TrainingError
from .graph import HeteroGraph, compose_metapath_adjacency, count_metapath_paths

POS_AUG_MODES = ("none", "mpc", "cluster", "both")


@dataclass
class TrainConfig:
    rho: float = 0.5
    p_e: float = 0.5
    gamma1: float = 2.0
    gamma2: float = 2.0
    tau: float = 0.5
    t_pos: int = 14
    k: int = 1                       # hop count for positive closure
    k_sim: int = 20
    k_dev: int = 3
    s: int | None = None             # clusters; defaults to #label classes
    lambda1: float = 0.2
    lambda2: float = 0.2
    hidden_dim: int = 64
    heads: int = 4
    activation: str = "elu"
    lr: float = 2e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epochs: int = 400
    warmup_epochs: int = 20
    refresh_interval: int | None = 100   # None = augment once
    seed: int = 0
    # ablation flags
    generative_only: bool = False
    contrastive_only: bool = False
    pos_aug: str = "both"
    tie_gcn_weights: bool = True
    per_metapath_aprime: bool = True
    symmetrize_infonce: bool = True

    def validate(self):
        self.loss_weights()   # range checks for lambdas/gammas/tau
        if not 0.0 <= self.rho <= 1.0:
            raise ConfigError(f"rho={self.rho} outside [0, 1]")
        if not 0.0 <= self.p_e < 1.0:
            raise ConfigError(f"p_e={self.p_e} outside [0, 1)")
        for name in ("t_pos", "k", "k_sim", "k_dev", "hidden_dim", "heads"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.epochs < 1 or self.warmup_epochs < 0:
            raise ConfigError("epochs must be >= 1, warmup_epochs >= 0")
        if self.pos_aug not in POS_AUG_MODES:
            raise ConfigError(f"pos_aug must be one of {POS_AUG_MODES}")
        if self.generative_only and self.contrastive_only:
            raise ConfigError("generative_only and contrastive_only are exclusive")
        enc.activation(self.activation)

    def loss_weights(self) -> obj.LossWeights:
        return obj.LossWeights(self.lambda1, self.lambda2,
                               self.gamma1, self.gamma2, self.tau)

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), indent=1, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "TrainConfig":
        data = json.loads(text)
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        cfg = cls(**data)
        cfg.validate()
        return cfg

    def with_overrides(self, pairs: dict) -> "TrainConfig":
        data = dataclasses.asdict(self)
        for key, raw in pairs.items():
            if key not in data:
                raise ConfigError(f"unknown config key {key!r}")
            cur = data[key]
            if isinstance(cur, bool):
                data[key] = raw in ("1", "true", "True", True)
            elif isinstance(cur, int) and not isinstance(cur, bool):
                data[key] = int(raw)
            elif isinstance(cur, float):
                data[key] = float(raw)
            elif cur is None and key in ("s", "refresh_interval"):
                data[key] = None if raw in ("none", "None", None) else int(raw)
            else:
                data[key] = raw
        cfg = TrainConfig(**data)
        cfg.validate()
        return cfg


@dataclass
class Precomputed:
    """Static artifacts shared across every epoch."""
    metapath_adjs: list        # boolean composed adjacencies
    counts: list               # weighted path counts
    pathsim: list
    sim_topk: list
    norm_sim: list             # symmetric-normalized top-K similarity adjs
    p_mpc: mp.PosMatrix


def precompute(graph: HeteroGraph, config: TrainConfig) -> Precomputed:
    if not graph.metapaths:
        raise ConfigError("graph defines no metapaths over the target type")
    adjs, counts, sims, topks, norms = [], [], [], [], []
    for spec in graph.metapaths:
        c = count_metapath_paths(graph, spec)
        a = compose_metapath_adjacency(graph, spec)
        s = mp.pathsim_matrix(c)
        t = mp.topk_filter(s, config.k_sim)
        adjs.append(a)
        counts.append(c)
        sims.append(s)
        topks.append(t)
        norms.append(mp.sym_normalize(t))
    conn = mp.metapath_connection_counts(adjs)
    p_mpc = mp.khop_combine(mp.build_positive_matrix(conn, config.t_pos), config.k)
    return Precomputed(adjs, counts, sims, topks, norms, p_mpc)


@dataclass
class ModelParams:
    encoder: enc.HanParams
    feat_decoder: enc.HanParams
    mp_decoder: enc.HanParams
    schema: enc.SchemaParams
    view: enc.ViewParams
    feat_token: dc.DiffValue
    hidden_token: dc.DiffValue

    def named(self):
        yield from self.encoder.named("encoder")
        yield from self.feat_decoder.named("feat_decoder")
        yield from self.mp_decoder.named("mp_decoder")
        yield from self.schema.named("schema")
        yield from self.view.named("view")
        yield "feat_token", self.feat_token
        yield "hidden_token", self.hidden_token

    def leaves(self):
        return [v for _, v in self.named()]

    def arrays(self):
        return {name: v.data for name, v in self.named()}


def init_model(graph: HeteroGraph, config: TrainConfig) -> ModelParams:
    rng = np.random.default_rng(config.seed)
    d_in = graph.target_features().shape[1]
    n_mp = len(graph.metapaths)
    hid, act = config.hidden_dim, config.activation
    return ModelParams(
        encoder=enc.init_han(rng, d_in, hid, n_mp, config.heads, act),
        feat_decoder=enc.init_han(rng, hid, d_in, n_mp, 1, act),
        mp_decoder=enc.init_han(rng, hid, hid, n_mp, 1, act),
        schema=enc.init_schema(rng, graph, hid, act),
        view=enc.init_view(rng, hid, act, config.tie_gcn_weights),
        feat_token=dc.leaf(np.zeros((1, d_in))),
        hidden_token=dc.leaf(np.zeros((1, hid))),
    )


@dataclass
class TrainedState:
    params: ModelParams
    adam: dc.AdamState
    config: TrainConfig
    p_matrix: mp.PosMatrix
    epoch: int = 0
    loss_history: list = field(default_factory=list)  # (l_feat, l_mp, l_con, l_final)
    h_final: np.ndarray | None = None
    z_schema_final: np.ndarray | None = None
    z_fusion_final: np.ndarray | None = None


def train_epoch(state: TrainedState, graph: HeteroGraph, precomp: Precomputed,
                config: TrainConfig, epoch: int) -> tuple:
    """One full-graph pass of both channels, backward and optimizer step."""
    params = state.params
    x = graph.target_features()
    weights = config.loss_weights()
    zero = lambda: dc.constant(np.zeros((1, 1)))

    l_feat = l_mp = l_con = None
    alpha = None
    h_feat_pooled = h_mp_pooled = None

    if not config.contrastive_only:
        # generative feature branch
        x_masked, plan = masking.mask_features(
            x, config.rho, params.feat_token, seed=(config.seed, epoch, 0))
        h_feat_pooled, _, _ = enc.han_encode(precomp.metapath_adjs, x_masked,
                                             params.encoder)
        if len(plan.indices):
            h_rem = masking.remask(h_feat_pooled, plan, params.hidden_token)
            z_feat, _, _ = enc.han_decode(precomp.metapath_adjs, h_rem,
                                          params.feat_decoder)
            l_feat = obj.scaled_cosine_error(dc.constant(x), z_feat,
                                             plan.indices, config.gamma1)
        else:
            l_feat = zero()
        # generative meta-path branch
        masked_adjs = masking.mask_edges(precomp.metapath_adjs, config.p_e,
                                         seed=(config.seed, epoch, 1))
        h_mp_pooled, _, alpha = enc.han_encode(masked_adjs, dc.constant(x),
                                               params.encoder)
        z_pooled, z_list, _ = enc.han_decode(masked_adjs, h_mp_pooled,
                                             params.mp_decoder)
        if config.per_metapath_aprime:
            aprime = [enc.reconstruct_adjacency(z) for z in z_list]
        else:
            shared = enc.reconstruct_adjacency(z_pooled)
            aprime = [shared] * len(precomp.metapath_adjs)
        l_mp = obj.metapath_recon_loss(precomp.metapath_adjs, aprime,
                                       alpha, config.gamma2)

    if not config.generative_only:
        if h_feat_pooled is None:   # contrastive_only: unmasked encoder passes
            x_masked, plan = masking.mask_features(
                x, config.rho, params.feat_token, seed=(config.seed, epoch, 0))
            h_feat_pooled, _, _ = enc.han_encode(precomp.metapath_adjs, x_masked,
                                                 params.encoder)
            masked_adjs = masking.mask_edges(precomp.metapath_adjs, config.p_e,
                                             seed=(config.seed, epoch, 1))
            h_mp_pooled, _, alpha = enc.han_encode(masked_adjs, dc.constant(x),
                                                   params.encoder)
        h_agg = enc.schema_aggregate(h_feat_pooled, graph, params.schema)
        z_schema, _ = enc.schema_view_embed(h_agg, precomp.norm_sim, params.view)
        z_fusion = enc.fusion_view_embed(h_mp_pooled, precomp.norm_sim,
                                         alpha, params.view)
        l_con = obj.contrastive_loss(z_fusion, z_schema, state.p_matrix,
                                     config.tau, config.symmetrize_infonce)

    l_feat = l_feat if l_feat is not None else zero()
    l_mp = l_mp if l_mp is not None else zero()
    l_con = l_con if l_con is not None else zero()
    if config.contrastive_only:
        loss = l_con
    elif config.generative_only:
        loss = dc.add(dc.scale(l_feat, weights.lambda1),
                      dc.scale(l_mp, weights.lambda2))
    else:
        loss = obj.combined_loss(l_feat, l_mp, l_con, weights)

    vals = (l_feat.item(), l_mp.item(), l_con.item(), loss.item())
    if not np.isfinite(vals[3]):
        raise TrainingError(
            f"NaN loss at epoch {epoch}: feat={vals[0]} mp={vals[1]} con={vals[2]}")

    leaves = params.leaves()
    dc.zero_grads(leaves)
    dc.backward(loss)
    grads = {name: dc.grad_of(v) for name, v in params.named()}
    dc.adam_step(params.arrays(), grads, state.adam,
                 lr=config.lr, beta1=config.beta1, beta2=config.beta2)
    dc.zero_grads(leaves)
    return vals


def _initial_positive_matrix(config: TrainConfig, precomp: Precomputed,
                             n: int) -> mp.PosMatrix:
    if config.pos_aug in ("mpc", "both"):
        return precomp.p_mpc
    return mp.PosMatrix.identity(n)


def _cluster_count(graph: HeteroGraph, config: TrainConfig) -> int:
    if config.s is not None:
        return config.s
    if graph.labels is None:
        raise ConfigError("cluster augmentation needs S or labeled data")
    return len(np.unique(graph.labels))


def _apply_cluster_augment(state: TrainedState, graph: HeteroGraph,
                           precomp: Precomputed, config: TrainConfig):
    h = unmasked_encode(state.params, graph, precomp)
    clustering = kmeans(h, _cluster_count(graph, config), config.seed)
    s_sets = deviated_nodes(clustering, h, config.k_dev)
    state.p_matrix = augment_positives(state.p_matrix, clustering, s_sets)


def unmasked_encode(params: ModelParams, graph: HeteroGraph,
                    precomp: Precomputed) -> np.ndarray:
    h, _, _ = enc.han_encode(precomp.metapath_adjs,
                             dc.constant(graph.target_features()),
                             params.encoder)
    return h.data.copy()


def fit(graph: HeteroGraph, config: TrainConfig,
        precomp: Precomputed | None = None,
        resume: TrainedState | None = None) -> TrainedState:
    """Warm-up with the meta-path-count positive matrix, optional cluster
    augmentation, then training to config.epochs."""
    config.validate()
    if precomp is None:
        precomp = precompute(graph, config)
    n = graph.n_target
    if resume is None:
        state = TrainedState(
            params=init_model(graph, config),
            adam=dc.AdamState(),
            config=config,
            p_matrix=_initial_positive_matrix(config, precomp, n),
        )
    else:
        state = resume

    cluster_aug = (config.pos_aug in ("cluster", "both")
                   and not config.generative_only)
    for epoch in range(state.epoch, config.epochs):
        if cluster_aug and config.warmup_epochs <= epoch < config.epochs:
            hit_warmup = epoch == config.warmup_epochs
            refreshed = (config.refresh_interval is not None
                         and epoch > config.warmup_epochs
                         and (epoch - config.warmup_epochs) % config.refresh_interval == 0)
            if hit_warmup or refreshed:
                if hit_warmup and config.pos_aug == "cluster":
                    state.p_matrix = mp.PosMatrix.identity(n)
                _apply_cluster_augment(state, graph, precomp, config)
        vals = train_epoch(state, graph, precomp, config, epoch)
        state.loss_history.append(vals)
        state.epoch = epoch + 1

    state.h_final, state.z_schema_final, state.z_fusion_final = \
        final_embeddings(state.params, graph, precomp)
    return state


def final_embeddings(params: ModelParams, graph: HeteroGraph,
                     precomp: Precomputed) -> tuple:
    """Unmasked forward of encoder and both views (no tape needed)."""
    x = dc.constant(graph.target_features())
    h, _, alpha = enc.han_encode(precomp.metapath_adjs, x, params.encoder)
    h_agg = enc.schema_aggregate(h, graph, params.schema)
    z_schema, _ = enc.schema_view_embed(h_agg, precomp.norm_sim, params.view)
    z_fusion = enc.fusion_view_embed(h, precomp.norm_sim, alpha, params.view)
    return h.data.copy(), z_schema.data.copy(), z_fusion.data.copy()


def evaluation_embedding(state: TrainedState) -> np.ndarray:
    """concat(H, (Z_schema + Z_fusion) / 2): the downstream-task features."""
    if state.h_final is None:
        raise ConfigError("state has no final embeddings; run fit first")
    return np.concatenate(
        [state.h_final, 0.5 * (state.z_schema_final + state.z_fusion_final)],
        axis=1)


def save_loss_history(path: str, history: list):
    with open(path, "w") as f:
        f.write("epoch,l_feat,l_mp,l_con,l_final\n")
        for i, (lf, lm, lc, lt) in enumerate(history):
            f.write(f"{i},{lf:.17g},{lm:.17g},{lc:.17g},{lt:.17g}\n")


# ---------------------------------------------------------------------------
# checkpoint format: magic, version, config JSON, named float64 tensors
# (row-major little-endian), trailing SHA-256.

_MAGIC = b"HETCRF\x00\x01"
_VERSION = 1


def _checkpoint_tensors(state: TrainedState) -> dict:
    tensors = dict(state.params.arrays())
    for name in sorted(state.adam.m):
        tensors[f"adam.m.{name}"] = state.adam.m[name]
        tensors[f"adam.v.{name}"] = state.adam.v[name]
    tensors["meta.adam_t"] = np.array([[float(state.adam.t)]])
    tensors["meta.epoch"] = np.array([[float(state.epoch)]])
    hist = np.asarray(state.loss_history, dtype=np.float64).reshape(-1, 4)
    tensors["meta.loss_history"] = hist
    tensors["meta.pos_matrix"] = state.p_matrix.to_dense().astype(np.float64)
    return tensors


def save_checkpoint(state: TrainedState, path: str):
    body = bytearray()
    body += _MAGIC
    body += struct.pack("<I", _VERSION)
    cfg = state.config.to_json().encode()
    body += struct.pack("<I", len(cfg)) + cfg
    tensors = _checkpoint_tensors(state)
    body += struct.pack("<I", len(tensors))
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name], dtype="<f8")
        nb = name.encode()
        body += struct.pack("<H", len(nb)) + nb
        body += struct.pack("<II", arr.shape[0], arr.shape[1])
        body += arr.tobytes()
    body += hashlib.sha256(bytes(body)).digest()
    with open(path, "wb") as f:
        f.write(bytes(body))


def load_checkpoint(path: str, graph: HeteroGraph) -> TrainedState:
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < len(_MAGIC) + 36 or blob[:len(_MAGIC)] != _MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    body, digest = blob[:-32], blob[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise CheckpointError(f"{path}: checksum mismatch (corrupt file)")
    off = len(_MAGIC)
    (version,) = struct.unpack_from("<I", body, off); off += 4
    if version != _VERSION:
        raise CheckpointError(f"{path}: version {version}, expected {_VERSION}")
    (clen,) = struct.unpack_from("<I", body, off); off += 4
    config = TrainConfig.from_json(body[off:off + clen].decode()); off += clen
    (ntens,) = struct.unpack_from("<I", body, off); off += 4
    tensors = {}
    for _ in range(ntens):
        (nlen,) = struct.unpack_from("<H", body, off); off += 2
        name = body[off:off + nlen].decode(); off += nlen
        rows, cols = struct.unpack_from("<II", body, off); off += 8
        size = rows * cols * 8
        arr = np.frombuffer(body[off:off + size], dtype="<f8").reshape(rows, cols)
        tensors[name] = np.array(arr)
        off += size

    params = init_model(graph, config)
    for name, v in params.named():
        if name not in tensors:
            raise CheckpointError(f"{path}: missing tensor {name!r}")
        if tensors[name].shape != v.data.shape:
            raise CheckpointError(
                f"{path}: tensor {name!r} shape {tensors[name].shape} does not "
                f"match this dataset")
        v.data[...] = tensors[name]
    adam = dc.AdamState()
    adam.t = int(tensors["meta.adam_t"][0, 0])
    for name, _ in params.named():
        mk, vk = f"adam.m.{name}", f"adam.v.{name}"
        if mk in tensors:
            adam.m[name] = tensors[mk]
            adam.v[name] = tensors[vk]
    state = TrainedState(
        params=params, adam=adam, config=config,
        p_matrix=mp.PosMatrix(tensors["meta.pos_matrix"]),
        epoch=int(tensors["meta.epoch"][0, 0]),
        loss_history=[tuple(r) for r in tensors["meta.loss_history"]],
    )
    return state
