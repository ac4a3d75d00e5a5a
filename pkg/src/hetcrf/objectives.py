"""Loss functions for both channels and the executable gradient-balance
probe behind the positive/negative contribution identity.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import diffcore as dc
from .errors import ConfigError
from .metapath import PosMatrix


@dataclass(frozen=True)
class LossWeights:
    lambda1: float = 1.0 / 3.0
    lambda2: float = 1.0 / 3.0
    gamma1: float = 2.0
    gamma2: float = 2.0
    tau: float = 0.5

    def __post_init__(self):
        if not (0.0 <= self.lambda1 <= 1.0 and 0.0 <= self.lambda2 <= 1.0):
            raise ConfigError("lambda1, lambda2 must lie in [0, 1]")
        if self.lambda1 + self.lambda2 > 1.0 + 1e-12:
            raise ConfigError("lambda1 + lambda2 must be <= 1")
        if self.gamma1 < 1.0 or self.gamma2 < 1.0:
            raise ConfigError("gamma scaling factors must be >= 1")
        if self.tau <= 0.0:
            raise ConfigError("temperature tau must be positive")

    @property
    def contrastive_weight(self):
        return 1.0 - self.lambda1 - self.lambda2


def scaled_cosine_error(targets: dc.DiffValue, preds: dc.DiffValue,
                        row_set, gamma: float,
                        diagnostics: dict | None = None) -> dc.DiffValue:
    """Mean over row_set of (1 - cos(target_v, pred_v))^gamma.

    Zero-norm rows contribute cos = 0 (loss 1^gamma); counted in
    diagnostics when a dict is supplied.
    """
    if gamma < 1.0:
        raise ConfigError(f"gamma must be >= 1, got {gamma}")
    row_set = np.asarray(row_set, dtype=np.int64)
    t = dc.row_select(targets, row_set)
    p = dc.row_select(preds, row_set)
    if diagnostics is not None:
        zero = (np.linalg.norm(t.data, axis=1) == 0) | \
               (np.linalg.norm(p.data, axis=1) == 0)
        diagnostics["zero_norm_rows"] = int(zero.sum())
    cos = dc.row_dot(dc.row_l2_normalize(t), dc.row_l2_normalize(p))
    one = dc.constant(np.ones_like(cos.data))
    return dc.vmean(dc.powi(dc.sub(one, cos), gamma))


def metapath_recon_loss(a_list: list, aprime_list: list, alpha: dc.DiffValue,
                        gamma2: float,
                        diagnostics: dict | None = None) -> dc.DiffValue:
    """Per-metapath scaled cosine error over adjacency rows, combined with
    the shared semantic attention weights."""
    if len(a_list) != len(aprime_list) or len(a_list) != alpha.shape[0]:
        raise ConfigError("metapath_recon_loss: list lengths must match alpha")
    total = None
    for m, (a, aprime) in enumerate(zip(a_list, aprime_list)):
        rows = np.arange(aprime.shape[0])
        l_phi = scaled_cosine_error(dc.constant(a.to_dense()), aprime, rows,
                                    gamma2, diagnostics)
        term = dc.smul(dc.row_select(alpha, [m]), l_phi)
        total = term if total is None else dc.add(total, term)
    return total


def _infonce_direction(anchors: dc.DiffValue, others: dc.DiffValue,
                       pos_mask: np.ndarray, tau: float) -> dc.DiffValue:
    n = anchors.shape[0]
    sim = dc.scale(dc.matmul(anchors, dc.transpose(others)), 1.0 / tau)
    shift = sim.data.max(axis=1, keepdims=True)
    e = dc.exp(dc.add(sim, dc.constant(-np.repeat(shift, n, axis=1))))
    num = dc.row_sum(dc.mul(e, dc.constant(pos_mask)))
    den = dc.row_sum(e)
    return dc.vmean(dc.sub(dc.log(den), dc.log(num)))


def contrastive_loss(z_fusion: dc.DiffValue, z_schema: dc.DiffValue,
                     p: PosMatrix, tau: float,
                     symmetrize: bool = True) -> dc.DiffValue:
    """Multi-positive InfoNCE across the two views.

    Rows are L2-normalized before dot products; the denominator runs over
    every target node (positives plus all remaining negatives). When
    symmetrize is set the loss is averaged over both anchor views.
    """
    if tau <= 0:
        raise ConfigError(f"temperature tau must be positive, got {tau}")
    if z_fusion.shape != z_schema.shape:
        raise ConfigError("view embeddings must share a shape")
    pos = p.to_dense().astype(np.float64)
    zf = dc.row_l2_normalize(z_fusion)
    zs = dc.row_l2_normalize(z_schema)
    loss = _infonce_direction(zf, zs, pos, tau)
    if symmetrize:
        loss = dc.scale(dc.add(loss, _infonce_direction(zs, zf, pos.T, tau)), 0.5)
    return loss


def combined_loss(l_feat: dc.DiffValue, l_mp: dc.DiffValue,
                  l_con: dc.DiffValue, weights: LossWeights) -> dc.DiffValue:
    """lambda1 * L_feat + lambda2 * L_mp + (1 - lambda1 - lambda2) * L_con."""
    return dc.add(dc.add(dc.scale(l_feat, weights.lambda1),
                         dc.scale(l_mp, weights.lambda2)),
                  dc.scale(l_con, weights.contrastive_weight))


# ---------------------------------------------------------------------------
# gradient-balance probe

def gradient_balance_probe(embeddings: np.ndarray, anchor: int,
                           positives, tau: float) -> dict:
    """Analytic per-sample InfoNCE gradients and their balance residual.

    For anchor i with positive set P and negatives N (everything else), the
    positive-side gradient sum equals minus the negative-side sum; the
    report carries both sums and the norm of their residual.
    """
    if tau <= 0:
        raise ConfigError(f"temperature tau must be positive, got {tau}")
    z = np.asarray(embeddings, dtype=np.float64)
    n = z.shape[0]
    positives = sorted(set(int(j) for j in positives))
    if not positives or anchor in positives:
        raise ConfigError("need >= 1 positive distinct from the anchor")
    negatives = [j for j in range(n) if j != anchor and j not in positives]

    others = positives + negatives
    logits = z[others] @ z[anchor] / tau
    e = np.exp(logits - logits.max())
    p_soft = e / e.sum()                       # softmax over P ∪ N
    q_pos = e[:len(positives)] / e[:len(positives)].sum()

    grads = {}
    pos_sum = np.zeros_like(z[anchor])
    neg_sum = np.zeros_like(z[anchor])
    for rank, j in enumerate(others):
        if rank < len(positives):
            g = (p_soft[rank] - q_pos[rank]) / tau * z[anchor]
            pos_sum += g
        else:
            g = p_soft[rank] / tau * z[anchor]
            neg_sum += g
        grads[j] = g

    residual = pos_sum + neg_sum
    return {
        "anchor": anchor,
        "tau": tau,
        "n_positives": len(positives),
        "n_negatives": len(negatives),
        "pos_grad_sum": pos_sum,
        "neg_grad_sum": neg_sum,
        "residual_norm": float(np.linalg.norm(residual)),
        "softmax_total": float(p_soft.sum()),
        "per_sample_grads": grads,
    }


def probe_loss_autodiff(embeddings: np.ndarray, anchor: int, positives,
                        tau: float) -> tuple:
    """The same InfoNCE built on the tape; returns (loss, per-row grads).

    The independent cross-check for the analytic probe gradients.
    """
    z = dc.leaf(embeddings)
    n = z.shape[0]
    positives = sorted(set(int(j) for j in positives))
    others = [j for j in range(n) if j != anchor]
    zo = dc.row_select(z, others)
    za = dc.row_select(z, [anchor])
    logits = dc.scale(dc.matmul(zo, dc.transpose(za)), 1.0 / tau)
    e = dc.exp(logits)
    pos_mask = np.array([[1.0] if j in positives else [0.0] for j in others])
    num = dc.vsum(dc.mul(e, dc.constant(pos_mask)))
    den = dc.vsum(e)
    loss = dc.sub(dc.log(den), dc.log(num))
    dc.backward(loss)
    return loss.item(), dc.grad_of(z)


def probe_report_json(reports: list) -> str:
    """Serializable summary: residuals plus per-sample gradient norms."""
    out = []
    for r in reports:
        out.append({
            "anchor": r["anchor"],
            "tau": r["tau"],
            "n_positives": r["n_positives"],
            "n_negatives": r["n_negatives"],
            "residual_norm": r["residual_norm"],
            "softmax_total": r["softmax_total"],
            "pos_grad_norm": float(np.linalg.norm(r["pos_grad_sum"])),
            "neg_grad_norm": float(np.linalg.norm(r["neg_grad_sum"])),
            "per_sample_grad_norms": {
                str(j): float(np.linalg.norm(g))
                for j, g in sorted(r["per_sample_grads"].items())
            },
        })
    return json.dumps(out, indent=1)
