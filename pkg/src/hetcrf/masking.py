"""Feature masking with a learnable token, re-masking of encoder output,
and Bernoulli edge masking."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import diffcore as dc
from .errors import ConfigError, DimensionError
from .graph import SparseAdj


@dataclass(frozen=True)
class MaskPlan:
    indices: np.ndarray   # unique, sorted, in range
    n: int
    seed: int


def plan_mask(n: int, rho: float, seed: int) -> MaskPlan:
    """Sample floor(rho * n) distinct rows to mask."""
    if not 0.0 <= rho <= 1.0:
        raise ConfigError(f"mask rate rho={rho} outside [0, 1]")
    k = int(np.floor(rho * n))
    rng = np.random.default_rng(seed)
    idx = np.sort(rng.choice(n, size=k, replace=False))
    return MaskPlan(idx, n, seed)


def _apply_token(x: dc.DiffValue, plan: MaskPlan, token: dc.DiffValue) -> dc.DiffValue:
    if token.shape != (1, x.shape[1]):
        raise DimensionError(
            f"mask token shape {token.shape} incompatible with rows of {x.shape}")
    m = np.zeros((plan.n, 1))
    m[plan.indices] = 1.0
    keep = dc.mul(x, dc.constant(np.repeat(1.0 - m, x.shape[1], axis=1)))
    return dc.add(keep, dc.matmul(dc.constant(m), token))


def mask_features(x: np.ndarray, rho: float, token: dc.DiffValue,
                  seed: int) -> tuple:
    """Replace floor(rho*N) uniformly sampled rows by the learnable token.

    Unmasked rows pass through bit-identical; gradients flow into the token.
    Returns (masked DiffValue, MaskPlan).
    """
    plan = plan_mask(x.shape[0], rho, seed)
    return _apply_token(dc.constant(x), plan, token), plan


def remask(h: dc.DiffValue, plan: MaskPlan, hidden_token: dc.DiffValue) -> dc.DiffValue:
    """Replace the same masked rows in hidden space with a second token."""
    if plan.n != h.shape[0]:
        raise DimensionError(f"plan covers {plan.n} rows, embedding has {h.shape[0]}")
    if len(plan.indices) and plan.indices.max() >= h.shape[0]:
        raise DimensionError("mask plan index out of range")
    return _apply_token(h, plan, hidden_token)


def mask_edges(metapath_adjs: list, p_e: float, seed: int) -> list:
    """Drop each existing entry independently with probability p_e."""
    if not 0.0 <= p_e < 1.0:
        raise ConfigError(f"edge mask rate p_e={p_e} outside [0, 1)")
    rng = np.random.default_rng(seed)
    out = []
    for adj in metapath_adjs:
        keep = rng.random(adj.nnz) >= p_e
        m = adj.mat.copy()
        m.data = m.data * keep
        m.eliminate_zeros()
        out.append(SparseAdj(m))
    return out
