"""Downstream protocols on frozen embeddings: linear-probe node
classification (Macro/Micro-F1, one-vs-rest macro AUC) and k-means
clustering agreement (NMI, ARI).

Metrics are computed from their definitions (confusion counts, rank
statistics, pair counting, entropies); the test suite cross-checks them
against independent implementations.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .cluster import inertia, kmeans
from .errors import ConfigError


def macro_micro_f1(y_true, y_pred) -> tuple:
    y_true = np.asarray(y_true)
    y_pred = np.asarray(y_pred)
    classes = np.unique(y_true)
    f1s = []
    for c in classes:
        tp = np.sum((y_pred == c) & (y_true == c))
        fp = np.sum((y_pred == c) & (y_true != c))
        fn = np.sum((y_pred != c) & (y_true == c))
        denom = 2 * tp + fp + fn
        f1s.append(2 * tp / denom if denom else 0.0)
    macro = float(np.mean(f1s))
    micro = float(np.mean(y_pred == y_true))   # single-label micro-F1 = accuracy
    return macro, micro


def _binary_auc(y_bin, scores) -> float:
    """Rank-statistic AUC with midranks for ties."""
    y_bin = np.asarray(y_bin, dtype=bool)
    order = np.argsort(scores, kind="stable")
    ranks = np.empty(len(scores))
    sorted_scores = scores[order]
    i = 0
    while i < len(scores):
        j = i
        while j + 1 < len(scores) and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    n_pos = int(y_bin.sum())
    n_neg = len(y_bin) - n_pos
    if n_pos == 0 or n_neg == 0:
        return 0.5
    return float((ranks[y_bin].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def ovr_macro_auc(y_true, scores) -> float:
    """One-vs-rest AUC averaged over classes present in y_true."""
    y_true = np.asarray(y_true)
    aucs = [_binary_auc(y_true == c, scores[:, c]) for c in np.unique(y_true)]
    return float(np.mean(aucs))


def nmi_score(labels_a, labels_b) -> float:
    """Mutual information with arithmetic-mean normalization."""
    a = np.asarray(labels_a)
    b = np.asarray(labels_b)
    n = len(a)
    ca, cb = np.unique(a), np.unique(b)
    cont = np.zeros((len(ca), len(cb)))
    for i, u in enumerate(ca):
        for j, v in enumerate(cb):
            cont[i, j] = np.sum((a == u) & (b == v))
    pa = cont.sum(axis=1) / n
    pb = cont.sum(axis=0) / n
    ha = -np.sum(pa[pa > 0] * np.log(pa[pa > 0]))
    hb = -np.sum(pb[pb > 0] * np.log(pb[pb > 0]))
    mi = 0.0
    for i in range(len(ca)):
        for j in range(len(cb)):
            pij = cont[i, j] / n
            if pij > 0:
                mi += pij * np.log(pij / (pa[i] * pb[j]))
    if ha == 0.0 and hb == 0.0:
        return 1.0
    denom = 0.5 * (ha + hb)
    return float(mi / denom) if denom > 0 else 0.0


def ari_score(labels_a, labels_b) -> float:
    """Pair-counting adjusted Rand index."""
    a = np.asarray(labels_a)
    b = np.asarray(labels_b)
    n = len(a)
    ca, cb = np.unique(a), np.unique(b)
    comb2 = lambda x: x * (x - 1) / 2.0
    sum_ij = 0.0
    for u in ca:
        for v in cb:
            sum_ij += comb2(np.sum((a == u) & (b == v)))
    sum_a = sum(comb2(np.sum(a == u)) for u in ca)
    sum_b = sum(comb2(np.sum(b == v)) for v in cb)
    total = comb2(n)
    expected = sum_a * sum_b / total if total else 0.0
    max_index = 0.5 * (sum_a + sum_b)
    if max_index == expected:
        return 1.0 if sum_ij == expected else 0.0
    return float((sum_ij - expected) / (max_index - expected))


# ---------------------------------------------------------------------------
# linear probe

def _softmax_rows(z):
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _train_logreg(x, y, n_classes, rng, steps=300, lr=0.5, l2=1e-4):
    w = 0.01 * rng.standard_normal((x.shape[1], n_classes))
    b = np.zeros(n_classes)
    onehot = np.eye(n_classes)[y]
    for _ in range(steps):
        p = _softmax_rows(x @ w + b)
        g = (p - onehot) / len(y)
        w -= lr * (x.T @ g + l2 * w)
        b -= lr * g.sum(axis=0)
    return w, b


@dataclass
class EvalReport:
    macro_f1_mean: float = 0.0
    macro_f1_std: float = 0.0
    micro_f1_mean: float = 0.0
    micro_f1_std: float = 0.0
    auc_mean: float = 0.0
    auc_std: float = 0.0
    nmi: float = 0.0
    ari: float = 0.0
    config: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "macro_f1": {"mean": self.macro_f1_mean, "std": self.macro_f1_std},
            "micro_f1": {"mean": self.micro_f1_mean, "std": self.micro_f1_std},
            "auc": {"mean": self.auc_mean, "std": self.auc_std},
            "clustering": {"nmi": self.nmi, "ari": self.ari},
            "config": self.config,
        }


def linear_probe(embeddings, labels, split, repeats=5, seed=0) -> dict:
    """Multinomial logistic regression on the frozen embeddings; metrics on
    the test split, mean +/- std over re-initialized repeats."""
    emb = np.asarray(embeddings, dtype=np.float64)
    labels = np.asarray(labels)
    if emb.shape[0] != len(labels):
        raise ConfigError("embeddings and labels disagree on node count")
    train_idx = np.asarray(split["train"], dtype=np.int64)
    test_idx = np.asarray(split["test"], dtype=np.int64)
    for idx in (train_idx, test_idx):
        if len(idx) and (idx.min() < 0 or idx.max() >= len(labels)):
            raise ConfigError("split index out of range for labels")
    # frozen: standardize with train statistics only
    mu = emb[train_idx].mean(axis=0)
    sd = emb[train_idx].std(axis=0) + 1e-8
    x = (emb - mu) / sd
    n_classes = int(labels.max()) + 1
    macros, micros, aucs = [], [], []
    for r in range(repeats):
        rng = np.random.default_rng((seed, r))
        w, b = _train_logreg(x[train_idx], labels[train_idx], n_classes, rng)
        scores = _softmax_rows(x[test_idx] @ w + b)
        pred = scores.argmax(axis=1)
        ma, mi = macro_micro_f1(labels[test_idx], pred)
        macros.append(ma)
        micros.append(mi)
        aucs.append(ovr_macro_auc(labels[test_idx], scores))
    return {
        "macro_f1": (float(np.mean(macros)), float(np.std(macros))),
        "micro_f1": (float(np.mean(micros)), float(np.std(micros))),
        "auc": (float(np.mean(aucs)), float(np.std(aucs))),
    }


def clustering_eval(embeddings, labels, s, repeats=5, seed=0) -> tuple:
    """Best-of-repeats k-means by inertia; NMI/ARI of that run vs labels."""
    emb = np.asarray(embeddings, dtype=np.float64)
    labels = np.asarray(labels)
    best = None
    best_inertia = np.inf
    for r in range(repeats):
        c = kmeans(emb, s, seed=int(np.random.default_rng((seed, r)).integers(2**31)))
        w = inertia(emb, c)
        if w < best_inertia:
            best, best_inertia = c, w
    return nmi_score(labels, best.assignments), ari_score(labels, best.assignments)


def build_report(embeddings, labels, split, s, repeats=5, seed=0,
                 config=None) -> EvalReport:
    probe = linear_probe(embeddings, labels, split, repeats, seed)
    nmi, ari = clustering_eval(embeddings, labels, s, repeats, seed)
    return EvalReport(
        macro_f1_mean=probe["macro_f1"][0], macro_f1_std=probe["macro_f1"][1],
        micro_f1_mean=probe["micro_f1"][0], micro_f1_std=probe["micro_f1"][1],
        auc_mean=probe["auc"][0], auc_std=probe["auc"][1],
        nmi=nmi, ari=ari, config=config or {},
    )


_CSV_COLUMNS = ["macro_f1_mean", "macro_f1_std", "micro_f1_mean",
                "micro_f1_std", "auc_mean", "auc_std", "nmi", "ari"]


def export_report(report: EvalReport, path: str):
    """JSON report plus a flat CSV row for sweep aggregation."""
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path + ".json", "w") as f:
        json.dump(report.to_dict(), f, indent=1, sort_keys=True)
    with open(path + ".csv", "w") as f:
        f.write(",".join(_CSV_COLUMNS) + "\n")
        f.write(",".join(f"{getattr(report, c):.17g}" for c in _CSV_COLUMNS) + "\n")
