"""Loss hand-values, gradient checks, and the gradient-balance identity."""

import json

import numpy as np
import pytest
import scipy.sparse as sp

from hetcrf import diffcore as dc
from hetcrf import objectives as obj
from hetcrf.errors import ConfigError
from hetcrf.graph import SparseAdj
from hetcrf.metapath import PosMatrix


def test_loss_weights_validation():
    w = obj.LossWeights()
    assert abs(w.contrastive_weight - 1.0 / 3.0) < 1e-12
    with pytest.raises(ConfigError):
        obj.LossWeights(lambda1=0.8, lambda2=0.3)
    with pytest.raises(ConfigError):
        obj.LossWeights(gamma1=0.5)
    with pytest.raises(ConfigError):
        obj.LossWeights(tau=0.0)


def test_scaled_cosine_error_hand_values():
    # identical rows -> 0; orthogonal rows -> 1; opposite rows -> 2^gamma
    t = dc.constant(np.array([[1.0, 0.0], [1.0, 0.0], [1.0, 0.0]]))
    p = dc.constant(np.array([[2.0, 0.0], [0.0, 5.0], [-1.0, 0.0]]))
    for gamma, want in [(1.0, (0.0 + 1.0 + 2.0) / 3),
                        (2.0, (0.0 + 1.0 + 4.0) / 3),
                        (3.0, (0.0 + 1.0 + 8.0) / 3)]:
        loss = obj.scaled_cosine_error(t, p, [0, 1, 2], gamma)
        assert abs(loss.item() - want) < 1e-12


def test_scaled_cosine_error_row_subset():
    t = dc.constant(np.array([[1.0, 0.0], [0.0, 1.0]]))
    p = dc.constant(np.array([[0.0, 1.0], [0.0, 1.0]]))
    assert abs(obj.scaled_cosine_error(t, p, [1], 2.0).item()) < 1e-12
    assert abs(obj.scaled_cosine_error(t, p, [0], 2.0).item() - 1.0) < 1e-12


def test_scaled_cosine_error_zero_norm_diagnostics():
    t = dc.constant(np.array([[0.0, 0.0], [1.0, 0.0]]))
    p = dc.constant(np.array([[1.0, 0.0], [1.0, 0.0]]))
    diag = {}
    loss = obj.scaled_cosine_error(t, p, [0, 1], 2.0, diagnostics=diag)
    assert diag["zero_norm_rows"] == 1
    assert abs(loss.item() - 0.5) < 1e-12   # (1-0)^2 / 2 + 0
    with pytest.raises(ConfigError):
        obj.scaled_cosine_error(t, p, [0], 0.5)


@pytest.mark.parametrize("seed", range(20))
def test_scaled_cosine_error_grad(seed):
    rng = np.random.default_rng(seed)
    t = rng.standard_normal((5, 4))
    p = rng.standard_normal((5, 4))
    rows = np.array([0, 2, 4])
    rep = dc.grad_check(
        lambda vs: obj.scaled_cosine_error(dc.constant(t), vs[0], rows, 2.0), [p])
    assert rep["passed"], rep["max_rel_err"]


@pytest.mark.parametrize("seed", range(20))
def test_metapath_recon_loss_grad(seed):
    rng = np.random.default_rng(seed)
    n = 6
    a = SparseAdj.from_dense((rng.random((n, n)) < 0.4).astype(float))
    b = SparseAdj.from_dense((rng.random((n, n)) < 0.4).astype(float))
    z1, z2 = rng.standard_normal((n, n)), rng.standard_normal((n, n))
    alpha = dc.constant(np.array([[0.4], [0.6]]))

    def fn(vs):
        return obj.metapath_recon_loss([a, b], [dc.sigmoid(vs[0]),
                                                dc.sigmoid(vs[1])], alpha, 2.0)
    rep = dc.grad_check(fn, [z1, z2])
    assert rep["passed"], rep["max_rel_err"]


def test_metapath_recon_loss_alpha_weighting():
    n = 4
    a = SparseAdj.from_dense(np.eye(n))
    perfect = dc.constant(np.eye(n))
    wrong = dc.constant(np.roll(np.eye(n), 1, axis=1))
    alpha = dc.constant(np.array([[0.3], [0.7]]))
    loss = obj.metapath_recon_loss([a, a], [perfect, wrong], alpha, 1.0)
    assert abs(loss.item() - 0.7 * 1.0) < 1e-12   # wrong rows orthogonal
    with pytest.raises(ConfigError):
        obj.metapath_recon_loss([a], [perfect, wrong], alpha, 1.0)


def test_contrastive_loss_two_node_hand_value():
    # 2 orthonormal rows, identical views, self-positive only, tau=1:
    # numerator e^1, denominator e^1 + e^0 -> loss = -log(e/(e+1))
    z = np.array([[1.0, 0.0], [0.0, 1.0]])
    p = PosMatrix.identity(2)
    loss = obj.contrastive_loss(dc.constant(z), dc.constant(z), p, tau=1.0)
    want = -np.log(np.e / (np.e + 1.0))
    assert abs(loss.item() - want) < 1e-12


def test_contrastive_loss_high_temperature_limit():
    # tau -> inf: logits flatten, loss -> log(N / |P|)
    rng = np.random.default_rng(0)
    n = 8
    z1, z2 = rng.standard_normal((n, 4)), rng.standard_normal((n, 4))
    dense = np.eye(n)
    dense[0, 1] = dense[1, 0] = 1.0   # |P| = 2 for nodes 0, 1
    p = PosMatrix(sp.csr_matrix(dense))
    loss = obj.contrastive_loss(dc.constant(z1), dc.constant(z2), p, tau=1e8)
    sizes = dense.sum(axis=1)
    want = np.mean(np.log(n / sizes))
    assert abs(loss.item() - want) < 1e-6


@pytest.mark.parametrize("seed", range(20))
def test_contrastive_loss_grad(seed):
    rng = np.random.default_rng(seed)
    n = 6
    z1, z2 = rng.standard_normal((n, 3)), rng.standard_normal((n, 3))
    p = PosMatrix(sp.csr_matrix((rng.random((n, n)) < 0.3).astype(float)))
    rep = dc.grad_check(
        lambda vs: obj.contrastive_loss(vs[0], vs[1], p, tau=0.5), [z1, z2])
    assert rep["passed"], rep["max_rel_err"]


def test_contrastive_loss_symmetrize_flag():
    rng = np.random.default_rng(1)
    n = 5
    z1, z2 = rng.standard_normal((n, 3)), rng.standard_normal((n, 3))
    dense = np.eye(n)
    dense[0, 2] = 1.0   # asymmetric positive set
    p = PosMatrix(sp.csr_matrix(dense))
    sym = obj.contrastive_loss(dc.constant(z1), dc.constant(z2), p, 0.5,
                               symmetrize=True)
    fwd = obj.contrastive_loss(dc.constant(z1), dc.constant(z2), p, 0.5,
                               symmetrize=False)
    rev = obj.contrastive_loss(dc.constant(z2), dc.constant(z1),
                               PosMatrix(sp.csr_matrix(dense.T)), 0.5,
                               symmetrize=False)
    assert abs(sym.item() - 0.5 * (fwd.item() + rev.item())) < 1e-12
    with pytest.raises(ConfigError):
        obj.contrastive_loss(dc.constant(z1), dc.constant(z2), p, tau=-1.0)


def test_combined_loss_identity():
    lf = dc.constant(np.array([[0.7]]))
    lm = dc.constant(np.array([[0.2]]))
    lc = dc.constant(np.array([[1.1]]))
    w = obj.LossWeights(lambda1=0.5, lambda2=0.25)
    loss = obj.combined_loss(lf, lm, lc, w)
    assert abs(loss.item() - (0.5 * 0.7 + 0.25 * 0.2 + 0.25 * 1.1)) < 1e-12


@pytest.mark.parametrize("tau", [0.2, 0.5, 1.0])
@pytest.mark.parametrize("n_pos", [1, 2, 4, 8, 16])
def test_gradient_balance_identity(tau, n_pos):
    rng = np.random.default_rng(int(tau * 10) * 100 + n_pos)
    n, d = 40, 16
    z = rng.standard_normal((n, d))
    anchor = 3
    positives = [j for j in rng.permutation(n) if j != anchor][:n_pos]
    rep = obj.gradient_balance_probe(z, anchor, positives, tau)
    assert rep["residual_norm"] <= 1e-10
    assert abs(rep["softmax_total"] - 1.0) <= 1e-12
    np.testing.assert_allclose(rep["pos_grad_sum"], -rep["neg_grad_sum"],
                               atol=1e-12)


def test_gradient_balance_probe_validation():
    z = np.random.default_rng(0).standard_normal((5, 3))
    with pytest.raises(ConfigError):
        obj.gradient_balance_probe(z, 0, [], 0.5)
    with pytest.raises(ConfigError):
        obj.gradient_balance_probe(z, 0, [0, 1], 0.5)
    with pytest.raises(ConfigError):
        obj.gradient_balance_probe(z, 0, [1], -0.5)


@pytest.mark.parametrize("seed", range(10))
def test_probe_matches_autodiff(seed):
    rng = np.random.default_rng(seed)
    n, d = 12, 5
    z = rng.standard_normal((n, d))
    anchor = int(rng.integers(n))
    n_pos = int(rng.integers(1, 5))
    positives = [j for j in rng.permutation(n) if j != anchor][:n_pos]
    rep = obj.gradient_balance_probe(z, anchor, positives, tau=0.5)
    _, grads = obj.probe_loss_autodiff(z, anchor, positives, tau=0.5)
    for j, g in rep["per_sample_grads"].items():
        np.testing.assert_allclose(g, grads[j], atol=1e-8)


def test_probe_report_json_roundtrips():
    rng = np.random.default_rng(2)
    z = rng.standard_normal((10, 4))
    rep = obj.gradient_balance_probe(z, 0, [1, 2], tau=0.5)
    parsed = json.loads(obj.probe_report_json([rep]))
    assert parsed[0]["anchor"] == 0
    assert parsed[0]["n_positives"] == 2
    assert parsed[0]["residual_norm"] <= 1e-10
    assert set(parsed[0]["per_sample_grad_norms"]) == {str(j) for j in range(1, 10)}
