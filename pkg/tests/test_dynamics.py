"""Tests for graph-masked dynamics fitting and the log-reward."""

import itertools

import numpy as np
import pytest

from cycleflow.dynamics import (DynamicsDataset, FittedTheta, RewardConfig,
                                RewardEvaluator, fit_theta, log_reward,
                                predict_dx)


def linear_dataset(A, N=200, seed=0, noise=0.0):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((N, A.shape[0]))
    dx = x @ A.T
    if noise:
        dx = dx + noise * rng.standard_normal(dx.shape)
    return DynamicsDataset(x=x, dx=dx)


# ---------------------------------------------------------------------------
# dataset


def test_dataset_validation():
    with pytest.raises(ValueError):
        DynamicsDataset(x=np.zeros((3, 2)), dx=np.zeros((3, 3)))
    with pytest.raises(ValueError):
        DynamicsDataset(x=np.array([[np.inf]]), dx=np.array([[0.0]]))
    with pytest.raises(ValueError):
        DynamicsDataset(x=np.zeros((2, 2)), dx=np.zeros((2, 2)), names=["a"])


def test_dataset_csv_roundtrip(tmp_path):
    data = linear_dataset(np.array([[0.0, 1.0], [-0.5, 0.0]]), N=17, seed=3)
    x_path, dx_path = tmp_path / "x.csv", tmp_path / "dx.csv"
    data.to_csv(x_path, dx_path)
    back = DynamicsDataset.from_csv(x_path, dx_path)
    assert np.array_equal(back.x, data.x)   # repr round-trips floats exactly
    assert np.array_equal(back.dx, data.dx)
    assert back.names == ["v0", "v1"]


def test_dataset_csv_header_mismatch(tmp_path):
    (tmp_path / "x.csv").write_text("a,b\n1.0,2.0\n")
    (tmp_path / "dx.csv").write_text("a,c\n1.0,2.0\n")
    with pytest.raises(ValueError):
        DynamicsDataset.from_csv(tmp_path / "x.csv", tmp_path / "dx.csv")


def test_reward_config_validation():
    with pytest.raises(ValueError):
        RewardConfig(l0=-0.1)
    with pytest.raises(ValueError):
        RewardConfig(mode="cubic")


# ---------------------------------------------------------------------------
# fitting


def test_empty_graph_residual_is_target_norm():
    data = linear_dataset(np.array([[0.0, 0.8], [0.3, 0.0]]), N=50)
    theta = fit_theta(np.zeros((2, 2)), data, RewardConfig())
    assert np.array_equal(theta.A, np.zeros((2, 2)))
    expected = (data.dx ** 2).sum(axis=0)
    assert np.allclose(theta.residuals, expected, atol=1e-12)


def test_mask_exactness():
    A = np.array([[0.0, 0.9, 0.0],
                  [0.4, 0.0, -0.7],
                  [0.0, 0.0, 0.5]])
    data = linear_dataset(A, N=100, noise=0.1, seed=1)
    G = (A != 0).astype(int)
    theta = fit_theta(G, data, RewardConfig())
    assert np.all(theta.A[G == 0] == 0.0)   # exact zeros, no leakage


def test_noiseless_recovery():
    A = np.array([[0.0, 0.9], [0.4, -0.6]])
    data = linear_dataset(A, N=100, seed=2)
    theta = fit_theta((A != 0).astype(int), data, RewardConfig(ridge=0.0))
    assert np.allclose(theta.A, A, atol=1e-8)
    assert theta.residuals.sum() < 1e-12


def test_duplicate_column_residual_equality():
    # the indeterminacy premise: swapping a duplicated source leaves the
    # attainable residual unchanged
    A = np.array([[0.0, 0.8, 0.0], [0.0, 0.0, 0.0], [0.0, 0.8, 0.0]])
    rng = np.random.default_rng(4)
    x = rng.standard_normal((150, 3))
    x[:, 2] = x[:, 1]                      # variable 2 duplicates variable 1
    dx = x @ A.T
    data = DynamicsDataset(x=x, dx=dx)
    cfg = RewardConfig(ridge=1e-9)
    g_orig = np.array([[0, 1, 0], [0, 0, 0], [0, 1, 0]])
    g_swap = np.array([[0, 0, 1], [0, 0, 0], [0, 0, 1]])
    r1 = fit_theta(g_orig, data, cfg).residuals.sum()
    r2 = fit_theta(g_swap, data, cfg).residuals.sum()
    assert abs(r1 - r2) < 1e-10


def test_collinear_support_needs_ridge():
    rng = np.random.default_rng(5)
    x = rng.standard_normal((50, 2))
    x[:, 1] = x[:, 0]                      # perfectly collinear columns
    data = DynamicsDataset(x=x, dx=x.copy())
    G = np.ones((2, 2), dtype=int)
    with pytest.raises(np.linalg.LinAlgError):
        fit_theta(G, data, RewardConfig(ridge=0.0))
    theta = fit_theta(G, data, RewardConfig(ridge=1e-6))
    assert np.all(np.isfinite(theta.A))


def test_superset_support_never_fits_worse():
    A = np.array([[0.0, 0.7, 0.0],
                  [0.0, 0.0, 0.9],
                  [0.5, 0.0, 0.0]])
    data = linear_dataset(A, N=120, noise=0.05, seed=6)
    cfg = RewardConfig(ridge=0.0)
    g_true = (A != 0).astype(int)
    base = fit_theta(g_true, data, cfg).residuals
    superset = g_true.copy()
    superset[0, 0] = superset[1, 1] = 1
    better = fit_theta(superset, data, cfg).residuals
    assert np.all(better <= base + 1e-9)


def test_fit_is_deterministic():
    data = linear_dataset(np.array([[0.0, 1.0], [0.5, 0.0]]), N=64, seed=7)
    G = np.array([[1, 1], [0, 1]])
    a = fit_theta(G, data, RewardConfig())
    b = fit_theta(G, data, RewardConfig())
    assert np.array_equal(a.A, b.A)


def test_fit_rejects_wrong_graph_shape():
    data = linear_dataset(np.array([[0.0, 1.0], [0.5, 0.0]]), N=10)
    with pytest.raises(ValueError):
        fit_theta(np.zeros((3, 3)), data, RewardConfig())


# ---------------------------------------------------------------------------
# prediction


def test_predict_identity_linear():
    theta = FittedTheta(A=np.eye(3), residuals=np.zeros(3))
    x = np.random.default_rng(8).standard_normal((5, 3))
    assert np.array_equal(predict_dx(theta, x), x)


def test_predict_zero_sigmoid_is_half():
    theta = FittedTheta(A=np.zeros((2, 2)), residuals=np.zeros(2))
    out = predict_dx(theta, np.ones((4, 2)), mode="sigmoid")
    assert np.all(out == 0.5)


def test_predict_matches_hand_multiply():
    rng = np.random.default_rng(9)
    A = rng.standard_normal((3, 3))
    x = rng.standard_normal((6, 3))
    theta = FittedTheta(A=A, residuals=np.zeros(3))
    assert np.allclose(predict_dx(theta, x), x @ A.T, atol=1e-14)


# ---------------------------------------------------------------------------
# reward


def test_reward_zero_targets_empty_graph():
    data = DynamicsDataset(x=np.random.default_rng(0).standard_normal((20, 2)),
                           dx=np.zeros((20, 2)))
    cfg = RewardConfig(l0=0.3)
    r = log_reward(np.zeros((1, 2, 2)), data, cfg)
    assert r[0] == pytest.approx(0.0, abs=1e-12)


def test_reward_edge_penalty_is_exact_on_perfect_fit():
    # zero targets: every fit is perfect (w = 0), so adding an edge costs
    # exactly l0
    data = DynamicsDataset(x=np.random.default_rng(1).standard_normal((20, 2)),
                           dx=np.zeros((20, 2)))
    cfg = RewardConfig(l0=0.3)
    empty = np.zeros((2, 2))
    one_edge = empty.copy()
    one_edge[0, 1] = 1
    r = log_reward(np.stack([empty, one_edge]), data, cfg)
    assert r[0] - r[1] == pytest.approx(0.3, abs=1e-12)


def test_reward_ranking_matches_brute_force():
    # n=2: ranking of all 16 graphs by log-reward must agree with an
    # independent least-squares computation of (scaled error + penalty)
    A = np.array([[0.0, 0.9], [0.5, 0.0]])
    data = linear_dataset(A, N=80, noise=0.02, seed=10)
    cfg = RewardConfig(l0=0.2, ridge=1e-9)
    graphs = np.stack([np.array(bits, dtype=float).reshape(2, 2)
                       for bits in itertools.product((0, 1), repeat=4)])
    got = log_reward(graphs, data, cfg)

    expected = []
    for g in graphs:
        err = 0.0
        for i in range(2):
            support = np.flatnonzero(g[i])
            if support.size == 0:
                err += float(data.dx[:, i] @ data.dx[:, i])
                continue
            xs = data.x[:, support]
            gram = xs.T @ xs + 1e-9 * np.eye(support.size)
            w = np.linalg.solve(gram, xs.T @ data.dx[:, i])
            r = data.dx[:, i] - xs @ w
            err += float(r @ r)
        expected.append(-err / data.rows - 0.2 * g.sum())
    assert np.allclose(got, expected, atol=1e-10)
    assert np.array_equal(np.argsort(got), np.argsort(expected))


def test_reward_default_scale_is_mean_over_rows():
    data = linear_dataset(np.array([[0.0, 1.0], [0.5, 0.0]]), N=40, noise=0.1,
                          seed=11)
    g = np.zeros((1, 2, 2))
    averaged = log_reward(g, data, RewardConfig(l0=0.0))
    summed = log_reward(g, data, RewardConfig(l0=0.0, error_scale=1.0))
    assert averaged[0] == pytest.approx(summed[0] / data.rows)


def test_reward_memoization_consistency():
    data = linear_dataset(np.array([[0.0, 1.0], [0.5, 0.0]]), N=30, seed=12)
    evaluator = RewardEvaluator(data, RewardConfig())
    g = np.array([[1.0, 0.0], [0.0, 1.0]])
    first = evaluator(g[None])[0]
    assert len(evaluator._cache) == 1
    assert evaluator(g[None])[0] == first


def test_reward_sigmoid_mode_scores_sigmoid_predictions():
    A = np.array([[0.0, 0.9], [0.5, 0.0]])
    rng = np.random.default_rng(13)
    x = rng.standard_normal((60, 2))
    dx = 1.0 / (1.0 + np.exp(-(x @ A.T)))
    data = DynamicsDataset(x=x, dx=dx)
    cfg = RewardConfig(l0=0.0, mode="sigmoid")
    g_true = (A != 0).astype(float)
    r_true = log_reward(g_true[None], data, cfg)[0]
    r_empty = log_reward(np.zeros((1, 2, 2)), data, cfg)[0]
    assert np.isfinite(r_true) and np.isfinite(r_empty)
    assert r_true > r_empty   # masked fit still beats no parents at all
