"""Smoke tests for the python bindings: known values and round trips."""

import math

import numpy as np
import pytest

import fidgp


def test_cholesky_known_factor():
    a = np.array([[4.0, 2.0], [2.0, 5.0]])
    l, jitter = fidgp.cholesky_jittered(a)
    assert jitter == 0.0
    np.testing.assert_allclose(l, [[2.0, 0.0], [1.0, 2.0]], atol=1e-12)


def test_spectral_norm_matches_numpy():
    rng = np.random.default_rng(3)
    w = rng.normal(size=(7, 5))
    sigma = fidgp.spectral_norm(w, iters=5000, seed=1)
    assert sigma == pytest.approx(np.linalg.svd(w, compute_uv=False)[0], rel=1e-6)


def test_ridge_projector_eigenvalues():
    rng = np.random.default_rng(5)
    u = rng.normal(size=(2, 4))
    p = fidgp.ridge_projector(u, 1e-3)
    np.testing.assert_allclose(p, p.T, atol=1e-10)
    eigs = np.linalg.eigvalsh(p)
    assert eigs.min() >= -1e-12
    assert eigs.max() <= 1.0 + 1e-12


def test_conditional_gaussian_closed_form():
    mean, cov = fidgp.conditional_gaussian(
        np.zeros(2), np.array([[2.0, 1.0], [1.0, 2.0]]), 1, np.array([1.0])
    )
    assert mean[0] == pytest.approx(0.5)
    assert cov[0, 0] == pytest.approx(1.5)


def test_kl_closed_forms():
    assert fidgp.conditional_weight_kl(1, 1.0) == 0.0
    assert fidgp.conditional_weight_kl(2, 0.5) == pytest.approx(0.636294, abs=1e-5)
    assert fidgp.diag_gaussian_kl(np.array([1.0]), np.array([0.0]), 10.0) == pytest.approx(0.5)


def test_flow_roundtrip_and_density():
    flow = fidgp.FlowPrior.create(8, depth=4, hidden=16, seed=7)
    u0 = np.random.default_rng(9).normal(size=8)
    u, logdet = flow.forward(u0)
    np.testing.assert_allclose(u, u0)  # identity at initialization
    assert logdet == 0.0
    back = flow.inverse(u)
    np.testing.assert_allclose(back, u0, atol=1e-12)
    # standard normal at the origin
    assert flow.log_prior_density(np.zeros(8)) == pytest.approx(-4.0 * math.log(2 * math.pi))


def test_matheron_mean():
    rng = np.random.default_rng(11)
    t_row = rng.normal(size=(3, 2))
    t_col = rng.normal(size=(3, 2))
    u = rng.normal(size=(2, 2))
    draws = np.stack(
        [fidgp.matheron_sample(t_row, t_col, u, 1.0, 0.05, seed) for seed in range(3000)]
    )
    expected = fidgp.matrix_normal_cond_mean(t_row, t_col, u)
    np.testing.assert_allclose(draws.mean(axis=0), expected, atol=0.01)


def test_auroc_hand_value():
    assert fidgp.auroc(np.array([0.1, 0.4]), np.array([0.3, 0.9])) == pytest.approx(0.75)


def test_count_params_table_sweep():
    for m, target in [(32, 1.35e6), (64, 2.66e6), (128, 5.51e6), (256, 12.1e6)]:
        report = fidgp.count_params("resnet18", m_in=m, m_out=m)
        assert abs(report["total"] - target) / target <= 0.05


def test_training_pipeline_and_checkpoint(tmp_path):
    config = """
task = regression1d
epochs = 15
inducing.m_out = 4
inducing.m_in = 4
flow.depth = 2
flow.hidden = 4
backbone.hidden_width = 12
data.n_per_cluster = 25
"""
    model, trace = fidgp.train_from_config(config)
    assert len(trace) == 15
    assert trace[-1].loglik > trace[0].loglik

    grid = fidgp.gen_regression1d(25, 42)["x_test"].reshape(-1, 1)
    mean, std = model.predict(grid, n_samples=8, mode="reparam", seed=3)
    assert mean.shape == (200, 1)
    assert np.isfinite(mean).all() and np.isfinite(std).all()

    path = str(tmp_path / "model.ckpt")
    fidgp.save_checkpoint(path, model, config)
    loaded, echoed = fidgp.load_checkpoint(path)
    m2, s2 = loaded.predict(grid, n_samples=8, mode="reparam", seed=3)
    np.testing.assert_array_equal(mean, m2)
    np.testing.assert_array_equal(std, s2)
    assert "task = regression1d" in echoed


def test_selfcheck_passes():
    for entry in fidgp.selfcheck(seed=42):
        assert entry["passed"], f"{entry['name']}: {entry['detail']}"
