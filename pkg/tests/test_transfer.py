import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bnnprior import nn
from bnnprior.checkpoint import priors_equal
from bnnprior.errors import InvalidConfig
from bnnprior.family import LowRankGaussian
from bnnprior.nn import ArchSpec
from bnnprior.prior import SwagPriorConfig
from bnnprior.transfer import (TransferConfig, function_samples, median_bandwidth, mmd2, mmd_objective,
                               moment_objective, transfer, transfer_m1_swag)
from oracles import central_diff, median_bandwidth_brute, mmd2_loops, rel_err

ARCH = ArchSpec((2, 8, 1), "relu")
BIG = ArchSpec((2, 16, 1), "relu")


def constant_source(c=0.7):
    """All mass on the network that outputs ``c`` everywhere."""
    mu = np.zeros(ARCH.n_params)
    mu[-1] = c
    return LowRankGaussian(mu, np.zeros((ARCH.n_params, 1)), 1e-6, arch=ARCH)


def test_mmd_singleton_and_identity(frozen):
    assert abs(mmd2([[0.0]], [[2.0]], 1.0) - frozen["mmd_singleton"]) <= 1e-12
    W = np.random.default_rng(0).normal(size=(6, 3))
    assert mmd2(W, W, 0.8) == 0.0


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 6), st.integers(1, 6), st.integers(1, 4), st.floats(0.2, 3.0), st.integers(0, 10 ** 6))
def test_mmd_properties(nw, nu, d, gamma, seed):
    r = np.random.default_rng(seed)
    W, U = r.normal(size=(nw, d)), r.normal(size=(nu, d))
    v = mmd2(W, U, gamma)
    assert v >= -1e-12
    assert math.isclose(v, mmd2(U, W, gamma), rel_tol=1e-12, abs_tol=1e-14)
    assert math.isclose(v, mmd2(W[r.permutation(nw)], U[r.permutation(nu)], gamma), rel_tol=1e-10, abs_tol=1e-14)
    assert math.isclose(v, mmd2_loops(W.tolist(), U.tolist(), gamma), rel_tol=1e-9, abs_tol=1e-12)


def test_mmd_objective_gradient(rng):
    W, U = rng.normal(size=(5, 3)), rng.normal(size=(4, 3))
    v, g = mmd_objective(W, U, 1.3)
    assert math.isclose(v, mmd2(W, U, 1.3), rel_tol=1e-12)
    assert rel_err(g, central_diff(lambda u: mmd2(W, u, 1.3), U)) <= 1e-6


@pytest.mark.parametrize("second", [False, True])
def test_moment_objective_gradient(second, rng):
    W, U = rng.normal(size=(5, 3)), rng.normal(size=(4, 3))
    _, g = moment_objective(W, U, second)
    assert rel_err(g, central_diff(lambda u: moment_objective(W, u, second)[0], U)) <= 1e-6


def test_median_bandwidth():
    rows = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])  # squared distances 1, 1, 2
    assert median_bandwidth(rows) == pytest.approx(math.sqrt(0.5))
    assert median_bandwidth(np.ones((2, 3))) == 1e-6
    r = np.random.default_rng(1).normal(size=(5, 4))
    assert median_bandwidth(r) == pytest.approx(median_bandwidth_brute(r.tolist()), rel=1e-12)


def test_function_samples_layout(rng):
    arch = ArchSpec((3, 4, 2))
    q = LowRankGaussian(rng.normal(size=arch.n_params), np.zeros((arch.n_params, 1)), 1e-6, arch=arch)
    X = rng.normal(size=(5, 3))
    F = function_samples(q, arch, X, 4, rng)
    assert F.shape == (4, 10)
    assert np.max(np.abs(F - F[0])) <= 1e-3
    assert np.allclose(F[0].reshape(5, 2), nn.forward(arch, q.mu, X), atol=1e-3)
    single = function_samples(constant_source(0.3), ARCH, X[:, :2], 1, rng)
    assert single.shape == (1, 5) and np.allclose(single, 0.3, atol=1e-4)


def test_function_sample_mean_converges(rng):
    arch = ArchSpec((2, 1))
    q = LowRankGaussian(rng.normal(size=3), rng.normal(size=(3, 2)), 0.1, arch=arch)
    X = rng.normal(size=(4, 2))
    F = function_samples(q, arch, X, 10_000, rng)
    # linear net: the mean function is the network at the mean weights
    se = F.std(axis=0) / 100
    assert np.all(np.abs(F.mean(axis=0) - nn.forward(arch, q.mu, X).ravel()) <= 4 * se)


def test_self_transfer_objective_near_zero(rng):
    q = LowRankGaussian(rng.normal(size=ARCH.n_params) * 0.3, rng.normal(size=(ARCH.n_params, 2)) * 0.1, 1e-3,
                        arch=ARCH)
    X = rng.normal(size=(10, 2))
    for method in ("m1", "mmd"):
        cfg = TransferConfig(method=method, epochs=1, init_from_source=True, learning_rate=0.0,
                             n_function_samples=64, kernel_bandwidth="median")
        target, hist = transfer(q, ARCH, cfg, X, np.random.default_rng(2))
        assert np.array_equal(target.mu, q.mu)
        # MC noise scale for the estimators at n = 64 per side
        assert hist[0] <= 0.05


def test_m1_collapses_to_constant(rng):
    X = rng.normal(size=(8, 2))
    cfg = TransferConfig(method="m1", epochs=400, learning_rate=1e-2, n_function_samples=16, rank=2)
    target, hist = transfer(constant_source(0.7), BIG, cfg, X, rng)
    assert hist[-1] <= 1e-3


def test_mmd_moves_target_toward_constant(rng):
    X = rng.normal(size=(8, 2))
    cfg = TransferConfig(method="mmd", epochs=300, learning_rate=1e-2, n_function_samples=16, rank=2)
    src = constant_source(0.7)
    before = np.abs(function_samples(
        transfer(src, BIG, TransferConfig(method="mmd", epochs=0, rank=2), X, rng)[0], BIG, X, 64, rng) - 0.7).mean()
    target, _ = transfer(src, BIG, cfg, X, rng)
    after = np.abs(function_samples(target, BIG, X, 64, rng) - 0.7).mean()
    assert after < before and after <= 0.1


def test_m1_swag_regresses_mean_function(rng):
    X = rng.normal(size=(16, 2))
    cfg = TransferConfig(method="m1_swag", epochs=3000, n_function_samples=4,
                         swag=SwagPriorConfig(warmup_epochs=0, snapshot_interval_epochs=10,
                                              snapshots_per_component=3, batch_size=16, learning_rate=0.2))
    mix, fit = transfer_m1_swag(constant_source(0.7), BIG, cfg, X, rng)
    assert mix.K == 1
    assert np.max(np.abs(nn.forward(BIG, mix.components[0].mu, X) - 0.7)) <= 1e-2
    with pytest.raises(InvalidConfig):
        transfer_m1_swag(constant_source(), BIG, TransferConfig(method="m1_swag", epochs=0), X, rng)


def test_transfer_leaves_source_untouched(rng):
    src = LowRankGaussian(rng.normal(size=ARCH.n_params), rng.normal(size=(ARCH.n_params, 2)), 1e-3, arch=ARCH)
    before = LowRankGaussian(src.mu.copy(), src.factors.copy(), src.jitter_sigma, arch=ARCH)
    X = rng.normal(size=(4, 2))
    for method in ("m1", "m1m2", "mmd", "m1_swag"):
        transfer(src, BIG, TransferConfig(method=method, epochs=3, n_function_samples=4,
                                          swag=SwagPriorConfig(warmup_epochs=0, snapshot_interval_epochs=1,
                                                               snapshots_per_component=2)), X, rng)
        assert priors_equal(src, before)


def test_config_validation():
    with pytest.raises(InvalidConfig):
        TransferConfig(method="gan")
    with pytest.raises(InvalidConfig):
        TransferConfig(method="mmd", n_function_samples=1)
    with pytest.raises(InvalidConfig):
        TransferConfig(kernel_bandwidth=-1.0)
    assert TransferConfig(method="m1-swag").method == "m1_swag"
