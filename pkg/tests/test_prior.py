import numpy as np
import pytest

from bnnprior.errors import InvalidConfig, NumericalFailure
from bnnprior.family import DiagGaussian, IsotropicPrior
from bnnprior.losses import DomainLossSpec, phi_sq_sum
from bnnprior.nn import ArchSpec
from bnnprior.optim import Adam
from bnnprior.prior import (PriorTrainConfig, SwagPriorConfig, elbo_gradient, elbo_step, init_variational,
                            train_prior, train_swag_prior)
from oracles import central_diff, rel_err


class FirstWeight:
    """phi(h_w, x) = w[0] for every row: a quadratic toy with a Gaussian optimum."""

    kind = "toy"

    def terms(self, arch, params, X, mask=None):
        n = len(X)

        def vjp(c):
            g = np.zeros(arch.n_params)
            g[0] = float(np.sum(c))
            return g
        return np.full(n, params[0]), vjp


class Poison:
    kind = "toy"

    def terms(self, arch, params, X, mask=None):
        return np.full(len(X), np.nan), lambda c: np.zeros(arch.n_params)


TOY_ARCH = ArchSpec((1, 1))


def test_elbo_gradient_matches_finite_differences(rng):
    arch = ArchSpec((4, 3, 4), "softplus")
    spec = DomainLossSpec("energy_damping")
    X = rng.normal(size=(5, 4)) * 0.5
    cfg = PriorTrainConfig(rank=2, mc_samples=3, base_prior_variance=0.5, tau=2.0, beta=0.7)
    q = init_variational(arch, cfg, np.random.default_rng(0))
    q = q.replace(mu=q.mu * 5, factors=q.factors * 3)

    def objective(mu, V):
        return elbo_gradient(q.replace(mu=mu, factors=V), X, spec, cfg, np.random.default_rng(9))[0]

    _, (g_mu, g_V), _ = elbo_gradient(q, X, spec, cfg, np.random.default_rng(9))
    assert rel_err(-g_mu, central_diff(lambda m: objective(m, q.factors), q.mu)) <= 1e-4
    assert rel_err(-g_V, central_diff(lambda V: objective(q.mu, V), q.factors)) <= 1e-4


def test_elbo_gradient_diag_family_fd(rng):
    arch = ArchSpec((4, 3, 4), "softplus")
    spec = DomainLossSpec("energy_damping")
    X = rng.normal(size=(4, 4)) * 0.5
    cfg = PriorTrainConfig(family="diag", mc_samples=2, init_scale=0.5)
    q = init_variational(arch, cfg, np.random.default_rng(1))

    def objective(mu, ls):
        return elbo_gradient(q.replace(mu=mu, log_std=ls), X, spec, cfg, np.random.default_rng(4))[0]

    _, (g_mu, g_ls), _ = elbo_gradient(q, X, spec, cfg, np.random.default_rng(4))
    assert rel_err(-g_mu, central_diff(lambda m: objective(m, q.log_std), q.mu)) <= 1e-4
    assert rel_err(-g_ls, central_diff(lambda s: objective(q.mu, s), q.log_std)) <= 1e-4


def test_mu_gradient_is_mean_of_per_sample_gradients(rng):
    arch = ArchSpec((4, 3, 4), "softplus")
    spec = DomainLossSpec("energy_damping")
    X = rng.normal(size=(5, 4))
    cfg = PriorTrainConfig(rank=2, mc_samples=4, tau=1.5)
    q = init_variational(arch, cfg, np.random.default_rng(0))
    _, (g_mu, _), _ = elbo_gradient(q, X, spec, cfg, np.random.default_rng(2))
    r = np.random.default_rng(2)
    total = np.zeros(q.dim)
    for _ in range(4):
        w = q.sample_with_noise(*q.draw_noise(r))
        total += phi_sq_sum(arch, w, X, spec)[1]
    expected = total / 4 / (2 * 1.5 ** 2) + q.mu / cfg.base_prior_variance
    assert rel_err(g_mu, expected) <= 1e-12


def test_zero_learning_rate_is_noop(rng):
    cfg = PriorTrainConfig(rank=1, learning_rate=0.0)
    q = init_variational(TOY_ARCH, cfg, rng)
    q2, _ = elbo_step(q, np.zeros((3, 1)), FirstWeight(), cfg, rng)
    assert np.array_equal(q.mu, q2.mu) and np.array_equal(q.factors, q2.factors)


def test_empty_mask_drives_q_to_prior():
    arch = ArchSpec((3, 2), "relu", "softmax")
    spec = DomainLossSpec("background")
    cfg = PriorTrainConfig(family="diag", learning_rate=0.05, epochs=300, batch_size=4, mc_samples=1,
                           init_scale=0.5, base_prior_variance=0.3)
    q, curve = train_prior(arch, np.zeros((4, 3)), spec, cfg, np.random.default_rng(0))
    assert curve[-1]["kl"] < 1e-3 * curve[0]["kl"]
    assert curve[-1]["objective"] == pytest.approx(-curve[-1]["kl"])


def test_quadratic_toy_matches_conjugate_posterior():
    k, tau, s2 = 20, 1.0, 0.5
    cfg = PriorTrainConfig(family="diag", tau=tau, base_prior_variance=s2, learning_rate=0.02, epochs=1500,
                           batch_size=k, mc_samples=8, init_scale=1.0)
    q, _ = train_prior(TOY_ARCH, np.zeros((k, 1)), FirstWeight(), cfg, np.random.default_rng(3),
                       q0=DiagGaussian(np.array([1.5, 0.5]), np.log([0.5, 0.5]), arch=TOY_ARCH))
    post_var = 1.0 / (k / tau ** 2 + 1.0 / s2)
    assert abs(q.mu[0]) <= 1e-2
    assert q.std[0] ** 2 == pytest.approx(post_var, rel=0.2)
    assert abs(q.mu[1]) <= 1e-2


def test_zero_epochs_returns_initialization():
    cfg = PriorTrainConfig(rank=2, epochs=0)
    q, curve = train_prior(TOY_ARCH, np.zeros((3, 1)), FirstWeight(), cfg, np.random.default_rng(5))
    q0 = init_variational(TOY_ARCH, cfg, np.random.default_rng(5))
    assert curve == [] and np.array_equal(q.mu, q0.mu) and np.array_equal(q.factors, q0.factors)


def test_training_is_deterministic():
    arch = ArchSpec((4, 5, 4))
    X = np.random.default_rng(0).normal(size=(30, 4))
    cfg = PriorTrainConfig(rank=2, epochs=2, batch_size=8, learning_rate=1e-3)
    a, ca = train_prior(arch, X, DomainLossSpec("energy_damping"), cfg, np.random.default_rng(1))
    b, cb = train_prior(arch, X, DomainLossSpec("energy_damping"), cfg, np.random.default_rng(1))
    assert np.array_equal(a.mu, b.mu) and np.array_equal(a.factors, b.factors) and ca == cb


def test_non_finite_objective_reports_epoch():
    cfg = PriorTrainConfig(rank=1, epochs=2)
    with pytest.raises(NumericalFailure, match="epoch 1"):
        train_prior(TOY_ARCH, np.zeros((3, 1)), Poison(), cfg, np.random.default_rng(0))


def test_kl_non_increasing_in_beta():
    kls = []
    for beta in (0.1, 1.0, 10.0):
        vals = []
        for seed in range(5):
            cfg = PriorTrainConfig(family="diag", beta=beta, learning_rate=0.05, epochs=200, batch_size=10,
                                   mc_samples=2, base_prior_variance=1.0)
            q, _ = train_prior(TOY_ARCH, np.zeros((10, 1)), FirstWeight(), cfg, np.random.default_rng(seed))
            vals.append(q.kl_to_isotropic(IsotropicPrior(1.0)))
        kls.append(np.mean(vals))
    assert kls[0] >= kls[1] >= kls[2]


def test_config_validation():
    with pytest.raises(InvalidConfig):
        PriorTrainConfig(tau=0)
    with pytest.raises(InvalidConfig):
        PriorTrainConfig(family="full")
    with pytest.raises(InvalidConfig):
        SwagPriorConfig(snapshots_per_component=0)
    with pytest.raises(InvalidConfig):
        SwagPriorConfig(components=0)


def test_swag_prior_constant_objective_hits_floor():
    arch = ArchSpec((3, 2), "relu", "softmax")
    cfg = SwagPriorConfig(components=2, warmup_epochs=1, snapshot_interval_epochs=1, snapshots_per_component=3,
                          batch_size=4)
    mix = train_swag_prior(arch, np.zeros((4, 3)), DomainLossSpec("background"), cfg, 1.0, 1e12,
                           np.random.default_rng(0))
    assert mix.K == 2
    for c in mix.components:
        assert c.rank == 2
        assert np.allclose(c.factors, 0, atol=1e-9)
        assert np.allclose(c.diag, 0.5 * 1e-8 + 1e-6)
    assert not np.array_equal(mix.components[0].mu, mix.components[1].mu)


def test_swag_prior_components_pd_and_finite(rng):
    arch = ArchSpec((4, 6, 4))
    X = rng.normal(size=(40, 4)) * 0.5
    cfg = SwagPriorConfig(components=3, warmup_epochs=2, snapshot_interval_epochs=1, snapshots_per_component=3,
                          batch_size=10, learning_rate=1e-3)
    mix = train_swag_prior(arch, X, DomainLossSpec("energy_damping"), cfg, 1.0, 0.1, rng)
    for c in mix.components:
        assert np.all(np.linalg.eigvalsh(c.covariance()) > 0)
    assert np.all(np.isfinite(mix.sample(rng, size=5)))


def test_adam_single_step_direction():
    opt = Adam(0.1)
    (p,) = opt.step([np.array([1.0, -1.0])], [np.array([2.0, -3.0])])
    assert np.allclose(p, [0.9, -0.9])
