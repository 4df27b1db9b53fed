"""Learning informative priors from a domain loss on unlabeled data.

Variational route: maximize

    E_q[ -sum_i phi(h_w, x_i)^2 / (2 tau^2) ] - beta * KL(q || N(0, s^2 I))

over a low-rank (or diagonal) Gaussian q with reparameterized Monte Carlo
gradients and Adam. SWAG route: plain SGD on the matching MAP objective with
weight snapshots turned into a mixture of SWAG Gaussians.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass

import numpy as np

from . import nn
from .errors import DegenerateBatch, InvalidConfig, InvalidShape, NumericalFailure
from .family import (
    DiagGaussian,
    GaussianMixturePrior,
    IsotropicPrior,
    LowRankGaussian,
    init_diag,
    init_lowrank,
)
from .losses import phi_sq_sum
from .optim import SGD, Adam
from .posterior import swag_collect, swag_to_gaussian
from .rng import derive_rng

log = logging.getLogger(__name__)


@dataclass
class PriorTrainConfig:
    tau: float = 1.0
    beta: float = 1.0
    rank: int = 10
    jitter_sigma: float = 1e-3
    base_prior_variance: float = 1.0
    mc_samples: int = 4
    learning_rate: float = 1e-2
    epochs: int = 10
    batch_size: int = 128
    seed: int = 0
    family: str = "lowrank"
    init_scale: float = 0.1

    def __post_init__(self):
        for name in ("tau", "beta", "base_prior_variance", "init_scale"):
            if not getattr(self, name) > 0:
                raise InvalidConfig(f"{name} must be positive")
        if self.learning_rate < 0 or self.epochs < 0 or self.batch_size < 1 or self.mc_samples < 1:
            raise InvalidConfig("learning_rate/epochs must be >= 0, batch_size/mc_samples >= 1")
        if self.rank < 0:
            raise InvalidConfig("rank must be >= 0")
        if self.family not in ("lowrank", "diag"):
            raise InvalidConfig(f"unknown variational family {self.family!r}")

    def to_dict(self):
        return asdict(self)


@dataclass
class SwagPriorConfig:
    components: int = 1
    warmup_epochs: int = 5
    snapshot_interval_epochs: int = 5
    snapshots_per_component: int = 3
    learning_rate: float = 1e-2
    batch_size: int = 128
    # the summed squared-phi objective is quartic in the outputs, so raw SGD
    # steps from a random start can overflow; clipping keeps the walk finite
    max_grad_norm: float | None = 10.0
    seed: int = 0

    def __post_init__(self):
        if self.components < 1:
            raise InvalidConfig("components must be >= 1")
        if self.snapshots_per_component < 1:
            raise InvalidConfig("SWAG needs at least one snapshot per component")
        if self.snapshot_interval_epochs < 1 or self.warmup_epochs < 0:
            raise InvalidConfig("bad SWAG snapshot schedule")

    @property
    def total_epochs(self) -> int:
        return self.warmup_epochs + (self.snapshots_per_component - 1) * self.snapshot_interval_epochs

    def snapshot_epochs(self):
        return [self.warmup_epochs + j * self.snapshot_interval_epochs for j in range(self.snapshots_per_component)]

    def to_dict(self):
        return asdict(self)


def init_variational(arch, cfg: PriorTrainConfig, rng):
    if cfg.family == "diag":
        return init_diag(arch.n_params, cfg.init_scale, rng, arch=arch)
    return init_lowrank(arch.n_params, cfg.rank, cfg.jitter_sigma, cfg.init_scale, rng, arch=arch)


def _params(q):
    if isinstance(q, DiagGaussian):
        return [q.mu, q.log_std]
    return [q.mu, q.factors]


def _rebuild(q, params):
    if isinstance(q, DiagGaussian):
        return q.replace(mu=params[0], log_std=params[1])
    return q.replace(mu=params[0], factors=params[1])


def batch_iter(n, batch_size, rng):
    perm = rng.permutation(n)
    for i in range(0, n, batch_size):
        yield perm[i:i + batch_size]


def elbo_gradient(q, X, spec, cfg: PriorTrainConfig, rng, mask=None):
    """Monte Carlo objective estimate and its gradient w.r.t. the variational parameters.

    Returns ``(objective, grads, stats)`` where ``grads`` are ascent-free
    (loss) gradients matching ``_params(q)`` and ``stats`` carries the KL and
    the mean unsquared phi over the drawn weights.
    """
    arch = q.arch
    if arch is None:
        raise InvalidShape("variational distribution has no architecture attached")
    p = IsotropicPrior(cfg.base_prior_variance)
    S = cfg.mc_samples
    scale = 1.0 / (2.0 * cfg.tau ** 2)
    g_mu = np.zeros(q.dim)
    g_2 = np.zeros_like(_params(q)[1])
    lik, phi_mean = 0.0, 0.0
    for _ in range(S):
        if isinstance(q, DiagGaussian):
            eps = q.draw_noise(rng)
            w = q.sample_with_noise(eps)
        else:
            eps_r, eps_n = q.draw_noise(rng)
            w = q.sample_with_noise(eps_r, eps_n)
        try:
            sq, g_w, values = phi_sq_sum(arch, w, X, spec, mask)
        except DegenerateBatch:
            log.debug("batch lacks a group; phi term skipped")
            continue
        lik += sq * scale / S
        phi_mean += float(np.mean(values)) / S
        g_w = g_w * (scale / S)
        g_mu += g_w
        if isinstance(q, DiagGaussian):
            g_2 += g_w * eps * q.std
        else:
            g_2 += np.outer(g_w, eps_r)
    kl = q.kl_to_isotropic(p)
    k_mu, k_2 = q.kl_grad(p)
    objective = -lik - cfg.beta * kl
    grads = [g_mu + cfg.beta * k_mu, g_2 + cfg.beta * k_2]
    if not np.isfinite(objective) or not all(np.all(np.isfinite(g)) for g in grads):
        raise NumericalFailure(f"non-finite ELBO (objective={objective}, kl={kl})")
    return objective, grads, {"kl": kl, "mean_phi": phi_mean}


def elbo_step(q, X, spec, cfg: PriorTrainConfig, rng, optimizer=None, mask=None):
    """One Adam ascent step on the objective; returns ``(q_new, objective_before_step)``."""
    objective, grads, _ = elbo_gradient(q, X, spec, cfg, rng, mask)
    opt = optimizer if optimizer is not None else Adam(cfg.learning_rate)
    return _rebuild(q, opt.step(_params(q), grads)), objective


def train_prior(arch, X, spec, cfg: PriorTrainConfig, rng, masks=None, q0=None):
    """Epoch loop of :func:`elbo_step` over shuffled minibatches.

    Returns the final distribution and a per-epoch curve of dicts with keys
    ``epoch, objective, kl, mean_phi``.
    """
    X = np.asarray(X, dtype=np.float64)
    if len(X) == 0:
        raise InvalidShape("prior learning needs unlabeled data")
    q = init_variational(arch, cfg, rng) if q0 is None else q0
    opt = Adam(cfg.learning_rate)
    curve = []
    for epoch in range(1, cfg.epochs + 1):
        objs, kls, phis = [], [], []
        for idx in _epoch_batches(X, spec, cfg.batch_size, rng):
            m = None if masks is None else masks[idx]
            try:
                obj, grads, stats = elbo_gradient(q, X[idx], spec, cfg, rng, m)
            except NumericalFailure as exc:
                last = curve[-1] if curve else "none"
                raise NumericalFailure(f"{exc} during epoch {epoch}; last completed epoch: {last}") from exc
            q = _rebuild(q, opt.step(_params(q), grads))
            objs.append(obj)
            kls.append(stats["kl"])
            phis.append(stats["mean_phi"])
        curve.append({"epoch": epoch, "objective": float(np.mean(objs)),
                      "kl": float(np.mean(kls)), "mean_phi": float(np.mean(phis))})
        log.info("prior epoch %d objective %.6g kl %.6g mean_phi %.6g", epoch, *list(curve[-1].values())[1:])
    return q, curve


def _epoch_batches(X, spec, batch_size, rng):
    if getattr(spec, "kind", None) == "group_fairness":
        from .data.tabular import stratified_batches
        return stratified_batches(X[:, spec.group_attr_index] >= 0.5, batch_size, rng)
    return batch_iter(len(X), batch_size, rng)


def map_objective_grad(arch, w, X, spec, tau, base_prior_variance, mask=None):
    """sum_i phi_i^2 / (2 tau^2) + |w|^2 / (2 s^2) on a batch, and its gradient."""
    try:
        sq, g, _ = phi_sq_sum(arch, w, X, spec, mask)
    except DegenerateBatch:
        sq, g = 0.0, np.zeros_like(w)
    scale = 1.0 / (2.0 * tau ** 2)
    value = sq * scale + float(w @ w) / (2.0 * base_prior_variance)
    return value, g * scale + w / base_prior_variance


def swag_trajectory(arch, X, objective_grad, cfg: SwagPriorConfig, rng, w0=None, masks=None, spec=None):
    """SGD on ``objective_grad(w, X_batch, mask_batch)``; returns the snapshot list."""
    w = nn.init_params(arch, rng) if w0 is None else np.array(w0, dtype=np.float64)
    opt = SGD(cfg.learning_rate)
    snap_at = set(cfg.snapshot_epochs())
    snapshots = [w.copy()] if 0 in snap_at else []
    for epoch in range(1, cfg.total_epochs + 1):
        for idx in _epoch_batches(X, spec, cfg.batch_size, rng):
            m = None if masks is None else masks[idx]
            _, g = objective_grad(w, X[idx], m)
            if cfg.max_grad_norm is not None:
                norm = np.linalg.norm(g)
                if norm > cfg.max_grad_norm:
                    g = g * (cfg.max_grad_norm / norm)
            w, = opt.step([w], [g])
            if not np.all(np.isfinite(w)):
                raise NumericalFailure("SGD diverged while collecting SWAG snapshots")
        if epoch in snap_at:
            snapshots.append(w.copy())
    return snapshots


def train_swag_prior(arch, X, spec, cfg: SwagPriorConfig, tau: float, base_prior_variance: float,
                     rng=None, masks=None) -> GaussianMixturePrior:
    """MultiSWAG prior: one SGD trajectory per component, each summarized by SWAG."""
    X = np.asarray(X, dtype=np.float64)
    if len(X) == 0:
        raise InvalidShape("prior learning needs unlabeled data")
    root = cfg.seed if rng is None else int(rng.integers(2 ** 31))
    comps = []
    for k in range(cfg.components):
        rk = derive_rng(root, f"swag-component-{k}")

        def objective(w, Xb, mb):
            return map_objective_grad(arch, w, Xb, spec, tau, base_prior_variance, mb)

        snaps = swag_trajectory(arch, X, objective, cfg, rk, masks=masks, spec=spec)
        comps.append(swag_to_gaussian(swag_collect(snaps), arch))
    return GaussianMixturePrior(tuple(comps))


__all__ = [
    "LowRankGaussian", "PriorTrainConfig", "SwagPriorConfig", "elbo_gradient", "elbo_step",
    "init_variational", "train_prior", "train_swag_prior",
]
