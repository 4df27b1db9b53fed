"""Moving a learned prior onto a different architecture by matching function samples.

Both priors are compared through the outputs their networks produce on a
shared probe set. The target distribution is fitted with reparameterized
gradients; the source prior is only ever sampled, never modified.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.spatial.distance import cdist, pdist

from . import nn
from .errors import InvalidConfig, InvalidShape, NumericalFailure
from .family import DiagGaussian, GaussianMixturePrior, LowRankGaussian, init_lowrank, sample_prior
from .optim import Adam
from .posterior import swag_collect, swag_to_gaussian
from .prior import SwagPriorConfig, swag_trajectory
from .rng import derive_rng

log = logging.getLogger(__name__)

METHODS = ("m1", "m1m2", "mmd", "m1_swag")
BANDWIDTH_FLOOR = 1e-6


@dataclass
class TransferConfig:
    method: str = "mmd"
    n_function_samples: int = 32
    kernel_bandwidth: float | str = "pooled_median"
    learning_rate: float = 1e-3
    epochs: int = 200
    probe_size: int = 64
    seed: int = 0
    rank: int = 10
    jitter_sigma: float = 1e-3
    init_scale: float = 0.1
    init_from_source: bool = False
    resample_source: bool = False
    swag: SwagPriorConfig = field(default_factory=lambda: SwagPriorConfig(
        warmup_epochs=0, snapshot_interval_epochs=20, snapshots_per_component=5, batch_size=64))

    def __post_init__(self):
        self.method = self.method.replace("-", "_")
        if self.method not in METHODS:
            raise InvalidConfig(f"unknown transfer method {self.method!r}; expected one of {METHODS}")
        if self.n_function_samples < 1 or (self.method == "mmd" and self.n_function_samples < 2):
            raise InvalidConfig("need >= 2 function samples per side for MMD (>= 1 otherwise)")
        if isinstance(self.kernel_bandwidth, str):
            if self.kernel_bandwidth not in ("median", "pooled_median"):
                raise InvalidConfig("kernel_bandwidth must be a positive number, 'median' or 'pooled_median'")
        elif not self.kernel_bandwidth > 0:
            raise InvalidConfig("kernel_bandwidth must be positive")
        if self.epochs < 0:
            raise InvalidConfig("epochs must be >= 0")
        if self.probe_size < 1:
            raise InvalidConfig("probe_size must be >= 1")

    def to_dict(self):
        return asdict(self)


# sample sets -------------------------------------------------------------

def evaluate_functions(arch, weights, X) -> np.ndarray:
    """Rows of pre-head outputs on ``X`` flattened point-major, output-minor."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    return np.stack([nn.forward(arch, w, X).reshape(-1) for w in np.atleast_2d(weights)])


def function_samples(prior, arch, X, n: int, rng) -> np.ndarray:
    """``n`` prior draws evaluated on the probe set, shape ``(n, m * output_dim)``."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if len(X) == 0:
        raise InvalidShape("probe set is empty")
    if X.shape[1] != arch.input_dim:
        raise InvalidShape(f"probe points have {X.shape[1]} features, network expects {arch.input_dim}")
    W = sample_prior(prior, rng, arch.n_params, size=n)
    return evaluate_functions(arch, W, X)


def gaussian_kernel(A, B, gamma: float) -> np.ndarray:
    return np.exp(-cdist(A, B, "sqeuclidean") / (2.0 * gamma ** 2))


def mmd2(W, U, gamma: float) -> float:
    """Biased squared MMD between two row sets under a Gaussian kernel."""
    W = np.atleast_2d(np.asarray(W, dtype=np.float64))
    U = np.atleast_2d(np.asarray(U, dtype=np.float64))
    if W.shape[1] != U.shape[1]:
        raise InvalidShape("sample rows must share a dimension")
    if not gamma > 0:
        raise InvalidConfig("kernel bandwidth must be positive")
    val = (gaussian_kernel(W, W, gamma).mean() + gaussian_kernel(U, U, gamma).mean()
           - 2.0 * gaussian_kernel(W, U, gamma).mean())
    return float(val)


def median_bandwidth(rows) -> float:
    """gamma with gamma^2 = median pairwise squared distance / 2, floored."""
    rows = np.atleast_2d(np.asarray(rows, dtype=np.float64))
    if len(rows) < 2:
        raise InvalidShape("median bandwidth needs at least two rows")
    med = float(np.median(pdist(rows, "sqeuclidean")))
    return max(np.sqrt(med / 2.0), BANDWIDTH_FLOOR)


# objectives on target samples --------------------------------------------

def moment_objective(W, U, second: bool = False):
    """Squared first-moment gap (plus second-moment gap) averaged over coordinates.

    Returns the value and its gradient with respect to the rows of ``U``.
    """
    n, D = U.shape
    d1 = W.mean(axis=0) - U.mean(axis=0)
    value = float(np.mean(d1 ** 2))
    grad = np.broadcast_to(-2.0 * d1 / (n * D), U.shape).copy()
    if second:
        d2 = (W ** 2).mean(axis=0) - (U ** 2).mean(axis=0)
        value += float(np.mean(d2 ** 2))
        grad += -4.0 * d2 * U / (n * D)
    return value, grad


def mmd_objective(W, U, gamma: float):
    """mmd2(W, U) and its gradient with respect to the rows of ``U``."""
    nw, nu = len(W), len(U)
    Kuu = gaussian_kernel(U, U, gamma)
    Kuw = gaussian_kernel(U, W, gamma)
    value = gaussian_kernel(W, W, gamma).mean() + Kuu.mean() - 2.0 * Kuw.mean()
    g2 = 1.0 / gamma ** 2
    # d/du_i of mean_ij k(u_i, u_j) counts each pair twice
    g_uu = -2.0 * g2 / nu ** 2 * (Kuu.sum(axis=1)[:, None] * U - Kuu @ U)
    g_uw = 2.0 * g2 / (nu * nw) * (Kuw.sum(axis=1)[:, None] * U - Kuw @ W)
    return float(value), g_uu + g_uw


def _target_draws(q, n, rng):
    if isinstance(q, DiagGaussian):
        eps = q.draw_noise(rng, n)
        return q.sample_with_noise(eps), eps
    eps_r, eps_n = q.draw_noise(rng, n)
    return q.sample_with_noise(eps_r, eps_n), eps_r


def _pullback(q, arch, weights, noise, X, dU):
    """Chain row gradients on function samples back to the variational parameters."""
    G = np.stack([
        nn.backward(arch, nn.forward_cache(arch, w, X)[1], d.reshape(len(X), arch.output_dim))
        for w, d in zip(weights, dU)
    ])
    if isinstance(q, DiagGaussian):
        return G.sum(axis=0), (G * noise).sum(axis=0) * q.std
    return G.sum(axis=0), G.T @ noise


def _source_arch(source, arch=None):
    a = arch or getattr(source, "arch", None)
    if a is None:
        raise InvalidShape("source prior carries no architecture")
    return a


def _initial_target(source, target_arch, cfg: TransferConfig, rng):
    src = source.components[0] if isinstance(source, GaussianMixturePrior) and source.K == 1 else source
    if cfg.init_from_source:
        if not isinstance(src, LowRankGaussian) or src.dim != target_arch.n_params:
            raise InvalidConfig("init_from_source needs a single low-rank source with the target's size")
        return src.replace(arch=target_arch)
    return init_lowrank(target_arch.n_params, cfg.rank, cfg.jitter_sigma, cfg.init_scale, rng, arch=target_arch)


def _fit_target(source, target_arch, cfg: TransferConfig, X, rng, objective, source_arch=None):
    s_arch = _source_arch(source, source_arch)
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    n = cfg.n_function_samples
    W = function_samples(source, s_arch, X, n, rng)
    q = _initial_target(source, target_arch, cfg, derive_rng(cfg.seed, "transfer-init"))
    opt = Adam(cfg.learning_rate)
    history = []
    for step in range(cfg.epochs):
        if cfg.resample_source and step:
            W = function_samples(source, s_arch, X, n, rng)
        weights, noise = _target_draws(q, n, rng)
        U = evaluate_functions(target_arch, weights, X)
        value, dU = objective(W, U)
        g_mu, g_2 = _pullback(q, target_arch, weights, noise, X, dU)
        if not (np.isfinite(value) and np.all(np.isfinite(g_mu)) and np.all(np.isfinite(g_2))):
            raise NumericalFailure(f"transfer objective diverged at step {step}")
        mu, second = opt.step([q.mu, q.factors], [g_mu, g_2])
        q = q.replace(mu=mu, factors=second)
        history.append(value)
    return q, history


def transfer_moment(source, target_arch, cfg: TransferConfig, X, rng, source_arch=None):
    """Fit a low-rank target so its function-space moments match the source's.

    Returns ``(target_prior, objective_history)``.
    """
    if cfg.method not in ("m1", "m1m2"):
        raise InvalidConfig(f"transfer_moment handles m1/m1m2, got {cfg.method!r}")
    second = cfg.method == "m1m2"
    return _fit_target(source, target_arch, cfg, X, rng,
                       lambda W, U: moment_objective(W, U, second), source_arch)


def transfer_mmd(source, target_arch, cfg: TransferConfig, X, rng, source_arch=None):
    """Fit a low-rank target by descending the squared MMD to cached source samples.

    The bandwidth is fixed once before training: ``"median"`` uses source
    samples only, ``"pooled_median"`` pools them with samples from the
    initial target so a near-deterministic source still yields a kernel wide
    enough to reach the target.
    """
    if cfg.method != "mmd":
        raise InvalidConfig(f"transfer_mmd handles mmd, got {cfg.method!r}")
    s_arch = _source_arch(source, source_arch)
    probe = np.atleast_2d(np.asarray(X, dtype=np.float64))
    n = max(cfg.n_function_samples, 2)
    if cfg.kernel_bandwidth == "median":
        gamma = median_bandwidth(function_samples(source, s_arch, probe, n, rng))
    elif cfg.kernel_bandwidth == "pooled_median":
        init = _initial_target(source, target_arch, cfg, derive_rng(cfg.seed, "transfer-init"))
        rows = np.vstack([function_samples(source, s_arch, probe, n, rng),
                          function_samples(init, target_arch, probe, n, rng)])
        gamma = median_bandwidth(rows)
    else:
        gamma = float(cfg.kernel_bandwidth)
    log.info("MMD bandwidth %.6g", gamma)
    return _fit_target(source, target_arch, cfg, X, rng, lambda W, U: mmd_objective(W, U, gamma), s_arch)


def transfer_m1_swag(source, target_arch, cfg: TransferConfig, X, rng, source_arch=None):
    """Regress one target network onto the source mean function, then summarize its SGD tail with SWAG.

    ``cfg.epochs`` is the warm-up length; snapshots follow ``cfg.swag``.
    Returns ``(GaussianMixturePrior with K = 1, regression_loss_of_mean)``.
    """
    if cfg.epochs < 1:
        raise InvalidConfig("m1_swag needs at least one training epoch (SWAG needs >= 2 distinct snapshots)")
    if cfg.swag.snapshots_per_component < 2:
        raise InvalidConfig("m1_swag needs >= 2 SWAG snapshots")
    s_arch = _source_arch(source, source_arch)
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    target = function_samples(source, s_arch, X, cfg.n_function_samples, rng).mean(axis=0)
    target = target.reshape(len(X), s_arch.output_dim)
    if target.shape[1] != target_arch.output_dim:
        raise InvalidShape("source and target output dimensions differ")
    sched = SwagPriorConfig(
        components=1,
        warmup_epochs=cfg.epochs,
        snapshot_interval_epochs=cfg.swag.snapshot_interval_epochs,
        snapshots_per_component=cfg.swag.snapshots_per_component,
        learning_rate=cfg.swag.learning_rate,
        batch_size=cfg.swag.batch_size,
        max_grad_norm=cfg.swag.max_grad_norm,
        seed=cfg.seed,
    )
    rows = np.arange(len(X))

    def objective(w, Xb, idx_b):
        Z, cache = nn.forward_cache(target_arch, w, Xb)
        r = Z - target[idx_b]
        return float((r ** 2).sum() / len(Xb)), nn.backward(target_arch, cache, 2.0 * r / len(Xb))

    snaps = swag_trajectory(target_arch, X, objective, sched, rng, masks=rows)
    comp = swag_to_gaussian(swag_collect(snaps), target_arch)
    fit = float(np.mean((nn.forward(target_arch, comp.mu, X) - target) ** 2))
    return GaussianMixturePrior((comp,)), fit


def transfer(source, target_arch, cfg: TransferConfig, X, rng, source_arch=None):
    """Dispatch on ``cfg.method``; returns ``(target_prior, diagnostics)``."""
    if cfg.method == "mmd":
        return transfer_mmd(source, target_arch, cfg, X, rng, source_arch)
    if cfg.method == "m1_swag":
        return transfer_m1_swag(source, target_arch, cfg, X, rng, source_arch)
    return transfer_moment(source, target_arch, cfg, X, rng, source_arch)


__all__ = [
    "TransferConfig", "evaluate_functions", "function_samples", "median_bandwidth", "mmd2",
    "mmd_objective", "moment_objective", "transfer", "transfer_m1_swag", "transfer_mmd",
    "transfer_moment",
]
