"""Downstream inference: SGLD, SWAG moments, ensembles and the penalized baseline."""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np

from . import nn
from .errors import DegenerateBatch, InvalidConfig, InvalidShape, NumericalFailure
from .family import GaussianMixturePrior, IsotropicPrior, LowRankGaussian, sample_prior
from .losses import phi_batch_mean
from .optim import Adam
from .rng import derive_rng

log = logging.getLogger(__name__)

LIKELIHOODS = ("categorical_ce", "bernoulli_ce", "gaussian")
SWAG_VARIANCE_FLOOR = 1e-8


# likelihoods --------------------------------------------------------------

def log_likelihood(arch, Z, y, likelihood: str, noise_variance: float = 1.0):
    """Summed log-likelihood of targets given pre-head outputs, and its gradient in Z."""
    if likelihood == "categorical_ce":
        ls = nn.log_softmax(Z)
        y = np.asarray(y, dtype=np.int64)
        onehot = np.zeros_like(Z)
        onehot[np.arange(len(y)), y] = 1.0
        return float(ls[np.arange(len(y)), y].sum()), onehot - np.exp(ls)
    if likelihood == "bernoulli_ce":
        z = Z[:, 0]
        y = np.asarray(y, dtype=np.float64).reshape(-1)
        ll = y * -np.logaddexp(0.0, -z) + (1.0 - y) * -np.logaddexp(0.0, z)
        return float(ll.sum()), (y - nn.sigmoid(z))[:, None]
    if likelihood == "gaussian":
        r = np.asarray(y, dtype=np.float64).reshape(Z.shape) - Z
        return float(-0.5 * (r ** 2).sum() / noise_variance), r / noise_variance
    raise InvalidConfig(f"unknown likelihood {likelihood!r}")


def default_likelihood(arch) -> str:
    return {"softmax": "categorical_ce", "sigmoid": "bernoulli_ce", "identity": "gaussian"}[arch.output_head]


# SGLD ---------------------------------------------------------------------

@dataclass
class SgldConfig:
    step_size: float = 1e-3
    epochs: int = 10
    batch_size: int = 128
    n_samples: int = 5
    burnin_epochs: int | None = None
    thin_epochs: int | None = None
    prior_weight: float = 1.0
    likelihood: str | None = None
    noise_variance: float = 1.0
    dataset_size: int | None = None
    seed: int = 0

    def __post_init__(self):
        if not self.step_size > 0:
            raise InvalidConfig("SGLD step_size must be positive")
        if self.likelihood is not None and self.likelihood not in LIKELIHOODS:
            raise InvalidConfig(f"unknown likelihood {self.likelihood!r}")
        if self.n_samples < 1 or self.epochs < 1 or self.batch_size < 1:
            raise InvalidConfig("n_samples, epochs and batch_size must be >= 1")
        b, t = self.schedule()
        if b + self.n_samples * t > self.epochs:
            raise InvalidConfig(f"burnin {b} + {self.n_samples} samples x thin {t} exceeds {self.epochs} epochs")

    def schedule(self):
        """(burnin, thin) in epochs; burn-in defaults to half the budget."""
        burn = self.epochs // 2 if self.burnin_epochs is None else self.burnin_epochs
        if self.thin_epochs is not None:
            thin = self.thin_epochs
        else:
            thin = max(1, (self.epochs - burn) // self.n_samples)
        return burn, thin


def sgld_step(arch, w, batch, prior, cfg: SgldConfig, rng, noise_scale: float = 1.0):
    """One Langevin update on a minibatch ``(X, y)``.

    ``w + (eps/2) [(N/B) grad log p(batch | w) + prior_weight grad log prior(w)] + N(0, eps I)``.
    """
    X, y = batch
    eps = cfg.step_size
    N = cfg.dataset_size if cfg.dataset_size is not None else len(X)
    Z, cache = nn.forward_cache(arch, w, np.atleast_2d(X))
    lik = cfg.likelihood or default_likelihood(arch)
    _, dZ = log_likelihood(arch, Z, y, lik, cfg.noise_variance)
    g = (N / len(X)) * nn.backward(arch, cache, dZ)
    g = g + cfg.prior_weight * prior.log_prob_grad(w)
    w_new = w + 0.5 * eps * g
    if noise_scale:
        w_new = w_new + noise_scale * np.sqrt(eps) * rng.standard_normal(w.shape)
    if not np.all(np.isfinite(w_new)):
        raise NumericalFailure("SGLD produced non-finite weights; lower the step size or prior weight")
    return w_new


def _batches(n, batch_size, rng):
    perm = rng.permutation(n)
    for i in range(0, n, batch_size):
        yield perm[i:i + batch_size]


@dataclass
class Ensemble:
    arch: nn.ArchSpec
    members: list
    averaging: str = "logits"

    def __post_init__(self):
        if not self.members:
            raise InvalidShape("an ensemble needs at least one member")
        if self.averaging not in ("logits", "predictions"):
            raise InvalidConfig(f"unknown averaging mode {self.averaging!r}")
        self.members = [np.asarray(m, dtype=np.float64) for m in self.members]

    def __len__(self):
        return len(self.members)

    def subset(self, k: int) -> "Ensemble":
        return Ensemble(self.arch, self.members[:k], self.averaging)


def sgld_sample(arch, X, y, prior, cfg: SgldConfig, rng, init=None) -> Ensemble:
    """Run SGLD from a prior draw and keep ``n_samples`` weights spaced ``thin`` epochs apart after burn-in."""
    X = np.asarray(X, dtype=np.float64)
    if len(X) == 0:
        raise InvalidShape("SGLD needs data")
    burn, thin = cfg.schedule()
    w = sample_prior(prior, rng, arch.n_params) if init is None else np.array(init, dtype=np.float64)
    keep = {burn + thin * (i + 1) for i in range(cfg.n_samples)}
    members = []
    run_cfg = cfg if cfg.dataset_size is not None else replace(cfg, dataset_size=len(X))
    for epoch in range(1, cfg.epochs + 1):
        for idx in _batches(len(X), cfg.batch_size, rng):
            w = sgld_step(arch, w, (X[idx], y[idx]), prior, run_cfg, rng)
        if epoch in keep:
            members.append(w.copy())
    return Ensemble(arch, members)


def sgld_sample_mixture(arch, X, y, prior: GaussianMixturePrior, cfg: SgldConfig, root_seed: int, jobs: int = 1) -> Ensemble:
    """One SGLD run per mixture component (that component as the prior); samples pooled."""
    def run(k):
        rng = derive_rng(root_seed, f"sgld-component-{k}")
        return sgld_sample(arch, X, y, prior.components[k], cfg, rng).members

    if jobs > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=jobs) as ex:
            parts = list(ex.map(run, range(prior.K)))
    else:
        parts = [run(k) for k in range(prior.K)]
    return Ensemble(arch, [m for part in parts for m in part])


# SWAG ---------------------------------------------------------------------

@dataclass
class SwagMoments:
    mean: np.ndarray
    second_moment: np.ndarray
    deviations: np.ndarray
    count: int
    floor: float = SWAG_VARIANCE_FLOOR

    @property
    def variance(self) -> np.ndarray:
        return np.maximum(self.second_moment - self.mean ** 2, self.floor)


def swag_collect(snapshots, max_rank: int | None = None, floor: float = SWAG_VARIANCE_FLOOR) -> SwagMoments:
    """First two moments of weight snapshots plus the last (k-1) deviation columns."""
    S = np.asarray([np.asarray(s, dtype=np.float64) for s in snapshots])
    if S.ndim != 2 or len(S) < 1:
        raise InvalidConfig("SWAG needs at least one snapshot")
    k = len(S)
    mean = S.mean(axis=0)
    second = (S ** 2).mean(axis=0)
    rank = k - 1 if max_rank is None else min(max_rank, k - 1)
    dev = (S[k - rank:] - mean).T if rank > 0 else np.zeros((S.shape[1], 0))
    return SwagMoments(mean, second, dev, k, floor)


def swag_to_gaussian(m: SwagMoments, arch=None, jitter_sigma: float = 1e-3) -> LowRankGaussian:
    """SWAG Gaussian: half the diagonal variance plus half the low-rank deviation covariance.

    ``jitter_sigma**2`` is added to the diagonal. Weights the trajectory never moved
    would otherwise get a near-zero variance, and the prior gradient on them makes
    Langevin updates unstable.
    """
    r = m.deviations.shape[1]
    V = m.deviations / np.sqrt(2.0 * (m.count - 1)) if r else np.zeros((len(m.mean), 0))
    return LowRankGaussian(m.mean, V, diag=0.5 * m.variance + jitter_sigma ** 2, arch=arch)


# ensembles ----------------------------------------------------------------

def _member_outputs(ens: Ensemble, X):
    return np.stack([nn.forward(ens.arch, w, X) for w in ens.members])


def ensemble_predict(ens: Ensemble, X, averaging: str | None = None):
    """Ensemble prediction: probabilities for classifiers, outputs for regressors."""
    mode = averaging or ens.averaging
    Z = _member_outputs(ens, np.atleast_2d(X))
    if mode == "logits":
        return nn.apply_head(ens.arch, Z.mean(axis=0))
    return np.mean([nn.apply_head(ens.arch, z) for z in Z], axis=0)


def predict_labels(arch, probs):
    """Hard labels; ties go to the lowest class index."""
    if arch.output_head == "sigmoid":
        return (probs[:, 0] > 0.5).astype(np.int64)
    return np.argmax(probs, axis=1)


def ensemble_effective_outputs(ens: Ensemble, X, averaging: str | None = None, mask=None):
    """Logits whose head reproduces the ensemble prediction, plus tangents along ``mask``.

    Returns ``(Y, T)``; ``T`` is None when no mask is given.
    """
    mode = averaging or ens.averaging
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    arch = ens.arch
    if mask is not None:
        idx, valid = nn.normalize_mask(mask, len(X), arch.input_dim)
        pairs = [nn.tangent_forward(arch, w, X, idx, valid)[:2] for w in ens.members]
        Z = np.stack([p[0] for p in pairs])
        T = np.stack([p[1] for p in pairs])
    else:
        Z = _member_outputs(ens, X)
        T = None
    if mode == "logits" or arch.output_head == "identity":
        return Z.mean(axis=0), (None if T is None else T.mean(axis=0))
    if arch.output_head == "softmax":
        P = np.exp(nn.log_softmax(Z))
        pbar = P.mean(axis=0)
        Y = np.log(np.maximum(pbar, 1e-300))
        if T is None:
            return Y, None
        dP = P[:, :, None, :] * (T - np.einsum("mbc,mbpc->mbp", P, T)[..., None])
        return Y, dP.mean(axis=0) / np.maximum(pbar, 1e-300)[:, None, :]
    P = nn.sigmoid(Z)
    pbar = np.clip(P.mean(axis=0), 1e-300, 1 - 1e-16)
    Y = np.log(pbar) - np.log1p(-pbar)
    if T is None:
        return Y, None
    dp = (P * (1 - P))[:, :, None, :] * T
    return Y, dp.mean(axis=0) / (pbar * (1 - pbar))[:, None, :]


# penalized (Lagrangian) baseline -----------------------------------------

@dataclass
class LagrangianConfig:
    learning_rate: float = 1e-2
    epochs: int = 10
    batch_size: int = 128
    loss: str | None = None
    weight_decay: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.loss is not None and self.loss not in ("ce", "l1", "l2"):
            raise InvalidConfig(f"unknown supervised loss {self.loss!r}")


def supervised_loss_grad(arch, Z, y, loss: str):
    """Mean supervised loss over the batch and its gradient in Z."""
    B = len(Z)
    if loss == "ce":
        lik = default_likelihood(arch)
        ll, dZ = log_likelihood(arch, Z, y, lik)
        return -ll / B, -dZ / B
    r = Z - np.asarray(y, dtype=np.float64).reshape(Z.shape)
    if loss == "l2":
        return float((r ** 2).sum() / B), 2.0 * r / B
    return float(np.abs(r).sum() / B), np.sign(r) / B


def lagrangian_train(arch, X, y, X_unlabeled, spec, lam: float, cfg: LagrangianConfig, rng,
                     masks_unlabeled=None, init=None):
    """Minimize mean supervised loss + lam * mean phi on unlabeled batches with Adam."""
    if lam < 0:
        raise InvalidConfig("lambda must be non-negative")
    X = np.asarray(X, dtype=np.float64)
    loss = cfg.loss or ("l2" if arch.output_head == "identity" else "ce")
    w = nn.init_params(arch, rng) if init is None else np.array(init, dtype=np.float64)
    opt = Adam(cfg.learning_rate)
    n_u = 0 if X_unlabeled is None else len(X_unlabeled)
    for _ in range(cfg.epochs):
        for idx in _batches(len(X), cfg.batch_size, rng):
            Z, cache = nn.forward_cache(arch, w, X[idx])
            _, dZ = supervised_loss_grad(arch, Z, y[idx], loss)
            g = nn.backward(arch, cache, dZ) + cfg.weight_decay * w
            if lam > 0 and n_u:
                uidx = rng.choice(n_u, size=min(cfg.batch_size, n_u), replace=False)
                mask = None if masks_unlabeled is None else masks_unlabeled[uidx]
                try:
                    _, g_phi = phi_batch_mean(arch, w, X_unlabeled[uidx], spec, mask)
                    g = g + lam * g_phi
                except DegenerateBatch:
                    log.debug("skipping phi term on a single-group batch")
            w, = opt.step([w], [g])
    return w


__all__ = [
    "Ensemble", "IsotropicPrior", "LagrangianConfig", "SgldConfig", "SwagMoments",
    "ensemble_effective_outputs", "ensemble_predict", "lagrangian_train", "log_likelihood",
    "predict_labels", "sgld_sample", "sgld_sample_mixture", "sgld_step", "swag_collect",
    "swag_to_gaussian",
]
