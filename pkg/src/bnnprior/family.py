"""Gaussian families over flat weight vectors.

``LowRankGaussian`` is N(mu, V V^T + D) where D is either sigma^2 I (the
variational family) or an explicit positive diagonal (SWAG components).
Solves and log-determinants go through the r x r capacitance matrix
``I + V^T D^{-1} V`` so nothing of size n x n is ever formed.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.special import logsumexp

from .errors import InvalidShape, NumericalFailure

MIN_JITTER = 1e-6
_LOG_2PI = np.log(2.0 * np.pi)


@dataclass(frozen=True, eq=False)
class IsotropicPrior:
    variance: float = 1.0

    def __post_init__(self):
        if not self.variance > 0:
            raise InvalidShape(f"prior variance must be positive, got {self.variance}")

    def sample(self, rng, n, size=None):
        shape = (n,) if size is None else (size, n)
        return rng.normal(0.0, np.sqrt(self.variance), size=shape)

    def log_prob(self, w):
        w = np.asarray(w, dtype=np.float64)
        n = w.shape[-1]
        return -0.5 * (n * (_LOG_2PI + np.log(self.variance)) + (w ** 2).sum(axis=-1) / self.variance)

    def log_prob_grad(self, w):
        return -np.asarray(w, dtype=np.float64) / self.variance


@dataclass(frozen=True, eq=False)
class LowRankGaussian:
    mu: np.ndarray
    factors: np.ndarray
    jitter_sigma: float = 1e-3
    diag: np.ndarray | None = None
    arch: object = field(default=None, compare=False)

    def __post_init__(self):
        mu = np.asarray(self.mu, dtype=np.float64).ravel()
        V = np.asarray(self.factors, dtype=np.float64)
        if V.ndim == 1:
            V = V[:, None]
        if V.size == 0:
            V = np.zeros((mu.shape[0], 0))
        if V.shape[0] != mu.shape[0]:
            raise InvalidShape(f"factors have {V.shape[0]} rows, mean has {mu.shape[0]}")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "factors", V)
        if self.diag is not None:
            d = np.asarray(self.diag, dtype=np.float64).ravel()
            if d.shape != mu.shape or not np.all(d > 0):
                raise InvalidShape("diag must be a positive vector matching the mean")
            object.__setattr__(self, "diag", d)
        elif not self.jitter_sigma >= MIN_JITTER:
            raise InvalidShape(f"jitter_sigma must be >= {MIN_JITTER}, got {self.jitter_sigma}")
        if self.arch is not None and self.arch.n_params != mu.shape[0]:
            raise InvalidShape("mean length does not match the architecture's parameter count")

    @property
    def dim(self) -> int:
        return self.mu.shape[0]

    @property
    def rank(self) -> int:
        return self.factors.shape[1]

    @property
    def noise_var(self) -> np.ndarray:
        """The diagonal part D of the covariance, as a vector."""
        if self.diag is not None:
            return self.diag
        return np.full(self.dim, float(self.jitter_sigma) ** 2)

    def replace(self, **changes) -> "LowRankGaussian":
        kw = dict(mu=self.mu, factors=self.factors, jitter_sigma=self.jitter_sigma,
                  diag=self.diag, arch=self.arch)
        kw.update(changes)
        return LowRankGaussian(**kw)

    @cached_property
    def _capacitance(self):
        V, d = self.factors, self.noise_var
        DinvV = V / d[:, None]
        C = np.eye(self.rank) + V.T @ DinvV
        if not np.all(np.isfinite(C)):
            raise NumericalFailure("non-finite capacitance matrix")
        try:
            chol = cho_factor(C, lower=True) if self.rank else None
        except np.linalg.LinAlgError as exc:
            raise NumericalFailure("Cholesky of I + V^T D^-1 V failed") from exc
        return DinvV, chol

    def covariance(self) -> np.ndarray:
        """Dense covariance (for small n only)."""
        return self.factors @ self.factors.T + np.diag(self.noise_var)

    def sample_with_noise(self, eps_r, eps_n) -> np.ndarray:
        eps_r = np.asarray(eps_r, dtype=np.float64)
        eps_n = np.asarray(eps_n, dtype=np.float64)
        if eps_r.shape[-1:] != (self.rank,) or eps_n.shape[-1:] != (self.dim,):
            raise InvalidShape(f"noise shapes {eps_r.shape}, {eps_n.shape} do not match r={self.rank}, n={self.dim}")
        return self.mu + eps_r @ self.factors.T + np.sqrt(self.noise_var) * eps_n

    def draw_noise(self, rng, size=None):
        lead = () if size is None else (size,)
        return rng.standard_normal(lead + (self.rank,)), rng.standard_normal(lead + (self.dim,))

    def sample(self, rng, size=None) -> np.ndarray:
        return self.sample_with_noise(*self.draw_noise(rng, size))

    def woodbury_solve(self, x) -> np.ndarray:
        """Sigma^{-1} x for a vector or an (n, k) matrix."""
        x = np.asarray(x, dtype=np.float64)
        if x.shape[0] != self.dim:
            raise InvalidShape(f"expected leading dimension {self.dim}, got {x.shape}")
        d = self.noise_var
        Dx = x / (d if x.ndim == 1 else d[:, None])
        if self.rank == 0:
            return Dx
        DinvV, chol = self._capacitance
        return Dx - DinvV @ cho_solve(chol, self.factors.T @ Dx)

    def log_det(self) -> float:
        total = float(np.log(self.noise_var).sum())
        if self.rank:
            _, chol = self._capacitance
            total += 2.0 * float(np.log(np.diag(chol[0])).sum())
        return total

    def trace(self) -> float:
        return float(self.noise_var.sum() + (self.factors ** 2).sum())

    def log_prob(self, w) -> np.ndarray:
        diff = np.asarray(w, dtype=np.float64) - self.mu
        if diff.ndim == 1:
            quad = float(diff @ self.woodbury_solve(diff))
        else:
            quad = np.einsum("kn,nk->k", diff, self.woodbury_solve(diff.T))
        return -0.5 * (self.dim * _LOG_2PI + self.log_det() + quad)

    def log_prob_grad(self, w) -> np.ndarray:
        return -self.woodbury_solve(np.asarray(w, dtype=np.float64) - self.mu)

    def kl_to_isotropic(self, p: IsotropicPrior) -> float:
        s2 = p.variance
        n = self.dim
        kl = 0.5 * ((self.trace() + float(self.mu @ self.mu)) / s2 - n + n * np.log(s2) - self.log_det())
        if not np.isfinite(kl):
            raise NumericalFailure("non-finite KL")
        return max(kl, 0.0)

    def kl_grad(self, p: IsotropicPrior):
        """Gradients of the KL w.r.t. the mean and the factor matrix."""
        g_mu = self.mu / p.variance
        g_V = self.factors / p.variance - self.woodbury_solve(self.factors)
        return g_mu, g_V


@dataclass(frozen=True, eq=False)
class DiagGaussian:
    mu: np.ndarray
    log_std: np.ndarray
    arch: object = field(default=None, compare=False)

    def __post_init__(self):
        mu = np.asarray(self.mu, dtype=np.float64).ravel()
        ls = np.asarray(self.log_std, dtype=np.float64).ravel()
        if mu.shape != ls.shape:
            raise InvalidShape("mu and log_std must have the same length")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "log_std", ls)

    @property
    def dim(self) -> int:
        return self.mu.shape[0]

    @property
    def std(self) -> np.ndarray:
        return np.exp(self.log_std)

    def replace(self, **changes) -> "DiagGaussian":
        kw = dict(mu=self.mu, log_std=self.log_std, arch=self.arch)
        kw.update(changes)
        return DiagGaussian(**kw)

    def sample_with_noise(self, eps) -> np.ndarray:
        eps = np.asarray(eps, dtype=np.float64)
        if eps.shape[-1:] != (self.dim,):
            raise InvalidShape(f"noise length {eps.shape} != {self.dim}")
        return self.mu + self.std * eps

    def draw_noise(self, rng, size=None):
        lead = () if size is None else (size,)
        return rng.standard_normal(lead + (self.dim,))

    def sample(self, rng, size=None):
        return self.sample_with_noise(self.draw_noise(rng, size))

    def log_prob(self, w):
        z = (np.asarray(w, dtype=np.float64) - self.mu) / self.std
        return -0.5 * (self.dim * _LOG_2PI + (z ** 2).sum(axis=-1)) - self.log_std.sum()

    def log_prob_grad(self, w):
        return -(np.asarray(w, dtype=np.float64) - self.mu) / self.std ** 2

    def kl_to_isotropic(self, p: IsotropicPrior) -> float:
        s2 = p.variance
        var = np.exp(2.0 * self.log_std)
        kl = 0.5 * float(((var + self.mu ** 2) / s2 - 1.0 + np.log(s2) - 2.0 * self.log_std).sum())
        if not np.isfinite(kl):
            raise NumericalFailure("non-finite KL")
        return max(kl, 0.0)

    def kl_grad(self, p: IsotropicPrior):
        """Gradients of the KL w.r.t. the mean and log-std."""
        return self.mu / p.variance, np.exp(2.0 * self.log_std) / p.variance - 1.0


@dataclass(frozen=True, eq=False)
class GaussianMixturePrior:
    """Equal-weight mixture of low-rank Gaussians."""

    components: tuple

    def __post_init__(self):
        comps = tuple(self.components)
        if not comps:
            raise InvalidShape("a mixture needs at least one component")
        if len({c.dim for c in comps}) != 1:
            raise InvalidShape("mixture components must share a dimension")
        object.__setattr__(self, "components", comps)

    @property
    def dim(self) -> int:
        return self.components[0].dim

    @property
    def arch(self):
        return self.components[0].arch

    @property
    def K(self) -> int:
        return len(self.components)

    def sample(self, rng, size=None):
        if size is None:
            return self.components[rng.integers(self.K)].sample(rng)
        ks = rng.integers(self.K, size=size)
        return np.stack([self.components[k].sample(rng) for k in ks])

    def log_prob(self, w):
        comps = np.array([c.log_prob(w) for c in self.components])
        return logsumexp(comps, axis=0) - np.log(self.K)

    def responsibilities(self, w) -> np.ndarray:
        logs = np.array([c.log_prob(w) for c in self.components])
        return np.exp(logs - logsumexp(logs))

    def log_prob_grad(self, w):
        if self.K == 1:
            return self.components[0].log_prob_grad(w)
        gamma = self.responsibilities(w)
        return sum(g * c.log_prob_grad(w) for g, c in zip(gamma, self.components))


def init_lowrank(n: int, rank: int, jitter_sigma: float, s_init: float, rng, arch=None) -> LowRankGaussian:
    """Variational initialization: mu ~ N(0, s^2), factor entries ~ N(0, s^2 / r)."""
    mu = rng.normal(0.0, s_init, size=n)
    V = rng.normal(0.0, s_init / np.sqrt(max(rank, 1)), size=(n, rank))
    return LowRankGaussian(mu, V, jitter_sigma, arch=arch)


def init_diag(n: int, s_init: float, rng, init_std: float | None = None, arch=None) -> DiagGaussian:
    mu = rng.normal(0.0, s_init, size=n)
    std = s_init if init_std is None else init_std
    return DiagGaussian(mu, np.full(n, np.log(std)), arch=arch)


# module-level spellings of the family operations ----------------------

def sample_with_noise(q, *noise):
    return q.sample_with_noise(*noise)


def kl_to_isotropic(q, p: IsotropicPrior) -> float:
    return q.kl_to_isotropic(p)


def kl_grad(q, p: IsotropicPrior):
    return q.kl_grad(p)


def woodbury_solve(q: LowRankGaussian, x):
    return q.woodbury_solve(x)


def log_prob_grad(prior, w):
    return prior.log_prob_grad(w)


def sample_prior(prior, rng, n_params: int, size=None):
    """Draw weights from any supported prior (isotropic priors need ``n_params``)."""
    if isinstance(prior, IsotropicPrior):
        return prior.sample(rng, n_params, size)
    return prior.sample(rng, size)
