"""Synthetic tabular tasks: group-fairness hiring data and ICU intervention data.

Both stand in for credentialed/external datasets and keep only the schema
and the structure the domain losses need.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from ..errors import InvalidConfig
from ..nn import sigmoid

CLINICAL_FEATURES = (
    "map", "age", "urine_output", "weight", "creatinine", "lactate", "bicarbonate", "bun",
)
STATIC_FEATURES = ("age", "weight")
LACTATE_THRESHOLD = 2.2
BICARBONATE_THRESHOLD = 22.0


@dataclass
class Standardizer:
    """Per-feature affine standardization fitted on a training split."""

    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, X, exclude=()):
        X = np.asarray(X, dtype=np.float64)
        mean = X.mean(axis=0)
        # two-pass variance
        std = np.sqrt(((X - mean) ** 2).mean(axis=0))
        std = np.maximum(std, 1e-8)
        for j in exclude:
            mean[j], std[j] = 0.0, 1.0
        return cls(mean, std)

    def transform(self, X):
        return (np.asarray(X, dtype=np.float64) - self.mean) / self.std

    def inverse(self, Z):
        return np.asarray(Z, dtype=np.float64) * self.std + self.mean

    def transform_value(self, j: int, value: float) -> float:
        return (value - self.mean[j]) / self.std[j]

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["mean"], dtype=np.float64), np.asarray(d["std"], dtype=np.float64))


def split_indices(n: int, fractions, rng):
    """Random partition of ``range(n)`` into consecutive fractions."""
    perm = rng.permutation(n)
    cuts = np.floor(np.cumsum(fractions)[:-1] * n).astype(int)
    return [np.sort(p) for p in np.split(perm, cuts)]


def stratified_batches(groups, batch_size: int, rng):
    """Yield index batches that keep both groups present whenever possible.

    Each batch takes a share of each group proportional to its frequency,
    with at least one row of each group while both still have rows left.
    """
    groups = np.asarray(groups).astype(bool)
    pools = [rng.permutation(np.flatnonzero(groups)), rng.permutation(np.flatnonzero(~groups))]
    n = len(groups)
    n_batches = max(1, int(np.ceil(n / batch_size)))
    frac = len(pools[0]) / max(n, 1)
    pos = [0, 0]
    for b in range(n_batches):
        remaining = n - pos[0] - pos[1]
        size = min(batch_size, remaining)
        left = n_batches - b
        take_a = int(round(size * frac))
        rem_a, rem_b = len(pools[0]) - pos[0], len(pools[1]) - pos[1]
        if left == 1:
            take_a = rem_a
        take_a = min(max(take_a, 1 if rem_a else 0), rem_a)
        take_b = min(size - take_a, rem_b) if left > 1 else rem_b
        if take_b == 0 and rem_b and take_a > 1:
            take_a, take_b = take_a - 1, 1
        batch = np.concatenate([pools[0][pos[0]:pos[0] + take_a], pools[1][pos[1]:pos[1] + take_b]])
        pos[0] += take_a
        pos[1] += take_b
        if batch.size:
            yield rng.permutation(batch)


# fairness ----------------------------------------------------------------

@dataclass(frozen=True)
class FairnessConfig:
    n_samples: int = 6000
    feature_dim: int = 6
    group_attr_index: int = 0
    base_rate_gap: float = 0.3
    group_feature_corr: float = 0.5
    intercept: float = -1.0
    signal_scale: float = 1.0

    def __post_init__(self):
        if self.n_samples < 2 or self.feature_dim < 2:
            raise InvalidConfig("fairness data needs >= 2 samples and >= 2 features")
        if not 0 <= self.group_attr_index < self.feature_dim:
            raise InvalidConfig("group_attr_index out of range")
        if not -1 <= self.base_rate_gap <= 1:
            raise InvalidConfig("base_rate_gap must lie in [-1, 1]")

    def to_dict(self):
        return asdict(self)


def fairness_coefficients(config: FairnessConfig) -> np.ndarray:
    """Label coefficients; zero on the group column so groups differ only via the gap."""
    k = config.feature_dim - 1
    beta = config.signal_scale * np.linspace(1.0, -1.0, k) * np.sqrt(3.0 / max(k, 1))
    return np.insert(beta, config.group_attr_index, 0.0)


def fairness_dataset(config: FairnessConfig, rng):
    """Return ``(X, y, groups)``; column ``group_attr_index`` of X holds 1 for group a, 0 for b."""
    n, d = config.n_samples, config.feature_dim
    groups = rng.random(n) < 0.5
    X = rng.standard_normal((n, d))
    X += config.group_feature_corr * groups[:, None]
    X[:, config.group_attr_index] = groups.astype(np.float64)
    p = sigmoid(X @ fairness_coefficients(config) + config.intercept)
    p = np.clip(p + config.base_rate_gap * groups, 0.0, 1.0)
    y = (rng.random(n) < p).astype(np.int64)
    return X, y, groups


# clinical ----------------------------------------------------------------

@dataclass(frozen=True)
class ClinicalConfig:
    n_samples: int = 8000
    label_noise: float = 0.05
    rule_b_quantiles: tuple = (0.8, 0.8, 0.2)
    signal_scale: float = 1.0

    def __post_init__(self):
        if self.n_samples < 10:
            raise InvalidConfig("clinical data needs >= 10 samples")
        if not 0 <= self.label_noise <= 1:
            raise InvalidConfig("label_noise must lie in [0, 1]")

    def to_dict(self):
        d = asdict(self)
        d["rule_b_quantiles"] = list(self.rule_b_quantiles)
        return d


def clinical_raw_features(n: int, rng) -> np.ndarray:
    """Physiological measurements in raw units, correlated through a latent severity."""
    sev = rng.standard_normal(n)
    z = rng.standard_normal((n, 8))
    X = np.empty((n, 8))
    X[:, 0] = 80.0 - 8.0 * sev + 12.0 * z[:, 0]                     # MAP, mmHg
    X[:, 1] = np.clip(64.0 + 15.0 * z[:, 1], 18.0, 89.0)             # age, years
    X[:, 2] = np.exp(np.log(90.0) - 0.35 * sev + 0.5 * z[:, 2])      # urine, mL/h
    X[:, 3] = np.clip(84.0 + 22.0 * z[:, 3], 40.0, 200.0)            # weight, kg
    X[:, 4] = np.exp(np.log(1.0) + 0.3 * sev + 0.4 * z[:, 4])        # creatinine, mg/dL
    X[:, 5] = np.exp(np.log(1.5) + 0.3 * sev + 0.4 * z[:, 5])        # lactate, mmol/L
    X[:, 6] = 24.5 - 1.8 * sev + 3.0 * z[:, 6]                       # bicarbonate, mmol/L
    X[:, 7] = np.exp(np.log(20.0) + 0.3 * sev + 0.45 * z[:, 7])      # BUN, mg/dL
    return X


def clinical_rule(X, thresholds) -> np.ndarray:
    """Rule region membership on features expressed in the same units as ``thresholds``."""
    t = thresholds
    rule_a = (X[:, 5] > t["lactate"]) & (X[:, 6] < t["bicarbonate"])
    rule_b = (X[:, 4] > t["creatinine"]) & (X[:, 7] > t["bun"]) & (X[:, 2] < t["urine"])
    return rule_a | rule_b


_CLINICAL_WEIGHTS = np.array([-0.6, 0.1, -0.4, 0.0, 0.3, 0.5, -0.4, 0.3])


def clinical_dataset(config: ClinicalConfig, rng, fractions=(0.7, 0.15, 0.15)):
    """Generate, split and standardize the synthetic ICU task.

    Returns a dict with ``splits`` (name -> (X_std, y, region)), the fitted
    :class:`Standardizer`, ``raw_thresholds`` and ``std_thresholds`` dicts.
    Rule-b thresholds sit at training-split quantiles of the raw features.
    """
    X = clinical_raw_features(config.n_samples, rng)
    parts = split_indices(config.n_samples, fractions, rng)
    train_raw = X[parts[0]]
    qc, qb, qu = config.rule_b_quantiles
    raw_t = {
        "lactate": LACTATE_THRESHOLD,
        "bicarbonate": BICARBONATE_THRESHOLD,
        "creatinine": float(np.quantile(train_raw[:, 4], qc)),
        "bun": float(np.quantile(train_raw[:, 7], qb)),
        "urine": float(np.quantile(train_raw[:, 2], qu)),
    }
    region_all = clinical_rule(X, raw_t)
    # linear signal on log-scaled lab values
    F = X.copy()
    F[:, [2, 4, 5, 7]] = np.log(F[:, [2, 4, 5, 7]])
    F = (F - F[parts[0]].mean(axis=0)) / F[parts[0]].std(axis=0)
    p_lin = sigmoid(config.signal_scale * F @ _CLINICAL_WEIGHTS - 0.3)
    y = np.where(region_all, 1, (rng.random(config.n_samples) < p_lin).astype(np.int64))
    flip = rng.random(config.n_samples) < config.label_noise
    y = np.where(flip, 1 - y, y).astype(np.int64)

    std = Standardizer.fit(train_raw)
    col = {"lactate": 5, "bicarbonate": 6, "creatinine": 4, "bun": 7, "urine": 2}
    std_t = {k: std.transform_value(col[k], v) for k, v in raw_t.items()}
    splits = {}
    for name, idx in zip(("train", "val", "test"), parts):
        Xs = std.transform(X[idx])
        splits[name] = (Xs, y[idx], clinical_rule(Xs, std_t))
    return {"splits": splits, "standardizer": std, "raw_thresholds": raw_t,
            "std_thresholds": std_t, "raw": {n: X[i] for n, i in zip(("train", "val", "test"), parts)}}
