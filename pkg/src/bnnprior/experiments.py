"""Task assembly shared by the CLI and the reproduction tests.

A :class:`Task` bundles an architecture, a domain loss, unlabeled inputs for
prior learning, and labeled train/test splits.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .data.decoy import DecoyConfig, decoy_dataset
from .data.pendulum import PendulumConfig, pendulum_dataset
from .data.tabular import ClinicalConfig, FairnessConfig, Standardizer, clinical_dataset, fairness_dataset, split_indices
from .errors import InvalidConfig
from .losses import ClinicalRegion, DomainLossSpec
from .nn import ArchSpec
from .posterior import SgldConfig, sgld_sample
from .rng import derive_rng

TASKS = ("pendulum", "decoy", "fairness", "clinical")
METRIC = {"pendulum": "l1", "decoy": "accuracy", "fairness": "accuracy", "clinical": "auroc"}


@dataclass
class Split:
    X: np.ndarray
    y: np.ndarray
    masks: np.ndarray | None = None

    def __len__(self):
        return len(self.X)

    def take(self, n):
        return Split(self.X[:n], self.y[:n], None if self.masks is None else self.masks[:n])


@dataclass
class Task:
    name: str
    arch: ArchSpec
    spec: DomainLossSpec
    unlabeled: Split
    train: Split
    test: Split
    metadata: dict = field(default_factory=dict)

    @property
    def metric(self) -> str:
        return METRIC[self.name]


def default_arch(name: str, input_dim: int, hidden: int | None = None) -> ArchSpec:
    if name == "pendulum":
        return ArchSpec((4, hidden or 32, hidden or 32, 4), "relu", "identity")
    if name == "decoy":
        return ArchSpec((input_dim, hidden or 64, 10), "relu", "softmax")
    return ArchSpec((input_dim, hidden or 32, 1), "relu", "sigmoid")


def pendulum_task(seed: int, n_train: int = 18000, n_test: int = 2000, n_unlabeled: int = 2000,
                  traj_len: int = 100, config: PendulumConfig = PendulumConfig(), hidden=None) -> Task:
    def rows(label, n):
        X, Y = pendulum_dataset(config, max(1, -(-n // traj_len)), traj_len, derive_rng(seed, label))
        return X[:n], Y[:n]

    Xtr, Ytr = rows("pendulum-train", n_train)
    Xte, Yte = rows("pendulum-test", n_test)
    Xu, _ = rows("pendulum-unlabeled", n_unlabeled)
    spec = DomainLossSpec("energy_damping", pendulum=config)
    return Task("pendulum", default_arch("pendulum", 4, hidden), spec,
                Split(Xu, np.zeros((len(Xu), 4))), Split(Xtr, Ytr), Split(Xte, Yte),
                {"config": config.to_dict() if hasattr(config, "to_dict") else vars(config)})


def decoy_task(seed: int, n_train: int = 2000, n_test: int = 1000, n_unlabeled: int = 1000,
               config: DecoyConfig = DecoyConfig(), hidden=None) -> Task:
    train, test = decoy_dataset(config, n_train, n_test, derive_rng(seed, "decoy-labeled"))
    unl, _ = decoy_dataset(config, n_unlabeled, 1, derive_rng(seed, "decoy-unlabeled"))
    spec = DomainLossSpec("background")
    return Task("decoy", default_arch("decoy", config.image_side ** 2, hidden), spec,
                Split(unl.images, unl.labels, unl.masks),
                Split(train.images, train.labels, train.masks),
                Split(test.images, test.labels, test.masks),
                {"config": config.to_dict()})


def _split_sizes(n_train, n_test, n_unlabeled):
    total = n_train + n_test + n_unlabeled
    return total, (n_train / total, n_unlabeled / total, n_test / total)


def fairness_task(seed: int, n_train: int = 3000, n_test: int = 1500, n_unlabeled: int = 1500,
                  config: FairnessConfig | None = None, hidden=None) -> Task:
    total, fractions = _split_sizes(n_train, n_test, n_unlabeled)
    config = config or FairnessConfig()
    config = FairnessConfig(**{**config.to_dict(), "n_samples": total})
    rng = derive_rng(seed, "fairness-data")
    X, y, _ = fairness_dataset(config, rng)
    parts = split_indices(len(X), fractions, rng)
    std = Standardizer.fit(X[parts[0]], exclude=(config.group_attr_index,))
    Xs = std.transform(X)
    spec = DomainLossSpec("group_fairness", group_attr_index=config.group_attr_index)
    tr, un, te = (Split(Xs[p], y[p]) for p in parts)
    return Task("fairness", default_arch("fairness", config.feature_dim, hidden), spec, un, tr, te,
                {"config": config.to_dict(), "standardizer": std.to_dict()})


def clinical_task(seed: int, n_train: int = 4000, n_test: int = 2000, n_unlabeled: int = 2000,
                  config: ClinicalConfig | None = None, hidden=None) -> Task:
    total, fractions = _split_sizes(n_train, n_test, n_unlabeled)
    config = config or ClinicalConfig()
    config = ClinicalConfig(**{**config.to_dict(), "n_samples": total,
                               "rule_b_quantiles": tuple(config.rule_b_quantiles)})
    d = clinical_dataset(config, derive_rng(seed, "clinical-data"), fractions=fractions)
    region = ClinicalRegion.from_thresholds(d["std_thresholds"])
    spec = DomainLossSpec("clinical", clinical_region=region)
    (Xtr, ytr, _), (Xu, yu, _), (Xte, yte, _) = (d["splits"][k] for k in ("train", "val", "test"))
    return Task("clinical", default_arch("clinical", Xtr.shape[1], hidden), spec,
                Split(Xu, yu), Split(Xtr, ytr), Split(Xte, yte),
                {"config": config.to_dict(), "standardizer": d["standardizer"].to_dict(),
                 "raw_thresholds": d["raw_thresholds"]})


def build_task(name: str, seed: int, **kwargs) -> Task:
    builders = {"pendulum": pendulum_task, "decoy": decoy_task,
                "fairness": fairness_task, "clinical": clinical_task}
    if name not in builders:
        raise InvalidConfig(f"unknown task {name!r}; expected one of {TASKS}")
    return builders[name](seed, **kwargs)


# per-task defaults, overridable key by key from a config file
TASK_DEFAULTS = {
    "pendulum": {
        "prior": dict(tau=1.0, learning_rate=1e-3, epochs=10, batch_size=64, mc_samples=2),
        "sgld": dict(step_size=3e-5, prior_weight=1e-4, epochs=100, batch_size=100, noise_variance=1.0),
        "data": dict(n_train=18000, n_test=2000, n_unlabeled=2000),
        "transfer": dict(learning_rate=1e-2, probe_size=64),
    },
    "decoy": {
        "prior": dict(tau=1.0, learning_rate=1e-3, epochs=10, batch_size=64, mc_samples=2),
        "sgld": dict(step_size=3e-4, prior_weight=1e-4, epochs=30, batch_size=100),
        "data": dict(n_train=2000, n_test=1000, n_unlabeled=1000),
        "transfer": dict(learning_rate=1e-3, probe_size=32),
    },
    "fairness": {
        "prior": dict(tau=1.0, learning_rate=1e-3, epochs=5, batch_size=64, mc_samples=2),
        "sgld": dict(step_size=1e-3, prior_weight=1e-4, epochs=50, batch_size=100),
        "data": dict(n_train=3000, n_test=1500, n_unlabeled=1500),
    },
    "clinical": {
        "prior": dict(tau=0.05, learning_rate=3e-3, epochs=20, batch_size=64, mc_samples=2),
        "sgld": dict(step_size=1e-3, prior_weight=1e-4, epochs=50, batch_size=100),
        "data": dict(n_train=4000, n_test=2000, n_unlabeled=2000),
    },
}
ISOTROPIC_VARIANCE = 0.1


def task_from_options(name: str, seed: int, data: dict) -> Task:
    """Build a task from flat data options (a config ``[data]`` section)."""
    if name not in TASKS:
        raise InvalidConfig(f"unknown task {name!r}; expected one of {TASKS}")
    opts = {**TASK_DEFAULTS[name]["data"], **{k: v for k, v in data.items() if v is not None}}
    sizes = {k: int(opts[k]) for k in ("n_train", "n_test", "n_unlabeled")}
    hidden = opts.get("hidden")
    if name == "pendulum":
        f = float(opts.get("friction", 0.001))
        return pendulum_task(seed, **sizes, traj_len=int(opts.get("traj_len", 100)),
                             config=PendulumConfig(c1=f, c2=f), hidden=hidden)
    if name == "decoy":
        cfg = DecoyConfig(image_side=int(opts.get("image_side", 28)), patch_side=int(opts.get("patch_side", 4)),
                          source=opts.get("source", "synthetic_glyphs"),
                          idx_images=opts.get("idx_images"), idx_labels=opts.get("idx_labels"))
        return decoy_task(seed, **sizes, config=cfg, hidden=hidden)
    if name == "fairness":
        cfg = FairnessConfig(base_rate_gap=float(opts.get("base_rate_gap", 0.3)),
                             group_feature_corr=float(opts.get("group_feature_corr", 0.5)))
        return fairness_task(seed, **sizes, config=cfg, hidden=hidden)
    cfg = ClinicalConfig(label_noise=float(opts.get("label_noise", 0.05)))
    return clinical_task(seed, **sizes, config=cfg, hidden=hidden)


def sweep_sgld_config(cfg: SgldConfig, n_members: int) -> SgldConfig:
    """Stretch an SGLD schedule so one chain yields ``n_members`` thinned samples.

    Burn-in is kept; the thinning interval shrinks (to at least one epoch) and
    the epoch budget grows only when the samples would not fit otherwise.
    """
    burn = cfg.epochs // 2 if cfg.burnin_epochs is None else cfg.burnin_epochs
    thin = max(1, (cfg.epochs - burn) // n_members)
    return replace(cfg, n_samples=n_members, burnin_epochs=burn, thin_epochs=thin,
                   epochs=max(cfg.epochs, burn + thin * n_members))


def ensemble_size_sweep(arch, prior, train: Split, test: Split, cfg: SgldConfig, sizes, metric: str, rng):
    """Score the first ``k`` members of one SGLD chain for each ``k`` in ``sizes``."""
    from .metrics import task_scores
    ens = sgld_sample(arch, train.X, train.y, prior, sweep_sgld_config(cfg, max(sizes)), rng)
    return [(k, task_scores(arch, ens.subset(k), test.X, test.y, metric)) for k in sizes]
