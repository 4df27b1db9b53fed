"""Data generators, loaders and file formats."""

from .container import load_dataset, save_dataset
from .decoy import DecoyConfig, DecoySplit, decoy_dataset, train_shade
from .idx import load_idx, write_idx
from .pendulum import (
    PendulumConfig,
    energy_grad,
    integrate,
    pendulum_dataset,
    pendulum_energy,
    pendulum_step,
)
from .tabular import (
    CLINICAL_FEATURES,
    ClinicalConfig,
    FairnessConfig,
    Standardizer,
    clinical_dataset,
    clinical_rule,
    fairness_dataset,
    stratified_batches,
)

__all__ = [
    "CLINICAL_FEATURES", "ClinicalConfig", "DecoyConfig", "DecoySplit", "FairnessConfig", "PendulumConfig",
    "Standardizer", "clinical_dataset", "clinical_rule", "decoy_dataset", "energy_grad", "fairness_dataset",
    "integrate", "load_dataset", "load_idx", "pendulum_dataset", "pendulum_energy", "pendulum_step",
    "save_dataset", "stratified_batches", "train_shade", "write_idx",
]
