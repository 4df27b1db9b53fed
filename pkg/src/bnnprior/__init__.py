"""Informative, domain-knowledge priors for Bayesian neural networks."""

from .errors import (BnnPriorError, DegenerateBatch, DegenerateLabels, FormatError, InvalidConfig,
                     InvalidShape, NumericalFailure)
from .family import DiagGaussian, GaussianMixturePrior, IsotropicPrior, LowRankGaussian
from .losses import DomainLossSpec
from .nn import ArchSpec
from .posterior import Ensemble, SgldConfig, sgld_sample
from .prior import PriorTrainConfig, SwagPriorConfig, train_prior, train_swag_prior
from .transfer import TransferConfig, transfer

__version__ = "0.1.0"

__all__ = [
    "ArchSpec", "BnnPriorError", "DegenerateBatch", "DegenerateLabels", "DiagGaussian", "DomainLossSpec",
    "Ensemble", "FormatError", "GaussianMixturePrior", "InvalidConfig", "InvalidShape", "IsotropicPrior",
    "LowRankGaussian", "NumericalFailure", "PriorTrainConfig", "SgldConfig", "SwagPriorConfig",
    "TransferConfig", "sgld_sample", "train_prior", "train_swag_prior", "transfer",
]
