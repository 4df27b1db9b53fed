"""Domain-knowledge losses phi(h, x) >= 0 and their parameter gradients.

Every loss is evaluated through :func:`phi_terms`, which returns per-row
values and a vector-Jacobian product ``vjp(c) = d/dw sum_i c_i * values_i``.
Batch-level losses (group fairness) repeat their single value on every row,
so the mean over rows is the batch value.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import nn
from .data.pendulum import PendulumConfig, energy_grad, pendulum_energy
from .errors import DegenerateBatch, InvalidConfig, InvalidShape

log = logging.getLogger(__name__)

KINDS = ("background", "group_fairness", "clinical", "energy_damping")
BACKGROUND_OUTPUTS = ("log_softmax_jacobian", "log_softmax_sum", "logits")


@dataclass(frozen=True)
class ClinicalRegion:
    """Rule region in standardized feature units.

    Inside when (lactate > t and bicarbonate < t) or
    (creatinine > t and bun > t and urine < t).
    """

    lactate_threshold: float
    bicarbonate_threshold: float
    creatinine_threshold: float
    bun_threshold: float
    urine_threshold: float
    lactate_index: int = 5
    bicarbonate_index: int = 6
    creatinine_index: int = 4
    bun_index: int = 7
    urine_index: int = 2

    def __post_init__(self):
        idx = [self.lactate_index, self.bicarbonate_index, self.creatinine_index, self.bun_index, self.urine_index]
        if len(set(idx)) != len(idx) or min(idx) < 0:
            raise InvalidConfig("clinical region indices must be distinct and non-negative")

    def contains(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] <= max(self.lactate_index, self.bicarbonate_index, self.creatinine_index,
                             self.bun_index, self.urine_index):
            raise InvalidShape("clinical region index beyond feature dimension")
        a = (X[:, self.lactate_index] > self.lactate_threshold) & (X[:, self.bicarbonate_index] < self.bicarbonate_threshold)
        b = ((X[:, self.creatinine_index] > self.creatinine_threshold)
             & (X[:, self.bun_index] > self.bun_threshold)
             & (X[:, self.urine_index] < self.urine_threshold))
        return a | b

    @classmethod
    def from_thresholds(cls, t: dict) -> "ClinicalRegion":
        return cls(t["lactate"], t["bicarbonate"], t["creatinine"], t["bun"], t["urine"])

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass(frozen=True)
class DomainLossSpec:
    kind: str
    background_mask: object = None
    group_attr_index: int | None = None
    clinical_region: ClinicalRegion | None = None
    pendulum: PendulumConfig | None = None
    background_output: str = "log_softmax_jacobian"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidConfig(f"unknown domain loss kind {self.kind!r}")
        if self.background_output not in BACKGROUND_OUTPUTS:
            raise InvalidConfig(f"unknown background_output {self.background_output!r}")
        if self.kind == "group_fairness" and self.group_attr_index is None:
            raise InvalidConfig("group_fairness needs group_attr_index")
        if self.kind == "clinical" and self.clinical_region is None:
            raise InvalidConfig("clinical needs clinical_region")
        if self.kind == "energy_damping" and self.pendulum is None:
            object.__setattr__(self, "pendulum", PendulumConfig())
        populated = {
            "background_mask": self.background_mask is not None,
            "group_attr_index": self.group_attr_index is not None,
            "clinical_region": self.clinical_region is not None,
            "pendulum": self.pendulum is not None,
        }
        allowed = {"background": {"background_mask"}, "group_fairness": {"group_attr_index"},
                   "clinical": {"clinical_region"}, "energy_damping": {"pendulum"}}[self.kind]
        extra = [k for k, v in populated.items() if v and k not in allowed]
        if extra:
            raise InvalidConfig(f"{self.kind} loss does not take {extra}")

    def terms(self, arch, params, X, mask=None):
        return phi_terms(arch, params, X, self, mask)

    def to_dict(self) -> dict:
        """JSON-ready description; background masks are per-row data and are not included."""
        d = {"kind": self.kind}
        if self.kind == "background":
            d["background_output"] = self.background_output
        elif self.kind == "group_fairness":
            d["group_attr_index"] = int(self.group_attr_index)
        elif self.kind == "clinical":
            d["clinical_region"] = self.clinical_region.to_dict()
        else:
            d["pendulum"] = self.pendulum.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DomainLossSpec":
        kind = d.get("kind")
        if kind == "background":
            return cls(kind, background_output=d.get("background_output", "log_softmax_jacobian"))
        if kind == "group_fairness":
            return cls(kind, group_attr_index=int(d["group_attr_index"]))
        if kind == "clinical":
            return cls(kind, clinical_region=ClinicalRegion(**d["clinical_region"]))
        if kind == "energy_damping":
            return cls(kind, pendulum=PendulumConfig(**d.get("pendulum", {})))
        raise InvalidConfig(f"unknown domain loss kind {kind!r}")

    def describe(self) -> str:
        if self.kind == "background":
            return f"background[{self.background_output}]"
        return self.kind


# output-space helpers ----------------------------------------------------

def _class_logits(arch, Z, T=None):
    """Express the head as softmax over class logits (sigmoid -> [0, z])."""
    if arch.output_head == "sigmoid":
        Z2 = np.concatenate([np.zeros_like(Z), Z], axis=-1)
        T2 = None if T is None else np.concatenate([np.zeros_like(T), T], axis=-1)
        return Z2, T2
    return Z, T


def _background_values(arch, Z, T, mode):
    """Per-row background penalty and adjoint closure from outputs and tangents."""
    if arch.output_head == "identity" or mode == "logits":
        values = (T ** 2).sum(axis=(1, 2))

        def adj(c):
            return np.zeros_like(Z), 2.0 * T * c[:, None, None]
        return values, adj

    Zc, Tc = _class_logits(arch, Z, T)
    p = nn.softmax(Zc)
    C = p.shape[1]
    pT = np.einsum("bc,bpc->bp", p, Tc)
    if mode == "log_softmax_sum":
        s = Tc.sum(axis=2) - C * pT
        values = (s ** 2).sum(axis=1)

        def adj_c(c):
            sb = 2.0 * s * c[:, None]
            Tb = sb[:, :, None] * (1.0 - C * p)[:, None, :]
            gp = -C * np.einsum("bp,bpc->bc", sb, Tc)
            return p * (gp - (p * gp).sum(axis=1, keepdims=True)), Tb
    else:
        u = Tc - pT[:, :, None]
        values = (u ** 2).sum(axis=(1, 2))

        def adj_c(c):
            ub = 2.0 * u * c[:, None, None]
            usum = ub.sum(axis=2)
            Tb = ub - usum[:, :, None] * p[:, None, :]
            gp = -np.einsum("bp,bpc->bc", usum, Tc)
            return p * (gp - (p * gp).sum(axis=1, keepdims=True)), Tb

    if arch.output_head == "sigmoid":
        def adj(c):
            zb, tb = adj_c(c)
            return zb[:, 1:], tb[:, :, 1:]
        return values, adj
    return values, adj_c


def _positive_prob(arch, Z):
    """Probability of the positive class from a sigmoid or 2-class softmax head."""
    if arch.output_head == "sigmoid":
        return nn.sigmoid(Z[:, 0])
    if arch.output_head == "softmax" and Z.shape[1] == 2:
        return nn.softmax(Z)[:, 1]
    raise InvalidShape("binary loss needs a sigmoid head or a 2-class softmax head")


def _dprob_upstream(arch, Z, p, coeff):
    """Upstream on the pre-head outputs for d/dZ sum coeff * p."""
    U = np.zeros_like(Z)
    if arch.output_head == "sigmoid":
        U[:, 0] = coeff * p * (1.0 - p)
    else:
        U[:, 1] = coeff * p * (1.0 - p)
        U[:, 0] = -coeff * p * (1.0 - p)
    return U


def fairness_gap(p, groups):
    groups = np.asarray(groups).astype(bool)
    na, nb = groups.sum(), (~groups).sum()
    if na == 0 or nb == 0:
        raise DegenerateBatch("group fairness needs rows from both groups")
    return p[groups].mean() - p[~groups].mean(), groups, na, nb


def _groups_from(X, spec, groups):
    if groups is not None:
        return np.asarray(groups).astype(bool)
    return np.asarray(X)[:, spec.group_attr_index] >= 0.5


# main entry points -------------------------------------------------------

def phi_terms(arch, params, X, spec: DomainLossSpec, mask=None, groups=None):
    """Per-row loss values for a batch and their vector-Jacobian product."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    B = X.shape[0]
    if spec.kind == "background":
        m = spec.background_mask if mask is None else mask
        idx, valid = nn.normalize_mask(m, B, arch.input_dim)
        if idx.shape[1] == 0:
            return np.zeros(B), lambda c: np.zeros(arch.n_params)
        Z, T, cache = nn.tangent_forward(arch, params, X, idx, valid)
        values, adj = _background_values(arch, Z, T, spec.background_output)

        def vjp(c):
            zb, tb = adj(np.asarray(c, dtype=np.float64))
            return nn.tangent_backward(arch, cache, zb, tb)
        return values, vjp

    Z, cache = nn.forward_cache(arch, params, X)
    if spec.kind == "group_fairness":
        p = _positive_prob(arch, Z)
        gap, g, na, nb = fairness_gap(p, _groups_from(X, spec, groups))
        values = np.full(B, gap ** 2)

        def vjp(c):
            dp = 2.0 * gap * np.where(g, 1.0 / na, -1.0 / nb) * np.sum(c)
            return nn.backward(arch, cache, _dprob_upstream(arch, Z, p, dp))
        return values, vjp

    if spec.kind == "clinical":
        p = _positive_prob(arch, Z)
        inside = spec.clinical_region.contains(X)
        values = np.where(inside, np.maximum(0.0, 1.0 - p), 0.0)

        def vjp(c):
            coeff = -np.asarray(c, dtype=np.float64) * (inside & (p < 1.0))
            return nn.backward(arch, cache, _dprob_upstream(arch, Z, p, coeff))
        return values, vjp

    cfg = spec.pendulum
    if Z.shape[1] != 4 or X.shape[1] != 4:
        raise InvalidShape("energy damping needs 4-dimensional states in and out")
    excess = pendulum_energy(Z, cfg) - pendulum_energy(X, cfg)
    active = excess > 0
    values = np.where(active, excess, 0.0)

    def vjp(c):
        U = energy_grad(Z, cfg) * (np.asarray(c, dtype=np.float64) * active)[:, None]
        return nn.backward(arch, cache, U)
    return values, vjp


def _terms(arch, params, X, spec, mask=None):
    if hasattr(spec, "terms"):
        return spec.terms(arch, params, X, mask)
    return phi_terms(arch, params, X, spec, mask)


def phi_batch_mean(arch, params, X, spec, mask=None):
    """Mean loss over the batch and its gradient (fairness: the batch value)."""
    values, vjp = _terms(arch, params, X, spec, mask)
    n = len(values)
    return float(values.mean()), vjp(np.full(n, 1.0 / n))


def phi_sq_sum(arch, params, X, spec, mask=None):
    """sum_i phi_i^2 over the batch and its gradient."""
    values, vjp = _terms(arch, params, X, spec, mask)
    return float((values ** 2).sum()), vjp(2.0 * values), values


def phi_background(arch, params, x, mask, output="log_softmax_jacobian"):
    spec = DomainLossSpec("background", background_output=output)
    values, vjp = phi_terms(arch, params, np.atleast_2d(x), spec, mask=mask)
    return float(values[0]), vjp(np.ones(1))


def phi_group_fairness_batch(arch, params, X, groups):
    spec = DomainLossSpec("group_fairness", group_attr_index=0)
    values, vjp = phi_terms(arch, params, X, spec, groups=groups)
    return float(values[0]), vjp(np.full(len(values), 1.0 / len(values)))


def phi_clinical(arch, params, x, region: ClinicalRegion):
    spec = DomainLossSpec("clinical", clinical_region=region)
    values, vjp = phi_terms(arch, params, np.atleast_2d(x), spec)
    return float(values[0]), vjp(np.ones(1))


def phi_energy_damping(arch, params, x, config: PendulumConfig = PendulumConfig()):
    spec = DomainLossSpec("energy_damping", pendulum=config)
    values, vjp = phi_terms(arch, params, np.atleast_2d(x), spec)
    return float(values[0]), vjp(np.ones(1))


# value-only evaluation for averaged predictors ---------------------------

def phi_values_from_outputs(arch, Z, X, spec: DomainLossSpec, T=None, groups=None):
    """Loss values from pre-head outputs (and tangents for background).

    Used for ensembles, where ``Z``/``T`` are the ensemble's effective logits.
    """
    X = np.atleast_2d(X)
    if spec.kind == "background":
        if T is None or T.shape[1] == 0:
            return np.zeros(len(Z))
        return _background_values(arch, Z, T, spec.background_output)[0]
    if spec.kind == "group_fairness":
        p = _positive_prob(arch, Z)
        gap = fairness_gap(p, _groups_from(X, spec, groups))[0]
        return np.full(len(Z), gap ** 2)
    if spec.kind == "clinical":
        p = _positive_prob(arch, Z)
        return np.where(spec.clinical_region.contains(X), np.maximum(0.0, 1.0 - p), 0.0)
    excess = pendulum_energy(Z, spec.pendulum) - pendulum_energy(X, spec.pendulum)
    return np.maximum(excess, 0.0)
