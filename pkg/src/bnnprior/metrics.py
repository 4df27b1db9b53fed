"""Evaluation metrics, domain-loss summaries, Pareto fronts and CSV reports."""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from .errors import DegenerateLabels, InvalidShape
from .losses import phi_terms, phi_values_from_outputs
from .posterior import Ensemble, ensemble_effective_outputs

log = logging.getLogger(__name__)


def _pair(a, b):
    a, b = np.asarray(a), np.asarray(b)
    if len(a) != len(b):
        raise InvalidShape(f"length mismatch: {len(a)} vs {len(b)}")
    if len(a) == 0:
        raise InvalidShape("metrics need at least one example")
    return a, b


def accuracy(preds, labels) -> float:
    preds, labels = _pair(preds, labels)
    return float(np.mean(preds == labels))


def auroc(scores, labels) -> float:
    """Mann-Whitney estimate of P(score_pos > score_neg) with ties counted half."""
    scores, labels = _pair(np.asarray(scores, dtype=np.float64), np.asarray(labels).astype(bool))
    n_pos = int(labels.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DegenerateLabels("AUROC needs both classes present")
    ranks = rankdata(scores)  # average ranks handle ties
    u = ranks[labels].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def l1_loss(preds, targets) -> float:
    preds = np.asarray(preds, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if preds.shape != targets.shape:
        raise InvalidShape(f"shape mismatch: {preds.shape} vs {targets.shape}")
    if preds.size == 0:
        raise InvalidShape("metrics need at least one example")
    return float(np.mean(np.abs(preds - targets)))


def mean_phi(arch, model, X, spec, mode: str = "ensemble", masks=None, groups=None) -> float:
    """Mean domain loss (unsquared) on ``X``.

    ``model`` is a weight vector, a list of weight vectors, or an
    :class:`Ensemble`. ``mode="ensemble"`` scores the averaged predictor;
    ``mode="per_sample"`` averages the score of each member.
    """
    X = np.asarray(X, dtype=np.float64)
    if len(X) == 0:
        raise InvalidShape("evaluation set is empty")
    if isinstance(model, Ensemble):
        ens = model
    else:
        members = [model] if np.ndim(model) == 1 else list(model)
        ens = Ensemble(arch, members)
    if mode == "per_sample":
        return float(np.mean([np.mean(phi_terms(arch, w, X, spec, masks, groups)[0]) for w in ens.members]))
    if mode != "ensemble":
        raise InvalidShape(f"unknown phi mode {mode!r}")
    if len(ens) == 1:
        return float(np.mean(phi_terms(arch, ens.members[0], X, spec, masks, groups)[0]))
    mask = None
    if spec.kind == "background":
        mask = spec.background_mask if masks is None else masks
    Y, T = ensemble_effective_outputs(ens, X, mask=mask)
    return float(np.mean(phi_values_from_outputs(arch, Y, X, spec, T=T, groups=groups)))


def task_scores(arch, ens_or_w, X, y, metric: str, averaging: str | None = None):
    """The headline task metric for a model or ensemble."""
    from .posterior import ensemble_predict, predict_labels
    ens = ens_or_w if isinstance(ens_or_w, Ensemble) else Ensemble(arch, [ens_or_w])
    out = ensemble_predict(ens, X, averaging)
    if metric == "l1":
        return l1_loss(out, np.asarray(y, dtype=np.float64).reshape(out.shape))
    if metric == "auroc":
        score = out[:, 0] if arch.output_head == "sigmoid" else out[:, -1]
        return auroc(score, y)
    return accuracy(predict_labels(arch, out), np.asarray(y).astype(np.int64))


# Pareto -------------------------------------------------------------------

def dominates(a, b) -> bool:
    """Point a=(accuracy, phi) dominates b: no worse in both and strictly better in one."""
    return a[0] >= b[0] and a[1] <= b[1] and (a[0] > b[0] or a[1] < b[1])


def pareto_points(points):
    """Return ``(all_points, frontier_mask)`` maximizing accuracy and minimizing phi."""
    P = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    if len(P) == 0:
        raise InvalidShape("pareto_points needs at least one point")
    order = np.lexsort((P[:, 1], -P[:, 0]))  # accuracy desc, phi asc
    on = np.zeros(len(P), dtype=bool)
    best_phi = math.inf
    i = 0
    while i < len(order):
        # a block of equal accuracy: its minimum phi is the only candidate (duplicates kept)
        j = i
        while j < len(order) and P[order[j], 0] == P[order[i], 0]:
            j += 1
        block = order[i:j]
        lo = P[block, 1].min()
        if lo < best_phi:
            on[block[P[block, 1] == lo]] = True
            best_phi = lo
        i = j
    return P, on


# reports ------------------------------------------------------------------

def mean_se(values):
    v = np.asarray(values, dtype=np.float64)
    if len(v) == 0:
        raise InvalidShape("need at least one seed")
    se = float(v.std(ddof=1) / np.sqrt(len(v))) if len(v) > 1 else 0.0
    return float(v.mean()), se


@dataclass
class MetricsReport:
    """Per-seed metric values for one task, with CSV and summary views."""

    task: str
    rows: list = field(default_factory=list)
    phi_mode: str = "ensemble"

    def add(self, method: str, seed: int, metric: str, value: float):
        self.rows.append((method, int(seed), metric, float(value)))

    def summary(self):
        """``{(method, metric): (mean, se, n_seeds)}``; NaN values are dropped."""
        groups = {}
        for method, _, metric, value in self.rows:
            groups.setdefault((method, metric), []).append(value)
        out = {}
        for key, vals in groups.items():
            finite = [v for v in vals if np.isfinite(v)]
            out[key] = (*mean_se(finite), len(finite)) if finite else (math.nan, math.nan, 0)
        return out

    def header_comment(self) -> str:
        return (f"# phi reported unsquared; mode={self.phi_mode}"
                " (ensemble = averaged predictor, per_sample = mean over members)\n")

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(self.header_comment())
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["task", "method", "seed", "metric", "value"])
        for method, seed, metric, value in self.rows:
            w.writerow([self.task, method, seed, metric, repr(value)])
        return buf.getvalue()

    def summary_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["task", "method", "metric", "mean", "se", "n_seeds"])
        for (method, metric), (m, se, n) in sorted(self.summary().items()):
            w.writerow([self.task, method, metric, repr(m), repr(se), n])
        return buf.getvalue()


def pareto_csv(clouds: dict) -> str:
    """CSV over ``{source_prior: [(accuracy, phi), ...]}``; frontier computed per source."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["source_prior", "sample_id", "accuracy", "phi", "on_frontier"])
    for name, pts in clouds.items():
        if len(pts) == 0:
            continue
        P, on = pareto_points(pts)
        for i, (a, p) in enumerate(P):
            w.writerow([name, i, repr(float(a)), repr(float(p)), int(on[i])])
    return buf.getvalue()


__all__ = [
    "MetricsReport", "accuracy", "auroc", "dominates", "l1_loss", "mean_phi", "mean_se",
    "pareto_csv", "pareto_points", "task_scores",
]
