"""Group-conditional risks and confusion-matrix fairness gaps.

All rates follow one convention: a rate whose denominator is empty is 0.
Functions that turn counts into rates accept numpy arrays as well as
scalars and use the same operation order either way, so a vectorized
caller gets bit-identical results to the per-prediction path.
"""
from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

logger = logging.getLogger(__name__)

__all__ = [
    "FairnessMetric",
    "GroupRisks",
    "ConfusionByGroup",
    "zero_one_risk",
    "group_risks",
    "confusion_by_group",
    "fairness_value",
    "fairness_from_counts",
    "objective_from_counts",
    "evaluation_report",
    "tv_distance",
    "theorem2_rhs",
]


class FairnessMetric(str, enum.Enum):
    ACCURACY_DIFF = "accuracy"
    FPR_DIFF = "fpr"
    FNR_DIFF = "fnr"
    EQUALIZED_ODDS = "eo"

    @classmethod
    def parse(cls, value) -> "FairnessMetric":
        if isinstance(value, cls):
            return value
        aliases = {
            "accuracy": cls.ACCURACY_DIFF, "accuracydiff": cls.ACCURACY_DIFF, "acc": cls.ACCURACY_DIFF,
            "fpr": cls.FPR_DIFF, "fprdiff": cls.FPR_DIFF,
            "fnr": cls.FNR_DIFF, "fnrdiff": cls.FNR_DIFF,
            "eo": cls.EQUALIZED_ODDS, "equalizedodds": cls.EQUALIZED_ODDS,
            "equalized_odds": cls.EQUALIZED_ODDS,
        }
        key = str(value).lower().replace("-", "").replace(" ", "")
        if key not in aliases:
            raise ValueError(f"unknown fairness metric {value!r}")
        return aliases[key]


@dataclass(frozen=True)
class GroupRisks:
    l0: float
    l1: float
    disc: float


@dataclass(frozen=True)
class ConfusionByGroup:
    """Confusion counts indexed by group (position 0 and 1)."""

    tp: tuple[int, int]
    fp: tuple[int, int]
    tn: tuple[int, int]
    fn: tuple[int, int]

    def size(self, g: int) -> int:
        return self.tp[g] + self.fp[g] + self.tn[g] + self.fn[g]

    def negatives(self, g: int) -> int:
        return self.fp[g] + self.tn[g]

    def positives(self, g: int) -> int:
        return self.tp[g] + self.fn[g]


def _as_binary(a, name: str) -> np.ndarray:
    a = np.asarray(a)
    if a.ndim != 1:
        raise ValueError(f"{name} must be one-dimensional")
    return a.astype(np.int64)


def zero_one_risk(preds, labels) -> float:
    preds, labels = _as_binary(preds, "preds"), _as_binary(labels, "labels")
    if preds.shape != labels.shape:
        raise ValueError(f"length mismatch: {preds.size} predictions, {labels.size} labels")
    if preds.size == 0:
        raise ValueError("empty input")
    return int((preds != labels).sum()) / preds.size


def group_risks(preds, labels, groups) -> GroupRisks:
    preds, labels, groups = (_as_binary(preds, "preds"), _as_binary(labels, "labels"),
                             _as_binary(groups, "groups"))
    risks = []
    for g in (0, 1):
        sel = groups == g
        if not sel.any():
            raise ValueError(f"group {g} is empty")
        risks.append(zero_one_risk(preds[sel], labels[sel]))
    return GroupRisks(risks[0], risks[1], abs(risks[0] - risks[1]))


def confusion_by_group(preds, labels, groups) -> ConfusionByGroup:
    preds, labels, groups = (_as_binary(preds, "preds"), _as_binary(labels, "labels"),
                             _as_binary(groups, "groups"))
    if not (preds.shape == labels.shape == groups.shape):
        raise ValueError("preds, labels and groups must have equal length")
    out = {"tp": [], "fp": [], "tn": [], "fn": []}
    for g in (0, 1):
        sel = groups == g
        p, y = preds[sel], labels[sel]
        out["tp"].append(int(((p == 1) & (y == 1)).sum()))
        out["fp"].append(int(((p == 1) & (y == 0)).sum()))
        out["tn"].append(int(((p == 0) & (y == 0)).sum()))
        out["fn"].append(int(((p == 0) & (y == 1)).sum()))
    return ConfusionByGroup(**{k: tuple(v) for k, v in out.items()})


def _rate(num, den):
    if np.ndim(num) == 0:
        if den == 0:
            logger.debug("empty rate denominator; rate taken as 0")
            return 0.0
        return num / den
    if den == 0:
        return np.zeros(np.shape(num))
    return num / den


def fairness_from_counts(metric: FairnessMetric, fp0, fp1, fn0, fn1,
                         size: Sequence[int], neg: Sequence[int], pos: Sequence[int]):
    """Fairness gap from per-group error counts.

    ``size``, ``neg`` and ``pos`` are the per-group row, negative-label
    and positive-label counts. ``fp*`` / ``fn*`` may be arrays.
    """
    metric = FairnessMetric.parse(metric)
    if metric is FairnessMetric.ACCURACY_DIFF:
        return abs(_rate(fp0 + fn0, size[0]) - _rate(fp1 + fn1, size[1]))
    fpr = abs(_rate(fp0, neg[0]) - _rate(fp1, neg[1]))
    fnr = abs(_rate(fn0, pos[0]) - _rate(fn1, pos[1]))
    if metric is FairnessMetric.FPR_DIFF:
        return fpr
    if metric is FairnessMetric.FNR_DIFF:
        return fnr
    return fpr + fnr


def objective_from_counts(metric, lam: float, n: int, fp0, fp1, fn0, fn1,
                          size, neg, pos):
    """Regularized objective: error rate plus ``lam`` times the fairness gap."""
    err = (fp0 + fp1 + fn0 + fn1) / n
    return err + lam * fairness_from_counts(metric, fp0, fp1, fn0, fn1, size, neg, pos)


def fairness_value(metric, preds, labels, groups) -> float:
    cm = confusion_by_group(preds, labels, groups)
    return float(fairness_from_counts(
        metric, cm.fp[0], cm.fp[1], cm.fn[0], cm.fn[1],
        (cm.size(0), cm.size(1)), (cm.negatives(0), cm.negatives(1)),
        (cm.positives(0), cm.positives(1))))


def evaluation_report(preds, labels, groups) -> dict:
    """Accuracy, per-group error/FPR/FNR and every fairness gap."""
    preds, labels, groups = (_as_binary(preds, "preds"), _as_binary(labels, "labels"),
                             _as_binary(groups, "groups"))
    cm = confusion_by_group(preds, labels, groups)
    per_group = {}
    for g in (0, 1):
        per_group[str(g)] = {
            "n": cm.size(g),
            "error": _rate(cm.fp[g] + cm.fn[g], cm.size(g)),
            "fpr": _rate(cm.fp[g], cm.negatives(g)),
            "fnr": _rate(cm.fn[g], cm.positives(g)),
        }
    return {
        "n": int(preds.size),
        "accuracy": 1.0 - zero_one_risk(preds, labels),
        "groups": per_group,
        "metrics": {m.value: fairness_value(m, preds, labels, groups) for m in FairnessMetric},
    }


def tv_distance(p: Mapping | Sequence[float], q: Mapping | Sequence[float]) -> float:
    """Total variation distance: half the L1 distance between two pmfs.

    Mappings are aligned on their keys and must share the same key set;
    list zero-mass outcomes explicitly when supports differ.
    """
    if isinstance(p, Mapping) or isinstance(q, Mapping):
        if not (isinstance(p, Mapping) and isinstance(q, Mapping)):
            raise ValueError("both distributions must be mappings or both sequences")
        if set(p) != set(q):
            raise ValueError("support mismatch")
        keys = list(p)
        pv = np.array([p[k] for k in keys], dtype=float)
        qv = np.array([q[k] for k in keys], dtype=float)
    else:
        pv, qv = np.asarray(p, dtype=float), np.asarray(q, dtype=float)
        if pv.shape != qv.shape:
            raise ValueError("support mismatch")
    for v in (pv, qv):
        if (v < 0).any() or abs(v.sum() - 1.0) > 1e-9:
            raise ValueError("input is not a normalized distribution")
    return float(0.5 * np.abs(pv - qv).sum())


def theorem2_rhs(l0_train: float, l1_train: float, loss_bound: float,
                 p0: float, p1: float, tv0: float, tv1: float) -> float:
    """Upper bound on the test-time group gap under an imputation change.

    ``|l0_train - l1_train| + K * (p0 * tv0 + p1 * tv1)``.
    """
    args = (l0_train, l1_train, loss_bound, p0, p1, tv0, tv1)
    if any(a < 0 or math.isnan(a) for a in args):
        raise ValueError("inputs must be nonnegative")
    return abs(l0_train - l1_train) + loss_bound * (p0 * tv0 + p1 * tv1)
