"""Baseline imputers and the per-group imputation-error audit."""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

import numpy as np

from .dataset import TabularDataset
from .errors import DataError

__all__ = [
    "ConstantFill",
    "MeanFill",
    "PerGroupMeanFill",
    "KnnFill",
    "FittedImputer",
    "Theorem1Inputs",
    "fit",
    "transform",
    "imputer_disc",
    "optimal_constant",
    "theorem1_disc",
    "imputer_from_config",
]


@dataclass(frozen=True)
class ConstantFill:
    values: tuple[float, ...]


@dataclass(frozen=True)
class MeanFill:
    pass


@dataclass(frozen=True)
class PerGroupMeanFill:
    pass


@dataclass(frozen=True)
class KnnFill:
    k: int = 5

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be at least 1")


Imputer = ConstantFill | MeanFill | PerGroupMeanFill | KnnFill


@dataclass(frozen=True, eq=False)
class FittedImputer:
    imputer: Imputer
    d: int
    fill: np.ndarray | None = None          # (d,) for constant/mean
    group_fill: np.ndarray | None = None    # (2, d) for per-group mean
    train_values: np.ndarray | None = None  # k-NN reference rows
    train_mask: np.ndarray | None = None
    scaling: tuple | None = None


def imputer_from_config(name: str, k: int = 5, values: Sequence[float] | None = None) -> Imputer:
    name = name.lower()
    if name == "mean":
        return MeanFill()
    if name in ("group_mean", "per_group_mean"):
        return PerGroupMeanFill()
    if name == "knn":
        return KnnFill(k)
    if name == "constant":
        if values is None:
            raise ValueError("constant imputer needs fill values")
        return ConstantFill(tuple(values))
    raise ValueError(f"unknown imputer {name!r}")


def _column_means(values: np.ndarray, mask: np.ndarray, what: str) -> np.ndarray:
    counts = (~mask).sum(axis=0)
    if (counts == 0).any():
        j = int(np.flatnonzero(counts == 0)[0])
        raise DataError(f"feature {j} has no observed values{what}")
    return np.where(mask, 0.0, values).sum(axis=0) / counts


def fit(imputer: Imputer, ds: TabularDataset) -> FittedImputer:
    """Learn fill statistics from the observed cells of ``ds``."""
    if isinstance(imputer, ConstantFill):
        if len(imputer.values) != ds.d:
            raise DataError("constant fill needs one value per feature")
        return FittedImputer(imputer, ds.d, fill=np.array(imputer.values, float), scaling=ds.scaling)
    if isinstance(imputer, MeanFill):
        return FittedImputer(imputer, ds.d, fill=_column_means(ds.values, ds.mask, ""),
                             scaling=ds.scaling)
    if isinstance(imputer, PerGroupMeanFill):
        gf = np.vstack([
            _column_means(ds.values[ds.groups == g], ds.mask[ds.groups == g], f" in group {g}")
            for g in (0, 1)])
        return FittedImputer(imputer, ds.d, group_fill=gf, scaling=ds.scaling)
    if isinstance(imputer, KnnFill):
        _column_means(ds.values, ds.mask, "")  # all-missing feature check
        return FittedImputer(imputer, ds.d, train_values=ds.filled(0.0),
                             train_mask=ds.mask.copy(), scaling=ds.scaling)
    raise TypeError(f"unsupported imputer {imputer!r}")


def _knn_fill_row(f: FittedImputer, x: np.ndarray, m: np.ndarray) -> np.ndarray:
    """Fill the masked entries of one row from its k nearest training rows.

    Distance is Euclidean over coordinates observed in both rows. A query
    with no observed coordinate is equidistant (0) to every training row.
    Each masked feature takes the mean over those neighbors observing it,
    falling back to the mean of all training rows observing it.
    """
    tv, tm = f.train_values, f.train_mask
    obs = ~m
    shared = (~tm) & obs
    if obs.any():
        usable = shared.any(axis=1)
        if not usable.any():
            raise DataError("query row shares no observed feature with any training row")
    else:
        usable = np.ones(tv.shape[0], dtype=bool)
    diff = np.where(shared, tv - x, 0.0)
    dist = np.sqrt((diff ** 2).sum(axis=1))
    cand = np.flatnonzero(usable)
    order = cand[np.argsort(dist[cand], kind="stable")]
    nbrs = order[:f.imputer.k]
    out = x.copy()
    for j in np.flatnonzero(m):
        have = nbrs[~tm[nbrs, j]]
        if have.size == 0:
            have = np.flatnonzero(~tm[:, j])
        out[j] = tv[have, j].mean()
    return out


def transform(f: FittedImputer, ds: TabularDataset) -> np.ndarray:
    """Complete matrix: observed cells pass through, masked cells are filled."""
    if ds.d != f.d:
        raise DataError(f"feature count {ds.d} does not match fitted {f.d}")
    out = ds.filled(0.0)
    if not ds.mask.any():
        return out
    if f.fill is not None:
        return np.where(ds.mask, f.fill, out)
    if f.group_fill is not None:
        per_row = f.group_fill[ds.groups.astype(int)]
        return np.where(ds.mask, per_row, out)
    for i in np.flatnonzero(ds.mask.any(axis=1)):
        out[i] = _knn_fill_row(f, out[i], ds.mask[i])
    return out


def imputer_disc(f: FittedImputer, truth, mask, groups) -> tuple[float, float, float]:
    """Per-group mean squared error over masked cells, and their gap."""
    truth = np.asarray(truth, dtype=float)
    mask = np.asarray(mask, dtype=bool)
    groups = np.asarray(groups).astype(int)
    ds = TabularDataset(truth, mask, np.zeros(len(groups), int), groups,
                        tuple(f"x{j}" for j in range(truth.shape[1])), scaling=f.scaling)
    sq = (transform(f, ds) - truth) ** 2
    losses = []
    for g in (0, 1):
        cells = mask & (groups == g)[:, None]
        if not cells.any():
            raise DataError(f"group {g} has no masked cells")
        losses.append(float(sq[cells].mean()))
    return losses[0], losses[1], abs(losses[0] - losses[1])


def _exact(x: float) -> Fraction:
    # decimal value of the shortest repr, so 0.7 - 0.3 is exactly 2/5
    return Fraction(repr(float(x)))


def optimal_constant(p0_ms: float, p1_ms: float, m0: float, m1: float) -> float:
    """L2-optimal fill for the missing coordinate when nothing else is observed."""
    if min(p0_ms, p1_ms) < 0 or abs(p0_ms + p1_ms - 1.0) > 1e-9:
        raise ValueError("group shares among missing rows must be nonnegative and sum to 1")
    return float(_exact(p0_ms) * _exact(m0) + _exact(p1_ms) * _exact(m1))


@dataclass(frozen=True)
class Theorem1Inputs:
    p0_ms: float
    p1_ms: float
    m0: float
    m1: float
    var0: float
    var1: float

    def __post_init__(self):
        if abs(self.p0_ms + self.p1_ms - 1.0) > 1e-9 or min(self.p0_ms, self.p1_ms) < 0:
            raise ValueError("p0_ms + p1_ms must equal 1")
        if self.var0 < 0 or self.var1 < 0:
            raise ValueError("variances must be nonnegative")


def theorem1_disc(t: Theorem1Inputs) -> float:
    """Closed-form discrimination risk of the optimal constant imputer.

    ``|(p1 - p0)(m1 - m0)^2 + (var0 - var1)|``, evaluated in exact
    rational arithmetic on the decimal values of the inputs.
    """
    p0, p1, m0, m1, v0, v1 = map(_exact, (t.p0_ms, t.p1_ms, t.m0, t.m1, t.var0, t.var1))
    return float(abs((p1 - p0) * (m1 - m0) ** 2 + (v0 - v1)))
