"""Fixed-depth MIA trees and an anytime branch-and-bound trainer.

A tree of depth ``D`` stores its ``2**D - 1`` branch nodes in heap order
(children of node ``v`` are ``2v + 1`` and ``2v + 2``) and ``2**D`` leaf
labels from left to right. A branch sends a row left when its feature is
missing and ``missing_left`` is set, or when the observed value is
``<= threshold``. The sentinel threshold ``-1`` lies below every scaled
value, which turns a branch into a missing-vs-observed split.

The solver searches the structural space (feature, threshold,
missing-direction per branch) directly. Given a structure, leaf labels
follow the majority rule, so the objective is fully determined.
"""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .dataset import TabularDataset
from .errors import DataError, SchemaError
from .metrics import FairnessMetric, fairness_value, objective_from_counts, zero_one_risk

logger = logging.getLogger(__name__)

SENTINEL = -1.0
TIE_TOL = 1e-12

__all__ = [
    "SENTINEL",
    "Branch",
    "MiaTree",
    "SolverConfig",
    "SolveResult",
    "route",
    "route_batch",
    "predict",
    "fit_leaves",
    "evaluate_objective",
    "enumerate_candidates",
    "candidate_thresholds",
    "solve",
]


@dataclass(frozen=True)
class Branch:
    feature: int
    threshold: float
    missing_left: bool

    def key(self) -> tuple:
        return (self.feature, self.threshold, int(self.missing_left))


@dataclass(frozen=True)
class MiaTree:
    depth: int
    branches: tuple[Branch, ...]
    leaves: tuple[int, ...] | None = None
    feature_names: tuple[str, ...] = ()

    def __post_init__(self):
        if self.depth < 1:
            raise ValueError("depth must be at least 1")
        branches = tuple(b if isinstance(b, Branch) else Branch(*b) for b in self.branches)
        if len(branches) != 2 ** self.depth - 1:
            raise ValueError(f"depth {self.depth} needs {2 ** self.depth - 1} branches")
        for b in branches:
            if b.feature < 0 or (self.feature_names and b.feature >= len(self.feature_names)):
                raise ValueError(f"feature index {b.feature} out of range")
        object.__setattr__(self, "branches", branches)
        if self.leaves is not None:
            leaves = tuple(int(u) for u in self.leaves)
            if len(leaves) != len(branches) + 1 or not set(leaves) <= {0, 1}:
                raise ValueError("leaves must hold one binary label per leaf")
            object.__setattr__(self, "leaves", leaves)
        object.__setattr__(self, "feature_names", tuple(self.feature_names))

    @property
    def n_leaves(self) -> int:
        return 2 ** self.depth

    def key(self) -> tuple:
        return tuple(b.key() for b in self.branches)

    def with_leaves(self, leaves) -> "MiaTree":
        return MiaTree(self.depth, self.branches, tuple(leaves), self.feature_names)

    def to_json(self) -> dict:
        return {
            "depth": self.depth,
            "branches": [{"feature": b.feature, "threshold": b.threshold,
                          "missing_left": b.missing_left} for b in self.branches],
            "leaves": None if self.leaves is None else list(self.leaves),
            "feature_names": list(self.feature_names),
        }

    @classmethod
    def from_json(cls, doc: dict) -> "MiaTree":
        try:
            return cls(int(doc["depth"]),
                       tuple(Branch(int(b["feature"]), float(b["threshold"]),
                                    bool(b["missing_left"])) for b in doc["branches"]),
                       None if doc.get("leaves") is None else tuple(doc["leaves"]),
                       tuple(doc.get("feature_names", ())))
        except (KeyError, TypeError, ValueError) as exc:
            raise SchemaError(f"malformed tree document: {exc}") from exc


@dataclass(frozen=True)
class SolverConfig:
    """``t_limit`` is wall-clock seconds (``math.inf`` allowed).

    ``node_limit`` caps the number of candidate evaluations; unlike the
    time limit it cuts the search at a reproducible point.
    """

    t_limit: float = 60.0
    seed: int = 0
    node_order: str = "greedy"
    node_limit: int | None = None

    def __post_init__(self):
        if not self.t_limit > 0:
            raise ValueError("t_limit must be positive")
        if self.node_order not in ("greedy", "lex"):
            raise ValueError(f"unknown node order {self.node_order!r}")


@dataclass
class SolveResult:
    tree: MiaTree
    objective: float
    proven_optimal: bool
    nodes_explored: int
    wall_time: float
    history: list = field(default_factory=list)


# --------------------------------------------------------------------------
# routing and evaluation

def route(tree: MiaTree, row_values: Sequence[float], row_mask: Sequence[bool]) -> int:
    """Leaf index (0-based, left to right) reached by one row."""
    if len(row_values) != len(row_mask):
        raise ValueError("row values and mask differ in length")
    v = 0
    for _ in range(tree.depth):
        b = tree.branches[v]
        if b.feature >= len(row_values):
            raise ValueError("row dimension smaller than the tree's feature index")
        if row_mask[b.feature]:
            left = b.missing_left
        else:
            left = row_values[b.feature] <= b.threshold
        v = 2 * v + 1 if left else 2 * v + 2
    return v - (tree.n_leaves - 1)


def route_batch(tree: MiaTree, values: np.ndarray, mask: np.ndarray) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    mask = np.asarray(mask, dtype=bool)
    feats = np.array([b.feature for b in tree.branches])
    if feats.max() >= values.shape[1]:
        raise ValueError("dimension mismatch between tree and data")
    thr = np.array([b.threshold for b in tree.branches])
    mleft = np.array([b.missing_left for b in tree.branches])
    rows = np.arange(values.shape[0])
    node = np.zeros(values.shape[0], dtype=int)
    for _ in range(tree.depth):
        f = feats[node]
        left = np.where(mask[rows, f], mleft[node], values[rows, f] <= thr[node])
        node = 2 * node + np.where(left, 1, 2)
    return node - (tree.n_leaves - 1)


def predict(tree: MiaTree, ds: TabularDataset) -> np.ndarray:
    if tree.leaves is None:
        raise ValueError("tree leaves are unlabeled")
    return np.asarray(tree.leaves, dtype=np.int8)[route_batch(tree, ds.values, ds.mask)]


def fit_leaves(structure: MiaTree, batch: TabularDataset) -> MiaTree:
    """Majority labels per leaf; ties and empty leaves get label 1."""
    leaf = route_batch(structure, batch.values, batch.mask)
    pos = np.bincount(leaf, weights=batch.labels, minlength=structure.n_leaves)
    cnt = np.bincount(leaf, minlength=structure.n_leaves)
    return structure.with_leaves((pos >= cnt - pos).astype(int))


def evaluate_objective(tree: MiaTree, batch: TabularDataset, lam: float, metric) -> float:
    """Error rate plus ``lam`` times the fairness gap of the tree's predictions."""
    preds = predict(tree, batch)
    return zero_one_risk(preds, batch.labels) + lam * fairness_value(
        metric, preds, batch.labels, batch.groups)


def candidate_thresholds(batch: TabularDataset, feature: int) -> np.ndarray:
    """Sentinel followed by midpoints of consecutive distinct observed values."""
    obs = np.unique(batch.values[~batch.mask[:, feature], feature])
    return np.concatenate(([SENTINEL], (obs[:-1] + obs[1:]) / 2))


def enumerate_candidates(batch: TabularDataset, feature: int) -> list[tuple[float, bool]]:
    """(threshold, missing_left) pairs for one feature.

    When the feature has no missing entries the direction is irrelevant and
    only ``missing_left=False`` is kept.
    """
    if not 0 <= feature < batch.d:
        raise ValueError(f"feature index {feature} out of range")
    dirs = (False, True) if batch.mask[:, feature].any() else (False,)
    return [(float(t), ml) for t in candidate_thresholds(batch, feature) for ml in dirs]


# --------------------------------------------------------------------------
# search

class _Stop(Exception):
    pass


def _leaf_errors(c: np.ndarray) -> np.ndarray:
    """(fp0, fp1, fn0, fn1) of majority-labeled leaves from cell counts.

    Cell order: (g0 y0, g0 y1, g1 y0, g1 y1); works on (..., 4) arrays.
    """
    one = (c[..., 1] + c[..., 3]) >= (c[..., 0] + c[..., 2])
    z = np.zeros_like(c[..., 0])
    return np.stack([np.where(one, c[..., 0], z), np.where(one, c[..., 2], z),
                     np.where(one, z, c[..., 1]), np.where(one, z, c[..., 3])], axis=-1)


class _Search:
    def __init__(self, batch: TabularDataset, lam: float, metric, depth: int,
                 scfg: SolverConfig):
        self.batch, self.lam, self.depth, self.scfg = batch, float(lam), depth, scfg
        self.metric = FairnessMetric.parse(metric)
        self.n = batch.n
        self.cells = 2 * batch.groups.astype(np.int64) + batch.labels.astype(np.int64)
        total = np.bincount(self.cells, minlength=4)
        self.size = (int(total[0] + total[1]), int(total[2] + total[3]))
        self.neg = (int(total[0]), int(total[2]))
        self.pos = (int(total[1]), int(total[3]))
        self.thresholds = [candidate_thresholds(batch, j) for j in range(batch.d)]
        self.values, self.mask = batch.values, batch.mask
        self.n_upper = 2 ** (depth - 1) - 1
        self.last_level = list(range(self.n_upper, 2 ** depth - 1))
        self.nodes = 0
        self.best_obj = math.inf
        self.best_key: tuple | None = None
        self.history: list = []
        self.start = time.perf_counter()
        self.deadline = self.start + scfg.t_limit
        self.exhausted = True

    # -- bookkeeping -------------------------------------------------------
    def objective(self, v):
        return objective_from_counts(self.metric, self.lam, self.n, v[..., 0], v[..., 1],
                                     v[..., 2], v[..., 3], self.size, self.neg, self.pos)

    def _tick(self, k: int = 1):
        if self.best_key is not None:
            if time.perf_counter() >= self.deadline or (
                    self.scfg.node_limit is not None and self.nodes >= self.scfg.node_limit):
                self.exhausted = False
                raise _Stop
        self.nodes += k

    def offer(self, obj: float, key: tuple):
        if obj < self.best_obj - TIE_TOL or (
                obj <= self.best_obj + TIE_TOL and (self.best_key is None or key < self.best_key)):
            if obj < self.best_obj - TIE_TOL or self.best_key is None:
                self.history.append((time.perf_counter() - self.start, float(obj)))
            self.best_obj = min(float(obj), self.best_obj) if self.best_key is not None else float(obj)
            self.best_key = key

    def prunable(self, bound: float, prefix: tuple) -> bool:
        if self.best_key is None:
            return False
        if bound > self.best_obj + TIE_TOL:
            return True
        return bound >= self.best_obj - TIE_TOL and prefix > self.best_key[:len(prefix)]

    def _interval_gap(self, lo_num, hi_num, den) -> float:
        r = [(lo_num[g] / den[g], hi_num[g] / den[g]) if den[g] else (0.0, 0.0) for g in (0, 1)]
        return max(0.0, r[0][0] - r[1][1], r[1][0] - r[0][1])

    def bound(self, lo: np.ndarray, hi: np.ndarray, err_lb: int | None = None) -> float:
        """Admissible bound from componentwise error-count intervals [lo, hi].

        ``err_lb`` is a lower bound on total errors; defaults to ``lo.sum()``.
        """
        err = float(lo.sum() if err_lb is None else err_lb) / self.n
        m = self.metric
        fpr = fnr = acc = 0.0
        if m is FairnessMetric.ACCURACY_DIFF:
            acc = self._interval_gap((lo[0] + lo[2], lo[1] + lo[3]),
                                     (hi[0] + hi[2], hi[1] + hi[3]), self.size)
        if m in (FairnessMetric.FPR_DIFF, FairnessMetric.EQUALIZED_ODDS):
            fpr = self._interval_gap((lo[0], lo[1]), (hi[0], hi[1]), self.neg)
        if m in (FairnessMetric.FNR_DIFF, FairnessMetric.EQUALIZED_ODDS):
            fnr = self._interval_gap((lo[2], lo[3]), (hi[2], hi[3]), self.pos)
        return err + self.lam * (acc + fpr + fnr)

    # -- candidates --------------------------------------------------------
    def _splits(self, rows: np.ndarray):
        """Yield (key, left_obs_rows, obs_rows_sorted_info...) per feature in lex order."""
        for j in range(self.batch.d):
            T = self.thresholds[j]
            m = self.mask[rows, j]
            obs = rows[~m]
            miss = rows[m]
            pos = np.searchsorted(T, self.values[obs, j], side="left")
            reps = np.unique(pos[(pos >= 1) & (pos <= len(T) - 1)])
            reps = np.concatenate(([0], reps))
            dirs = (False, True) if miss.size else (False,)
            yield j, T, obs, miss, pos, reps, dirs

    def upper_candidates(self, rows: np.ndarray) -> list[tuple[tuple, np.ndarray, int]]:
        """Distinct partitions of ``rows``: (key, left mask over rows, split errors)."""
        out, seen = [], set()
        local = {r: i for i, r in enumerate(rows.tolist())}
        for j, T, obs, miss, pos, reps, dirs in self._splits(rows):
            obs_local = np.array([local[r] for r in obs.tolist()], dtype=int)
            miss_local = np.array([local[r] for r in miss.tolist()], dtype=int)
            for k in reps:
                base = np.zeros(rows.size, dtype=bool)
                base[obs_local[pos <= k]] = True
                for ml in dirs:
                    left = base.copy()
                    if ml:
                        left[miss_local] = True
                    sig = left.tobytes()
                    if sig in seen:
                        continue
                    seen.add(sig)
                    cl = np.bincount(self.cells[rows[left]], minlength=4)
                    cr = np.bincount(self.cells[rows[~left]], minlength=4)
                    err = int(_leaf_errors(cl).sum() + _leaf_errors(cr).sum())
                    out.append(((j, float(T[k]), int(ml)), left, err))
        return out

    def leaf_candidates(self, rows: np.ndarray) -> tuple[list[tuple], np.ndarray]:
        """Distinct error vectors of a depth-1 subtree over ``rows`` (lex-first keys)."""
        keys, vecs = [], []
        total = np.bincount(self.cells[rows], minlength=4)
        for j, T, obs, miss, pos, reps, dirs in self._splits(rows):
            order = np.argsort(pos, kind="stable")
            cum = np.zeros((len(obs) + 1, 4), dtype=np.int64)
            if len(obs):
                cum[1:] = np.cumsum(np.eye(4, dtype=np.int64)[self.cells[obs[order]]], axis=0)
            counts_at = np.searchsorted(pos[order], reps, side="right")
            left_obs = cum[counts_at]
            miss_c = np.bincount(self.cells[miss], minlength=4)
            for ml in dirs:
                left = left_obs + (miss_c if ml else 0)
                vec = _leaf_errors(left) + _leaf_errors(total - left)
                for k, v in zip(reps, vec):
                    keys.append((j, float(T[k]), int(ml)))
                    vecs.append(v)
        vecs = np.array(vecs, dtype=np.int64)
        # keys come out grouped by feature, then direction; restore lex order
        order = sorted(range(len(keys)), key=keys.__getitem__)
        keys = [keys[i] for i in order]
        vecs = vecs[order]
        _, first = np.unique(vecs, axis=0, return_index=True)
        first = np.sort(first)
        return [keys[i] for i in first], vecs[first]

    # -- driver ------------------------------------------------------------
    def run(self):
        rows_at = {0: np.arange(self.n)}
        try:
            if self.n_upper == 0:
                self._last_level(rows_at, ())
            else:
                self._upper(0, rows_at, ())
        except _Stop:
            pass

    def _order(self, items, err_of):
        if self.scfg.node_order == "lex":
            return items
        return sorted(items, key=lambda it: (err_of(it), it[0]))

    def _upper(self, u: int, rows_at: dict, prefix: tuple):
        rows = rows_at[u]
        cands = self.upper_candidates(rows)
        zero = np.zeros(4, dtype=np.int64)
        for key, left, _ in self._order(cands, lambda it: it[2]):
            self._tick()
            p = prefix + (key,)
            hi = np.bincount(self.cells, minlength=4)[[0, 2, 1, 3]]
            if self.prunable(self.bound(zero, hi), p):
                continue
            child = dict(rows_at)
            child[2 * u + 1], child[2 * u + 2] = rows[left], rows[~left]
            if u + 1 < self.n_upper:
                self._upper(u + 1, child, p)
            else:
                self._last_level(child, p)

    def _last_level(self, rows_at: dict, prefix: tuple):
        sets = [self.leaf_candidates(rows_at[v]) for v in self.last_level]
        self._ll_dfs(0, sets, np.zeros(4, dtype=np.int64), prefix)

    def _ll_dfs(self, i: int, sets, det: np.ndarray, prefix: tuple):
        rest = sets[i:]
        lo = det + sum(v.min(axis=0) for _, v in rest)
        hi = det + sum(v.max(axis=0) for _, v in rest)
        lo_err = det.sum() + sum(int(v.sum(axis=1).min()) for _, v in rest)
        if self.prunable(self.bound(lo, hi, lo_err), prefix):
            return
        if len(rest) == 1:
            keys, vecs = rest[0]
            self._tick(len(keys))
            objs = self.objective(det + vecs)
            self._pick(objs, [prefix + (k,) for k in keys])
            return
        if len(rest) == 2:
            (ka, va), (kb, vb) = rest
            self._tick(len(ka) * len(kb))
            self._outer(det, ka, va, kb, vb, prefix)
            return
        keys, vecs = rest[0]
        order = range(len(keys))
        if self.scfg.node_order == "greedy":
            order = sorted(order, key=lambda t: (int(vecs[t].sum()), keys[t]))
        for t in order:
            self._tick()
            self._ll_dfs(i + 1, sets, det + vecs[t], prefix + (keys[t],))

    def _pick(self, objs: np.ndarray, keys: list):
        best = objs.min()
        idx = int(np.flatnonzero(objs <= best + TIE_TOL)[0])
        self.offer(float(objs[idx]), keys[idx])

    def _outer(self, det, ka, va, kb, vb, prefix):
        chunk = max(1, 2_000_000 // max(len(kb), 1))
        for s in range(0, len(ka), chunk):
            tot = det + va[s:s + chunk, None, :] + vb[None, :, :]
            objs = self.objective(tot)
            best = objs.min()
            flat = int(np.flatnonzero((objs <= best + TIE_TOL).ravel())[0])
            a, b = divmod(flat, len(kb))
            self.offer(float(objs[a, b]), prefix + (ka[s + a], kb[b]))

    def tree(self, key: tuple, feature_names) -> MiaTree:
        return MiaTree(self.depth, tuple(Branch(f, t, bool(ml)) for f, t, ml in key),
                       None, feature_names)


def _check_batch(batch: TabularDataset):
    if batch.n == 0:
        raise DataError("empty batch: no split candidates")
    obs = batch.values[~batch.mask]
    if obs.size and (obs.min() < 0.0 or obs.max() > 1.0):
        raise DataError("batch is not scaled to [0, 1]")
    if len(set(batch.groups.tolist())) < 2:
        raise DataError("batch must contain both groups")


def solve(batch: TabularDataset, scfg: SolverConfig, mcfg, warm_start: MiaTree | None = None
          ) -> SolveResult:
    """Minimize error + lambda * fairness gap over depth-``mcfg.depth`` MIA trees.

    ``mcfg`` supplies ``depth``, ``lam`` and ``metric``. The search is
    depth-first over branch nodes in heap order with bound pruning; it
    returns the incumbent when the time or node limit is hit, and sets
    ``proven_optimal`` only when the candidate space is exhausted. Among
    equal objectives the lexicographically smallest
    (feature, threshold, missing_left) sequence wins.
    """
    _check_batch(batch)
    search = _Search(batch, mcfg.lam, mcfg.metric, mcfg.depth, scfg)
    if warm_start is not None:
        if warm_start.depth != mcfg.depth:
            raise ValueError("warm start depth differs from the model depth")
        warm = fit_leaves(warm_start, batch)
        search.offer(evaluate_objective(warm, batch, mcfg.lam, mcfg.metric), warm.key())
    search.run()
    tree = fit_leaves(search.tree(search.best_key, batch.feature_names), batch)
    wall = time.perf_counter() - search.start
    obj = evaluate_objective(tree, batch, mcfg.lam, mcfg.metric)
    logger.debug("solve: obj=%.6g optimal=%s nodes=%d time=%.3fs", obj, search.exhausted,
                 search.nodes, wall)
    return SolveResult(tree, obj, search.exhausted, search.nodes, wall, search.history)
