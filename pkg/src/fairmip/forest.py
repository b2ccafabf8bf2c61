"""Forest of weakly optimized fair trees.

Trees are trained one after another on stratified mini-batches; each
solve is capped by a time limit and warm-started from the previous tree.
Prediction is a majority vote.
"""
from __future__ import annotations

import csv
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .dataset import BatchSpec, TabularDataset, apply_scaling, sample_batch, train_test_split
from .dataset import scale_unit_interval
from .errors import DataError, SchemaError
from .metrics import FairnessMetric, evaluation_report
from .mip_model import ModelConfig
from .tree_solver import MiaTree, SolverConfig, evaluate_objective, route_batch, solve

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
TRADEOFF_COLUMNS = ("lambda", "accuracy", "accuracy_se", "metric", "metric_value", "metric_se")

__all__ = [
    "TrainConfig",
    "ForestModel",
    "EvalReport",
    "batch_seed",
    "train",
    "predict_majority",
    "evaluate",
    "sweep_lambda",
    "write_tradeoff_csv",
    "save",
    "load",
]


@dataclass(frozen=True)
class TrainConfig:
    n_tree: int = 30
    t_limit: float = 60.0
    batch_size: int = 200
    lam: float = 0.0
    metric: FairnessMetric = FairnessMetric.FNR_DIFF
    depth: int = 3
    seed: int = 0
    node_limit: int | None = None

    def __post_init__(self):
        if self.n_tree < 1:
            raise ValueError("n_tree must be at least 1")
        if not self.t_limit > 0:
            raise ValueError("t_limit must be positive")
        if self.batch_size < 4:
            raise ValueError("batch_size must be at least 4")
        if not float(self.lam) >= 0:
            raise ValueError("lambda must be nonnegative")
        if self.depth < 1:
            raise ValueError("depth must be at least 1")
        object.__setattr__(self, "lam", float(self.lam))
        object.__setattr__(self, "metric", FairnessMetric.parse(self.metric))

    def to_json(self) -> dict:
        d = asdict(self)
        d["metric"] = self.metric.value
        d["t_limit"] = None if math.isinf(self.t_limit) else self.t_limit
        return d

    @classmethod
    def from_json(cls, doc: dict) -> "TrainConfig":
        doc = dict(doc)
        if doc.get("t_limit") is None and "t_limit" in doc:
            doc["t_limit"] = math.inf
        return cls(**doc)

    def model_config(self) -> ModelConfig:
        return ModelConfig(self.depth, self.lam, self.metric)

    def solver_config(self) -> SolverConfig:
        return SolverConfig(self.t_limit, self.seed, "greedy", self.node_limit)


@dataclass(frozen=True)
class ForestModel:
    trees: tuple[MiaTree, ...]
    config: TrainConfig
    scaling: tuple[tuple[float, float], ...] | None
    feature_names: tuple[str, ...]

    def __post_init__(self):
        if not self.trees:
            raise ValueError("a forest needs at least one tree")
        if len({t.depth for t in self.trees}) != 1:
            raise ValueError("all trees must share one depth")
        d = len(self.feature_names)
        if any(b.feature >= d for t in self.trees for b in t.branches):
            raise ValueError("tree feature index exceeds the model dimension")
        if any(t.leaves is None for t in self.trees):
            raise ValueError("forest trees must have labeled leaves")

    def to_json(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "config": self.config.to_json(),
            "scaling": None if self.scaling is None else [list(s) for s in self.scaling],
            "feature_names": list(self.feature_names),
            "trees": [t.to_json() for t in self.trees],
        }

    @classmethod
    def from_json(cls, doc: dict) -> "ForestModel":
        if doc.get("schema_version") != SCHEMA_VERSION:
            raise SchemaError(f"unsupported model schema version {doc.get('schema_version')!r}")
        try:
            scaling = doc["scaling"]
            return cls(tuple(MiaTree.from_json(t) for t in doc["trees"]),
                       TrainConfig.from_json(doc["config"]),
                       None if scaling is None else tuple(tuple(map(float, s)) for s in scaling),
                       tuple(doc["feature_names"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise SchemaError(f"malformed model document: {exc}") from exc


@dataclass
class EvalReport:
    accuracy: float
    groups: dict
    metrics: dict
    tree_objectives: list[float] = field(default_factory=list)
    n: int = 0

    def to_json(self) -> dict:
        return asdict(self)


def batch_seed(seed: int, tree_index: int) -> int:
    """Per-tree batch seed: SeedSequence mixing of (seed, tree_index)."""
    return int(np.random.SeedSequence([int(seed), int(tree_index)]).generate_state(1)[0])


Solver = Callable[..., object]


def train(ds: TabularDataset, cfg: TrainConfig, *, solver: Solver | None = None,
          log: list | None = None) -> ForestModel:
    """Train ``cfg.n_tree`` trees sequentially, each warm-started from the last.

    ``solver`` defaults to :func:`tree_solver.solve`; ``log`` (if given)
    receives one dict per tree with objective, wall time and optimality.
    """
    if ds.scaling is None:
        raise DataError("training data must be scaled (see scale_unit_interval)")
    if len(set(ds.groups.tolist())) < 2:
        raise DataError("training data must contain both groups")
    if len(set(ds.labels.tolist())) < 2:
        raise DataError("training data must contain both labels")
    solver = solver or solve
    size = min(cfg.batch_size, ds.n)
    if size < cfg.batch_size:
        logger.info("batch_size %d clamped to dataset size %d", cfg.batch_size, ds.n)
    mcfg, scfg = cfg.model_config(), cfg.solver_config()
    trees: list[MiaTree] = []
    prev = None
    for i in range(cfg.n_tree):
        bseed = batch_seed(cfg.seed, i)
        batch = sample_batch(ds, BatchSpec(size, bseed))
        res = solver(batch, scfg, mcfg, prev)
        trees.append(res.tree)
        prev = res.tree
        if log is not None:
            log.append({"tree": i, "batch_seed": bseed, "objective": res.objective,
                        "wall_time": res.wall_time, "proven_optimal": res.proven_optimal,
                        "nodes": res.nodes_explored, "warm_start": i > 0})
        logger.info("tree %d/%d objective=%.5f optimal=%s %.2fs", i + 1, cfg.n_tree,
                    res.objective, res.proven_optimal, res.wall_time)
    return ForestModel(tuple(trees), cfg, ds.scaling, ds.feature_names)


def _prepare(m: ForestModel, ds: TabularDataset) -> TabularDataset:
    if ds.d != len(m.feature_names):
        raise DataError(f"data has {ds.d} features, model expects {len(m.feature_names)}")
    if ds.scaling is None and m.scaling is not None:
        return apply_scaling(ds, m.scaling)
    if ds.scaling is not None and m.scaling is not None and tuple(ds.scaling) != tuple(m.scaling):
        raise DataError("data was scaled differently from the model's training data")
    return ds


def predict_majority(m: ForestModel, ds: TabularDataset) -> np.ndarray:
    """1 where at least half of the trees vote 1 (ties go to 1)."""
    ds = _prepare(m, ds)
    votes = np.zeros(ds.n, dtype=np.int64)
    for t in m.trees:
        votes += np.asarray(t.leaves, dtype=np.int64)[route_batch(t, ds.values, ds.mask)]
    return (2 * votes >= len(m.trees)).astype(np.int8)


def evaluate(m: ForestModel, ds: TabularDataset) -> EvalReport:
    ds = _prepare(m, ds)
    if len(set(ds.groups.tolist())) < 2:
        raise DataError("evaluation data must contain both groups")
    rep = evaluation_report(predict_majority(m, ds), ds.labels, ds.groups)
    objs = [evaluate_objective(t, ds, m.config.lam, m.config.metric) for t in m.trees]
    return EvalReport(rep["accuracy"], rep["groups"], rep["metrics"], objs, rep["n"])


# --------------------------------------------------------------------------
# lambda sweep

def _sweep_job(args) -> tuple[float, int, float, float]:
    ds, cfg, lam, rep, test_fraction, seed = args
    split_seed = batch_seed(seed, 10_000 + rep)
    tr, te = train_test_split(ds, test_fraction, split_seed)
    if tr.scaling is None:
        tr = scale_unit_interval(tr)
        te = apply_scaling(te, tr.scaling)
    model = train(tr, replace(cfg, lam=lam, seed=batch_seed(seed, rep)))
    rpt = evaluate(model, te)
    return lam, rep, rpt.accuracy, rpt.metrics[cfg.metric.value]


def _workers() -> int:
    raw = os.environ.get("FAIRMIP_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise DataError(f"FAIRMIP_THREADS must be an integer, got {raw!r}") from None


def sweep_lambda(ds: TabularDataset, cfg: TrainConfig, lambdas: Sequence[float],
                 repeats: int = 10, test_fraction: float = 0.3, seed: int = 0) -> list[dict]:
    """Accuracy and ``cfg.metric`` on held-out data for each lambda.

    Each repetition draws its own train/test split (shared across lambdas)
    and its own batch seeds. Rows are sorted by lambda and carry the mean,
    its standard error over repetitions, and the per-split values.
    """
    lambdas = sorted({float(l) for l in lambdas})
    if not lambdas:
        raise ValueError("lambda list is empty")
    if any(l < 0 for l in lambdas):
        raise ValueError("lambdas must be nonnegative")
    if repeats < 1:
        raise ValueError("repeats must be at least 1")
    jobs = [(ds, cfg, lam, r, test_fraction, seed) for lam in lambdas for r in range(repeats)]
    workers = min(_workers(), len(jobs))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_sweep_job, jobs))
    else:
        results = [_sweep_job(j) for j in jobs]
    rows = []
    for lam in lambdas:
        got = sorted((r for r in results if r[0] == lam), key=lambda r: r[1])
        acc = np.array([r[2] for r in got])
        met = np.array([r[3] for r in got])
        se = (lambda a: float(a.std(ddof=1) / math.sqrt(a.size)) if a.size > 1 else 0.0)
        rows.append({"lambda": lam, "accuracy": float(acc.mean()), "accuracy_se": se(acc),
                     "metric": cfg.metric.value, "metric_value": float(met.mean()),
                     "metric_se": se(met), "per_split": [(float(a), float(b))
                                                         for a, b in zip(acc, met)]})
    return rows


def write_tradeoff_csv(rows: list[dict], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRADEOFF_COLUMNS)
        for r in rows:
            w.writerow([repr(r[c]) if isinstance(r[c], float) else r[c] for c in TRADEOFF_COLUMNS])


# --------------------------------------------------------------------------
# persistence

def dumps(m: ForestModel) -> str:
    return json.dumps(m.to_json(), indent=2, sort_keys=True) + "\n"


def save(m: ForestModel, path) -> None:
    Path(path).write_text(dumps(m))


def load(path) -> ForestModel:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: not valid JSON ({exc})") from exc
    except OSError as exc:
        raise DataError(f"cannot read model {path}: {exc}") from exc
    return ForestModel.from_json(doc)
