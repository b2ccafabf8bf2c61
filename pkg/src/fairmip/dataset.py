"""Tabular data with an explicit missingness mask.

A :class:`TabularDataset` keeps feature values and a boolean mask side by
side; masked cells hold NaN and no consumer reads them. Labels and the
group attribute are always complete binary vectors.
"""
from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import DataError

logger = logging.getLogger(__name__)

__all__ = [
    "TabularDataset",
    "MissingnessSpec",
    "BatchSpec",
    "load_csv",
    "read_raw_csv",
    "scale_unit_interval",
    "apply_scaling",
    "unscale",
    "inject_missingness",
    "train_test_split",
    "sample_batch",
    "balance",
    "missingness_report",
    "report_to_csv",
]


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class TabularDataset:
    values: np.ndarray
    mask: np.ndarray
    labels: np.ndarray
    groups: np.ndarray
    feature_names: tuple[str, ...]
    scaling: tuple[tuple[float, float], ...] | None = None
    row_index: np.ndarray | None = None
    diagnostics: Mapping = field(default_factory=dict)

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        mask = np.asarray(self.mask, dtype=bool)
        if values.ndim != 2 or values.shape != mask.shape:
            raise DataError(
                f"values {values.shape} and mask {mask.shape} must be equal-shape matrices")
        n, d = values.shape
        labels = np.asarray(self.labels)
        groups = np.asarray(self.groups)
        if labels.shape != (n,) or groups.shape != (n,):
            raise DataError("labels and groups need one entry per row")
        for name, arr in (("label", labels), ("group", groups)):
            if not np.isin(arr, (0, 1)).all():
                raise DataError(f"non-binary {name} values")
        if len(self.feature_names) != d:
            raise DataError(f"expected {d} feature names, got {len(self.feature_names)}")
        values = np.where(mask, np.nan, values)
        if self.scaling is not None and len(self.scaling) != d:
            raise DataError("scaling needs one (min, max) pair per feature")
        row_index = np.arange(n) if self.row_index is None else np.asarray(self.row_index, dtype=int)
        object.__setattr__(self, "values", _frozen(values))
        object.__setattr__(self, "mask", _frozen(mask))
        object.__setattr__(self, "labels", _frozen(labels.astype(np.int8)))
        object.__setattr__(self, "groups", _frozen(groups.astype(np.int8)))
        object.__setattr__(self, "feature_names", tuple(str(f) for f in self.feature_names))
        object.__setattr__(self, "row_index", _frozen(row_index))
        if self.scaling is not None:
            object.__setattr__(self, "scaling",
                               tuple((float(lo), float(hi)) for lo, hi in self.scaling))

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def d(self) -> int:
        return self.values.shape[1]

    def __len__(self) -> int:
        return self.n

    def feature_index(self, name: str) -> int:
        try:
            return self.feature_names.index(name)
        except ValueError:
            raise DataError(f"unknown feature {name!r}") from None

    def take(self, idx) -> "TabularDataset":
        """Row subset; masks, labels and groups travel with their rows."""
        idx = np.asarray(idx, dtype=int)
        return replace(self, values=self.values[idx], mask=self.mask[idx],
                       labels=self.labels[idx], groups=self.groups[idx],
                       row_index=self.row_index[idx], diagnostics={})

    def filled(self, fill: float = 0.0) -> np.ndarray:
        """Copy of ``values`` with masked cells replaced by ``fill``."""
        return np.where(self.mask, fill, self.values)


@dataclass(frozen=True)
class MissingnessSpec:
    """Per-feature, per-group erasure probabilities."""

    entries: tuple[tuple[str, float, float], ...]

    def __post_init__(self):
        entries = tuple((str(f), float(p0), float(p1)) for f, p0, p1 in self.entries)
        for f, p0, p1 in entries:
            if not (0.0 <= p0 <= 1.0 and 0.0 <= p1 <= 1.0):
                raise DataError(f"missing probabilities for {f!r} must lie in [0, 1]")
        object.__setattr__(self, "entries", entries)

    @classmethod
    def from_json(cls, doc) -> "MissingnessSpec":
        """Accept ``[{"feature", "p0", "p1"}, ...]`` or ``{"entries": [...]}``."""
        if isinstance(doc, (str, Path)):
            doc = json.loads(Path(doc).read_text())
        if isinstance(doc, Mapping):
            doc = doc.get("entries", [])
        try:
            return cls(tuple((e["feature"], e["p0"], e["p1"]) for e in doc))
        except (KeyError, TypeError) as exc:
            raise DataError(f"malformed missingness spec: {exc}") from exc

    def to_json(self) -> list[dict]:
        return [{"feature": f, "p0": p0, "p1": p1} for f, p0, p1 in self.entries]


@dataclass(frozen=True)
class BatchSpec:
    batch_size: int
    seed: int = 0


# --------------------------------------------------------------------------
# loading

def read_raw_csv(path, delimiter: str = ",") -> tuple[list[str], list[list[str]]]:
    """Header and string rows, exactly as written in the file."""
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh, delimiter=delimiter))
    except (OSError, UnicodeDecodeError, csv.Error) as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    if not rows:
        raise DataError(f"{path} is empty (header row required)")
    header, body = rows[0], rows[1:]
    for k, row in enumerate(body):
        if len(row) != len(header):
            raise DataError(f"{path}: row {k + 1} has {len(row)} fields, header has {len(header)}")
    return header, body


def _binary_code(column: str, cells: list[str], encoding: Mapping | None, diag: dict) -> np.ndarray:
    if encoding is not None:
        try:
            out = np.array([int(encoding[c]) for c in cells])
        except KeyError as exc:
            raise DataError(f"value {exc} of {column!r} missing from its encoding") from None
    else:
        distinct = sorted(set(cells))
        try:
            nums = sorted({float(c) for c in distinct})
        except ValueError:
            nums = None
        if nums is not None and set(nums) <= {0.0, 1.0}:
            out = np.array([int(float(c)) for c in cells])
        elif len(distinct) == 2:
            if nums is not None:
                order = sorted(distinct, key=float)
            else:
                order = distinct
            code = {v: k for k, v in enumerate(order)}
            diag.setdefault("binary_codes", {})[column] = code
            out = np.array([code[c] for c in cells])
        else:
            raise DataError(f"non-binary {column!r} column: {len(distinct)} distinct values")
    if not np.isin(out, (0, 1)).all():
        raise DataError(f"non-binary {column!r} column after encoding")
    return out


def load_csv(path, label_col: str, group_col: str, na_token: str = "NA",
             delimiter: str = ",", encodings: Mapping[str, Mapping[str, float]] | None = None,
             drop_cols: Iterable[str] = ()) -> TabularDataset:
    """Read a CSV with a header row into a :class:`TabularDataset`.

    Cells equal to ``na_token`` (or empty) are missing. Rows missing the
    label or group are dropped and counted in ``diagnostics["dropped_rows"]``.
    Non-numeric feature columns need an ordinal map in ``encodings``.
    """
    encodings = dict(encodings or {})
    header, body = read_raw_csv(path, delimiter)
    for col in (label_col, group_col):
        if col not in header:
            raise DataError(f"column {col!r} not found in {path}")
    if label_col == group_col:
        raise DataError("label and group columns must differ")

    def is_na(cell: str) -> bool:
        return cell == na_token or cell == ""

    li, gi = header.index(label_col), header.index(group_col)
    keep = [k for k, row in enumerate(body) if not (is_na(row[li]) or is_na(row[gi]))]
    dropped = len(body) - len(keep)
    if not keep:
        raise DataError(f"{path}: zero rows remain after dropping missing label/group")
    diag: dict = {"dropped_rows": dropped, "source": str(path)}
    if dropped:
        logger.info("dropped %d rows with missing label or group", dropped)

    rows = [body[k] for k in keep]
    labels = _binary_code(label_col, [r[li] for r in rows], encodings.get(label_col), diag)
    groups = _binary_code(group_col, [r[gi] for r in rows], encodings.get(group_col), diag)

    skip = {label_col, group_col, *drop_cols}
    feat_cols = [c for c in header if c not in skip]
    n, d = len(rows), len(feat_cols)
    values = np.zeros((n, d))
    mask = np.zeros((n, d), dtype=bool)
    for j, col in enumerate(feat_cols):
        ci = header.index(col)
        enc = encodings.get(col)
        for i, row in enumerate(rows):
            cell = row[ci]
            if is_na(cell):
                mask[i, j] = True
                continue
            if enc is not None:
                if cell not in enc:
                    raise DataError(f"value {cell!r} of {col!r} missing from its encoding")
                values[i, j] = float(enc[cell])
            else:
                try:
                    values[i, j] = float(cell)
                except ValueError:
                    raise DataError(
                        f"non-numeric value {cell!r} in {col!r}; declare an encoding") from None
    return TabularDataset(values, mask, labels, groups, tuple(feat_cols),
                          row_index=np.array(keep), diagnostics=diag)


# --------------------------------------------------------------------------
# scaling

def scale_unit_interval(ds: TabularDataset) -> TabularDataset:
    """Min-max scale every feature to [0, 1] using observed cells only.

    Constant (or entirely missing) features map to 0.
    """
    if ds.scaling is not None:
        raise DataError("dataset is already scaled")
    scaling = []
    for j in range(ds.d):
        obs = ds.values[~ds.mask[:, j], j]
        if obs.size:
            scaling.append((float(obs.min()), float(obs.max())))
        else:
            scaling.append((0.0, 0.0))
    return apply_scaling(ds, scaling)


def apply_scaling(ds: TabularDataset, scaling: Sequence[tuple[float, float]]) -> TabularDataset:
    """Scale with stored (min, max) pairs, clipping into [0, 1].

    Clipping never changes routing: every split threshold is either a
    value in (0, 1) or the sentinel below 0.
    """
    if ds.scaling is not None:
        raise DataError("dataset is already scaled")
    if len(scaling) != ds.d:
        raise DataError("scaling needs one (min, max) pair per feature")
    lo = np.array([s[0] for s in scaling], dtype=float)
    hi = np.array([s[1] for s in scaling], dtype=float)
    span = hi - lo
    safe = np.where(span > 0, span, 1.0)
    scaled = np.where(span > 0, (ds.values - lo) / safe, 0.0)
    scaled = np.clip(scaled, 0.0, 1.0)
    return replace(ds, values=scaled, scaling=tuple(zip(lo.tolist(), hi.tolist())))


def unscale(ds: TabularDataset) -> np.ndarray:
    """Observed values mapped back to original units (NaN where masked)."""
    if ds.scaling is None:
        return ds.values.copy()
    lo = np.array([s[0] for s in ds.scaling])
    hi = np.array([s[1] for s in ds.scaling])
    return lo + ds.values * (hi - lo)


# --------------------------------------------------------------------------
# corruption, splitting, batching

def inject_missingness(ds: TabularDataset, spec: MissingnessSpec, seed: int) -> TabularDataset:
    """Erase cells independently with a per-group probability.

    Already-missing cells stay missing. Uniform draws are taken for every
    targeted cell regardless of its state, so results depend only on
    ``seed`` and ``spec``.
    """
    rng = np.random.default_rng(seed)
    mask = ds.mask.copy()
    for feature, p0, p1 in spec.entries:
        j = ds.feature_index(feature)
        u = rng.random(ds.n)
        p = np.where(ds.groups == 1, p1, p0)
        mask[:, j] |= u < p
    return replace(ds, mask=mask)


def _largest_remainder(total: int, weights: np.ndarray) -> np.ndarray:
    """Integer allocation of ``total`` proportional to ``weights``.

    Leftover units go to the largest fractional parts, lower index first
    on ties.
    """
    weights = np.asarray(weights, dtype=float)
    if weights.sum() == 0:
        return np.zeros(len(weights), dtype=int)
    exact = total * weights / weights.sum()
    base = np.floor(exact).astype(int)
    rest = total - base.sum()
    order = np.argsort(-(exact - base), kind="stable")
    base[order[:rest]] += 1
    return base


def train_test_split(ds: TabularDataset, test_fraction: float, seed: int
                     ) -> tuple[TabularDataset, TabularDataset]:
    """Group-stratified random split into (train, test)."""
    if ds.n < 2:
        raise DataError("need at least two rows to split")
    if not 0.0 < test_fraction < 1.0:
        raise DataError(f"test_fraction must lie in (0, 1), got {test_fraction}")
    n_test = int(math.floor(test_fraction * ds.n + 0.5))
    if n_test < 1 or n_test > ds.n - 1:
        raise DataError(f"test_fraction {test_fraction} leaves an empty side for n={ds.n}")
    rng = np.random.default_rng(seed)
    sizes = np.array([(ds.groups == g).sum() for g in (0, 1)])
    per_group = _largest_remainder(n_test, sizes)
    test_idx = []
    for g in (0, 1):
        rows = np.flatnonzero(ds.groups == g)
        test_idx.append(rng.permutation(rows)[:per_group[g]])
    test_idx = np.sort(np.concatenate(test_idx))
    train_idx = np.setdiff1d(np.arange(ds.n), test_idx)
    return ds.take(train_idx), ds.take(test_idx)


def _cells(ds: TabularDataset) -> np.ndarray:
    return 2 * ds.groups.astype(int) + ds.labels.astype(int)


def sample_batch(ds: TabularDataset, spec: BatchSpec) -> TabularDataset:
    """Stratified draw without replacement over (group, label) cells.

    Every nonempty cell of ``ds`` contributes at least one row; the rest
    of the budget is split proportionally to cell sizes.
    """
    b = int(spec.batch_size)
    if b < 4:
        raise DataError("batch_size must be at least 4")
    if b > ds.n:
        raise DataError(f"batch_size {b} exceeds dataset size {ds.n}")
    rng = np.random.default_rng(spec.seed)
    cells = _cells(ds)
    sizes = np.bincount(cells, minlength=4)
    alloc = _largest_remainder(b, sizes)
    nonempty = sizes > 0
    # bump empty allocations of nonempty cells, paying from the largest ones
    for c in np.flatnonzero(nonempty & (alloc == 0)):
        donor = int(np.argmax(np.where(alloc > 1, alloc, -1)))
        alloc[donor] -= 1
        alloc[c] += 1
    picked = []
    for c in range(4):
        rows = np.flatnonzero(cells == c)
        picked.append(rng.permutation(rows)[:alloc[c]])
    idx = rng.permutation(np.concatenate(picked))
    return ds.take(idx)


def balance(ds: TabularDataset, by: str = "group", seed: int = 0) -> TabularDataset:
    """Down-sample so each group (or each group-label cell) has equal size."""
    if by == "group":
        keys = ds.groups.astype(int)
    elif by == "group_label":
        keys = _cells(ds)
    else:
        raise DataError(f"unknown balancing mode {by!r}")
    present = [k for k in np.unique(keys)]
    m = min((keys == k).sum() for k in present)
    rng = np.random.default_rng(seed)
    idx = np.concatenate([rng.permutation(np.flatnonzero(keys == k))[:m] for k in present])
    return ds.take(np.sort(idx))


# --------------------------------------------------------------------------
# reporting

def missingness_report(ds: TabularDataset) -> list[dict]:
    """Per-feature, per-group missing rate with its binomial standard error."""
    rows = []
    for j, name in enumerate(ds.feature_names):
        for g in (0, 1):
            in_g = ds.groups == g
            n_g = int(in_g.sum())
            k = int(ds.mask[in_g, j].sum())
            rate = k / n_g if n_g else 0.0
            se = math.sqrt(rate * (1 - rate) / n_g) if n_g else 0.0
            rows.append({"feature": name, "group": g, "n": n_g, "missing": k,
                         "rate": rate, "se": se})
    return rows


def report_to_csv(rows: list[dict], path) -> None:
    if not rows:
        Path(path).write_text("")
        return
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
