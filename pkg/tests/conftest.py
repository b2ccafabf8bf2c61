import contextlib
import itertools
import math
import time

import numpy as np
import pytest

from fairmip.dataset import TabularDataset
from fairmip.metrics import fairness_value, zero_one_risk


def make_ds(values, labels, groups, mask=None, names=None, scaling=None):
    values = np.asarray(values, dtype=float)
    if values.ndim == 1:
        values = values[:, None]
    if mask is None:
        mask = np.isnan(values)
    names = names or tuple(f"x{j}" for j in range(values.shape[1]))
    return TabularDataset(values, np.asarray(mask, bool), np.asarray(labels), np.asarray(groups),
                          tuple(names), scaling=scaling)


def grid_ds(rng, n, d, p_missing=0.25, step=0.1):
    """Random batch on a coarse grid; both groups and both labels present."""
    k = int(round(1 / step))
    while True:
        values = rng.integers(0, k + 1, size=(n, d)) * step
        values = np.round(values, 10)
        mask = rng.random((n, d)) < p_missing
        labels = rng.integers(0, 2, n)
        groups = np.arange(n) % 2
        rng.shuffle(groups)
        if len(set(labels.tolist())) == 2:
            return make_ds(np.where(mask, np.nan, values), labels, groups, mask)


# ---------------------------------------------------------------------------
# independent oracle: explicit routing and full prediction vectors

def oracle_route(depth, branches, x, m):
    """Leaf index for one row; branches are (feature, threshold, missing_left)."""
    v = 0
    for _ in range(depth):
        f, t, ml = branches[v]
        go_left = ml if m[f] else x[f] <= t
        v = 2 * v + (1 if go_left else 2)
    return v - (2 ** depth - 1)


def oracle_split_options(ds):
    """Every (feature, threshold, missing_left) a split may use: all
    midpoints between sorted distinct values, the sentinel, both directions."""
    opts = []
    for j in range(ds.d):
        vals = sorted(set(ds.values[~ds.mask[:, j], j].tolist()))
        ts = [-1.0] + [(a + b) / 2 for a, b in zip(vals, vals[1:])]
        for t in ts:
            for ml in (False, True):
                opts.append((j, t, ml))
    return opts


def oracle_objective(preds, ds, lam, metric):
    return zero_one_risk(preds, ds.labels) + lam * fairness_value(metric, preds, ds.labels,
                                                                    ds.groups)


def majority_preds(leaf, labels, n_leaves):
    out = np.empty(len(leaf), dtype=int)
    for l in range(n_leaves):
        at = leaf == l
        pos = int(labels[at].sum())
        out[at] = 1 if pos >= at.sum() - pos else 0
    return out


def brute_force_min(ds, depth, lam, metric):
    """Minimum objective over every tree built from the oracle split options.

    Depth 1 enumerates splits directly. Depth 2 enumerates the root, then
    every distinct prediction pattern on each child's rows, then all pairs.
    """
    opts = oracle_split_options(ds)
    x, m = ds.values, ds.mask
    n = ds.n
    best = math.inf
    if depth == 1:
        seen = set()
        for o in opts:
            leaf = np.array([oracle_route(1, [o], x[i], m[i]) for i in range(n)])
            key = leaf.tobytes()
            if key in seen:
                continue
            seen.add(key)
            preds = majority_preds(leaf, ds.labels, 2)
            best = min(best, oracle_objective(preds, ds, lam, metric))
        return best
    assert depth == 2
    roots = {}
    for o in opts:
        side = np.array([oracle_route(1, [o], x[i], m[i]) for i in range(n)])
        roots.setdefault(side.tobytes(), side)
    for side in roots.values():
        child_patterns = []
        for c in (0, 1):
            rows = np.flatnonzero(side == c)
            pats = {}
            for o in opts:
                leaf = np.array([oracle_route(1, [o], x[i], m[i]) for i in rows], dtype=int)
                preds = majority_preds(leaf, ds.labels[rows], 2) if rows.size else leaf
                pats.setdefault(preds.tobytes(), preds)
            child_patterns.append((rows, list(pats.values())))
        (r0, p0), (r1, p1) = child_patterns
        for a, b in itertools.product(p0, p1):
            preds = np.empty(n, dtype=int)
            preds[r0] = a
            preds[r1] = b
            best = min(best, oracle_objective(preds, ds, lam, metric))
    return best


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_ACCEPTANCE = []


@pytest.fixture
def criterion():
    """Context manager recording one acceptance line: PASS, or FAIL with the reason."""
    @contextlib.contextmanager
    def record(number, title, max_seconds=None):
        t0 = time.perf_counter()
        try:
            yield
            took = time.perf_counter() - t0
            if max_seconds is not None:
                assert took < max_seconds, f"took {took:.1f}s, limit {max_seconds}s"
        except BaseException as exc:
            _ACCEPTANCE.append((number, "FAIL", title, f"{type(exc).__name__}: {exc}"))
            raise
        _ACCEPTANCE.append((number, "PASS", title, f"{took:.1f}s"))

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number, verdict, title, note in sorted(_ACCEPTANCE):
        first = note.splitlines()[0] if note else ""
        terminalreporter.write_line(f"criterion {number:>2}: {verdict}  {title}  ({first})")
