"""Mixed-integer program for a fair MIA tree, as explicit rows.

The program is never handed to a solver here. It is the reference that
the branch-and-bound trainer is tested against: any tree induces an
assignment of every variable, and that assignment must satisfy every row
and reproduce the tree's objective.

Variable names encode family and indices (``p_v2_j1``, ``z_i5_l3``);
constraint tags name the row family (``branch_3``, ``fair_6``, ...).
Two departures from the printed formulation are deliberate:

* Leaf labels use ``s_l = sum_i (2 y_i - 1) z_il`` so that ``u_l = 1``
  exactly when positives are at least as many as negatives.
* The OR row for ``w`` also gets its upper bound ``w <= w1 + w2``.
"""
from __future__ import annotations

import logging
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np
from scipy import sparse

from .dataset import TabularDataset
from .errors import DataError, InvariantError
from .metrics import FairnessMetric
from .tree_solver import MiaTree, fit_leaves, route_batch

logger = logging.getLogger(__name__)

FEAS_TOL = 1e-9
SPLIT_BIG_M = 2.0

__all__ = [
    "ModelConfig",
    "Variable",
    "Constraint",
    "MipProgram",
    "TreeAssignment",
    "build_program",
    "assignment_from_tree",
    "check_feasibility",
    "objective_value",
    "variable_counts",
    "export_lp",
    "read_lp",
]


@dataclass(frozen=True)
class ModelConfig:
    """Model hyperparameters.

    ``big_m=None`` picks the tightest valid constants per row family:
    2 for split rows and ``n + 1`` for counting rows. An explicit value is
    used everywhere and must be at least ``max(2, n + 1)``.
    """

    depth: int = 3
    lam: float = 0.0
    metric: FairnessMetric = FairnessMetric.FNR_DIFF
    big_m: float | None = None
    eps_tol: float = 1e-6

    def __post_init__(self):
        if self.depth < 1:
            raise ValueError("depth must be at least 1")
        if not self.lam >= 0:
            raise ValueError("lambda must be nonnegative")
        if not self.eps_tol > 0:
            raise ValueError("eps_tol must be positive")
        object.__setattr__(self, "metric", FairnessMetric.parse(self.metric))
        object.__setattr__(self, "lam", float(self.lam))


@dataclass(frozen=True)
class Variable:
    name: str
    binary: bool
    lb: float = 0.0
    ub: float = 1.0


@dataclass(frozen=True)
class Constraint:
    tag: str
    terms: tuple[tuple[str, float], ...]
    sense: str  # "<=", ">=", "="
    rhs: float


_FAMILY_ORDER = ("p", "c", "u", "q", "wnm", "w1", "w2", "w", "z", "loss",
                 "f", "ffpr", "ffnr", "lfair", "lfair_fpr", "lfair_fnr")
_INDEX = re.compile(r"^[a-z](\d+)$")


def _var_key(name: str) -> tuple:
    fam, idx = [], []
    for part in name.split("_"):
        m = _INDEX.match(part)
        if m and fam:
            idx.append(int(m.group(1)))
        else:
            fam.append(part)
    family = "_".join(fam)
    rank = _FAMILY_ORDER.index(family) if family in _FAMILY_ORDER else len(_FAMILY_ORDER)
    return (rank, family, tuple(idx))


def _family(name: str) -> str:
    return _var_key(name)[1]


@dataclass(frozen=True, eq=False)
class MipProgram:
    variables: tuple[Variable, ...]
    constraints: tuple[Constraint, ...]
    objective: tuple[tuple[str, float], ...]
    meta: Mapping = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "_index", {v.name: k for k, v in enumerate(self.variables)})
        object.__setattr__(self, "_matrix", None)

    def __eq__(self, other) -> bool:
        if not isinstance(other, MipProgram):
            return NotImplemented
        return (self.variables, self.constraints, self.objective) == (
            other.variables, other.constraints, other.objective)

    __hash__ = None

    def index(self, name: str) -> int:
        return self._index[name]

    @property
    def names(self) -> list[str]:
        return [v.name for v in self.variables]

    def matrix(self) -> sparse.csr_matrix:
        if self._matrix is None:
            rows, cols, data = [], [], []
            for r, con in enumerate(self.constraints):
                for name, coef in con.terms:
                    rows.append(r)
                    cols.append(self._index[name])
                    data.append(coef)
            mat = sparse.csr_matrix((data, (rows, cols)),
                                    shape=(len(self.constraints), len(self.variables)))
            object.__setattr__(self, "_matrix", mat)
        return self._matrix

    def objective_vector(self) -> np.ndarray:
        c = np.zeros(len(self.variables))
        for name, coef in self.objective:
            c[self._index[name]] += coef
        return c


@dataclass(frozen=True, eq=False)
class TreeAssignment:
    names: tuple[str, ...]
    values: np.ndarray

    def __getitem__(self, name: str) -> float:
        return float(self.values[self.names.index(name)])

    def as_dict(self) -> dict[str, float]:
        return dict(zip(self.names, self.values.tolist()))

    def replace(self, **updates: float) -> "TreeAssignment":
        vals = self.values.copy()
        for name, v in updates.items():
            vals[self.names.index(name)] = v
        return TreeAssignment(self.names, vals)


# --------------------------------------------------------------------------
# construction

def _leaf_sets(depth: int) -> tuple[list[list[int]], list[list[int]]]:
    """Leaves under the left and right child of every branch node."""
    n_branch = 2 ** depth - 1
    left = [[] for _ in range(n_branch)]
    right = [[] for _ in range(n_branch)]
    for leaf in range(2 ** depth):
        node = leaf + n_branch
        while node > 0:
            parent = (node - 1) // 2
            (left if node == 2 * parent + 1 else right)[parent].append(leaf)
            node = parent
    return left, right


def _fair_denominators(metric: FairnessMetric, batch: TabularDataset):
    s, y = batch.groups, batch.labels
    if metric is FairnessMetric.ACCURACY_DIFF:
        return int((s == 0).sum()), int((s == 1).sum())
    if metric is FairnessMetric.FPR_DIFF:
        return int(((s == 0) & (y == 0)).sum()), int(((s == 1) & (y == 0)).sum())
    return int(((s == 0) & (y == 1)).sum()), int(((s == 1) & (y == 1)).sum())


def _min_half_gap(batch: TabularDataset) -> float:
    gap = math.inf
    for j in range(batch.d):
        obs = np.unique(batch.values[~batch.mask[:, j], j])
        if obs.size > 1:
            gap = min(gap, float(np.diff(obs).min()) / 2)
        if obs.size:
            gap = min(gap, float(obs.min()) - (-1.0))
    return gap


def _check_batch(batch: TabularDataset):
    if batch.n == 0:
        raise DataError("empty batch")
    obs = batch.values[~batch.mask]
    if obs.size and (obs.min() < 0.0 or obs.max() > 1.0):
        raise DataError("batch is not scaled to [0, 1]")
    if len(set(batch.groups.tolist())) < 2:
        raise DataError("batch must contain both groups")


def build_program(batch: TabularDataset, cfg: ModelConfig) -> MipProgram:
    """All variables, rows and the objective for ``batch`` under ``cfg``."""
    _check_batch(batch)
    n, d, D = batch.n, batch.d, cfg.depth
    if cfg.big_m is not None and cfg.big_m < max(2, n + 1):
        raise ValueError(f"big_m must be at least {max(2, n + 1)}")
    if cfg.eps_tol >= _min_half_gap(batch):
        raise ValueError("eps_tol must be below half the smallest gap between observed values")
    m_split = SPLIT_BIG_M if cfg.big_m is None else float(cfg.big_m)
    m_count = float(n + 1) if cfg.big_m is None else float(cfg.big_m)
    eps = cfg.eps_tol
    V, L = range(2 ** D - 1), range(2 ** D)
    x, m = batch.filled(0.0), batch.mask
    y, s = batch.labels.astype(int), batch.groups.astype(int)

    variables: list[Variable] = []
    for v in V:
        variables += [Variable(f"p_v{v}_j{j}", True) for j in range(d)]
        variables += [Variable(f"c_v{v}", True), Variable(f"q_v{v}", False, -1.0, 1.0)]
        for i in range(n):
            variables += [Variable(f"{fam}_i{i}_v{v}", True) for fam in ("wnm", "w1", "w2", "w")]
    variables += [Variable(f"u_l{l}", True) for l in L]
    variables += [Variable(f"z_i{i}_l{l}", True) for i in range(n) for l in L]
    variables += [Variable(f"loss_l{l}", False, -math.inf, math.inf) for l in L]

    cons: list[Constraint] = []

    def add(tag, terms, sense, rhs):
        merged: dict[str, float] = {}
        for name, coef in terms:
            if coef != 0:
                merged[name] = merged.get(name, 0.0) + float(coef)
        cons.append(Constraint(tag, tuple((k, c) for k, c in merged.items() if c != 0),
                               sense, float(rhs)))

    for v in V:
        add("one_hot", [(f"p_v{v}_j{j}", 1) for j in range(d)], "=", 1)
    for i in range(n):
        add("one_hot", [(f"z_i{i}_l{l}", 1) for l in L], "=", 1)

    left_sets, right_sets = _leaf_sets(D)
    for v in V:
        p = [f"p_v{v}_j{j}" for j in range(d)]
        q, c = f"q_v{v}", f"c_v{v}"
        for i in range(n):
            wnm, w1, w2, w = (f"{fam}_i{i}_v{v}" for fam in ("wnm", "w1", "w2", "w"))
            obs_val = [(p[j], -(0.0 if m[i, j] else x[i, j])) for j in range(d)]
            miss = [(p[j], float(m[i, j])) for j in range(d)]
            add("branch_1", [(q, 1), *obs_val, (wnm, -(m_split + eps))], "<=", -eps)
            add("branch_2", [(q, 1), *obs_val, (wnm, -m_split)], ">=", -m_split)
            add("branch_3", [(w1, 1), *miss, (wnm, -1)], ">=", 0)
            add("branch_4", [(w1, 1), *miss], "<=", 1)
            add("branch_4", [(w1, 1), (wnm, -1)], "<=", 0)
            add("branch_5", [(w2, 1), *[(a, -b) for a, b in miss], (c, -1)], ">=", -1)
            add("branch_5", [(w2, 1), *[(a, -b) for a, b in miss]], "<=", 0)
            add("branch_5", [(w2, 1), (c, -1)], "<=", 0)
            add("branch_6", [(w, 1), (w1, -1)], ">=", 0)
            add("branch_6", [(w, 1), (w2, -1)], ">=", 0)
            add("branch_6", [(w, 1), (w1, -1), (w2, -1)], "<=", 0)
            for l in left_sets[v]:
                add("branch_7", [(f"z_i{i}_l{l}", 1), (w, -1)], "<=", 0)
            for l in right_sets[v]:
                add("branch_7", [(f"z_i{i}_l{l}", 1), (w, 1)], "<=", 1)

    for l in L:
        u = f"u_l{l}"
        zl = [f"z_i{i}_l{l}" for i in range(n)]
        signed = [(zl[i], 2 * y[i] - 1) for i in range(n)]
        add("leaf_1", [*signed, (u, -(m_count + eps))], "<=", -eps)
        add("leaf_2", [*signed, (u, -m_count)], ">=", -m_count)
        neg = [(zl[i], -(1 - y[i])) for i in range(n)]
        pos = [(zl[i], -y[i]) for i in range(n)]
        add("loss_1", [(f"loss_l{l}", 1), *neg], "<=", 0)
        add("loss_1", [(f"loss_l{l}", 1), *pos], "<=", 0)
        add("loss_2", [(f"loss_l{l}", 1), *neg, (u, -m_count)], ">=", -m_count)
        add("loss_2", [(f"loss_l{l}", 1), *pos, (u, m_count)], ">=", 0)

    metric = cfg.metric
    if metric is FairnessMetric.EQUALIZED_ODDS:
        parts = [("ffpr", "lfair_fpr", FairnessMetric.FPR_DIFF),
                 ("ffnr", "lfair_fnr", FairnessMetric.FNR_DIFF)]
    else:
        parts = [("f", "lfair", metric)]
    objective = [(f"loss_l{l}", 1.0 / n) for l in L]
    for fam, lf, sub in parts:
        keep_fp = sub is not FairnessMetric.FNR_DIFF   # FNR variant zeroes the u=1 terms
        keep_fn = sub is not FairnessMetric.FPR_DIFF   # FPR variant zeroes the u=0 terms
        for l in L:
            u = f"u_l{l}"
            zl = [f"z_i{i}_l{l}" for i in range(n)]
            tags = (("fair_1", "fair_2", "fair_3"), ("fair_4", "fair_5", "fair_6"))
            for g, (t_lo, t_hi, t_fn) in enumerate(tags):
                f = f"{fam}_l{l}_g{g}"
                variables.append(Variable(f, False, -math.inf, math.inf))
                in_g = s == g
                fp = [(zl[i], -1) for i in range(n) if in_g[i] and y[i] == 0] if keep_fp else []
                fn = [(zl[i], -1) for i in range(n) if in_g[i] and y[i] == 1] if keep_fn else []
                # u = 1: f equals the false positives of group g
                add(t_lo, [(f, 1), *fp, (u, -m_count)], ">=", -m_count)
                add(t_hi, [(f, 1), *fp, (u, m_count)], "<=", m_count + eps)
                # u = 0: f equals the false negatives of group g
                add(t_fn, [(f, 1), *fn, (u, m_count)], ">=", 0)
                add(t_fn, [(f, 1), *fn, (u, -m_count)], "<=", eps)
        den0, den1 = _fair_denominators(sub, batch)
        variables.append(Variable(lf, False, -math.inf, math.inf))
        a0 = 1.0 / den0 if den0 else 0.0
        a1 = 1.0 / den1 if den1 else 0.0
        diff = [(f"{fam}_l{l}_g0", a0) for l in L] + [(f"{fam}_l{l}_g1", -a1) for l in L]
        add("lfair_1", [(lf, 1), *[(k, -c) for k, c in diff]], ">=", 0)
        add("lfair_2", [(lf, 1), *diff], ">=", 0)
        objective.append((lf, cfg.lam))

    variables.sort(key=lambda var: _var_key(var.name))
    meta = {"n": n, "d": d, "depth": D, "metric": metric.value, "lam": cfg.lam,
            "big_m_split": m_split, "big_m_count": m_count, "eps_tol": eps}
    return MipProgram(tuple(variables), tuple(cons), tuple(objective), meta)


def variable_counts(p: MipProgram) -> dict:
    out = {"binary": 0, "continuous": 0, "families": {}}
    for var in p.variables:
        out["binary" if var.binary else "continuous"] += 1
        fam = _family(var.name)
        out["families"][fam] = out["families"].get(fam, 0) + 1
    return out


# --------------------------------------------------------------------------
# induced assignment and checks

def assignment_from_tree(tree: MiaTree, batch: TabularDataset, cfg: ModelConfig) -> TreeAssignment:
    """Value of every program variable implied by ``tree`` on ``batch``.

    Leaf labels are taken from ``tree`` when present, else from the
    majority rule on ``batch``.
    """
    if tree.depth != cfg.depth:
        raise ValueError(f"tree depth {tree.depth} differs from model depth {cfg.depth}")
    if max(b.feature for b in tree.branches) >= batch.d:
        raise ValueError("tree uses a feature outside the batch dimension")
    if tree.leaves is None:
        tree = fit_leaves(tree, batch)
    n, d, D = batch.n, batch.d, cfg.depth
    x, m = batch.filled(0.0), batch.mask
    y, s = batch.labels.astype(int), batch.groups.astype(int)
    vals: dict[str, float] = {}
    w_all = np.zeros((n, 2 ** D - 1), dtype=int)
    for v, b in enumerate(tree.branches):
        for j in range(d):
            vals[f"p_v{v}_j{j}"] = float(j == b.feature)
        vals[f"c_v{v}"] = float(b.missing_left)
        vals[f"q_v{v}"] = float(b.threshold)
        for i in range(n):
            missing = bool(m[i, b.feature])
            a = 0.0 if missing else x[i, b.feature]
            wnm = int(b.threshold >= a)
            w1 = int(not missing and wnm)
            w2 = int(missing and b.missing_left)
            w_all[i, v] = w1 | w2
            vals[f"wnm_i{i}_v{v}"], vals[f"w1_i{i}_v{v}"] = wnm, w1
            vals[f"w2_i{i}_v{v}"], vals[f"w_i{i}_v{v}"] = w2, w_all[i, v]

    leaf = np.zeros(n, dtype=int)
    for i in range(n):
        node = 0
        for _ in range(D):
            node = 2 * node + (1 if w_all[i, node] else 2)
        leaf[i] = node - (2 ** D - 1)
    if not np.array_equal(leaf, route_batch(tree, batch.values, batch.mask)):
        raise InvariantError("branch indicators disagree with tree routing")

    for i in range(n):
        for l in range(2 ** D):
            vals[f"z_i{i}_l{l}"] = float(leaf[i] == l)
    for l, u in enumerate(tree.leaves):
        vals[f"u_l{l}"] = float(u)
        at = leaf == l
        vals[f"loss_l{l}"] = float(((y == 0) & at).sum() if u else ((y == 1) & at).sum())

    metric = cfg.metric
    parts = ([("ffpr", "lfair_fpr", FairnessMetric.FPR_DIFF),
              ("ffnr", "lfair_fnr", FairnessMetric.FNR_DIFF)]
             if metric is FairnessMetric.EQUALIZED_ODDS else [("f", "lfair", metric)])
    for fam, lf, sub in parts:
        tot = [0.0, 0.0]
        for l, u in enumerate(tree.leaves):
            at = leaf == l
            for g in (0, 1):
                sel = at & (s == g)
                fp = int((sel & (y == 0)).sum()) if u else 0
                fn = 0 if u else int((sel & (y == 1)).sum())
                if sub is FairnessMetric.FPR_DIFF:
                    val = fp
                elif sub is FairnessMetric.FNR_DIFF:
                    val = fn
                else:
                    val = fp + fn
                vals[f"{fam}_l{l}_g{g}"] = float(val)
                tot[g] += val
        den0, den1 = _fair_denominators(sub, batch)
        r0 = tot[0] / den0 if den0 else 0.0
        r1 = tot[1] / den1 if den1 else 0.0
        vals[lf] = abs(r0 - r1)
    names = tuple(sorted(vals, key=_var_key))
    return TreeAssignment(names, np.array([vals[k] for k in names], dtype=float))


def _aligned(p: MipProgram, a: TreeAssignment) -> np.ndarray:
    if a.names == tuple(p.names):
        xv = np.asarray(a.values, dtype=float)
    else:
        lookup = dict(zip(a.names, np.asarray(a.values, dtype=float)))
        missing = [name for name in p.names if name not in lookup]
        if missing:
            raise ValueError(f"assignment lacks {len(missing)} variables, e.g. {missing[0]}")
        xv = np.array([lookup[name] for name in p.names])
    if np.isnan(xv).any():
        raise ValueError("assignment contains NaN values")
    return xv


def check_feasibility(p: MipProgram, a: TreeAssignment) -> list[str]:
    """Tags of violated rows (first-seen order, no repeats).

    Bound and integrality violations are reported as ``bounds`` and
    ``integrality``.
    """
    xv = _aligned(p, a)
    bad: list[str] = []
    lb = np.array([v.lb for v in p.variables])
    ub = np.array([v.ub for v in p.variables])
    if ((xv < lb - FEAS_TOL) | (xv > ub + FEAS_TOL)).any():
        bad.append("bounds")
    binary = np.array([v.binary for v in p.variables], dtype=bool)
    if (np.abs(xv[binary] - np.round(xv[binary])) > FEAS_TOL).any():
        bad.append("integrality")
    if not p.constraints:
        return bad
    lhs = p.matrix() @ xv
    rhs = np.array([c.rhs for c in p.constraints])
    sense = [c.sense for c in p.constraints]
    for k, con in enumerate(p.constraints):
        r = lhs[k] - rhs[k]
        if (sense[k] == "<=" and r > FEAS_TOL) or (sense[k] == ">=" and r < -FEAS_TOL) or (
                sense[k] == "=" and abs(r) > FEAS_TOL):
            if con.tag not in bad:
                bad.append(con.tag)
    return bad


def objective_value(p: MipProgram, a: TreeAssignment) -> float:
    xv = _aligned(p, a)
    violated = check_feasibility(p, a)
    if violated:
        logger.warning("objective of an infeasible assignment (violates %s)", ", ".join(violated))
    total = 0.0
    for name, coef in p.objective:
        total += coef * xv[p.index(name)]
    return float(total)


# --------------------------------------------------------------------------
# LP format

def _fmt(x: float) -> str:
    return repr(float(x))


def _expr(terms, width: int = 78) -> list[str]:
    pieces = []
    for k, (name, coef) in enumerate(terms):
        sign = "-" if coef < 0 else "+"
        mag = abs(coef)
        body = name if mag == 1.0 else f"{_fmt(mag)} {name}"
        pieces.append(f"{sign} {body}" if (k or sign == "-") else body)
    lines, cur = [], ""
    for piece in pieces:
        if cur and len(cur) + len(piece) + 1 > width:
            lines.append(cur)
            cur = piece
        else:
            cur = f"{cur} {piece}" if cur else piece
    lines.append(cur)
    return lines


def export_lp(p: MipProgram, path) -> None:
    """Write ``p`` in CPLEX LP text format (LF line endings)."""
    if not p.variables:
        raise ValueError("program has no variables")
    out = ["\\ fair MIA tree program", "Minimize"]
    obj = _expr(p.objective) if p.objective else ["0 " + p.variables[0].name]
    out.append(" obj: " + obj[0])
    out += ["   " + ln for ln in obj[1:]]
    out.append("Subject To")
    counters: dict[str, int] = {}
    for con in p.constraints:
        k = counters.get(con.tag, 0)
        counters[con.tag] = k + 1
        expr = _expr(con.terms) if con.terms else ["0 " + p.variables[0].name]
        expr[-1] += f" {con.sense} {_fmt(con.rhs)}"
        out.append(f" {con.tag}.{k}: " + expr[0])
        out += ["   " + ln for ln in expr[1:]]
    out.append("Bounds")
    for var in p.variables:
        if var.binary:
            continue
        if math.isinf(var.lb) and math.isinf(var.ub):
            out.append(f" {var.name} free")
        else:
            lo = "-inf" if math.isinf(var.lb) else _fmt(var.lb)
            hi = "+inf" if math.isinf(var.ub) else _fmt(var.ub)
            out.append(f" {lo} <= {var.name} <= {hi}")
    binaries = [var.name for var in p.variables if var.binary]
    if binaries:
        out.append("Binaries")
        for k in range(0, len(binaries), 8):
            out.append(" " + " ".join(binaries[k:k + 8]))
    out.append("End")
    Path(path).write_text("\n".join(out) + "\n", newline="\n")


_SECTIONS = {"minimize": "obj", "subject to": "st", "bounds": "bounds",
             "binaries": "bin", "binary": "bin", "end": "end"}


def _parse_expr(tokens: list[str]) -> list[tuple[str, float]]:
    terms, sign, coef = [], 1.0, None
    for tok in tokens:
        if tok in "+-":
            sign = -1.0 if tok == "-" else 1.0
            continue
        try:
            coef = float(tok)
            continue
        except ValueError:
            pass
        terms.append((tok, sign * (1.0 if coef is None else coef)))
        sign, coef = 1.0, None
    return terms


def read_lp(path) -> MipProgram:
    """Parse a file written by :func:`export_lp` back into a program."""
    section = None
    blocks: dict[str, list[str]] = {"obj": [], "st": [], "bounds": [], "bin": []}
    for raw in Path(path).read_text().splitlines():
        line = raw.strip()
        if not line or line.startswith("\\"):
            continue
        key = line.lower()
        if key in _SECTIONS:
            section = _SECTIONS[key]
            continue
        if section is None or section == "end":
            raise DataError(f"unexpected LP content: {line!r}")
        blocks[section].extend(line.split())

    obj_tokens = blocks["obj"]
    if obj_tokens and obj_tokens[0].endswith(":"):
        obj_tokens = obj_tokens[1:]
    objective = [t for t in _parse_expr(obj_tokens)]
    if len(objective) == 1 and objective[0][1] == 0.0:
        objective = []

    constraints, cur = [], None
    for tok in blocks["st"] + ["__end__:"]:
        if tok.endswith(":"):
            if cur is not None:
                name, toks = cur
                si = next(k for k, t in enumerate(toks) if t in ("<=", ">=", "="))
                terms = [t for t in _parse_expr(toks[:si]) if t[1] != 0.0]
                constraints.append(Constraint(name.rsplit(".", 1)[0], tuple(terms), toks[si],
                                              float(toks[si + 1])))
            cur = (tok[:-1], [])
        else:
            cur[1].append(tok)

    bounds: dict[str, tuple[float, float]] = {}
    toks = blocks["bounds"]
    k = 0
    while k < len(toks):
        if k + 1 < len(toks) and toks[k + 1] == "free":
            bounds[toks[k]] = (-math.inf, math.inf)
            k += 2
        else:
            lo, _, name, _, hi = toks[k:k + 5]
            bounds[name] = (float(lo), float(hi))
            k += 5
    binaries = set(blocks["bin"])
    names = set(binaries) | set(bounds)
    for con in constraints:
        names.update(n for n, _ in con.terms)
    names.update(n for n, _ in objective)
    variables = []
    for name in sorted(names, key=_var_key):
        if name in binaries:
            variables.append(Variable(name, True))
        else:
            lo, hi = bounds.get(name, (0.0, math.inf))
            variables.append(Variable(name, False, lo, hi))
    return MipProgram(tuple(variables), tuple(constraints), tuple(objective))
