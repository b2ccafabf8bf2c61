"""Exact computations on small finite distributions of (S, X, M, Y).

Every quantity here is an exact sum over atoms, so the constructive
counterexamples about imputation and fairness can be checked to 1e-12.
"""
from __future__ import annotations

import itertools
import math
from collections import defaultdict
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from . import imputation
from .metrics import theorem2_rhs, tv_distance

TOL = 1e-12

__all__ = [
    "Atom",
    "FiniteJoint",
    "ThresholdClass",
    "ConstantMap",
    "IndicatorMap",
    "ConformalScanResult",
    "check_mcar",
    "mcar_table",
    "lemma1_counterexamples",
    "theorem2_tightness",
    "verify_theorem2",
    "random_joint",
    "threshold_grid",
    "conformal_scan",
    "theorem3_witness",
    "theorem1_monte_carlo",
    "run_checks",
]


@dataclass(frozen=True)
class Atom:
    """One outcome. ``x`` is the complete feature vector; its designated
    missing coordinate may be ``None`` when the value is never observed."""

    s: int
    x: tuple
    m: int
    y: int
    prob: float


@dataclass(frozen=True)
class FiniteJoint:
    atoms: tuple[Atom, ...]
    ms_index: int = 0

    def __post_init__(self):
        atoms = tuple(a if isinstance(a, Atom) else Atom(*a) for a in self.atoms)
        if not atoms:
            raise ValueError("malformed joint: no atoms")
        total = math.fsum(a.prob for a in atoms)
        if abs(total - 1.0) > TOL * max(1, len(atoms)):
            raise ValueError(f"malformed joint: probabilities sum to {total}")
        dim = len(atoms[0].x)
        for a in atoms:
            if a.prob < 0 or a.s not in (0, 1) or a.m not in (0, 1) or a.y not in (0, 1):
                raise ValueError(f"malformed atom {a}")
            if len(a.x) != dim or not 0 <= self.ms_index < dim:
                raise ValueError("malformed joint: inconsistent dimensions")
            if a.x[self.ms_index] is None and a.m != 1:
                raise ValueError("an unobserved coordinate requires m = 1")
        object.__setattr__(self, "atoms", atoms)

    @property
    def dim(self) -> int:
        return len(self.atoms[0].x)

    def incomplete(self, a: Atom) -> tuple:
        """The observed vector, with ``None`` in the missing slot when m = 1."""
        if not a.m:
            return a.x
        x = list(a.x)
        x[self.ms_index] = None
        return tuple(x)

    def group_mass(self, s: int) -> float:
        return math.fsum(a.prob for a in self.atoms if a.s == s)

    def missing_prob(self, s: int) -> float:
        """Pr(M = 1 | S = s)."""
        mass = self.group_mass(s)
        if mass == 0:
            return 0.0
        return math.fsum(a.prob for a in self.atoms if a.s == s and a.m) / mass


@dataclass(frozen=True)
class ThresholdClass:
    """Predictors ``1[x[axis] >= a]`` with ``a`` in ``[lo, hi]``."""

    axis: int
    lo: float = 0.0
    hi: float = 1.0

    def predict(self, x: Sequence[float], a: float) -> int:
        return int(x[self.axis] >= a)


# imputation maps: fill the designated missing coordinate of an incomplete vector

@dataclass(frozen=True)
class ConstantMap:
    value: float

    def fill(self, x_tilde: tuple, ms_index: int) -> float:
        return self.value


@dataclass(frozen=True)
class IndicatorMap:
    """Fill with ``1[x[source] <= threshold]`` (or ``>`` when ``below`` is False)."""

    source: int
    threshold: float
    below: bool = True

    def fill(self, x_tilde: tuple, ms_index: int) -> float:
        v = x_tilde[self.source]
        hit = v <= self.threshold if self.below else v > self.threshold
        return 1.0 if hit else 0.0


def _impute(j: FiniteJoint, fmap, a: Atom) -> tuple:
    xt = j.incomplete(a)
    if not a.m:
        return xt
    x = list(xt)
    x[j.ms_index] = float(fmap.fill(xt, j.ms_index))
    return tuple(x)


# --------------------------------------------------------------------------
# MCAR

def _scoped(j: FiniteJoint, scope) -> list[tuple[Atom, float]]:
    atoms = [a for a in j.atoms if scope in (None, "population") or a.s == scope]
    mass = math.fsum(a.prob for a in atoms)
    if not atoms or mass <= 0:
        raise ValueError(f"empty scope {scope!r}")
    return [(a, a.prob / mass) for a in atoms]


def mcar_table(j: FiniteJoint, scope=None) -> list[dict]:
    """Joint P(M=m, X=x) against P(M=m) P(X=x) for every (m, x) pair."""
    atoms = _scoped(j, scope)
    if any(v is None for a, _ in atoms for v in a.x):
        raise ValueError("malformed joint: MCAR needs complete X on every atom")
    joint: dict = defaultdict(float)
    pm: dict = defaultdict(float)
    px: dict = defaultdict(float)
    for a, p in atoms:
        joint[(a.m, a.x)] += p
        pm[a.m] += p
        px[a.x] += p
    rows = []
    for m, x in itertools.product(sorted(pm), sorted(px)):
        rows.append({"m": m, "x": list(x), "joint": joint.get((m, x), 0.0),
                     "product": pm[m] * px[x]})
    return rows


def check_mcar(j: FiniteJoint, scope=None) -> bool:
    """True when M is independent of X on the scoped distribution.

    ``scope`` is ``None``/"population" or a group label 0/1.
    """
    return all(abs(r["joint"] - r["product"]) <= TOL for r in mcar_table(j, scope))


def lemma1_counterexamples() -> tuple[FiniteJoint, FiniteJoint]:
    """(i) MCAR in each group but not overall; (ii) MCAR overall but in no group."""
    first = []
    for s, (px1, pm1) in enumerate(((0.1, 0.1), (0.9, 0.9))):
        for x, m in itertools.product((0, 1), (0, 1)):
            p = 0.5 * (px1 if x else 1 - px1) * (pm1 if m else 1 - pm1)
            first.append(Atom(s, (float(x),), m, 0, p))
    tables = {
        0: {(0, 0): 0.1, (0, 1): 0.3, (1, 0): 0.4, (1, 1): 0.2},
        1: {(0, 0): 0.4, (0, 1): 0.2, (1, 0): 0.1, (1, 1): 0.3},
    }
    second = [Atom(s, (float(x),), m, 0, 0.5 * p)
              for s, table in tables.items() for (m, x), p in table.items()]
    return FiniteJoint(tuple(first)), FiniteJoint(tuple(second))


# --------------------------------------------------------------------------
# train/test imputation mismatch

def _group_loss(j: FiniteJoint, fmap, predict: Callable, s: int, missing_only=False) -> float:
    num = den = 0.0
    for a in j.atoms:
        if a.s != s or (missing_only and not a.m):
            continue
        num += a.prob * (predict(_impute(j, fmap, a)) != a.y)
        den += a.prob
    return num / den if den else 0.0


def _pushforward(j: FiniteJoint, fmap, s: int) -> dict:
    """Law of (f(X~), Y) given M = 1, S = s."""
    out: dict = defaultdict(float)
    atoms = [a for a in j.atoms if a.s == s and a.m]
    mass = math.fsum(a.prob for a in atoms)
    for a in atoms:
        out[(_impute(j, fmap, a), a.y)] += a.prob / mass
    return dict(out)


def _aligned_tv(p: dict, q: dict) -> float:
    keys = set(p) | set(q)
    return tv_distance({k: p.get(k, 0.0) for k in keys}, {k: q.get(k, 0.0) for k in keys})


def verify_theorem2(j: FiniteJoint, cls: ThresholdClass, a: float, f_train, f_test) -> dict:
    """Both sides of the imputation-mismatch bound for ``h = 1[x[axis] >= a]``.

    0-1 loss, so the loss bound K is 1.
    """
    predict = lambda x: cls.predict(x, a)  # noqa: E731
    l_train = [_group_loss(j, f_train, predict, s) for s in (0, 1)]
    l_test = [_group_loss(j, f_test, predict, s) for s in (0, 1)]
    p = [j.missing_prob(s) for s in (0, 1)]
    tv = []
    for s in (0, 1):
        if p[s] == 0:
            tv.append(0.0)
        else:
            tv.append(_aligned_tv(_pushforward(j, f_train, s), _pushforward(j, f_test, s)))
    lhs = abs(l_test[0] - l_test[1])
    rhs = theorem2_rhs(l_train[0], l_train[1], 1.0, p[0], p[1], tv[0], tv[1])
    return {"lhs": lhs, "rhs": rhs, "holds": lhs <= rhs + TOL,
            "train_risks": l_train, "test_risks": l_test, "p": p, "tv": tv}


def theorem2_tightness() -> tuple[FiniteJoint, ThresholdClass, float, ConstantMap, IndicatorMap]:
    """Point-mass groups where the mismatch bound holds with equality (= 1)."""
    j = FiniteJoint((Atom(0, (0.0, None), 1, 0, 0.5), Atom(1, (1.0, None), 1, 0, 0.5)), ms_index=1)
    return j, ThresholdClass(axis=1), 0.5, ConstantMap(0.0), IndicatorMap(0, 0.5)


def random_joint(rng: np.random.Generator, max_atoms: int = 8) -> FiniteJoint:
    """Random two-coordinate joint on a coarse grid; coordinate 1 can be missing."""
    k = int(rng.integers(2, max_atoms + 1))
    grid = np.round(np.linspace(0, 1, 5), 2)
    probs = rng.dirichlet(np.ones(k))
    probs[-1] = 1.0 - math.fsum(probs[:-1])
    atoms = []
    for i in range(k):
        s = int(rng.integers(2)) if i >= 2 else i  # both groups present
        m = int(rng.integers(2))
        x2 = None if (m and rng.random() < 0.5) else float(rng.choice(grid))
        atoms.append(Atom(s, (float(rng.choice(grid)), x2), m, int(rng.integers(2)),
                          max(float(probs[i]), 0.0)))
    return FiniteJoint(tuple(atoms), ms_index=1)


# --------------------------------------------------------------------------
# conformal imputation

@dataclass(frozen=True)
class ConformalScanResult:
    """Best constrained risk for one fill.

    When no threshold meets the fairness constraint, ``feasible`` is False
    and ``min_feasible_risk`` reports 1.0, the upper bound of 0-1 risk.
    """

    fill: object
    min_feasible_risk: float
    argmin_threshold: float | None
    feasible: bool

    def conformal(self, delta: float) -> bool:
        return self.feasible and self.min_feasible_risk <= delta + TOL


def threshold_grid(j: FiniteJoint, cls: ThresholdClass, fills: Iterable) -> list[float]:
    """Thresholds covering every piece of the piecewise-constant risk.

    Uses imputed atom coordinates on ``cls.axis`` plus midpoints and the
    class endpoints, restricted to ``[cls.lo, cls.hi]``.
    """
    coords = set()
    for f in fills:
        for a in j.atoms:
            coords.add(_impute(j, f, a)[cls.axis])
    pts = sorted(coords)
    mids = [(u + v) / 2 for u, v in zip(pts, pts[1:])]
    below, above = (pts[0] - 1.0, pts[-1] + 1.0) if pts else (cls.lo, cls.hi)
    grid = {cls.lo, cls.hi, *pts, *mids, below, above}
    return sorted(t for t in grid if cls.lo <= t <= cls.hi)


def conformal_scan(j: FiniteJoint, cls: ThresholdClass, fill_grid: Sequence, eps: float,
                   thresholds: Sequence[float]) -> list[ConformalScanResult]:
    """Exhaustive fairness-constrained risk minimization for each fill."""
    if not fill_grid or not thresholds:
        raise ValueError("fill and threshold grids must be nonempty")
    results = []
    for f in fill_grid:
        imputed = [(_impute(j, f, a), a) for a in j.atoms]
        best, best_a = None, None
        for t in sorted(thresholds):
            risk = [0.0, 0.0]
            mass = [0.0, 0.0]
            for x, a in imputed:
                risk[a.s] += a.prob * (cls.predict(x, t) != a.y)
                mass[a.s] += a.prob
            total = risk[0] + risk[1]
            l = [risk[s] / mass[s] if mass[s] else 0.0 for s in (0, 1)]
            if abs(l[0] - l[1]) <= eps + TOL and (best is None or total < best - TOL):
                best, best_a = total, t
        if best is None:
            results.append(ConformalScanResult(f, 1.0, None, False))
        else:
            results.append(ConformalScanResult(f, best, best_a, True))
    return results


def theorem3_witness() -> tuple[FiniteJoint, ThresholdClass, ThresholdClass, IndicatorMap]:
    """Distribution, the two threshold classes, and the fill that suits only the second."""
    j = FiniteJoint((Atom(0, (0.0, None), 1, 1, 0.5), Atom(1, (1.0, None), 1, 0, 0.5)), ms_index=1)
    return j, ThresholdClass(axis=0), ThresholdClass(axis=1), IndicatorMap(0, 0.0)


# --------------------------------------------------------------------------
# optimal constant imputation, sampled

def theorem1_monte_carlo(t: imputation.Theorem1Inputs, n: int = 1_000_000,
                         seed: int = 0) -> dict:
    """Sample missing rows from the group mixture, fill with their mean,
    and measure the per-group squared-error gap."""
    rng = np.random.default_rng(seed)
    s = (rng.random(n) < t.p1_ms).astype(int)
    mean = np.where(s == 1, t.m1, t.m0)
    sd = np.sqrt(np.where(s == 1, t.var1, t.var0))
    x = mean + sd * rng.standard_normal(n)
    alpha = float(x.mean())
    err = (alpha - x) ** 2
    l0, l1 = float(err[s == 0].mean()), float(err[s == 1].mean())
    return {"alpha": alpha, "l0": l0, "l1": l1, "disc": abs(l0 - l1)}


# --------------------------------------------------------------------------
# suite

def _mcar_cell(j: FiniteJoint, m: int, x: tuple) -> dict:
    return next(r for r in mcar_table(j) if r["m"] == m and tuple(r["x"]) == x)


def run_checks(n_random: int = 1000, mc_samples: int = 1_000_000, seed: int = 0,
               inject_fault: bool = False) -> list[dict]:
    """Run every constructive check; each entry has name, passed, details.

    ``inject_fault`` corrupts the first check on purpose, for exercising
    failure handling in callers.
    """
    out = []
    first, second = lemma1_counterexamples()
    cell = _mcar_cell(first, 1, (1.0,))
    joint = cell["joint"] + (0.5 if inject_fault else 0.0)
    ok = (check_mcar(first, 0) and check_mcar(first, 1) and not check_mcar(first)
          and abs(joint - 0.41) <= TOL and abs(cell["product"] - 0.25) <= TOL
          and check_mcar(second) and not check_mcar(second, 0) and not check_mcar(second, 1))
    out.append({"name": "lemma1", "passed": bool(ok),
                "details": {"joint": joint, "product": cell["product"],
                            "expected": {"joint": 0.41, "product": 0.25}}})

    t = imputation.Theorem1Inputs(0.3, 0.7, 0.0, 1.0, 1.0, 2.0)
    closed = imputation.theorem1_disc(t)
    mc = theorem1_monte_carlo(t, mc_samples, seed)
    out.append({"name": "theorem1", "passed": closed == 0.6 and abs(mc["disc"] - closed) <= 0.02,
                "details": {"closed_form": closed, "monte_carlo": mc["disc"],
                            "expected": 0.6}})

    rng = np.random.default_rng(seed)
    failures = 0
    for _ in range(n_random):
        j = random_joint(rng)
        cls = ThresholdClass(axis=int(rng.integers(2)))
        a = float(rng.choice([0.0, 0.1, 0.3, 0.5, 0.7, 0.9, 1.0]))
        fills = [ConstantMap(float(rng.choice([0.0, 0.25, 0.5, 1.0]))), IndicatorMap(0, 0.5)]
        rng.shuffle(fills)
        failures += not verify_theorem2(j, cls, a, fills[0], fills[1])["holds"]
    tj, tcls, ta, ftr, fte = theorem2_tightness()
    tight = verify_theorem2(tj, tcls, ta, ftr, fte)
    out.append({"name": "theorem2", "passed": failures == 0 and tight["lhs"] == 1.0
                and tight["rhs"] == 1.0,
                "details": {"random_failures": failures, "tight_lhs": tight["lhs"],
                            "tight_rhs": tight["rhs"], "expected": {"tight": 1.0}}})

    wj, h1, h2, witness = theorem3_witness()
    grid = [ConstantMap(round(k / 100, 2)) for k in range(101)]
    grid += [IndicatorMap(0, th) for th in (0.0, 0.5)]
    r1 = conformal_scan(wj, h1, grid, 0.4, threshold_grid(wj, h1, grid))
    r2 = conformal_scan(wj, h2, [witness], 0.4, threshold_grid(wj, h2, [witness]))
    h1_min = min(r.min_feasible_risk for r in r1)
    out.append({"name": "theorem3", "passed": all(r.min_feasible_risk == 1.0 for r in r1)
                and r2[0].min_feasible_risk == 0.0
                and r2[0].feasible and not any(r.conformal(0.4) for r in r1),
                "details": {"h1_min_feasible_risk": h1_min,
                            "h2_min_feasible_risk": r2[0].min_feasible_risk,
                            "fills_scanned": len(grid), "expected": {"h1": 1.0, "h2": 0.0}}})
    return out
