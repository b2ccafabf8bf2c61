"""Synthetic data with group-dependent missingness and an FNR disparity.

Rows are split evenly between two groups. ``x_signal`` separates the
labels well, but positives in group 1 sit lower on it than positives in
group 0, so a single threshold misses more group-1 positives.
``x_weak`` carries a faint label signal and ``x_proxy`` is correlated
with the group. The bundled CSV is complete; missingness is injected with
:data:`MISSINGNESS` (or any other spec) afterwards.
"""
from __future__ import annotations

import csv
from importlib import resources
from pathlib import Path

import numpy as np

from .dataset import MissingnessSpec, TabularDataset, load_csv

FEATURES = ("x_signal", "x_weak", "x_proxy", "x_noise")
LABEL, GROUP = "label", "group"
BUNDLED = "synthetic.csv"
BUNDLED_N, BUNDLED_SEED = 4000, 20211

# per-group erase rates, same pattern as the Adult setup
MISSINGNESS = MissingnessSpec((
    ("x_signal", 0.0, 0.4),
    ("x_weak", 0.0, 0.3),
    ("x_proxy", 0.2, 0.2),
))

# COMPAS-style rates mapped onto the synthetic columns
MISSINGNESS_ALT = MissingnessSpec((
    ("x_signal", 0.4, 0.1),
    ("x_proxy", 0.6, 0.2),
))


def generate(n: int = BUNDLED_N, seed: int = BUNDLED_SEED) -> dict[str, np.ndarray]:
    """Columns of a complete synthetic table, values rounded to 2 decimals."""
    if n < 4:
        raise ValueError("n must be at least 4")
    rng = np.random.default_rng(seed)
    group = np.arange(n) % 2
    rng.shuffle(group)
    label = (rng.random(n) < 0.5).astype(int)
    mu = np.where(label == 1, np.where(group == 1, 0.5, 0.68), 0.32)
    cols = {
        "x_signal": rng.normal(mu, 0.12),
        "x_weak": rng.normal(0.45 + 0.1 * label, 0.2),
        "x_proxy": rng.normal(0.3 + 0.4 * group, 0.15),
        "x_noise": rng.random(n),
    }
    out = {k: np.round(np.clip(v, 0.0, 1.0), 2) for k, v in cols.items()}
    out[LABEL] = label
    out[GROUP] = group
    return out


def write_csv(columns: dict[str, np.ndarray], path) -> None:
    names = [*FEATURES, LABEL, GROUP]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(names)
        for i in range(len(columns[LABEL])):
            w.writerow([f"{columns[c][i]:.2f}" if c in FEATURES else str(int(columns[c][i]))
                        for c in names])


def bundled_path() -> Path:
    return Path(str(resources.files("fairmip") / "data" / BUNDLED))


def load_bundled() -> TabularDataset:
    """The bundled complete table (unscaled, no missing cells)."""
    return load_csv(bundled_path(), LABEL, GROUP)
