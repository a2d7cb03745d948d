"""Synthetic traffic regimes and desk-scale dataset fixtures.

Rows are drawn in a standardized space where NotDDoS traffic is N(0, I)
and DDoS traffic is N(shift, I), then mapped affinely to positive raw
units so the data looks like counters and gauges rather than z-scores.
Columns are the manifest's source columns.

Two fixture files stand in for the public datasets:

* mini-D1: 85 columns, heavy DDoS majority, string attack labels, a few
  ``Infinity`` and empty cells;
* mini-D2: 43 columns, moderate imbalance, labels 0/1.

Their column sets overlap in 36 columns and together cover all 92.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dataprep import Dataset
from .labels import DDOS, NOT_DDOS
from .yang import default_manifest

N_FEATURES = 92
D1_COLUMNS = tuple(range(0, 85))
D2_COLUMNS = tuple(range(49, 92))
# informative in both fixtures
SHARED_SIGNAL = (50, 53, 56, 59, 62, 65, 68, 71, 74, 77, 80, 83)
D1_SIGNAL = (3, 11, 19)
D2_SIGNAL = (87, 90)
D1_ATTACKS = ("DrDoS_DNS", "DrDoS_LDAP", "Syn", "UDP-lag", "TFTP")


def column_names():
    return tuple(default_manifest().source_columns)


def raw_scale(seed: int = 7):
    """Per-feature (loc, scale) of the raw-unit mapping."""
    rng = np.random.default_rng(seed)
    loc = 10.0 ** rng.uniform(1.0, 4.0, N_FEATURES)
    return loc, loc * rng.uniform(0.05, 0.15, N_FEATURES)


@dataclass(frozen=True)
class Regime:
    """Two-class Gaussian traffic model over the 92 sensor columns."""

    shift: np.ndarray
    scale_seed: int = 7

    def sample_z(self, n_ddos: int, n_benign: int, rng):
        z = rng.standard_normal((n_ddos + n_benign, N_FEATURES))
        y = np.concatenate([np.full(n_ddos, DDOS), np.full(n_benign, NOT_DDOS)])
        z[y == DDOS] += self.shift
        order = rng.permutation(y.size)
        return z[order], y[order]

    def to_raw(self, z):
        loc, scale = raw_scale(self.scale_seed)
        return loc + scale * z

    def sample(self, n_ddos: int, n_benign: int, rng) -> Dataset:
        z, y = self.sample_z(n_ddos, n_benign, rng)
        return Dataset(self.to_raw(z), y, column_names())

    def centroid(self, label) -> np.ndarray:
        return self.to_raw(self.shift if int(label) == DDOS else np.zeros(N_FEATURES))


def signal_regime(informative, delta: float = 1.5, weak=(), weak_delta: float = 0.0) -> Regime:
    shift = np.zeros(N_FEATURES)
    shift[list(informative)] = delta
    shift[list(weak)] = weak_delta
    return Regime(shift)


def fixture_regime() -> Regime:
    shift = np.zeros(N_FEATURES)
    shift[list(SHARED_SIGNAL)] = 1.5
    shift[list(D1_SIGNAL)] = 1.0
    shift[list(D2_SIGNAL)] = 1.0
    return Regime(shift)


# Concept drift: the informative set moves from DRIFT_A to DRIFT_B.
DRIFT_A = (2, 9, 17, 26, 33, 41, 48, 57, 66, 75)
DRIFT_B = (5, 13, 22, 30, 38, 45, 54, 63, 72, 85)


def drift_regimes(pre_delta: float = 3.0, post_a_delta: float = 1.6,
                  post_b_delta: float = 3.0, weak_delta: float = 1.0):
    """(before, after) regimes of a drifting replay."""
    before = signal_regime(DRIFT_A, pre_delta, DRIFT_B, weak_delta)
    after = signal_regime(DRIFT_B, post_b_delta, DRIFT_A, post_a_delta)
    return before, after


# ----------------------------------------------------------------- fixtures

def _write(path, header, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def write_mini_d1(path, seed: int = 0, n_ddos: int = 12000, n_benign: int = 400,
                  n_corrupt: int = 25):
    rng = np.random.default_rng(seed)
    ds = fixture_regime().sample(n_ddos, n_benign, rng)
    names = [ds.column_names[j] for j in D1_COLUMNS]
    X = ds.features[:, list(D1_COLUMNS)]
    cells = [[repr(round(float(v), 4)) for v in row] for row in X]
    for _ in range(n_corrupt):
        i, j = int(rng.integers(len(cells))), int(rng.integers(len(names)))
        cells[i][j] = "Infinity" if rng.random() < 0.5 else ""
    labels = ["BENIGN" if lab == NOT_DDOS else D1_ATTACKS[int(rng.integers(len(D1_ATTACKS)))]
              for lab in ds.labels]
    _write(path, ["Flow ID", *names, "Label"],
           [[f"flow-{i}", *c, lab] for i, (c, lab) in enumerate(zip(cells, labels))])
    return path


def write_mini_d2(path, seed: int = 1, n_ddos: int = 3000, n_benign: int = 1800):
    rng = np.random.default_rng(seed)
    ds = fixture_regime().sample(n_ddos, n_benign, rng)
    names = [ds.column_names[j] for j in D2_COLUMNS]
    X = ds.features[:, list(D2_COLUMNS)]
    _write(path, [*names, "label"],
           [[repr(round(float(v), 4)) for v in row] + [int(lab)] for row, lab in zip(X, ds.labels)])
    return path


D1_LABEL_MAPPING = {"BENIGN": "NotDDoS", "*": "DDoS"}
D2_LABEL_MAPPING = {"0": "NotDDoS", "1": "DDoS"}
