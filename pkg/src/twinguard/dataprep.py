"""Dataset loading, class balancing, stratified folds and telemetry replay."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from .errors import (
    ClassAbsent,
    ClassTooSmall,
    EmptyDataset,
    MissingColumn,
    MissingSourceColumn,
    TargetTooLarge,
    TooFewSamples,
    UnmappableLabel,
)
from .labels import DDOS, NOT_DDOS, Label

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    column_names: tuple

    def __post_init__(self):
        X = np.asarray(self.features, dtype=float)
        y = np.asarray(self.labels, dtype=int)
        if X.ndim != 2:
            raise ValueError("features must be a 2-d matrix")
        if X.shape[0] != y.shape[0]:
            raise ValueError(f"{X.shape[0]} rows but {y.shape[0]} labels")
        if X.shape[1] != len(self.column_names) or X.shape[1] < 1:
            raise ValueError("column_names must name every feature column")
        if not np.all(np.isfinite(X)):
            raise ValueError("features must be finite")
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "labels", y)
        object.__setattr__(self, "column_names", tuple(self.column_names))

    def __len__(self):
        return self.features.shape[0]

    def count(self, label) -> int:
        return int(np.sum(self.labels == int(label)))

    def take(self, rows) -> "Dataset":
        rows = np.asarray(rows, dtype=int)
        return Dataset(self.features[rows], self.labels[rows], self.column_names)

    def columns(self, names: Sequence[str]) -> np.ndarray:
        pos = {c: i for i, c in enumerate(self.column_names)}
        try:
            idx = [pos[n] for n in names]
        except KeyError as exc:
            raise MissingColumn(f"dataset has no column {exc.args[0]!r}") from None
        return self.features[:, idx]

    def to_csv(self, path, label_column="label"):
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([*self.column_names, label_column])
            for row, lab in zip(self.features, self.labels):
                w.writerow([repr(float(v)) for v in row] + [Label(int(lab)).text])


def imbalance_ratio(ds: Dataset) -> float:
    counts = [ds.count(DDOS), ds.count(NOT_DDOS)]
    if min(counts) == 0:
        return math.inf
    return max(counts) / min(counts)


# ------------------------------------------------------------------ loading

def _map_label(raw, mapping):
    if raw in mapping:
        target = mapping[raw]
    elif raw.strip() in mapping:
        target = mapping[raw.strip()]
    elif "*" in mapping:
        target = mapping["*"]
    else:
        raise UnmappableLabel(f"label {raw!r} has no mapping")
    try:
        return int(Label.parse(target))
    except ValueError:
        raise UnmappableLabel(f"label {raw!r} maps to unknown class {target!r}") from None


def _to_float(cell):
    try:
        v = float(cell)
    except (TypeError, ValueError):
        return math.nan
    return v


def load_csv(path, label_column: str, label_mapping: Mapping[str, object],
             row_cap: int | None = None, seed: int = 0,
             drop_columns: Sequence[str] = ()) -> Dataset:
    """Read a labelled CSV into a :class:`Dataset`.

    Every column except ``label_column`` and ``drop_columns`` is treated as a
    numeric feature.  Cells that are non-numeric, NaN or infinite are replaced
    by the median of the column's finite values; columns with no finite value
    at all are dropped.  With ``row_cap`` a seeded uniform subset of at most
    that many rows is kept, in file order.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"dataset file not found: {path}")
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise EmptyDataset(f"{path} is empty") from None
        rows = [r for r in reader if r]
    if label_column not in header:
        raise MissingColumn(f"{path}: no label column {label_column!r}")
    if not rows:
        raise EmptyDataset(f"{path} has a header but no rows")
    if row_cap is not None and len(rows) > row_cap:
        keep = np.sort(np.random.default_rng(seed).choice(len(rows), row_cap, replace=False))
        rows = [rows[i] for i in keep]

    li = header.index(label_column)
    drop = set(drop_columns)
    feat_idx = [i for i, h in enumerate(header) if i != li and h not in drop]
    labels = np.array([_map_label(r[li], label_mapping) for r in rows], dtype=int)
    X = np.array([[_to_float(r[i]) if i < len(r) else math.nan for i in feat_idx] for r in rows])
    names = [header[i] for i in feat_idx]

    finite = np.isfinite(X)
    keep_cols = finite.any(axis=0)
    if not keep_cols.all():
        log.warning("%s: dropping non-numeric columns %s", path,
                    [n for n, k in zip(names, keep_cols) if not k])
    X, finite = X[:, keep_cols], finite[:, keep_cols]
    names = [n for n, k in zip(names, keep_cols) if k]
    if not names:
        raise EmptyDataset(f"{path}: no numeric feature columns")
    for j in np.flatnonzero(~finite.all(axis=0)):
        X[~finite[:, j], j] = np.median(X[finite[:, j], j])
    return Dataset(X, labels, tuple(names))


# --------------------------------------------------------------- resampling

def _class_rows(ds, label):
    rows = np.flatnonzero(ds.labels == int(label))
    if rows.size == 0:
        raise ClassAbsent(f"no rows of class {Label(int(label)).text}")
    return rows


def random_undersample(ds: Dataset, target_class, keep_fraction: float, seed: int) -> Dataset:
    if not 0 < keep_fraction <= 1:
        raise ValueError("keep_fraction must be in (0, 1]")
    rows = _class_rows(ds, target_class)
    n_keep = int(math.floor(rows.size * keep_fraction + 0.5))
    kept = np.random.default_rng(seed).choice(rows, n_keep, replace=False)
    mask = ds.labels != int(target_class)
    mask[kept] = True
    return ds.take(np.flatnonzero(mask))


def _pairwise_sq(A, B):
    d = (A * A).sum(1)[:, None] + (B * B).sum(1)[None, :] - 2.0 * A @ B.T
    np.maximum(d, 0.0, out=d)
    return d


def smote(ds: Dataset, minority_class, k_neighbors: int = 5, target_count: int | None = None,
          seed: int = 0) -> Dataset:
    """Oversample ``minority_class`` with SMOTE until it has ``target_count`` rows.

    Each synthetic row interpolates between a random minority row and one of
    its ``k_neighbors`` nearest minority neighbours.  Existing rows are left
    untouched; synthetic rows are appended.
    """
    if k_neighbors < 1:
        raise ValueError("k_neighbors must be >= 1")
    rows = np.flatnonzero(ds.labels == int(minority_class))
    if rows.size < 2:
        raise TooFewSamples(f"SMOTE needs >= 2 minority rows, got {rows.size}")
    if target_count is None:
        target_count = int(np.sum(ds.labels != int(minority_class)))
    n_new = target_count - rows.size
    if n_new <= 0:
        return ds
    P = ds.features[rows]
    k = min(k_neighbors, rows.size - 1)
    neighbours = np.empty((rows.size, k), dtype=int)
    for lo in range(0, rows.size, 1024):
        d = _pairwise_sq(P[lo:lo + 1024], P)
        d[np.arange(d.shape[0]), np.arange(lo, lo + d.shape[0])] = np.inf
        neighbours[lo:lo + 1024] = np.argsort(d, axis=1, kind="stable")[:, :k]
    rng = np.random.default_rng(seed)
    base = rng.integers(0, rows.size, n_new)
    pick = neighbours[base, rng.integers(0, k, n_new)]
    gap = rng.random(n_new)[:, None]
    synth = P[base] + gap * (P[pick] - P[base])
    return Dataset(np.vstack([ds.features, synth]),
                   np.concatenate([ds.labels, np.full(n_new, int(minority_class))]),
                   ds.column_names)


def near_miss(ds: Dataset, majority_class, target_count: int, seed: int = 0,
              n_neighbors: int = 3) -> Dataset:
    """NearMiss-1 undersampling of ``majority_class``.

    Keeps the ``target_count`` majority rows whose mean distance to their
    ``n_neighbors`` nearest minority rows is smallest.  Ties go to the lower
    row index.  Deterministic; ``seed`` is accepted for interface symmetry.
    """
    maj = np.flatnonzero(ds.labels == int(majority_class))
    if target_count > maj.size:
        raise TargetTooLarge(f"target {target_count} exceeds {maj.size} majority rows")
    if target_count == maj.size:
        return ds
    minority = ds.features[(ds.labels != int(majority_class)) & (ds.labels >= 0)]
    if minority.shape[0] == 0:
        raise ClassAbsent("near-miss needs at least one minority row")
    k = min(n_neighbors, minority.shape[0])
    score = np.empty(maj.size)
    for lo in range(0, maj.size, 1024):
        d = np.sqrt(_pairwise_sq(ds.features[maj[lo:lo + 1024]], minority))
        score[lo:lo + 1024] = np.sort(d, axis=1)[:, :k].mean(axis=1)
    kept = maj[np.argsort(score, kind="stable")[:target_count]]
    mask = ds.labels != int(majority_class)
    mask[kept] = True
    return ds.take(np.flatnonzero(mask))


# ------------------------------------------------------------------- folds

@dataclass(frozen=True)
class FoldPlan:
    k: int
    assignments: np.ndarray

    def split(self, fold: int):
        test = np.flatnonzero(self.assignments == fold)
        train = np.flatnonzero(self.assignments != fold)
        return train, test

    def __iter__(self):
        return (self.split(f) for f in range(self.k))


def stratified_kfold(ds_or_labels, k: int, seed: int) -> FoldPlan:
    labels = ds_or_labels.labels if isinstance(ds_or_labels, Dataset) else np.asarray(ds_or_labels)
    if k < 1:
        raise ValueError("k must be >= 1")
    rng = np.random.default_rng(seed)
    assignments = np.empty(labels.size, dtype=int)
    offset = 0
    for cls in np.unique(labels):
        rows = np.flatnonzero(labels == cls)
        if rows.size < k:
            raise ClassTooSmall(f"class {cls} has {rows.size} rows, fewer than k={k}")
        rows = rng.permutation(rows)
        # rotate the start so per-class remainders land on different folds
        assignments[rows] = (np.arange(rows.size) + offset) % k
        offset = (offset + rows.size) % k
    return FoldPlan(k, assignments)


# ------------------------------------------------------------ paper recipe

def balance_undersample_smote(ds: Dataset, seed: int, keep_fraction: float = 0.2,
                              ddos_share: float = 0.6, k_neighbors: int = 5) -> Dataset:
    """D1 recipe: keep ``keep_fraction`` of the DDoS rows, then SMOTE NotDDoS up.

    The SMOTE target puts DDoS at ``ddos_share`` of the result.
    """
    out = random_undersample(ds, DDOS, keep_fraction, seed)
    n_ddos = out.count(DDOS)
    target = int(math.ceil(n_ddos * (1 - ddos_share) / ddos_share))
    if target > out.count(NOT_DDOS):
        out = smote(out, NOT_DDOS, k_neighbors, target, seed + 1)
    return out


def balance_near_miss(ds: Dataset, seed: int, ddos_share: float = 0.6) -> Dataset:
    """D2 recipe: NearMiss-1 on the DDoS majority down to ``ddos_share``."""
    n_benign = ds.count(NOT_DDOS)
    target = int(math.floor(n_benign * ddos_share / (1 - ddos_share)))
    if target < ds.count(DDOS):
        return near_miss(ds, DDOS, target, seed)
    return ds


def merge_on_columns(datasets: Sequence[Dataset], columns: Sequence[str]) -> Dataset:
    """Stack datasets onto a shared column set.

    A column absent from one dataset is filled, for that dataset's rows, with
    the median of the column over the datasets that do provide it.
    """
    columns = list(columns)
    present = {c: [ds for ds in datasets if c in ds.column_names] for c in columns}
    missing = [c for c, dss in present.items() if not dss]
    if missing:
        raise MissingSourceColumn(f"no dataset provides columns {missing[:5]}")
    fill = {c: float(np.median(np.concatenate([ds.columns([c])[:, 0] for ds in dss])))
            for c, dss in present.items()}
    blocks = []
    for ds in datasets:
        pos = {c: i for i, c in enumerate(ds.column_names)}
        block = np.empty((len(ds), len(columns)))
        for j, c in enumerate(columns):
            block[:, j] = ds.features[:, pos[c]] if c in pos else fill[c]
        blocks.append(block)
    return Dataset(np.vstack(blocks), np.concatenate([ds.labels for ds in datasets]), tuple(columns))


# ------------------------------------------------------------------ replay

@dataclass(frozen=True)
class AttackSchedule:
    intervals: tuple = ()

    def __post_init__(self):
        ivs = tuple(sorted((int(a), int(b)) for a, b in self.intervals))
        for a, b in ivs:
            if not a < b:
                raise ValueError(f"attack interval ({a}, {b}) must have start < end")
        for (a0, b0), (a1, b1) in zip(ivs, ivs[1:]):
            if a1 < b0:
                raise ValueError(f"attack intervals ({a0}, {b0}) and ({a1}, {b1}) overlap")
        object.__setattr__(self, "intervals", ivs)

    @classmethod
    def from_minutes(cls, intervals, ticks_per_minute: int = 60) -> "AttackSchedule":
        return cls(tuple((round(a * ticks_per_minute), round(b * ticks_per_minute)) for a, b in intervals))

    def active(self, tick: int) -> bool:
        return any(a <= tick < b for a, b in self.intervals)


@dataclass
class ReplayBatch:
    tick: int
    label: int
    rows: np.ndarray          # rate x len(manifest), manifest order
    paths: tuple

    def readings(self, twin_id):
        from .twin_graph import SensorReading
        for row in self.rows:
            for p, v in zip(self.paths, row):
                yield SensorReading(twin_id, p, float(v), self.tick)

    def wire_lines(self, router_name):
        from .twin_graph import wire_line
        for row in self.rows:
            for p, v in zip(self.paths, row):
                yield wire_line(router_name, p, float(v), self.tick)


@dataclass
class Replay:
    """Seeded telemetry replay of a labelled dataset.

    Ticks inside an attack interval draw rows from the DDoS class, all
    other ticks from NotDDoS.  ``segments`` optionally switches the source
    dataset at given ticks (``[(start_tick, dataset), ...]``), which is how
    drifting regimes are replayed.  ``ground_truth`` accumulates one
    ``(tick, label)`` per emitted row.
    """

    ds: Dataset
    manifest: object
    schedule: AttackSchedule
    rate: int = 1
    seed: int = 0
    n_ticks: int = 0
    start_tick: int = 0
    segments: Sequence = ()
    sink: Callable | None = None
    ground_truth: list = field(default_factory=list)

    def __post_init__(self):
        cols = list(self.manifest.source_columns)
        if any(c is None for c in cols):
            raise MissingSourceColumn("manifest entries without source_column")
        self.paths = tuple(self.manifest.paths)
        sources = [(self.start_tick, self.ds), *sorted(self.segments, key=lambda s: s[0])]
        self._sources = []
        for start, ds in sources:
            try:
                X = ds.columns(cols)
            except MissingColumn as exc:
                raise MissingSourceColumn(str(exc)) from None
            pools = {}
            for lab in (DDOS, NOT_DDOS):
                pools[lab] = np.flatnonzero(ds.labels == lab)
            self._sources.append((start, X, pools))

    def _source_at(self, tick):
        current = self._sources[0]
        for src in self._sources:
            if src[0] <= tick:
                current = src
        return current

    def __iter__(self):
        rng = np.random.default_rng(self.seed)
        for tick in range(self.start_tick, self.start_tick + self.n_ticks):
            label = DDOS if self.schedule.active(tick) else NOT_DDOS
            _, X, pools = self._source_at(tick)
            pool = pools[label]
            if pool.size == 0:
                raise ClassAbsent(f"replay source has no {Label(label).text} rows for tick {tick}")
            rows = X[pool[rng.integers(0, pool.size, self.rate)]]
            batch = ReplayBatch(tick, label, rows, self.paths)
            self.ground_truth.extend((tick, label) for _ in range(self.rate))
            if self.sink is not None:
                self.sink(batch)
            yield batch


def replay(ds, manifest, schedule, rate=1, sink=None, *, seed=0, n_ticks=0, start_tick=0, segments=()):
    return Replay(ds, manifest, schedule, rate, seed, n_ticks, start_tick, segments, sink)


def write_ground_truth(path, ground_truth):
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["tick", "label"])
        for tick, lab in ground_truth:
            w.writerow([tick, Label(lab).text])
