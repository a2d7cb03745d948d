"""Per-router online detection.

Each :class:`RouterBrain` owns one twin's active (feature indices, model)
pair, a ring of its most recent verdicts and raw feature vectors, the
metric/trigger state and an alarm tracker.  Verdict service
(:meth:`RouterBrain.on_feature_vector`) does a fixed amount of work per
vector; metric evaluation and AutoFS happen in :meth:`RouterBrain.maintain`,
which the driver calls between verdicts.
"""

from __future__ import annotations

import logging
import threading
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from . import labeling, mlp, selection
from .errors import (
    AutoFsFailed,
    ConfigError,
    InsufficientWindow,
    InvalidValue,
    NoActiveModel,
    TwinguardError,
)
from .labels import DDOS, NOT_DDOS, Label

log = logging.getLogger(__name__)

METRICS = ("accuracy", "precision", "recall", "f_measure")


@dataclass(frozen=True)
class ThresholdConfig:
    accuracy: float = 0.90
    precision: float = 0.90
    recall: float = 0.90
    f_measure: float = 0.90
    window: int = 2000
    min_window: int = 200
    cooldown: int = 1000
    alarm_length: int = 5
    eval_every: int = 2000
    label_chunk: int = 1000

    def __post_init__(self):
        for name in METRICS:
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigError(f"threshold {name} must lie in [0, 1]")
        if self.window < self.min_window or self.min_window < 1:
            raise ConfigError("window must be >= min_window >= 1")
        if self.cooldown < 1 or self.alarm_length < 1 or self.eval_every < 1:
            raise ConfigError("cooldown, alarm_length and eval_every must be >= 1")
        if self.window % self.label_chunk:
            raise ConfigError("window must be a multiple of label_chunk")

    def threshold(self, metric):
        return getattr(self, metric)


@dataclass(frozen=True)
class DetectionVerdict:
    twin_id: object
    timestamp: int
    cls: int
    confidence: float
    model_version: int
    selected_feature_indices: tuple

    @property
    def label(self) -> str:
        return Label(self.cls).text


@dataclass(frozen=True)
class MetricsSnapshot:
    accuracy: float = 0.0
    precision: float = 0.0
    recall: float = 0.0
    f_measure: float = 0.0
    n: int = 0
    insufficient: bool = False
    reason: str = ""

    @classmethod
    def marked_insufficient(cls, n, reason):
        return cls(n=n, insufficient=True, reason=reason)

    def breaches(self, thresholds: ThresholdConfig):
        if self.insufficient:
            return []
        return [m for m in METRICS if getattr(self, m) < thresholds.threshold(m)]

    def as_dict(self):
        return {m: getattr(self, m) for m in METRICS} | {"n": self.n, "insufficient": self.insufficient}


def confusion(pred, ref):
    """(TP, FP, FN, TN) with DDoS as the positive class."""
    pred = np.asarray(pred) == DDOS
    ref = np.asarray(ref) == DDOS
    return (int(np.sum(pred & ref)), int(np.sum(pred & ~ref)),
            int(np.sum(~pred & ref)), int(np.sum(~pred & ~ref)))


def _div(a, b):
    return a / b if b else 0.0


def metrics_from_confusion(tp, fp, fn, tn) -> MetricsSnapshot:
    """Support-weighted precision, recall and F-measure plus accuracy."""
    n = tp + fp + fn + tn
    per_class = []
    for hit, false_pos, miss in ((tp, fp, fn), (tn, fn, fp)):
        p, r = _div(hit, hit + false_pos), _div(hit, hit + miss)
        per_class.append((hit + miss, p, r, _div(2 * p * r, p + r)))
    w = lambda k: _div(sum(c[0] * c[k] for c in per_class), n)
    return MetricsSnapshot(_div(tp + tn, n), w(1), w(2), w(3), n)


@dataclass
class AttackAlarm:
    twin_id: object
    onset_tick: int
    cleared_tick: int | None = None

    @property
    def open(self):
        return self.cleared_tick is None


class AlarmTracker:
    """Opens after ``length`` consecutive DDoS verdicts, closes after as many NotDDoS."""

    def __init__(self, twin_id=None, length: int = 5):
        self.twin_id = twin_id
        self.length = length
        self.alarms: list[AttackAlarm] = []
        self._run = 0
        self._run_start = None

    @property
    def current(self):
        return self.alarms[-1] if self.alarms and self.alarms[-1].open else None

    def feed(self, tick, cls):
        want = NOT_DDOS if self.current else DDOS
        if cls == want:
            if self._run == 0:
                self._run_start = tick
            self._run += 1
        else:
            self._run = 0
        if self._run >= self.length:
            if self.current:
                self.current.cleared_tick = self._run_start
            else:
                self.alarms.append(AttackAlarm(self.twin_id, self._run_start))
            self._run = 0


def alarm_tracker(verdicts, length: int = 5, twin_id=None):
    """Alarms for a stream of verdicts or ``(tick, cls)`` pairs."""
    tracker = AlarmTracker(twin_id, length)
    for v in verdicts:
        tick, cls = (v.timestamp, v.cls) if isinstance(v, DetectionVerdict) else v
        tracker.feed(tick, cls)
    return tracker.alarms


@dataclass(frozen=True)
class ActiveModel:
    indices: tuple
    model: mlp.MlpModel
    version: int = 1
    method: str = ""


@dataclass(frozen=True)
class NoAction:
    reason: str = "ok"


@dataclass(frozen=True)
class Triggered:
    outcome: selection.AutoFsOutcome
    version: int


class NearestCentroid:
    """Reference classifier on all 92 standardized features."""

    def __init__(self, X, y):
        X = np.asarray(X, dtype=float)
        self.mean = X.mean(axis=0)
        sd = X.std(axis=0)
        self.std = np.where(sd > 1e-12, sd, 1.0)
        Z = (X - self.mean) / self.std
        self.centroids = np.vstack([Z[np.asarray(y) == c].mean(axis=0) for c in (NOT_DDOS, DDOS)])

    def predict(self, x):
        z = (np.asarray(x) - self.mean) / self.std
        d = ((self.centroids - z) ** 2).sum(axis=1)
        return DDOS if d[DDOS] <= d[NOT_DDOS] else NOT_DDOS


@dataclass
class TriggerEvent:
    tick: int
    version: int
    reason: list
    outcome: dict


class RouterBrain:
    """Detection state for one router twin.

    ``pool`` is the labelled 92-column data from which baselines are drawn.
    With ``ground_truth`` set, replay labels replace pseudo-labels as metric
    references (calibration harness).
    """

    def __init__(self, twin_id, pool, active: ActiveModel | None = None,
                 thresholds: ThresholdConfig = ThresholdConfig(),
                 autofs: selection.AutoFsConfig = selection.AutoFsConfig(),
                 seed: int = 0, ground_truth: bool = False, n_features: int = 92):
        self.twin_id = twin_id
        self.pool = pool
        self.thresholds = thresholds
        self.autofs_cfg = autofs
        self.seed = seed
        self.ground_truth = ground_truth
        self.n_features = n_features
        self._active = active
        self._swap_lock = threading.Lock()
        W = thresholds.window
        self.classes = deque(maxlen=W)
        self.raw = deque(maxlen=W)
        self.truth = deque(maxlen=W)
        self.ticks = deque(maxlen=W)
        self.since_trigger = thresholds.cooldown
        self.since_eval = 0
        self.n_verdicts = 0
        self.alarms = AlarmTracker(twin_id, thresholds.alarm_length)
        self.metrics_log: list[tuple] = []
        self.triggers: list[TriggerEvent] = []
        self.failures = 0
        self._baseline = None
        self._n_labelings = 0

    @classmethod
    def bootstrap(cls, twin_id, pool, seed: int = 0, **kw):
        """Brain whose first model comes from supervised AutoFS on ``pool``."""
        brain = cls(twin_id, pool, seed=seed, **kw)
        outcome = selection.bootstrap_autofs(pool, selection.subseed(seed, 100), brain.autofs_cfg)
        brain.bootstrap_outcome = outcome
        brain._install(outcome.winner, 1)
        return brain

    # -------------------------------------------------------------- serving

    @property
    def active(self) -> ActiveModel:
        if self._active is None:
            raise NoActiveModel(f"twin {self.twin_id} has no active model")
        return self._active

    def ops_per_verdict(self) -> int:
        """Multiply-accumulates per verdict: projection plus one forward pass."""
        a = self.active
        return len(a.indices) + a.model.macs_per_row

    def on_feature_vector(self, fv, truth=None) -> DetectionVerdict:
        active = self.active                       # one version per verdict
        x = np.asarray(fv.values, dtype=float)
        if x.shape != (self.n_features,):
            raise InvalidValue(f"expected a {self.n_features}-dim feature vector, got shape {x.shape}")
        p = mlp.predict(active.model, x[list(active.indices)])
        verdict = DetectionVerdict(self.twin_id, int(fv.timestamp), int(p.cls), p.confidence,
                                   active.version, active.indices)
        self.classes.append(verdict.cls)
        self.raw.append(x)
        self.truth.append(truth)
        self.ticks.append(verdict.timestamp)
        self.alarms.feed(verdict.timestamp, verdict.cls)
        self.n_verdicts += 1
        self.since_eval += 1
        self.since_trigger += 1
        return verdict

    # ----------------------------------------------------------- monitoring

    def baseline(self):
        if self._baseline is None or self._baseline.feature_indices != self.active.indices:
            self._baseline = labeling.make_baseline(self.pool, self.active.indices,
                                                    selection.subseed(self.seed, 200, self.active.version))
        return self._baseline

    def pseudo_label_window(self):
        """Reference labels for the current window, or None when unavailable."""
        n = len(self.raw)
        if n < self.thresholds.window:
            raise InsufficientWindow(f"window holds {n} of {self.thresholds.window} verdicts")
        if self.ground_truth and all(t is not None for t in self.truth):
            return np.array(self.truth, dtype=int)
        X = np.asarray(self.raw)[:, list(self.active.indices)]
        chunk = self.thresholds.label_chunk
        out = []
        self._n_labelings += 1
        try:
            base = self.baseline()
            for c, s in enumerate(range(0, n, chunk)):
                seed = selection.subseed(self.seed, 300, self._n_labelings, c)
                res = labeling.run_labeling(X[s:s + chunk], base, seed, None)
                out.append(res.labels[:min(chunk, n - s)])
        except TwinguardError as exc:
            log.warning("twin %s: pseudo-labeling failed: %s", self.twin_id, exc)
            return None
        return np.concatenate(out)

    def update_metrics(self, reference_labels) -> MetricsSnapshot:
        n = len(self.classes)
        if reference_labels is None:
            return MetricsSnapshot.marked_insufficient(n, "no reference labels")
        ref = np.asarray(reference_labels, dtype=int)
        if n < self.thresholds.min_window or ref.size != n:
            raise InsufficientWindow(f"need >= {self.thresholds.min_window} verdicts with references")
        m = self.thresholds.min_window
        if min(np.sum(ref == DDOS), np.sum(ref == NOT_DDOS)) < m:
            return MetricsSnapshot.marked_insufficient(n, f"fewer than {m} references of a class")
        return metrics_from_confusion(*confusion(np.asarray(self.classes), ref))

    def check_and_trigger(self, snapshot: MetricsSnapshot, tick=None):
        breaches = snapshot.breaches(self.thresholds)
        if not breaches:
            return NoAction("insufficient" if snapshot.insufficient else "ok")
        if self.since_trigger < self.thresholds.cooldown:
            return NoAction("cooldown")
        attempt = len(self.triggers) + self.failures
        seed = selection.subseed(self.seed, 400, attempt)
        try:
            outcome = selection.run_autofs(np.asarray(self.raw), self.pool, self.active.indices, seed, self.autofs_cfg)
        except (AutoFsFailed, TwinguardError) as exc:
            log.warning("twin %s: AutoFS failed, keeping model v%d: %s", self.twin_id, self.active.version, exc)
            self.failures += 1
            self.since_trigger = 0
            return NoAction("autofs_failed")
        version = self.active.version + 1
        self.triggers.append(TriggerEvent(tick if tick is not None else self.n_verdicts, version, breaches,
                                          outcome.to_json()))
        self._install(outcome.winner, version)
        return Triggered(outcome, version)

    def _install(self, candidate: selection.FsCandidate, version: int):
        new = ActiveModel(tuple(int(i) for i in candidate.selected), candidate.model, version,
                          candidate.method.value)
        with self._swap_lock:
            self._active = new
            for ring in (self.classes, self.raw, self.truth, self.ticks):
                ring.clear()
            self.since_trigger = 0
            self.since_eval = 0

    def maintain(self, tick=None):
        """Evaluate metrics every ``eval_every`` verdicts once the window is full."""
        if self.since_eval < self.thresholds.eval_every or len(self.raw) < self.thresholds.window:
            return None
        self.since_eval = 0
        snap = self.update_metrics(self.pseudo_label_window())
        version = self.active.version
        action = self.check_and_trigger(snap, tick)
        self.metrics_log.append((tick, version, snap, action))
        return action


class Brain:
    """Routes feature vectors to their twin's :class:`RouterBrain`."""

    def __init__(self):
        self.routers: dict = {}

    def add(self, brain: RouterBrain):
        self.routers[brain.twin_id] = brain
        return brain

    def on_feature_vector(self, fv, truth=None) -> DetectionVerdict:
        try:
            router = self.routers[fv.twin_id]
        except KeyError:
            raise NoActiveModel(f"twin {fv.twin_id} has no active model") from None
        return router.on_feature_vector(fv, truth)

    def maintain(self, tick=None):
        return {tid: b.maintain(tick) for tid, b in self.routers.items()}
