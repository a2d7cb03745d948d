"""Pseudo-labelling of unlabelled telemetry windows.

Two diagonal-covariance Gaussian mixtures are fitted: one on the window
alone, seeded by 2-means clustering, and one on the window joined with a
labelled baseline, seeded from the baseline's class statistics.  Mixture
components are mapped to classes through the baseline class means, the two
DDoS posteriors are averaged, and the labelled window is stacked with the
baseline into the training set used for candidate models.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DegenerateData, EmptyCluster, InsufficientPool, NumericalCollapse
from .labels import DDOS, NOT_DDOS, Label

log = logging.getLogger(__name__)

VAR_FLOOR = 1e-6
WINDOW_ROWS = 1000
BASELINE_ROWS = 1000
BASELINE_DDOS_SHARE = 0.65


@dataclass(frozen=True)
class GmmParams:
    weights: np.ndarray       # (2,)
    means: np.ndarray         # (2, d)
    variances: np.ndarray     # (2, d)

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        mu = np.atleast_2d(np.asarray(self.means, dtype=float))
        var = np.atleast_2d(np.asarray(self.variances, dtype=float))
        if mu.shape != var.shape or w.shape != (mu.shape[0],):
            raise ValueError("inconsistent mixture parameter shapes")
        if abs(w.sum() - 1.0) > 1e-9 or np.any(w < 0):
            raise ValueError("mixture weights must be a probability vector")
        if np.any(var < VAR_FLOOR * (1 - 1e-12)):
            raise ValueError("variances must respect the floor")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", mu)
        object.__setattr__(self, "variances", var)


@dataclass
class EmResult:
    params: GmmParams
    responsibilities: np.ndarray
    log_likelihood: list          # mean per-row log-likelihood, one entry per parameter state
    n_iter: int
    converged: bool
    reinitialized: bool = False
    restart_at: int | None = None  # trace index where a collapsed component was reseeded

    def __iter__(self):
        return iter((self.params, self.responsibilities))


@dataclass(frozen=True)
class BaselineDataset:
    features: np.ndarray
    labels: np.ndarray
    rows: np.ndarray              # indices into the source pool
    feature_indices: tuple

    def __len__(self):
        return self.features.shape[0]


@dataclass
class LabeledDataset:
    features: np.ndarray
    labels: np.ndarray
    provenance: np.ndarray        # "window" or "baseline" per row
    feature_indices: tuple = ()
    p_ddos: np.ndarray | None = None
    flags: set = field(default_factory=set)

    def __len__(self):
        return self.features.shape[0]

    @property
    def window_mask(self):
        return self.provenance == "window"

    def to_csv(self, path):
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh)
            names = [f"f{i}" for i in self.feature_indices] or [f"x{j}" for j in range(self.features.shape[1])]
            w.writerow([*names, "label", "provenance"])
            for row, lab, prov in zip(self.features, self.labels, self.provenance):
                w.writerow([repr(float(v)) for v in row] + [Label(int(lab)).text, prov])


# ------------------------------------------------------------------ k-means

def _sq_dist(X, C):
    d = (X * X).sum(1)[:, None] + (C * C).sum(1)[None, :] - 2.0 * X @ C.T
    return np.maximum(d, 0.0)


def kmeans2(X, seed: int = 0, max_iter: int = 100):
    """Lloyd's 2-means with k-means++ seeding.

    Returns ``(assignments, centroids)``.  An emptied cluster is reseeded at
    the point farthest from its current centroid.
    """
    X = np.asarray(X, dtype=float)
    if X.shape[0] < 2 or np.all(X == X[0]):
        raise DegenerateData("k-means needs at least two distinct rows")
    rng = np.random.default_rng(seed)
    first = X[rng.integers(X.shape[0])]
    d2 = ((X - first) ** 2).sum(axis=1)
    second = X[rng.choice(X.shape[0], p=d2 / d2.sum())]
    C = np.vstack([first, second])
    assign = None
    for _ in range(max_iter):
        D = _sq_dist(X, C)
        new = np.argmin(D, axis=1)
        for c in range(2):
            if not np.any(new == c):
                far = int(np.argmax(D[np.arange(X.shape[0]), new]))
                new[far] = c
        if assign is not None and np.array_equal(new, assign):
            break
        assign = new
        C = np.vstack([X[assign == c].mean(axis=0) for c in range(2)])
    return assign, C


def init_from_kmeans(assignments, centroids, X, var_floor: float = VAR_FLOOR) -> GmmParams:
    X = np.asarray(X, dtype=float)
    assignments = np.asarray(assignments)
    counts = np.array([np.sum(assignments == c) for c in range(2)])
    if np.any(counts == 0):
        raise EmptyCluster("both clusters must be non-empty")
    var = np.vstack([X[assignments == c].var(axis=0) for c in range(2)])
    return GmmParams(counts / counts.sum(), np.asarray(centroids, dtype=float), np.maximum(var, var_floor))


def init_random(X, seed: int = 0, var_floor: float = VAR_FLOOR) -> GmmParams:
    """Moment estimates from a uniformly random 2-way partition of ``X``."""
    X = np.asarray(X, dtype=float)
    rng = np.random.default_rng(seed)
    part = rng.integers(0, 2, X.shape[0])
    part[:2] = (0, 1)
    means = np.vstack([X[part == c].mean(axis=0) for c in range(2)])
    return init_from_kmeans(part, means, X, var_floor)


# ----------------------------------------------------------------------- EM

def _log_joint(X, p):
    """log(pi_c) + log N(x | mu_c, diag var_c), shape (n, 2)."""
    out = np.empty((X.shape[0], p.weights.size))
    for c in range(p.weights.size):
        var = p.variances[c]
        out[:, c] = (np.log(p.weights[c]) if p.weights[c] > 0 else -np.inf) - 0.5 * (
            np.sum(np.log(2 * np.pi * var)) + (((X - p.means[c]) ** 2) / var).sum(axis=1))
    return out


def _e_step(X, p):
    L = _log_joint(X, p)
    m = L.max(axis=1, keepdims=True)
    lse = m[:, 0] + np.log(np.exp(L - m).sum(axis=1))
    R = np.exp(L - lse[:, None])
    R /= R.sum(axis=1, keepdims=True)
    return R, float(lse.mean())


def _m_step(X, R, var_floor):
    Nk = R.sum(axis=0)
    safe = np.maximum(Nk, 1e-300)
    means = (R.T @ X) / safe[:, None]
    var = np.empty_like(means)
    for c in range(R.shape[1]):
        diff = X - means[c]
        var[c] = (R[:, c] @ (diff * diff)) / safe[c]
    return Nk, GmmParams(Nk / Nk.sum(), means, np.maximum(var, var_floor))


def _collapsed(Nk, params, var_floor):
    at_floor = np.all(params.variances <= var_floor * (1 + 1e-9), axis=1)
    return np.flatnonzero((Nk < 1e-6) | ((params.weights < 1e-8) & at_floor))


def em_fit(X, init: GmmParams, max_iter: int = 200, tol: float = 1e-6, var_floor: float = VAR_FLOOR) -> EmResult:
    """Fit a 2-component diagonal GMM by expectation-maximisation.

    Iterates until the mean log-likelihood improves by less than ``tol``.
    A component that collapses (vanishing weight with every variance on the
    floor) is reseeded once at the worst-explained row; a second collapse
    raises :class:`NumericalCollapse`.
    """
    X = np.asarray(X, dtype=float)
    params = init
    R, ll = _e_step(X, params)
    trace = [ll]
    converged = False
    reinit = False
    restart_at = None
    it = 0
    for it in range(1, max_iter + 1):
        Nk, params = _m_step(X, R, var_floor)
        bad = _collapsed(Nk, params, var_floor)
        if bad.size:
            if reinit:
                raise NumericalCollapse(f"mixture component {int(bad[0])} collapsed twice")
            params = _reseed(X, params, int(bad[0]), var_floor)
            reinit = True
            log.debug("EM component %d reseeded at iteration %d", bad[0], it)
        R, ll = _e_step(X, params)
        trace.append(ll)
        if bad.size:
            restart_at = len(trace) - 1
            continue
        if ll - trace[-2] < tol:
            converged = True
            break
    return EmResult(params, R, trace, it, converged, reinit, restart_at)


def _reseed(X, params, c, var_floor):
    other = 1 - c
    d = (((X - params.means[other]) ** 2) / params.variances[other]).sum(axis=1)
    means = params.means.copy()
    var = params.variances.copy()
    means[c] = X[int(np.argmax(d))]
    var[c] = np.maximum(X.var(axis=0), var_floor)
    w = np.array([0.5, 0.5])
    return GmmParams(w, means, var)


def log_likelihood(X, params: GmmParams) -> float:
    return _e_step(np.asarray(X, dtype=float), params)[1]


# ------------------------------------------------------------------ baseline

def make_baseline(pool, selected_features, seed: int, n_rows: int = BASELINE_ROWS,
                  ddos_share: float = BASELINE_DDOS_SHARE) -> BaselineDataset:
    """Seeded class-exact sample of the labelled ``pool``.

    ``pool`` is a :class:`~twinguard.dataprep.Dataset` (or anything with
    ``features``/``labels``) over the full sensor set.  The sample holds
    exactly ``round(n_rows * ddos_share)`` DDoS rows and the rest NotDDoS,
    projected onto ``selected_features``.
    """
    n_ddos = int(round(n_rows * ddos_share))
    n_benign = n_rows - n_ddos
    labels = np.asarray(pool.labels)
    ddos_rows = np.flatnonzero(labels == DDOS)
    benign_rows = np.flatnonzero(labels == NOT_DDOS)
    if ddos_rows.size < n_ddos or benign_rows.size < n_benign:
        raise InsufficientPool(f"pool has {ddos_rows.size} DDoS / {benign_rows.size} NotDDoS rows, "
                               f"need {n_ddos} / {n_benign}")
    rng = np.random.default_rng(seed)
    rows = np.sort(np.concatenate([rng.choice(ddos_rows, n_ddos, replace=False),
                                   rng.choice(benign_rows, n_benign, replace=False)]))
    sel = tuple(int(i) for i in selected_features)
    X = np.asarray(pool.features)[rows][:, list(sel)]
    return BaselineDataset(X, labels[rows], rows, sel)


# ------------------------------------------------------------------ ensemble

def _ddos_side(points, m_ddos, m_benign):
    """Signed position along the benign-to-DDoS axis, 0 at the midpoint."""
    axis = m_ddos - m_benign
    return (np.atleast_2d(points) - (m_ddos + m_benign) / 2.0) @ axis


def align_components(params: GmmParams, m_ddos, m_benign, flags: set, tag: str) -> np.ndarray:
    """Return a 0/1 vector marking which mixture components are DDoS.

    Component means are projected onto the axis joining the baseline class
    means.  The component further towards the DDoS mean is DDoS.  When both
    means fall on the same side of the midpoint the window is treated as
    single-regime and both map to that side's class.
    """
    s = _ddos_side(params.means, m_ddos, m_benign)
    if np.all(s >= 0):
        flags.add(f"{tag}:single_regime_ddos")
        return np.ones(2)
    if np.all(s < 0):
        flags.add(f"{tag}:single_regime_benign")
        return np.zeros(2)
    out = np.zeros(2)
    out[int(np.argmax(s))] = 1.0
    return out


def fuse(r1, r2) -> np.ndarray:
    """Labels from two DDoS posteriors: mean >= 0.5 means DDoS."""
    p = (np.asarray(r1) + np.asarray(r2)) / 2.0
    return np.where(p >= 0.5, DDOS, NOT_DDOS)


def run_labeling(window, baseline: BaselineDataset, seed: int, window_rows: int | None = WINDOW_ROWS) -> LabeledDataset:
    """Label ``window`` (rows x selected features) against ``baseline``.

    ``window_rows`` pins the expected window size; pass ``None`` to accept
    any size of at least two rows.
    """
    W = np.asarray(window, dtype=float)
    B = np.asarray(baseline.features, dtype=float)
    if window_rows is not None and W.shape[0] != window_rows:
        raise ValueError(f"window must have {window_rows} rows, got {W.shape[0]}")
    if W.ndim != 2 or W.shape[1] != B.shape[1]:
        raise ValueError("window and baseline must share the feature columns")
    yb = np.asarray(baseline.labels)
    if not (np.any(yb == DDOS) and np.any(yb == NOT_DDOS)):
        raise InsufficientPool("baseline must contain both classes")

    U = np.vstack([W, B])
    mu = U.mean(axis=0)
    sd = U.std(axis=0)
    sd = np.where(sd > 1e-12, sd, 1.0)
    Wz, Bz = (W - mu) / sd, (B - mu) / sd
    m_ddos = Bz[yb == DDOS].mean(axis=0)
    m_benign = Bz[yb == NOT_DDOS].mean(axis=0)
    flags: set = set()

    # EM on the window alone, seeded by 2-means
    try:
        assign, cent = kmeans2(Wz, seed)
        em1 = em_fit(Wz, init_from_kmeans(assign, cent, Wz))
        r1 = em1.responsibilities @ align_components(em1.params, m_ddos, m_benign, flags, "em1")
    except DegenerateData:
        flags.add("em1:degenerate_window")
        r1 = (_ddos_side(Wz, m_ddos, m_benign) >= 0).astype(float)

    # EM on window + baseline, seeded from the baseline classes
    Uz = np.vstack([Wz, Bz])
    stats = []
    for cls in (NOT_DDOS, DDOS):
        part = Bz[yb == cls]
        stats.append((part.shape[0], part.mean(axis=0), np.maximum(part.var(axis=0), VAR_FLOOR)))
    counts = np.array([s[0] for s in stats], dtype=float)
    init2 = GmmParams(counts / counts.sum(), np.vstack([s[1] for s in stats]), np.vstack([s[2] for s in stats]))
    em2 = em_fit(Uz, init2)
    r2 = em2.responsibilities[:W.shape[0]] @ align_components(em2.params, m_ddos, m_benign, flags, "em2")

    y_window = fuse(r1, r2)
    return LabeledDataset(
        features=np.vstack([W, B]),
        labels=np.concatenate([y_window, yb]).astype(int),
        provenance=np.array(["window"] * W.shape[0] + ["baseline"] * B.shape[0]),
        feature_indices=tuple(baseline.feature_indices),
        p_ddos=(r1 + r2) / 2.0,
        flags=flags,
    )
