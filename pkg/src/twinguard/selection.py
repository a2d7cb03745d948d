"""Automated feature selection (AutoFS).

Five selectors each keep the 10 best of the 92 sensor features:

* ANOVA F, chi-square and Fisher score rank features independently;
* recursive feature elimination (RFE) drops the smallest-|weight| feature of
  a linear scorer one loop at a time;
* backward feature elimination (BFE) drops, at each step, the feature whose
  removal leaves the best 3-fold recall.

:func:`run_autofs` pseudo-labels a random 1000-row sample of the current
window, runs every selector on it, trains one candidate MLP per selector on
the federated 2000-row set, and keeps the candidate with maximum recall,
preferring the fastest among those within ``epsilon_recall`` of the best.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from . import labeling, mlp
from .errors import AutoFsFailed, DegenerateShape, EmptyCandidates, SingleClass, TwinguardError
from .labels import DDOS, NOT_DDOS

log = logging.getLogger(__name__)

N_SELECTED = 10


class FsMethod(Enum):
    ANOVA_F = "AnovaF"
    CHI_SQUARE = "ChiSquare"
    BFE = "BFE"
    FISHER_SCORE = "FisherScore"
    RFE = "RFE"

    @property
    def order(self):
        return list(FsMethod).index(self)


# Advisory notes surfaced in reports; they do not influence selection.
TRAFFIC_GUIDANCE = {
    FsMethod.ANOVA_F: "real-time traffic",
    FsMethod.RFE: "real-time traffic",
    FsMethod.BFE: "non-real-time traffic",
    FsMethod.FISHER_SCORE: "non-real-time traffic",
    FsMethod.CHI_SQUARE: "best-effort traffic",
}


@dataclass
class Selection:
    indices: np.ndarray
    scores: np.ndarray
    eliminated: list = field(default_factory=list)
    fallback_loops: list = field(default_factory=list)

    def __iter__(self):
        return iter((self.indices, self.scores))


def _check(X, y, k):
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=int)
    if X.ndim != 2 or X.shape[0] != y.shape[0] or X.shape[0] < 4 or X.shape[1] < k:
        raise DegenerateShape(f"need >= 4 rows and >= {k} columns, got {X.shape}")
    if not (np.any(y == DDOS) and np.any(y == NOT_DDOS)):
        raise SingleClass("feature selection needs both classes")
    return X, y


def top_k(scores, k):
    """Indices of the ``k`` largest scores, ties broken by lower index."""
    s = np.where(np.isnan(scores), -np.inf, scores)
    return np.lexsort((np.arange(s.size), -s))[:k]


def _ratio(num, den, scale):
    """num / den with the zero-denominator conventions: inf if num > 0, else 0."""
    tiny = 1e-24 * np.maximum(scale, 1e-300)
    out = np.zeros_like(num)
    zero_den = den <= tiny
    out[~zero_den] = num[~zero_den] / den[~zero_den]
    out[zero_den & (num > tiny)] = np.inf
    return out


def _class_moments(X, y):
    groups = [X[y == c] for c in (NOT_DDOS, DDOS)]
    n = np.array([g.shape[0] for g in groups], dtype=float)
    mu = np.vstack([g.mean(axis=0) for g in groups])
    return groups, n, mu


def anova_f_scores(X, y):
    X, y = _check(X, y, 1)
    groups, n, mu = _class_moments(X, y)
    grand = X.mean(axis=0)
    ssb = (n[:, None] * (mu - grand) ** 2).sum(axis=0)
    ssw = sum(((g - m) ** 2).sum(axis=0) for g, m in zip(groups, mu))
    df_b, df_w = len(groups) - 1, X.shape[0] - len(groups)
    scale = (X ** 2).sum(axis=0)
    return _ratio(ssb / df_b, ssw / df_w, scale)


def anova_f_select(X, y, k: int = N_SELECTED) -> Selection:
    _check(X, y, k)
    s = anova_f_scores(X, y)
    return Selection(top_k(s, k), s)


def _minmax(X):
    lo = X.min(axis=0)
    span = X.max(axis=0) - lo
    out = np.zeros_like(X)
    ok = span > 0
    out[:, ok] = (X[:, ok] - lo[ok]) / span[ok]
    return out


def chi_square_scores(X, y):
    X, y = _check(X, y, 1)
    Xs = _minmax(X)
    total = Xs.sum(axis=0)
    score = np.zeros(X.shape[1])
    for c in (NOT_DDOS, DDOS):
        observed = Xs[y == c].sum(axis=0)
        expected = total * np.mean(y == c)
        ok = expected > 0
        score[ok] += (observed[ok] - expected[ok]) ** 2 / expected[ok]
    return score


def chi_square_select(X, y, k: int = N_SELECTED) -> Selection:
    _check(X, y, k)
    s = chi_square_scores(X, y)
    return Selection(top_k(s, k), s)


def fisher_scores(X, y):
    X, y = _check(X, y, 1)
    groups, n, mu = _class_moments(X, y)
    grand = X.mean(axis=0)
    num = (n[:, None] * (mu - grand) ** 2).sum(axis=0)
    den = sum(g.shape[0] * g.var(axis=0) for g in groups)
    return _ratio(num, den, (X ** 2).mean(axis=0))


def fisher_score_select(X, y, k: int = N_SELECTED) -> Selection:
    _check(X, y, k)
    s = fisher_scores(X, y)
    return Selection(top_k(s, k), s)


# ------------------------------------------------------------ linear scorer

LOGISTIC_EPOCHS = 200
LOGISTIC_LR = 0.1


def _standardize(X):
    sd = X.std(axis=0)
    return (X - X.mean(axis=0)) / np.where(sd > 1e-12, sd, 1.0)


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def fit_logistic(X, y, epochs: int = LOGISTIC_EPOCHS, lr: float = LOGISTIC_LR):
    """Full-batch gradient descent on mean logistic loss from zero weights."""
    w = np.zeros(X.shape[1])
    b = 0.0
    yf = y.astype(float)
    for _ in range(epochs):
        g = (_sigmoid(X @ w + b) - yf) / X.shape[0]
        w -= lr * (X.T @ g)
        b -= lr * g.sum()
    return w, b


def _fit_logistic_masked(X, y, masks, epochs=LOGISTIC_EPOCHS, lr=LOGISTIC_LR):
    """Fit one logistic model per row of ``masks`` (0 drops a column).

    Runs in float32 with in-place updates; this is the hot loop of BFE.
    """
    f32 = np.float32
    X = np.ascontiguousarray(X, dtype=f32)
    masks = masks.astype(f32)
    n, m = X.shape[0], masks.shape[0]
    # track half-weights so that tanh(X @ Wh.T + bh) = tanh(z / 2)
    Wh = np.zeros((m, X.shape[1]), f32)
    bh = np.zeros(m, f32)
    Z = np.empty((n, m), f32)
    gW = np.empty_like(Wh)
    offset = (0.5 - y.astype(f32))[:, None]
    step = f32(lr / n / 2)
    for _ in range(epochs):
        np.matmul(X, Wh.T, out=Z)
        Z += bh
        np.tanh(Z, out=Z)
        Z *= 0.5
        Z += offset                      # sigmoid(z) - y
        np.matmul(Z.T, X, out=gW)
        gW *= masks
        gW *= step
        Wh -= gW
        bh -= step * Z.sum(axis=0)
    return 2 * Wh, 2 * bh


def rfe_select(X, y, k: int = N_SELECTED) -> Selection:
    """Recursive elimination driven by logistic-regression weights.

    ``scores`` record elimination order: the first feature dropped scores 1,
    survivors score above every eliminated feature, ordered by final |weight|.
    """
    X, y = _check(X, y, k)
    Xs = _standardize(X)
    d = X.shape[1]
    remaining = list(range(d))
    scores = np.zeros(d)
    eliminated, fallback = [], []
    step = 0
    w = None
    while True:
        with np.errstate(all="ignore"):
            w, _ = fit_logistic(Xs[:, remaining], y)
        finite = np.all(np.isfinite(w))
        if len(remaining) == k and finite:
            break
        if finite:
            drop = int(np.argmin(np.abs(w)))
        else:
            fallback.append(step)
            drop = int(np.argmin(fisher_scores(X[:, remaining], y)))
            if len(remaining) == k:
                w = fisher_scores(X[:, remaining], y)
                break
        step += 1
        j = remaining.pop(drop)
        scores[j] = step
        eliminated.append(j)
    rank = np.lexsort((np.array(remaining), np.abs(w)))   # ascending |w|
    for r, pos in enumerate(rank):
        scores[remaining[pos]] = step + 1 + r
    survivors = np.array(remaining)
    order = np.lexsort((survivors, -scores[survivors]))
    return Selection(survivors[order], scores, eliminated, fallback)


def _stratified_folds(y, k, seed):
    rng = np.random.default_rng(seed)
    fold = np.empty(y.size, dtype=int)
    for c in (NOT_DDOS, DDOS):
        rows = rng.permutation(np.flatnonzero(y == c))
        fold[rows] = np.arange(rows.size) % k
    return fold


def _masked_recall(Xs, y, masks, folds, k_folds):
    tp = np.zeros(masks.shape[0])
    pos = 0
    for f in range(k_folds):
        tr, te = folds != f, folds == f
        W, b = _fit_logistic_masked(Xs[tr], y[tr], masks)
        pred = (Xs[te] @ W.T + b) >= 0.0
        hit = y[te] == DDOS
        tp += (pred & hit[:, None]).sum(axis=0)
        pos += hit.sum()
    return tp / max(pos, 1)


def bfe_select(X, y, k: int = N_SELECTED, n_folds: int = 3, seed: int = 0) -> Selection:
    """Backward elimination by 3-fold recall of the logistic scorer.

    Each step removes the feature whose removal maximises pooled
    cross-validated recall (lower index on ties).  ``scores[j]`` is the
    recall measured with ``j`` removed: the recall at its elimination step
    for dropped features, and the recall without it from the final subset
    for survivors.
    """
    X, y = _check(X, y, k)
    Xs = _standardize(X)
    folds = _stratified_folds(y, n_folds, seed)
    remaining = list(range(X.shape[1]))
    scores = np.zeros(X.shape[1])
    eliminated = []
    while True:
        r = len(remaining)
        masks = 1.0 - np.eye(r)
        recall = _masked_recall(Xs[:, remaining], y, masks, folds, n_folds)
        if r == k:
            break
        drop = int(np.argmax(recall))
        j = remaining.pop(drop)
        scores[j] = recall[drop]
        eliminated.append(j)
    for pos, j in enumerate(remaining):
        scores[j] = recall[pos]
    survivors = np.array(remaining)
    order = np.lexsort((survivors, scores[survivors]))   # most harmful to drop first
    return Selection(survivors[order], scores, eliminated)


SELECTORS = {
    FsMethod.ANOVA_F: anova_f_select,
    FsMethod.CHI_SQUARE: chi_square_select,
    FsMethod.BFE: bfe_select,
    FsMethod.FISHER_SCORE: fisher_score_select,
    FsMethod.RFE: rfe_select,
}


# ------------------------------------------------------------------ AutoFS

@dataclass(frozen=True)
class AutoFsConfig:
    sample_size: int = 1000
    n_features: int = N_SELECTED
    train_fraction: float = 0.7
    epsilon_recall: float = 0.01
    train: mlp.TrainConfig = mlp.TrainConfig()
    methods: tuple = tuple(FsMethod)
    # throughput used to turn operation counts into modelled seconds
    nominal_macs_per_second: float = 1e9
    inference_rows: int = 1000


@dataclass
class FsCandidate:
    method: FsMethod
    selected: np.ndarray
    scores: np.ndarray
    recall: float
    detection_time: float          # modelled seconds, deterministic
    model: mlp.MlpModel
    wall_time: float = 0.0         # measured seconds, informational
    test_accuracy: float = 0.0

    def summary(self, wall=False):
        out = {
            "method": self.method.value,
            "indices": [int(i) for i in self.selected],
            "recall": self.recall,
            "detection_time": self.detection_time,
            "test_accuracy": self.test_accuracy,
            "epochs_run": self.model.epochs_run,
        }
        if wall:
            out["wall_time"] = self.wall_time
        return out


@dataclass
class AutoFsOutcome:
    winner: FsCandidate
    candidates: list
    sample_indices: np.ndarray
    labeled: labeling.LabeledDataset | None
    failures: dict = field(default_factory=dict)

    def to_json(self, wall=False) -> dict:
        return {
            "winner": self.winner.method.value,
            "indices": [int(i) for i in self.winner.selected],
            "candidates": [c.summary(wall) for c in self.candidates],
            "failures": {m.value: msg for m, msg in sorted(self.failures.items(), key=lambda kv: kv[0].order)},
            "labeling_flags": sorted(self.labeled.flags) if self.labeled is not None else [],
        }


def final_fs_select(candidates, epsilon_recall: float = 0.01) -> FsCandidate:
    """Maximum recall; within ``epsilon_recall`` of it, minimum detection time."""
    if not candidates:
        raise EmptyCandidates("no FS candidates to choose from")
    best = max(c.recall for c in candidates)
    near = [c for c in candidates if c.recall >= best - epsilon_recall - 1e-12]
    return min(near, key=lambda c: (c.detection_time, c.method.order))


def subseed(seed, *tags) -> int:
    return int(np.random.SeedSequence([int(seed), *[int(t) for t in tags]]).generate_state(1)[0])


def _split(y, train_fraction, seed):
    rng = np.random.default_rng(seed)
    train = []
    for c in (NOT_DDOS, DDOS):
        rows = rng.permutation(np.flatnonzero(y == c))
        train.append(rows[:int(round(train_fraction * rows.size))])
    train = np.sort(np.concatenate(train))
    test = np.setdiff1d(np.arange(y.size), train)
    return train, test


def _recall(pred, y):
    pos = y == DDOS
    return float(np.sum(pred[pos] == DDOS) / max(pos.sum(), 1))


def evaluate_candidate(method, X_fs, y_fs, X_fed, y_fed, seed, cfg: AutoFsConfig) -> FsCandidate:
    """Select features with ``method`` and train/test one candidate MLP."""
    sel = SELECTORS[method](X_fs, y_fs, cfg.n_features)
    idx = np.asarray(sel.indices, dtype=int)
    train_idx, test_idx = _split(y_fed, cfg.train_fraction, subseed(seed, 1))
    Xf = X_fed[:, idx]
    sizes = (len(idx),) + mlp.LAYER_SIZES[1:]
    model0 = mlp.init_model(subseed(seed, 2), sizes, cfg.train.dropout_rate)
    t0 = time.perf_counter()
    model, _ = mlp.train(model0, (Xf[train_idx], y_fed[train_idx]), replace(cfg.train, seed=subseed(seed, 3)))
    train_wall = time.perf_counter() - t0
    pred = mlp.predict_batch(model, Xf[test_idx])
    probe = Xf[test_idx[:20]]
    t0 = time.perf_counter()
    for row in probe:
        mlp.predict(model, row)
    per_row = (time.perf_counter() - t0) / max(len(probe), 1)

    n_fit = int(round(len(train_idx) * (1 - cfg.train.validation_fraction)))
    train_macs = model.epochs_run * n_fit * 3 * model.macs_per_row
    infer_macs = cfg.inference_rows * model.macs_per_row
    modelled = (train_macs + infer_macs) / cfg.nominal_macs_per_second
    return FsCandidate(method, idx, np.asarray(sel.scores), _recall(pred, y_fed[test_idx]), modelled, model,
                       train_wall + cfg.inference_rows * per_row,
                       float(np.mean(pred == y_fed[test_idx])))


def _candidates(X_fs, y_fs, X_fed, y_fed, seed, cfg):
    candidates, failures = [], {}
    for method in cfg.methods:
        try:
            candidates.append(evaluate_candidate(method, X_fs, y_fs, X_fed, y_fed, subseed(seed, 10, method.order), cfg))
        except TwinguardError as exc:
            log.warning("AutoFS candidate %s failed: %s", method.value, exc)
            failures[method] = str(exc)
    candidates.sort(key=lambda c: c.method.order)
    if not candidates:
        raise AutoFsFailed("every AutoFS candidate failed", failures)
    return candidates, failures


def run_autofs(window, pool, active, seed: int, cfg: AutoFsConfig = AutoFsConfig()) -> AutoFsOutcome:
    """Re-select the feature set and model from an unlabelled window.

    ``window`` holds raw 92-dim vectors, ``pool`` is the labelled baseline
    pool over the same sensors, and ``active`` the currently deployed feature
    indices, which define the space in which the window is pseudo-labelled.
    """
    window = np.asarray(window, dtype=float)
    if window.ndim != 2 or window.shape[0] < cfg.sample_size:
        raise DegenerateShape(f"AutoFS needs >= {cfg.sample_size} window rows, got {window.shape[0]}")
    rng = np.random.default_rng(subseed(seed, 0))
    sample = np.sort(rng.choice(window.shape[0], cfg.sample_size, replace=False))
    Xw = window[sample]
    active = tuple(int(i) for i in active)
    try:
        baseline = labeling.make_baseline(pool, active, subseed(seed, 4))
        labeled = labeling.run_labeling(Xw[:, list(active)], baseline, subseed(seed, 5), cfg.sample_size)
    except TwinguardError as exc:
        raise AutoFsFailed(f"labeling failed: {exc}") from exc
    y_all = labeled.labels
    y_window = y_all[:cfg.sample_size]
    X_fed = np.vstack([Xw, np.asarray(pool.features)[baseline.rows]])
    candidates, failures = _candidates(Xw, y_window, X_fed, y_all, seed, cfg)
    return AutoFsOutcome(final_fs_select(candidates, cfg.epsilon_recall), candidates, sample, labeled, failures)


def bootstrap_autofs(pool, seed: int, cfg: AutoFsConfig = AutoFsConfig()) -> AutoFsOutcome:
    """Supervised AutoFS on a labelled pool, used before any model exists.

    A random ``sample_size`` rows play the window with their true labels;
    the baseline is drawn from the remaining rows.
    """
    X = np.asarray(pool.features, dtype=float)
    y = np.asarray(pool.labels, dtype=int)
    if X.shape[0] < cfg.sample_size + labeling.BASELINE_ROWS:
        raise DegenerateShape(f"bootstrap pool needs >= {cfg.sample_size + labeling.BASELINE_ROWS} rows")
    rng = np.random.default_rng(subseed(seed, 0))
    sample = np.sort(rng.choice(X.shape[0], cfg.sample_size, replace=False))
    rest = np.setdiff1d(np.arange(X.shape[0]), sample)

    class _Rest:
        features = X[rest]
        labels = y[rest]

    baseline = labeling.make_baseline(_Rest, range(X.shape[1]), subseed(seed, 4))
    X_fed = np.vstack([X[sample], X[rest][baseline.rows]])
    y_fed = np.concatenate([y[sample], baseline.labels])
    candidates, failures = _candidates(X[sample], y[sample], X_fed, y_fed, seed, cfg)
    return AutoFsOutcome(final_fs_select(candidates, cfg.epsilon_recall), candidates, sample, None, failures)
