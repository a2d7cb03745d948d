"""Feed-forward DDoS classifier: three ReLU hidden layers, softmax output.

Trained by plain mini-batch gradient descent on mean cross-entropy, with
inverted dropout on hidden activations and early stopping on a held-out
validation slice.  Inputs are standardised with statistics frozen from the
training set and stored alongside the weights, so a model file is
self-contained.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import CorruptFile, DivergenceDetected, NonFiniteInput, SchemaMismatch, SingleClass
from .labels import DDOS, NOT_DDOS

LAYER_SIZES = (10, 64, 32, 16, 2)
GRADCHECK_SIZES = (10, 8, 6, 4, 2)
FILE_FORMAT = "twinguard.mlp"
FILE_SCHEMA = 1


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 300
    batch_size: int = 32
    learning_rate: float = 0.01
    dropout_rate: float = 0.2
    seed: int = 0
    early_stop_patience: int = 20
    validation_fraction: float = 0.1

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1 or self.learning_rate <= 0:
            raise ValueError("epochs, batch_size and learning_rate must be positive")
        if not 0 <= self.dropout_rate < 1:
            raise ValueError("dropout_rate must be in [0, 1)")
        if self.early_stop_patience < 1 or not 0 <= self.validation_fraction < 1:
            raise ValueError("invalid early stopping settings")


@dataclass(frozen=True)
class MlpModel:
    layer_sizes: tuple
    weights: tuple            # W[l] has shape (fan_in, fan_out)
    biases: tuple
    dropout_rate: float = 0.2
    version: int = 0
    mean: np.ndarray = None
    std: np.ndarray = None
    epochs_run: int = 0

    def __post_init__(self):
        n_in = self.layer_sizes[0]
        if self.mean is None:
            object.__setattr__(self, "mean", np.zeros(n_in))
        if self.std is None:
            object.__setattr__(self, "std", np.ones(n_in))

    @property
    def n_parameters(self) -> int:
        return sum(W.size + b.size for W, b in zip(self.weights, self.biases))

    @property
    def macs_per_row(self) -> int:
        """Multiply-accumulates for one eval-mode forward pass."""
        return sum(W.size for W in self.weights) + self.layer_sizes[0]

    def parameters(self):
        for W, b in zip(self.weights, self.biases):
            yield W
            yield b


@dataclass(frozen=True)
class Prediction:
    cls: int
    confidence: float


def init_model(seed: int = 0, layer_sizes: Sequence[int] = LAYER_SIZES, dropout_rate: float = 0.2) -> MlpModel:
    """He-initialised weights (std sqrt(2 / fan_in)), zero biases."""
    rng = np.random.default_rng(seed)
    sizes = tuple(int(s) for s in layer_sizes)
    weights = tuple(rng.normal(0.0, np.sqrt(2.0 / a), size=(a, b)) for a, b in zip(sizes[:-1], sizes[1:]))
    biases = tuple(np.zeros(b) for b in sizes[1:])
    return MlpModel(sizes, weights, biases, dropout_rate)


# ----------------------------------------------------------------- forward

def _softmax(Z):
    Z = Z - Z.max(axis=1, keepdims=True)
    E = np.exp(Z)
    return E / E.sum(axis=1, keepdims=True)


def _standardize(model, X):
    return (X - model.mean) / model.std


def _forward(weights, biases, X, dropout=0.0, rng=None):
    """Return (logits, cache) for a raw (already standardised) batch."""
    acts = [X]
    masks = []
    A = X
    last = len(weights) - 1
    for l, (W, b) in enumerate(zip(weights, biases)):
        Z = A @ W + b
        if l == last:
            return Z, (acts, masks)
        A = np.maximum(Z, 0.0)
        if dropout > 0.0:
            m = (rng.random(A.shape) >= dropout) / (1.0 - dropout)
            A = A * m
            masks.append(m)
        else:
            masks.append(None)
        acts.append(A)


def forward(model: MlpModel, x, mode: str = "eval", rng=None) -> np.ndarray:
    """Class probabilities ``[p_not_ddos, p_ddos]`` for one row or a batch.

    ``mode="train"`` applies dropout masks drawn from ``rng``; eval mode is a
    pure function of the parameters and the input.
    """
    X = np.asarray(x, dtype=float)
    single = X.ndim == 1
    X2 = X[None, :] if single else X
    if not np.all(np.isfinite(X2)):
        raise NonFiniteInput("input contains NaN or Inf")
    if X2.shape[1] != model.layer_sizes[0]:
        raise ValueError(f"expected {model.layer_sizes[0]} inputs, got {X2.shape[1]}")
    if mode == "train":
        if rng is None:
            rng = np.random.default_rng()
        Z, _ = _forward(model.weights, model.biases, _standardize(model, X2), model.dropout_rate, rng)
    elif mode == "eval":
        Z, _ = _forward(model.weights, model.biases, _standardize(model, X2))
    else:
        raise ValueError(f"mode must be 'train' or 'eval', not {mode!r}")
    P = _softmax(Z)
    return P[0] if single else P


def predict(model: MlpModel, x) -> Prediction:
    p = forward(model, x)
    cls = DDOS if p[DDOS] >= p[NOT_DDOS] else NOT_DDOS
    return Prediction(cls, float(p[cls]))


def predict_batch(model: MlpModel, X) -> np.ndarray:
    P = forward(model, np.atleast_2d(X))
    return np.where(P[:, DDOS] >= P[:, NOT_DDOS], DDOS, NOT_DDOS)


# ------------------------------------------------------------ loss & grads

def _cross_entropy(Z, y):
    """Per-row -log softmax(Z)[y], accurate when the loss is tiny."""
    d = Z - Z[np.arange(len(y)), y][:, None]
    m = d.max(axis=1)
    d[np.arange(len(y)), y] = -np.inf
    rest = np.exp(d - m[:, None]).sum(axis=1)
    # m == 0 when the true class is the argmax: loss = log1p(sum exp(d_j))
    return np.where(m > 0, m + np.log(np.exp(-m) + rest), np.log1p(rest))


def _softmax_grad(Z, y):
    """d(mean CE)/dZ without cancellation in the true-class column."""
    P = _softmax(Z)
    rows = np.arange(len(y))
    P[rows, y] = 0.0
    P[rows, y] = -P.sum(axis=1)
    return P / len(y)


def _backward(weights, Z, cache, y):
    acts, masks = cache
    grads_W = [None] * len(weights)
    grads_b = [None] * len(weights)
    G = _softmax_grad(Z, y)
    for l in range(len(weights) - 1, -1, -1):
        A = acts[l]
        grads_W[l] = A.T @ G
        grads_b[l] = G.sum(axis=0)
        if l > 0:
            G = G @ weights[l].T
            if masks[l - 1] is not None:
                G = G * masks[l - 1]
            G = G * (A > 0)
    return grads_W, grads_b


def loss(model: MlpModel, X, y) -> float:
    Z, _ = _forward(model.weights, model.biases, _standardize(model, np.asarray(X, dtype=float)))
    return float(_cross_entropy(Z, np.asarray(y, dtype=int)).mean())


def gradients(model: MlpModel, X, y):
    """Analytic gradients of mean cross-entropy, dropout off."""
    X = _standardize(model, np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=int)
    Z, cache = _forward(model.weights, model.biases, X)
    return _backward(model.weights, Z, cache, y)


def _relative_error(a, n, floor):
    return np.abs(a - n) / np.maximum(np.abs(a) + np.abs(n), floor)


def gradcheck_model(seed: int = 0, layer_sizes: Sequence[int] = GRADCHECK_SIZES) -> MlpModel:
    """Initialised network with small random biases.

    With zero biases a row whose hidden units are all inactive feeds an exact
    0 into the next ReLU, a kink where finite differences see slope 1/2 and
    backprop sees 0.  Jittered biases keep the check on differentiable points.
    """
    m = init_model(seed, layer_sizes)
    rng = np.random.default_rng([seed, 1])
    return replace(m, biases=tuple(rng.normal(0.0, 0.1, b.shape) for b in m.biases))


def _loss_and_pattern(weights, biases, X, y):
    Z, (acts, _) = _forward(weights, biases, X)
    return float(_cross_entropy(Z, y).mean()), [A > 0 for A in acts[1:]]


def grad_check(model: MlpModel | None, batch, eps: float = 1e-5, floor: float = 1e-7,
               return_kinks: bool = False):
    """Largest relative error between backprop and central differences.

    Every parameter is perturbed.  ``model`` defaults to
    ``gradcheck_model(0)``; ``batch`` is ``(X, y)``.  The relative error
    is ``|a - n| / max(|a| + |n|, floor)``, the floor absorbing parameters
    whose gradient is zero or below finite-difference resolution.
    A coordinate whose +/-eps probe flips any ReLU on/off pattern straddles
    a kink, where the difference quotient is not a derivative; such
    coordinates are skipped and counted (``return_kinks=True`` returns
    ``(error, n_skipped)``).
    """
    if model is None:
        model = gradcheck_model(0)
    X, y = batch
    X = _standardize(model, np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=int)
    gW, gb = gradients(model, batch[0], y)
    worst = 0.0
    kinks = 0
    params = [np.array(p, copy=True) for p in model.parameters()]
    analytic = [g for pair in zip(gW, gb) for g in pair]
    _, base = _loss_and_pattern(params[0::2], params[1::2], X, y)

    def probe():
        return _loss_and_pattern(params[0::2], params[1::2], X, y)

    for k, p in enumerate(params):
        flat = p.reshape(-1)
        a = analytic[k].reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            up, pat_up = probe()
            flat[i] = orig - eps
            down, pat_down = probe()
            flat[i] = orig
            if any(np.any(u != b) or np.any(d != b) for u, d, b in zip(pat_up, pat_down, base)):
                kinks += 1
                continue
            n = (up - down) / (2 * eps)
            worst = max(worst, float(_relative_error(a[i], n, floor)))
    return (worst, kinks) if return_kinks else worst


# ----------------------------------------------------------------- training

def _as_xy(data):
    if isinstance(data, tuple):
        X, y = data
    else:
        X, y = data.features, data.labels
    return np.asarray(X, dtype=float), np.asarray(y, dtype=int)


def train(model: MlpModel, data, cfg: TrainConfig = TrainConfig()):
    """Fit ``model`` on ``data`` (a labelled dataset or ``(X, y)``).

    Returns ``(new_model, history)`` where ``history`` holds the full-set
    cross-entropy, dropout disabled, after each epoch.  The weights with the
    best validation loss are kept.  The input model is never modified.
    """
    X, y = _as_xy(data)
    if X.shape[0] == 0:
        raise ValueError("training data is empty")
    if np.unique(y).size < 2:
        raise SingleClass("training data holds a single class")
    if not np.all(np.isfinite(X)):
        raise NonFiniteInput("training data contains NaN or Inf")
    if cfg.epochs == 0:
        return model, []

    rng = np.random.default_rng(cfg.seed)
    order = rng.permutation(X.shape[0])
    n_val = int(round(cfg.validation_fraction * X.shape[0]))
    val_idx, fit_idx = order[:n_val], order[n_val:]
    if n_val and np.unique(y[fit_idx]).size < 2:
        val_idx, fit_idx = order[:0], order

    mean = X[fit_idx].mean(axis=0)
    std = X[fit_idx].std(axis=0)
    std = np.where(std > 1e-12, std, 1.0)
    S = (X - mean) / std
    Sf, yf = S[fit_idx], y[fit_idx]
    Sv, yv = S[val_idx], y[val_idx]

    weights = [W.copy() for W in model.weights]
    biases = [b.copy() for b in model.biases]
    lr = cfg.learning_rate
    history = []
    best = (np.inf, weights, biases, 0)
    stale = 0
    epoch = 0
    for epoch in range(1, cfg.epochs + 1):
        perm = rng.permutation(Sf.shape[0])
        for lo in range(0, perm.size, cfg.batch_size):
            b = perm[lo:lo + cfg.batch_size]
            Z, cache = _forward(weights, biases, Sf[b], cfg.dropout_rate, rng)
            gW, gb = _backward(weights, Z, cache, yf[b])
            for l in range(len(weights)):
                weights[l] -= lr * gW[l]
                biases[l] -= lr * gb[l]
        Z, _ = _forward(weights, biases, S)
        full = float(_cross_entropy(Z, y).mean())
        if not np.isfinite(full):
            raise DivergenceDetected(f"loss became {full} at epoch {epoch}")
        history.append(full)
        if Sv.shape[0]:
            Zv, _ = _forward(weights, biases, Sv)
            monitor = float(_cross_entropy(Zv, yv).mean())
        else:
            monitor = full
        if monitor < best[0] - 1e-12:
            best = (monitor, [W.copy() for W in weights], [b.copy() for b in biases], epoch)
            stale = 0
        else:
            stale += 1
            if stale >= cfg.early_stop_patience:
                break
    _, weights, biases, _ = best
    out = replace(model, weights=tuple(weights), biases=tuple(biases), dropout_rate=cfg.dropout_rate,
                  mean=mean, std=std, epochs_run=epoch)
    return out, history


def accuracy(model: MlpModel, X, y) -> float:
    return float(np.mean(predict_batch(model, X) == np.asarray(y)))


# ------------------------------------------------------------------ files

def to_document(model: MlpModel) -> dict:
    return {
        "format": FILE_FORMAT,
        "schema": FILE_SCHEMA,
        "layer_sizes": list(model.layer_sizes),
        "dropout_rate": model.dropout_rate,
        "version": model.version,
        "epochs_run": model.epochs_run,
        "mean": model.mean.tolist(),
        "std": model.std.tolist(),
        "weights": [W.tolist() for W in model.weights],
        "biases": [b.tolist() for b in model.biases],
    }


def from_document(doc, expected_layer_sizes=None) -> MlpModel:
    if not isinstance(doc, dict) or doc.get("format") != FILE_FORMAT:
        raise CorruptFile("not a twinguard model document")
    if doc.get("schema") != FILE_SCHEMA:
        raise SchemaMismatch(f"unsupported model schema {doc.get('schema')!r}")
    try:
        sizes = tuple(int(s) for s in doc["layer_sizes"])
        weights = tuple(np.array(W, dtype=float) for W in doc["weights"])
        biases = tuple(np.array(b, dtype=float) for b in doc["biases"])
        mean = np.array(doc["mean"], dtype=float)
        std = np.array(doc["std"], dtype=float)
        dropout, version = float(doc["dropout_rate"]), int(doc["version"])
        epochs_run = int(doc.get("epochs_run", 0))
    except (KeyError, TypeError, ValueError) as exc:
        raise CorruptFile(f"malformed model document: {exc}") from None
    if expected_layer_sizes is not None and sizes != tuple(expected_layer_sizes):
        raise SchemaMismatch(f"layer sizes {sizes} != expected {tuple(expected_layer_sizes)}")
    shapes = [(a, b) for a, b in zip(sizes[:-1], sizes[1:])]
    if (len(weights) != len(shapes) or any(W.shape != s for W, s in zip(weights, shapes))
            or any(b.shape != (s[1],) for b, s in zip(biases, shapes))
            or mean.shape != (sizes[0],) or std.shape != (sizes[0],)):
        raise SchemaMismatch(f"parameter shapes disagree with layer sizes {sizes}")
    return MlpModel(sizes, weights, biases, dropout, version, mean, std, epochs_run)


def save(model: MlpModel, path) -> None:
    Path(path).write_text(json.dumps(to_document(model), allow_nan=False))


def load(path, expected_layer_sizes=None) -> MlpModel:
    try:
        doc = json.loads(Path(path).read_text())
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise CorruptFile(f"{path}: {exc}") from None
    return from_document(doc, expected_layer_sizes)
