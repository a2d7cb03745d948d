import numpy as np
import pytest
from hypothesis import given, strategies as st

from twinguard import selection as sel
from twinguard.dataprep import Dataset
from twinguard.errors import DegenerateShape, EmptyCandidates, SingleClass
from twinguard.labels import DDOS, NOT_DDOS
from twinguard.synthetic import column_names, signal_regime

UNIVARIATE = (sel.anova_f_select, sel.chi_square_select, sel.fisher_score_select)


# ---------------------------------------------------------------- oracles

def anova_oracle(x, y):
    groups = [[v for v, c in zip(x, y) if c == lab] for lab in (0, 1)]
    grand = sum(x) / len(x)
    ssb = sum(len(g) * (sum(g) / len(g) - grand) ** 2 for g in groups)
    ssw = sum(sum((v - sum(g) / len(g)) ** 2 for v in g) for g in groups)
    return (ssb / 1) / (ssw / (len(x) - 2))


def chi2_oracle(x, y):
    lo, hi = min(x), max(x)
    s = [(v - lo) / (hi - lo) for v in x]
    total = sum(s)
    out = 0.0
    for lab in (0, 1):
        obs = sum(v for v, c in zip(s, y) if c == lab)
        exp = total * sum(1 for c in y if c == lab) / len(y)
        out += (obs - exp) ** 2 / exp
    return out


def fisher_oracle(x, y):
    mu = sum(x) / len(x)
    num = den = 0.0
    for lab in (0, 1):
        g = [v for v, c in zip(x, y) if c == lab]
        m = sum(g) / len(g)
        num += len(g) * (m - mu) ** 2
        den += len(g) * sum((v - m) ** 2 for v in g) / len(g)
    return num / den


def random_instance(seed, n=20, d=6):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, d)) * rng.uniform(0.5, 3, d) + rng.normal(0, 2, d)
    y = np.r_[np.zeros(n // 2, int), np.ones(n - n // 2, int)]
    rng.shuffle(y)
    return X, y


@pytest.mark.parametrize("fn,oracle", [(sel.anova_f_scores, anova_oracle),
                                       (sel.chi_square_scores, chi2_oracle),
                                       (sel.fisher_scores, fisher_oracle)])
def test_scores_match_oracle(fn, oracle):
    for seed in range(50):
        X, y = random_instance(seed)
        got = fn(X, y)
        want = np.array([oracle(list(X[:, j]), list(y)) for j in range(X.shape[1])])
        np.testing.assert_allclose(got, want, rtol=1e-9, atol=0)
        assert list(sel.top_k(got, 6)) == list(np.argsort(-want, kind="stable"))


def test_constant_feature_scores_zero():
    X, y = random_instance(1)
    X[:, 2] = 4.0
    for fn in (sel.anova_f_scores, sel.chi_square_scores, sel.fisher_scores):
        assert fn(X, y)[2] == 0.0
    assert sel.anova_f_select(X, y, 6).indices[-1] == 2


def test_zero_within_variance_is_infinite():
    X = np.array([[1, 0.3], [1, 0.1], [1, 0.9], [3, 0.2], [3, 0.8], [3, 0.5]], float)
    y = np.array([0, 0, 0, 1, 1, 1])
    for fn in (sel.anova_f_select, sel.fisher_score_select):
        idx, scores = fn(X, y, 2)
        assert np.isinf(scores[0]) and idx[0] == 0


def test_chi_square_hand_fixture():
    # feature 0 only fires on DDoS rows, feature 1 is class-balanced
    X = np.array([[1.0, 1.0], [1.0, 0.0], [0.0, 1.0], [0.0, 0.0]])
    y = np.array([DDOS, DDOS, NOT_DDOS, NOT_DDOS])
    scores = sel.chi_square_scores(X, y)
    # observed (0,2), expected (1,1): chi2 = 1 + 1
    assert scores[0] == pytest.approx(2.0) and scores[1] == 0.0
    assert sel.chi_square_select(X, y, 1).indices[0] == 0


def test_preconditions():
    X, y = random_instance(0)
    with pytest.raises(SingleClass):
        sel.anova_f_select(X, np.zeros(20, int), 3)
    with pytest.raises(DegenerateShape):
        sel.fisher_score_select(X[:3], y[:3], 2)
    with pytest.raises(DegenerateShape):
        sel.chi_square_select(X, y, 7)


@given(st.integers(0, 10_000))
def test_univariate_row_permutation_invariance(seed):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(30, 14))
    y = rng.integers(0, 2, 30)
    y[:2] = [0, 1]
    perm = rng.permutation(30)
    for fn in UNIVARIATE:
        a = fn(X, y, 10)
        b = fn(X[perm], y[perm], 10)
        assert list(a.indices) == list(b.indices)
        assert len(set(a.indices)) == 10 and all(0 <= i < 14 for i in a.indices)


# ------------------------------------------------------------ wrappers

def label_plus_noise(seed, n=50, d=12):
    rng = np.random.default_rng(seed)
    y = rng.integers(0, 2, n)
    y[:2] = [0, 1]
    X = rng.normal(size=(n, d))
    X[:, 4] = y
    return X, y


def test_rfe_keeps_label_feature():
    for seed in range(20):
        X, y = label_plus_noise(seed)
        r = sel.rfe_select(X, y, 3)
        assert 4 in r.indices and len(r.eliminated) == 9


def test_rfe_deterministic_and_identity():
    X, y = label_plus_noise(3)
    a, b = sel.rfe_select(X, y, 5), sel.rfe_select(X, y, 5)
    assert a.eliminated == b.eliminated and list(a.indices) == list(b.indices)
    same = sel.rfe_select(X, y, 12)
    assert sorted(same.indices) == list(range(12)) and same.eliminated == []


def test_bfe_identity_and_steps():
    X, y = label_plus_noise(5, n=60, d=10)
    assert sorted(sel.bfe_select(X, y, 10).indices) == list(range(10))
    r = sel.bfe_select(X, y, 6)
    assert len(r.eliminated) == 4 and len(set(r.indices)) == 6


def test_bfe_duplicated_column():
    rng = np.random.default_rng(8)
    y = np.r_[np.zeros(40, int), np.ones(40, int)]
    X = rng.normal(size=(80, 5))
    X[:, 0] += 2.5 * y
    X[:, 1] = X[:, 0]
    Xs = sel._standardize(X)
    folds = sel._stratified_folds(y, 3, 0)
    full = sel._masked_recall(Xs, y, np.ones((1, 5)), folds, 3)[0]
    r = sel.bfe_select(X, y, 2)
    # one copy is redundant, both copies are not
    assert (0 in r.indices) or (1 in r.indices)
    for j in (0, 1):
        if j in r.eliminated:
            assert r.scores[j] >= full - 0.02
            break


# -------------------------------------------------------- final selection

def cand(method, recall, t):
    return sel.FsCandidate(method, np.arange(10), np.zeros(92), recall, t, None)


def test_final_fs_select_examples():
    ms = list(sel.FsMethod)
    c = [cand(m, r, 100 - i) for i, (m, r) in enumerate(zip(ms, (0.99, 0.95, 0.90, 0.85, 0.80)))]
    assert sel.final_fs_select(c) is c[0]
    c = [cand(ms[0], 0.990, 10.0), cand(ms[1], 0.985, 2.0)]
    assert sel.final_fs_select(c) is c[1]
    assert sel.final_fs_select(c[:1]) is c[0]
    tie = [cand(ms[3], 0.9, 1.0), cand(ms[2], 0.9, 1.0)]
    assert sel.final_fs_select(tie) is tie[1]
    with pytest.raises(EmptyCandidates):
        sel.final_fs_select([])


@given(st.lists(st.tuples(st.floats(0, 1), st.floats(1e-6, 100)), min_size=1, max_size=5))
def test_final_fs_select_within_epsilon(pairs):
    c = [cand(m, r, t) for m, (r, t) in zip(sel.FsMethod, pairs)]
    w = sel.final_fs_select(c)
    assert w.recall >= max(x.recall for x in c) - 0.01 - 1e-12


# ---------------------------------------------------------------- AutoFS

SIGNAL = (7, 15, 23, 31, 44, 52, 60, 68, 76, 88)


@pytest.fixture(scope="module")
def autofs_case():
    reg = signal_regime(SIGNAL, delta=2.5)
    rng = np.random.default_rng(11)
    pool = reg.sample(1500, 1000, rng)
    window = reg.sample(600, 600, rng).features
    out = sel.run_autofs(window, pool, SIGNAL, seed=4)
    return window, pool, out


def test_run_autofs_synthetic(autofs_case):
    _, _, out = autofs_case
    assert len(out.sample_indices) == 1000 and len(set(out.sample_indices)) == 1000
    assert len(out.candidates) == 5 and not out.failures
    for c in out.candidates:
        assert c.recall >= 0.9, c.method
        assert len(set(int(i) for i in c.selected)) == 10 and c.detection_time > 0
    assert out.winner.recall >= max(c.recall for c in out.candidates) - 0.01
    assert out.labeled.features.shape == (2000, 10)


def test_run_autofs_deterministic(autofs_case):
    window, pool, out = autofs_case
    again = sel.run_autofs(window, pool, SIGNAL, seed=4)
    assert again.to_json() == out.to_json()


def test_run_autofs_needs_1000_rows():
    reg = signal_regime(SIGNAL)
    rng = np.random.default_rng(0)
    pool = reg.sample(800, 500, rng)
    with pytest.raises(DegenerateShape):
        sel.run_autofs(reg.sample(500, 499, rng).features, pool, SIGNAL, seed=0)


def test_outcome_json_shape(autofs_case):
    doc = autofs_case[2].to_json()
    assert doc["winner"] in {m.value for m in sel.FsMethod}
    assert [c["method"] for c in doc["candidates"]] == [m.value for m in sel.FsMethod]
    assert "wall_time" not in doc["candidates"][0]
