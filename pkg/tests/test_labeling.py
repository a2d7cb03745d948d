import numpy as np
import pytest
from hypothesis import given, strategies as st

from twinguard import labeling as lb
from twinguard.dataprep import Dataset
from twinguard.errors import DegenerateData, EmptyCluster, InsufficientPool
from twinguard.labels import DDOS, NOT_DDOS


def gmm_pool(rng, n_ddos, n_benign, d=10, delta=1.5):
    X = rng.standard_normal((n_ddos + n_benign, d))
    y = np.r_[np.full(n_ddos, DDOS), np.full(n_benign, NOT_DDOS)]
    X[y == DDOS] += delta
    X = 50.0 + 8.0 * X
    return Dataset(X, y, tuple(f"c{j}" for j in range(d)))


def agreement_up_to_swap(a, b):
    return max(np.mean(a == b), np.mean(a != b))


# ---------------------------------------------------------------- k-means

def test_kmeans_two_blobs():
    rng = np.random.default_rng(0)
    truth = np.r_[np.zeros(300, int), np.ones(200, int)]
    X = rng.normal(size=(500, 10)) + 12.0 * truth[:, None]
    for seed in range(5):
        assign, _ = lb.kmeans2(X, seed)
        assert agreement_up_to_swap(assign, truth) == 1.0


def test_kmeans_two_distinct_points():
    X = np.array([[0.0, 1.0]] * 5 + [[4.0, -2.0]] * 3)
    _, C = lb.kmeans2(X, 1)
    assert sorted(map(tuple, C)) == [(0.0, 1.0), (4.0, -2.0)]


def test_kmeans_degenerate():
    with pytest.raises(DegenerateData):
        lb.kmeans2(np.ones((10, 3)))


# ------------------------------------------------------------ initialisation

def test_init_from_kmeans():
    X = np.array([[0.0], [0.2], [5.0], [5.2], [4.8]])
    p = lb.init_from_kmeans(np.array([0, 0, 1, 1, 1]), np.array([[0.1], [5.0]]), X)
    np.testing.assert_allclose(p.weights, [0.4, 0.6])
    single = lb.init_from_kmeans(np.array([0, 1, 1, 1, 1]), np.array([[0.0], [3.8]]), X)
    assert single.variances[0, 0] == lb.VAR_FLOOR
    with pytest.raises(EmptyCluster):
        lb.init_from_kmeans(np.zeros(5, int), np.array([[0.0], [1.0]]), X)


def test_kmeans_init_converges_faster():
    ratios = []
    for seed in range(20):
        rng = np.random.default_rng(seed)
        X = gmm_pool(rng, 600, 400).features
        Xz = (X - X.mean(0)) / X.std(0)
        a, c = lb.kmeans2(Xz, seed)
        fast = lb.em_fit(Xz, lb.init_from_kmeans(a, c, Xz)).n_iter
        slow = lb.em_fit(Xz, lb.init_random(Xz, seed)).n_iter
        ratios.append(fast / slow)
    assert np.median(ratios) <= 0.5


# ---------------------------------------------------------------------- EM

def test_em_from_true_parameters():
    rng = np.random.default_rng(3)
    X = gmm_pool(rng, 650, 350, d=4, delta=3.0).features
    X = (X - 50.0) / 8.0
    truth = lb.GmmParams(np.array([0.35, 0.65]), np.vstack([np.zeros(4), np.full(4, 3.0)]), np.ones((2, 4)))
    res = lb.em_fit(X, truth)
    assert np.all(np.diff(res.log_likelihood) >= -1e-9)
    assert np.max(np.abs(res.params.means - truth.means)) < 0.1


@given(st.integers(0, 10_000))
def test_em_monotone_and_stochastic(seed):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(120, 3)) + rng.integers(0, 2, (120, 1)) * rng.uniform(0, 4)
    res = lb.em_fit(X, lb.init_random(X, seed), max_iter=50)
    ll = np.asarray(res.log_likelihood)
    steps = np.diff(ll)
    if res.restart_at is not None:
        steps = np.delete(steps, res.restart_at - 1)
    assert np.all(steps >= -1e-9)
    np.testing.assert_allclose(res.responsibilities.sum(axis=1), 1.0, atol=1e-9)
    assert np.all(res.params.variances >= lb.VAR_FLOOR)
    assert abs(res.params.weights.sum() - 1.0) < 1e-9


def test_gmm_params_validation():
    with pytest.raises(ValueError):
        lb.GmmParams(np.array([0.6, 0.6]), np.zeros((2, 1)), np.ones((2, 1)))
    with pytest.raises(ValueError):
        lb.GmmParams(np.array([0.5, 0.5]), np.zeros((2, 1)), np.zeros((2, 1)))


# ---------------------------------------------------------------- baseline

def test_make_baseline_counts_and_determinism():
    rng = np.random.default_rng(0)
    pool = gmm_pool(rng, 6000, 4000, d=20)
    feats = (1, 3, 5, 7, 9, 11, 13, 15, 17, 19)
    b = lb.make_baseline(pool, feats, seed=2)
    assert len(b) == 1000 and np.sum(b.labels == DDOS) == 650 and np.sum(b.labels == NOT_DDOS) == 350
    assert b.features.shape == (1000, 10) and np.all(np.isfinite(b.features))
    np.testing.assert_array_equal(b.features, pool.features[b.rows][:, list(feats)])
    assert np.array_equal(lb.make_baseline(pool, feats, seed=2).rows, b.rows)


def test_make_baseline_insufficient():
    rng = np.random.default_rng(0)
    with pytest.raises(InsufficientPool):
        lb.make_baseline(gmm_pool(rng, 649, 2000), range(10), 0)


# ---------------------------------------------------------------- ensemble

def labeling_case(seed, n_window_ddos=600):
    rng = np.random.default_rng(seed)
    pool = gmm_pool(rng, 3000, 2000)
    base = lb.make_baseline(pool, range(10), seed)
    win = gmm_pool(rng, n_window_ddos, 1000 - n_window_ddos)
    return win, base


def test_run_labeling_accuracy_and_shape():
    for seed in range(3):
        win, base = labeling_case(seed)
        out = lb.run_labeling(win.features, base, seed)
        assert out.features.shape == (2000, 10)
        assert np.sum(out.window_mask) == 1000 and np.sum(~out.window_mask) == 1000
        assert np.mean(out.labels[:1000] == win.labels) >= 0.95
        assert np.array_equal(out.labels[1000:], base.labels)


def test_run_labeling_copies_of_ddos_mean():
    _, base = labeling_case(0)
    mean = base.features[base.labels == DDOS].mean(axis=0)
    out = lb.run_labeling(np.tile(mean, (1000, 1)), base, 0)
    assert np.all(out.labels[:1000] == DDOS)


def test_run_labeling_single_regime_window():
    win, base = labeling_case(1, n_window_ddos=0)
    out = lb.run_labeling(win.features, base, 1)
    assert np.mean(out.labels[:1000] == NOT_DDOS) >= 0.95


def test_run_labeling_shape_errors(tmp_path):
    win, base = labeling_case(0)
    with pytest.raises(ValueError):
        lb.run_labeling(win.features[:999], base, 0)
    with pytest.raises(ValueError):
        lb.run_labeling(win.features[:, :9], base, 0)
    out = lb.run_labeling(win.features, base, 0)
    out.to_csv(tmp_path / "l.csv")
    lines = (tmp_path / "l.csv").read_text().splitlines()
    assert len(lines) == 2001 and lines[0].endswith("label,provenance")


def test_align_components():
    flags = set()
    p = lb.GmmParams(np.array([0.5, 0.5]), np.array([[3.0, 3.0], [0.0, 0.0]]), np.ones((2, 2)))
    assert list(lb.align_components(p, np.array([3.0, 3.0]), np.zeros(2), flags, "t")) == [1, 0]
    same = lb.GmmParams(np.array([0.5, 0.5]), np.array([[3.0, 3.0], [2.5, 2.0]]), np.ones((2, 2)))
    assert list(lb.align_components(same, np.array([3.0, 3.0]), np.zeros(2), flags, "t")) == [1, 1]
    assert "t:single_regime_ddos" in flags


@given(st.lists(st.floats(0, 1), min_size=1, max_size=30), st.data())
def test_fuse_symmetric_and_monotone(r1, data):
    r1 = np.array(r1)
    r2 = np.array(data.draw(st.lists(st.floats(0, 1), min_size=r1.size, max_size=r1.size)))
    bump = np.array(data.draw(st.lists(st.floats(0, 1), min_size=r1.size, max_size=r1.size)))
    a = lb.fuse(r1, r2)
    assert np.array_equal(a, lb.fuse(r2, r1))
    up = lb.fuse(np.minimum(r1 + bump, 1.0), r2)
    assert np.all(up[a == DDOS] == DDOS)
    assert lb.fuse([0.5], [0.5])[0] == DDOS
