import numpy as np
import pytest

from coexec.errors import InsufficientData, ValidationError
from coexec.gbdt import GbdtHyper, GbdtModel, Target, train_gbdt


def toy_dataset(n=2000, d=6, seed=0):
    """Smooth nonlinear target over a few features, for fast training tests."""
    rng = np.random.default_rng(seed)
    X = rng.uniform(0.0, 1.0, size=(n, d))
    y = (np.sin(3.0 * X[:, 0]) + X[:, 1] ** 2 - 0.5 * X[:, 2]
         + 0.05 * rng.standard_normal(n))
    return X, y


def test_hyper_validation():
    with pytest.raises(ValidationError):
        GbdtHyper(trees=0)
    with pytest.raises(ValidationError):
        GbdtHyper(depth=0)
    with pytest.raises(ValidationError):
        GbdtHyper(learning_rate=0.0)
    with pytest.raises(ValidationError):
        GbdtHyper(learning_rate=1.5)
    with pytest.raises(ValidationError):
        GbdtHyper(subsample=0.0)
    with pytest.raises(ValidationError):
        GbdtHyper(min_leaf=0)


def test_insufficient_data():
    X = np.zeros((49, 3))
    y = np.zeros(49)
    with pytest.raises(InsufficientData):
        train_gbdt(X, y, Target.LOG_LATENCY, GbdtHyper(min_leaf=5))


def test_shape_validation():
    with pytest.raises(ValidationError):
        train_gbdt(np.zeros(100), np.zeros(100), Target.LOG_LATENCY)
    with pytest.raises(ValidationError):
        train_gbdt(np.zeros((100, 3)), np.zeros(99), Target.LOG_LATENCY)


def test_constant_target_predicts_mean():
    rng = np.random.default_rng(1)
    X = rng.uniform(size=(200, 4))
    y = np.full(200, 2.75)
    m = train_gbdt(X, y, Target.LOG_ENERGY, GbdtHyper(trees=10))
    assert m.base_score == pytest.approx(2.75)
    pred = m.predict(rng.uniform(size=(50, 4)))
    assert np.allclose(pred, 2.75)


def test_step_function_root_split():
    rng = np.random.default_rng(2)
    X = rng.uniform(0.0, 1.0, size=(1000, 1))
    y = (X[:, 0] > 0.5).astype(float)
    m = train_gbdt(X, y, Target.LOG_LATENCY,
                   GbdtHyper(trees=1, depth=1, learning_rate=1.0, subsample=1.0))
    root = m.trees[0]
    assert root.feature[0] == 0
    assert 0.45 < root.threshold[0] < 0.55
    pred = m.predict(np.array([[0.1], [0.9]]))
    assert pred[0] == pytest.approx(0.0, abs=1e-9)
    assert pred[1] == pytest.approx(1.0, abs=1e-9)


def test_min_leaf_bounds_leaf_sizes():
    # one extreme outlier: unconstrained splitting would isolate it, but
    # min_leaf forces at least 20 samples on each side of the root split
    rng = np.random.default_rng(3)
    X = np.sort(rng.uniform(size=(200, 1)), axis=0)
    y = np.zeros(200)
    y[-1] = 100.0
    m = train_gbdt(X, y, Target.LOG_LATENCY,
                   GbdtHyper(trees=1, depth=1, learning_rate=1.0, subsample=1.0,
                             min_leaf=20))
    pred = m.predict(X)
    _, counts = np.unique(pred, return_counts=True)
    assert counts.min() >= 20


def test_depth_bound():
    X, y = toy_dataset(n=500)
    m = train_gbdt(X, y, Target.LOG_LATENCY, GbdtHyper(trees=20, depth=3))
    assert all(t.max_path_len() <= 3 for t in m.trees)


def test_determinism_and_seed_sensitivity():
    X, y = toy_dataset(n=400)
    hyper = GbdtHyper(trees=15)
    a = train_gbdt(X, y, Target.LOG_LATENCY, hyper, seed=7)
    b = train_gbdt(X, y, Target.LOG_LATENCY, hyper, seed=7)
    c = train_gbdt(X, y, Target.LOG_LATENCY, hyper, seed=8)
    assert a == b
    assert a != c  # different subsamples must change at least one tree


def test_batch_predict_matches_predict_one():
    X, y = toy_dataset(n=300)
    m = train_gbdt(X, y, Target.LOG_ENERGY, GbdtHyper(trees=10))
    Xq = X[:20]
    batch = m.predict(Xq)
    singles = np.array([m.predict_one(row) for row in Xq])
    assert np.array_equal(batch, singles)


def test_training_reduces_mse():
    X, y = toy_dataset()
    m = train_gbdt(X, y, Target.LOG_LATENCY, GbdtHyper(trees=100))
    assert m.train_mse[-1] < 0.5 * m.train_mse[0]


def test_full_sample_boosting_is_monotone():
    # with subsample = 1 each tree's leaf means cannot increase training MSE
    X, y = toy_dataset(n=600)
    m = train_gbdt(X, y, Target.LOG_LATENCY,
                   GbdtHyper(trees=80, subsample=1.0), mse_every=10)
    diffs = np.diff(m.train_mse)
    assert np.all(diffs <= 1e-12)


def test_default_subsample_checkpoints_non_increasing():
    X, y = toy_dataset(n=2000)
    m = train_gbdt(X, y, Target.LOG_LATENCY, GbdtHyper(trees=100), mse_every=20)
    diffs = np.diff(m.train_mse)
    assert np.all(diffs <= 1e-9)


def test_model_equality_ignores_mse_log():
    X, y = toy_dataset(n=300)
    a = train_gbdt(X, y, Target.LOG_LATENCY, GbdtHyper(trees=5), mse_every=1)
    b = train_gbdt(X, y, Target.LOG_LATENCY, GbdtHyper(trees=5), mse_every=5)
    assert a.train_mse != b.train_mse
    assert a == b
