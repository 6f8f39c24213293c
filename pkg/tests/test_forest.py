import numpy as np
import pytest

from imblab.datagen import Dataset
from imblab.learners import LearnerError, LearnerSpec, predict, train_rf
from imblab.learners.forest import rf_default_grid, rf_full_grid, _fit_forest
from imblab.learners.trees import NO_DEPTH_LIMIT, grow_gini_tree
from imblab.rng import derive_rng


def _walk_tree(arrays, x):
    """Recursive pure-Python traversal, independent of the compiled path."""
    feature, threshold, left, right, value = arrays
    def go(node):
        if feature[node] < 0:
            return value[node]
        if x[feature[node]] <= threshold[node]:
            return go(left[node])
        return go(right[node])
    return go(0)


def _node_rows(arrays, X):
    """Training rows reaching each node, recomputed outside the kernel."""
    feature, threshold, left, right, _ = arrays
    rows = {0: list(range(X.shape[0]))}
    for node in range(feature.shape[0]):
        if feature[node] < 0:
            continue
        lrows, rrows = [], []
        for i in rows[node]:
            (lrows if X[i, feature[node]] <= threshold[node] else rrows).append(i)
        rows[left[node]] = lrows
        rows[right[node]] = rrows
    return rows


def _gini(y, rows):
    if not rows:
        return 0.0
    p = float(np.mean([y[i] for i in rows]))
    return 2.0 * p * (1.0 - p)


def _fixture(n=200, p=5, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, p))
    y = (X[:, 0] + 0.5 * X[:, 1] + rng.standard_normal(n) > 0.5).astype(np.int64)
    return Dataset(X, y)


def test_single_tree_matches_python_traversal_oracle():
    ds = _fixture()
    tree = grow_gini_tree(ds.features, ds.outcome.astype(float),
                          np.ones(ds.n), 3, 5, NO_DEPTH_LIMIT, 42)
    from imblab.learners.trees import predict_tree
    fast = predict_tree(*tree, ds.features)
    slow = np.array([_walk_tree(tree, x) for x in ds.features])
    assert np.array_equal(fast, slow)


def test_every_split_strictly_reduces_weighted_gini():
    ds = _fixture(seed=1)
    y = ds.outcome.astype(float)
    tree = grow_gini_tree(ds.features, y, np.ones(ds.n), 3, 4, NO_DEPTH_LIMIT, 7)
    feature, threshold, left, right, value = tree
    rows = _node_rows(tree, ds.features)
    for node in range(feature.shape[0]):
        if feature[node] < 0:
            continue
        parent = len(rows[node]) * _gini(y, rows[node])
        child = (len(rows[left[node]]) * _gini(y, rows[left[node]])
                 + len(rows[right[node]]) * _gini(y, rows[right[node]]))
        assert child < parent - 1e-12


def test_min_node_size_respected_in_every_leaf():
    ds = _fixture(seed=2)
    for mns in (1, 4, 10):
        tree = grow_gini_tree(ds.features, ds.outcome.astype(float),
                              np.ones(ds.n), 5, mns, NO_DEPTH_LIMIT, 3)
        rows = _node_rows(tree, ds.features)
        feature = tree[0]
        for node in range(feature.shape[0]):
            if feature[node] < 0:
                assert len(rows[node]) >= mns


def test_separable_training_data_is_memorised_with_unit_leaves():
    rng = np.random.default_rng(3)
    X = np.vstack([rng.normal(-4, 0.5, (30, 2)), rng.normal(4, 0.5, (30, 2))])
    y = np.array([0] * 30 + [1] * 30, dtype=np.int64)
    ds = Dataset(X, y)
    spec = LearnerSpec(kind="RF", tuning_grid=[{"mtry": 2, "min_node_size": 1}],
                       fixed_params={"n_trees": 25, "tuning_trees": 5})
    model = train_rf(ds, spec, derive_rng((1,), 0))
    risks = predict(model, X)
    assert set(np.round(risks, 12)) <= {0.0, 1.0}


def test_forest_prediction_is_mean_of_tree_walks():
    ds = _fixture(n=80, seed=4)
    forest = _fit_forest(ds.features, ds.outcome.astype(float), 12, 2, 3,
                         derive_rng((2,), 0))
    Xq = np.random.default_rng(5).standard_normal((9, 5))
    fast = forest.predict_risk(Xq)
    per_tree = np.zeros((forest.n_trees, 9))
    for t in range(forest.n_trees):
        sl = slice(forest.offsets[t], forest.offsets[t + 1])
        # child links are tree-relative, so the slice is self-contained
        arrays = (forest.feature[sl], forest.threshold[sl], forest.left[sl],
                  forest.right[sl], forest.value[sl])
        per_tree[t] = [_walk_tree(arrays, x) for x in Xq]
    assert np.max(np.abs(fast - per_tree.mean(axis=0))) < 1e-12
    assert np.all(fast >= 0.0) and np.all(fast <= 1.0)


def test_grid_respects_mtry_bounds_and_tree_features_are_valid():
    for p in (8, 16):
        for point in rf_default_grid(p):
            assert 1 <= point["mtry"] <= p
            assert 1 <= point["min_node_size"] <= 10
        assert len(rf_full_grid(p)) == 10 * p
    ds = _fixture(n=100, p=8, seed=6)
    tree = grow_gini_tree(ds.features, ds.outcome.astype(float), np.ones(ds.n),
                          8, 1, NO_DEPTH_LIMIT, 11)
    internal = tree[0][tree[0] >= 0]
    assert internal.size == 0 or (internal.min() >= 0 and internal.max() < 8)


def test_rf_training_is_deterministic_given_seed():
    ds = _fixture(n=120, seed=7)
    spec = LearnerSpec(kind="RF", tuning_grid=[{"mtry": 2, "min_node_size": 2}],
                       fixed_params={"n_trees": 20, "tuning_trees": 5})
    a = train_rf(ds, spec, derive_rng((8,), 1))
    b = train_rf(ds, spec, derive_rng((8,), 1))
    Xq = np.random.default_rng(9).standard_normal((20, 5))
    assert np.array_equal(predict(a, Xq), predict(b, Xq))


def test_rf_single_class_is_a_training_error():
    ds = Dataset(np.random.default_rng(0).standard_normal((20, 3)),
                 np.ones(20, dtype=np.int64))
    with pytest.raises(LearnerError):
        train_rf(ds, LearnerSpec(kind="RF"), derive_rng((1,), 1))
