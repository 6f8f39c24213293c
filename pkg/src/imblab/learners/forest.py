"""Random forest of probability trees.

Bootstrap trees split on Gini impurity over ``mtry`` sampled candidate
features; leaves store event fractions and the forest's predicted risk is
their mean.  ``(mtry, min_node_size)`` are chosen by cross-validated
deviance.
"""

from __future__ import annotations

import numpy as np

from ..datagen import Dataset
from .base import LearnerSpec, TrainedModel, require_both_classes
from .trees import NO_DEPTH_LIMIT, grow_gini_tree, predict_forest
from .tuning import tune_cv

DEFAULT_N_TREES = 500
DEFAULT_TUNING_TREES = 30


def rf_default_grid(p: int) -> list[dict]:
    """Spanning subset of the full mtry x min_node_size grid.

    mtry covers [1, p] at quartile spacing and min_node_size covers
    [1, 10]; pass ``rf_full_grid`` for the exhaustive integer product.
    """
    mtrys = sorted({1, max(1, round(p / 4)), max(1, round(p / 2)),
                    max(1, round(3 * p / 4)), p})
    sizes = [1, 4, 7, 10]
    return [{"mtry": m, "min_node_size": s} for m in mtrys for s in sizes]


def rf_full_grid(p: int) -> list[dict]:
    return [{"mtry": m, "min_node_size": s}
            for m in range(1, p + 1) for s in range(1, 11)]


class ForestModel:
    """Flat-packed trees; prediction averages leaf event fractions."""

    def __init__(self, trees: list[tuple]):
        self.offsets = np.zeros(len(trees) + 1, dtype=np.int64)
        for t, arrays in enumerate(trees):
            self.offsets[t + 1] = self.offsets[t] + arrays[0].shape[0]
        self.feature = np.concatenate([a[0] for a in trees])
        self.threshold = np.concatenate([a[1] for a in trees])
        self.left = np.concatenate([a[2] for a in trees])
        self.right = np.concatenate([a[3] for a in trees])
        self.value = np.concatenate([a[4] for a in trees])

    @property
    def n_trees(self) -> int:
        return self.offsets.shape[0] - 1

    def predict_risk(self, X: np.ndarray) -> np.ndarray:
        return predict_forest(self.feature, self.threshold, self.left,
                              self.right, self.value, self.offsets, X)


def _fit_forest(X: np.ndarray, y: np.ndarray, n_trees: int, mtry: int,
                min_node_size: int, rng: np.random.Generator) -> ForestModel:
    n = X.shape[0]
    ones = np.ones(n)
    trees = []
    for _ in range(n_trees):
        boot = rng.integers(0, n, size=n)
        seed = int(rng.integers(0, 2**31 - 1))
        trees.append(grow_gini_tree(np.ascontiguousarray(X[boot]), y[boot], ones,
                                    mtry, min_node_size, NO_DEPTH_LIMIT, seed))
    return ForestModel(trees)


def train_rf(ds: Dataset, spec: LearnerSpec, rng: np.random.Generator) -> TrainedModel:
    require_both_classes(ds.outcome, "RF")
    p = ds.features.shape[1]
    grid = spec.tuning_grid if spec.tuning_grid is not None else rf_default_grid(p)
    n_trees = spec.fixed_params.get("n_trees", DEFAULT_N_TREES)
    tuning_trees = spec.fixed_params.get("tuning_trees", DEFAULT_TUNING_TREES)

    X = np.ascontiguousarray(ds.features, dtype=np.float64)
    y = ds.outcome.astype(np.float64)

    def fit_predict(train: Dataset, held_X: np.ndarray, params: dict, fold: int):
        model = _fit_forest(np.ascontiguousarray(train.features),
                            train.outcome.astype(np.float64),
                            tuning_trees, params["mtry"], params["min_node_size"], rng)
        return model.predict_risk(np.ascontiguousarray(held_X))

    tune = tune_cv(ds, grid, fit_predict, rng)
    model = _fit_forest(X, y, n_trees, tune.params["mtry"],
                        tune.params["min_node_size"], rng)
    diagnostics = {
        "chosen": dict(tune.params),
        "cv_mean_deviance": tune.mean_deviance.tolist(),
        "warnings": list(tune.warnings),
    }
    return TrainedModel(kind="RF", model=model, n_features=p, diagnostics=diagnostics)
