"""Gradient boosting on the logistic loss with depth-limited trees.

Newton-style boosting: each round fits a regression tree to the current
gradients/hessians, leaf values are second-order steps, and predictions
are the sigmoid of the accumulated score plus a base score at the logit
of the training event fraction.  (depth, rounds, learning rate) come from
a fixed grid tuned by cross-validated deviance; fits for the largest
round count are reused for the smaller counts, which truncation makes
exact.
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit, logit

from ..datagen import Dataset
from .base import LearnerSpec, TrainedModel, require_both_classes
from .trees import grow_newton_tree, predict_forest, predict_tree
from .tuning import RISK_EPS, tune_cv

DEFAULT_DEPTHS = (1, 2, 3)
DEFAULT_ROUNDS = (50, 100, 150)
DEFAULT_LEARNING_RATES = (0.1, 0.3)


def gbt_default_grid() -> list[dict]:
    return [{"depth": d, "rounds": r, "learning_rate": lr}
            for d in DEFAULT_DEPTHS for r in DEFAULT_ROUNDS
            for lr in DEFAULT_LEARNING_RATES]


class BoostedModel:
    """Flat-packed boosting trees plus base score and learning rate."""

    def __init__(self, trees: list[tuple], base_score: float, learning_rate: float):
        self.base_score = base_score
        self.learning_rate = learning_rate
        self.offsets = np.zeros(len(trees) + 1, dtype=np.int64)
        for t, arrays in enumerate(trees):
            self.offsets[t + 1] = self.offsets[t] + arrays[0].shape[0]
        if trees:
            self.feature = np.concatenate([a[0] for a in trees])
            self.threshold = np.concatenate([a[1] for a in trees])
            self.left = np.concatenate([a[2] for a in trees])
            self.right = np.concatenate([a[3] for a in trees])
            self.value = np.concatenate([a[4] for a in trees])

    @property
    def n_trees(self) -> int:
        return self.offsets.shape[0] - 1

    def predict_risk(self, X: np.ndarray) -> np.ndarray:
        score = np.full(X.shape[0], self.base_score)
        if self.n_trees:
            mean_leaf = predict_forest(self.feature, self.threshold, self.left,
                                       self.right, self.value, self.offsets, X)
            score += self.learning_rate * mean_leaf * self.n_trees
        return expit(score)


def _log_loss(score: np.ndarray, y: np.ndarray) -> float:
    p = np.clip(expit(score), RISK_EPS, 1.0 - RISK_EPS)
    return float(-np.mean(y * np.log(p) + (1.0 - y) * np.log(1.0 - p)))


def _fit_gbt(X: np.ndarray, y: np.ndarray, depth: int, rounds: int,
             learning_rate: float, val_X: np.ndarray | None = None,
             checkpoints: tuple[int, ...] = ()) -> tuple[BoostedModel, list[float], dict]:
    """Boost ``rounds`` rounds; optionally record validation risks at checkpoints."""
    phi = float(np.clip(y.mean(), RISK_EPS, 1.0 - RISK_EPS))
    base = float(logit(phi))
    score = np.full(X.shape[0], base)
    val_score = None if val_X is None else np.full(val_X.shape[0], base)
    trees: list[tuple] = []
    loss_trace = [_log_loss(score, y)]
    checkpoint_risks: dict[int, np.ndarray] = {}
    if val_score is not None and 0 in checkpoints:
        checkpoint_risks[0] = expit(val_score).copy()
    for t in range(rounds):
        prob = expit(score)
        g = prob - y
        h = prob * (1.0 - prob)
        tree = grow_newton_tree(X, g, h, depth)
        score += learning_rate * predict_tree(*tree, X)
        trees.append(tree)
        loss_trace.append(_log_loss(score, y))
        if val_score is not None:
            val_score += learning_rate * predict_tree(*tree, val_X)
            if t + 1 in checkpoints:
                checkpoint_risks[t + 1] = expit(val_score).copy()
    return BoostedModel(trees, base, learning_rate), loss_trace, checkpoint_risks


def train_gbt(ds: Dataset, spec: LearnerSpec, rng: np.random.Generator) -> TrainedModel:
    require_both_classes(ds.outcome, "GBT")
    grid = spec.tuning_grid if spec.tuning_grid is not None else gbt_default_grid()
    X = np.ascontiguousarray(ds.features, dtype=np.float64)
    y = ds.outcome.astype(np.float64)

    round_counts = tuple(sorted({params["rounds"] for params in grid}))
    max_rounds = max(round_counts)
    cache: dict[tuple, dict[int, np.ndarray]] = {}

    def fit_predict(train: Dataset, held_X: np.ndarray, params: dict, fold: int):
        key = (fold, params["depth"], params["learning_rate"])
        if key not in cache:
            _, _, risks = _fit_gbt(np.ascontiguousarray(train.features),
                                   train.outcome.astype(np.float64),
                                   params["depth"], max_rounds,
                                   params["learning_rate"],
                                   val_X=np.ascontiguousarray(held_X),
                                   checkpoints=round_counts)
            cache[key] = risks
        return cache[key][params["rounds"]]

    tune = tune_cv(ds, grid, fit_predict, rng)
    chosen = tune.params
    model, loss_trace, _ = _fit_gbt(X, y, chosen["depth"], chosen["rounds"],
                                    chosen["learning_rate"])
    diagnostics = {
        "chosen": dict(chosen),
        "cv_mean_deviance": tune.mean_deviance.tolist(),
        "loss_trace": loss_trace,
        "warnings": list(tune.warnings),
    }
    return TrainedModel(kind="GBT", model=model,
                        n_features=ds.features.shape[1], diagnostics=diagnostics)
