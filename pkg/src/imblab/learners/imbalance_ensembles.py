"""Boosting and bagging ensembles that undersample internally.

Both learners share a discrete AdaBoost core with tree weak learners.
The RUS-boosted variant rebalances the weighted sample before every
round; the bagged variant trains independent AdaBoost ensembles on
balanced subsets and averages their normalised scores.  Scores map to
risks through a bounded sigmoid of the normalised margin, so predicted
risks stay deliberately moderate.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import expit

from ..datagen import Dataset
from .base import LearnerError, LearnerSpec, TrainedModel, require_both_classes
from .trees import grow_gini_tree, predict_tree

DEFAULT_ROUNDS = 10
DEFAULT_SUBSETS = 10
RUSBOOST_TREE_DEPTH = 2
EASYENSEMBLE_TREE_DEPTH = 1
MAX_RETRIES = 5
_EPS = 1e-10


def _balanced_subset(outcome: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """All minority rows plus an equal-size draw of majority rows."""
    idx1 = np.flatnonzero(outcome == 1)
    idx0 = np.flatnonzero(outcome == 0)
    minority, majority = (idx1, idx0) if idx1.size <= idx0.size else (idx0, idx1)
    drawn = rng.choice(majority, size=minority.size, replace=False)
    return np.concatenate([minority, drawn])


def _fit_adaboost(X: np.ndarray, y: np.ndarray, rounds: int, depth: int,
                  rng: np.random.Generator, rus_each_round: bool
                  ) -> tuple[list[tuple], list[float], list[str]]:
    """Discrete AdaBoost with tree weak learners.

    Weighted error is always measured on the full input.  A perfect round
    (error 0) is kept with a capped vote and stops the loop; a useless
    round (error >= 0.5) resets the weights and retries, giving up with a
    warning after ``MAX_RETRIES`` attempts.
    """
    n, p = X.shape
    y_pm = 2.0 * y - 1.0
    w = np.full(n, 1.0 / n)
    trees: list[tuple] = []
    alphas: list[float] = []
    notes: list[str] = []
    retries = 0
    while len(trees) < rounds:
        if rus_each_round:
            keep = _balanced_subset(y.astype(np.int64), rng)
        else:
            keep = np.arange(n)
        seed = int(rng.integers(0, 2**31 - 1))
        w_keep = w[keep] / w[keep].sum()
        tree = grow_gini_tree(np.ascontiguousarray(X[keep]), y[keep], w_keep,
                              p, 1, depth, seed)
        h = np.where(predict_tree(*tree, X) >= 0.5, 1.0, -1.0)
        eps = float(w[h != y_pm].sum())
        if eps >= 0.5:
            retries += 1
            if retries > MAX_RETRIES:
                notes.append(f"stopped after round {len(trees)}: "
                             f"weak-learner error stayed >= 0.5")
                break
            w = np.full(n, 1.0 / n)
            continue
        eps_c = max(eps, _EPS)
        alpha = 0.5 * math.log((1.0 - eps_c) / eps_c)
        trees.append(tree)
        alphas.append(alpha)
        if eps <= 0.0:
            break
        w = w * np.exp(-alpha * y_pm * h)
        w /= w.sum()
    return trees, alphas, notes


def _margin(trees: list[tuple], alphas: list[float], X: np.ndarray) -> np.ndarray:
    """Normalised vote in [-1, 1]: sum(alpha_t h_t(x)) / sum(alpha_t)."""
    total = np.zeros(X.shape[0])
    for tree, alpha in zip(trees, alphas):
        total += alpha * np.where(predict_tree(*tree, X) >= 0.5, 1.0, -1.0)
    return total / sum(alphas)


class RusBoostModel:
    def __init__(self, trees: list[tuple], alphas: list[float]):
        self.trees = trees
        self.alphas = alphas

    def predict_risk(self, X: np.ndarray) -> np.ndarray:
        if not self.trees:
            return np.full(X.shape[0], 0.5)
        return expit(2.0 * _margin(self.trees, self.alphas, X))


class EasyEnsembleModel:
    def __init__(self, ensembles: list[tuple[list[tuple], list[float]]]):
        self.ensembles = ensembles

    def predict_risk(self, X: np.ndarray) -> np.ndarray:
        margins = np.zeros(X.shape[0])
        for trees, alphas in self.ensembles:
            margins += _margin(trees, alphas, X)
        return expit(margins / len(self.ensembles))


def train_rusboost(ds: Dataset, spec: LearnerSpec,
                   rng: np.random.Generator) -> TrainedModel:
    require_both_classes(ds.outcome, "RUSBoost")
    rounds = spec.fixed_params.get("rounds", DEFAULT_ROUNDS)
    depth = spec.fixed_params.get("tree_depth", RUSBOOST_TREE_DEPTH)
    X = np.ascontiguousarray(ds.features, dtype=np.float64)
    y = ds.outcome.astype(np.float64)
    trees, alphas, notes = _fit_adaboost(X, y, rounds, depth, rng,
                                         rus_each_round=True)
    if not trees:
        notes.append("no usable boosting rounds; constant 0.5 prediction")
    diagnostics = {"rounds_kept": len(trees), "warnings": notes}
    return TrainedModel(kind="RUSBoost", model=RusBoostModel(trees, alphas),
                        n_features=ds.features.shape[1], diagnostics=diagnostics)


def train_easyensemble(ds: Dataset, spec: LearnerSpec,
                       rng: np.random.Generator) -> TrainedModel:
    require_both_classes(ds.outcome, "EasyEnsemble")
    subsets = spec.fixed_params.get("subsets", DEFAULT_SUBSETS)
    rounds = spec.fixed_params.get("rounds", DEFAULT_ROUNDS)
    depth = spec.fixed_params.get("tree_depth", EASYENSEMBLE_TREE_DEPTH)
    X = np.ascontiguousarray(ds.features, dtype=np.float64)
    y = ds.outcome.astype(np.float64)
    ensembles = []
    notes: list[str] = []
    for s in range(subsets):
        subset = _balanced_subset(ds.outcome, rng)
        trees, alphas, sub_notes = _fit_adaboost(
            np.ascontiguousarray(X[subset]), y[subset], rounds, depth, rng,
            rus_each_round=False)
        notes.extend(f"subset {s}: {note}" for note in sub_notes)
        if trees:
            ensembles.append((trees, alphas))
        else:
            notes.append(f"subset {s} dropped: no usable rounds")
    if not ensembles:
        raise LearnerError("EasyEnsemble: every subset failed to boost")
    diagnostics = {"subsets_kept": len(ensembles), "warnings": notes}
    return TrainedModel(kind="EasyEnsemble", model=EasyEnsembleModel(ensembles),
                        n_features=ds.features.shape[1], diagnostics=diagnostics)
