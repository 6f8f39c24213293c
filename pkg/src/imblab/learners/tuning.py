"""Hyperparameter selection by stratified 5-fold cross-validated deviance."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from ..datagen import Dataset
from .base import LearnerError

RISK_EPS = 1e-10


def deviance(risks: np.ndarray, outcomes: np.ndarray) -> float:
    """-2 times the mean Bernoulli log-likelihood, risks clamped away from 0/1."""
    p = np.clip(risks, RISK_EPS, 1.0 - RISK_EPS)
    y = np.asarray(outcomes, dtype=np.float64)
    return float(-2.0 * np.mean(y * np.log(p) + (1.0 - y) * np.log(1.0 - p)))


def stratified_folds(outcome: np.ndarray, n_folds: int,
                     rng: np.random.Generator) -> np.ndarray:
    """Fold labels dealing shuffled events, then non-events, round-robin."""
    fold = np.empty(outcome.shape[0], dtype=np.int64)
    for label in (1, 0):
        idx = np.flatnonzero(outcome == label)
        idx = idx[rng.permutation(idx.size)]
        fold[idx] = np.arange(idx.size) % n_folds
    return fold


@dataclass
class TuneResult:
    params: dict
    grid: list[dict]
    mean_deviance: np.ndarray
    chosen_index: int
    warnings: list[str] = field(default_factory=list)


FitPredict = Callable[[Dataset, np.ndarray, dict, int], np.ndarray]


def tune_cv(ds: Dataset, grid: list[dict], fit_predict: FitPredict,
            rng: np.random.Generator, folds: int = 5) -> TuneResult:
    """Pick the grid point with the smallest mean held-out deviance.

    ``fit_predict(train, held_out_features, params, fold)`` returns risks
    for the held-out rows.  A fold whose training part cannot be fitted is
    dropped from that grid point's average; a held-out fold with a single
    class still contributes (its deviance is computable after clamping).
    Ties go to the earliest grid point; if every grid point fails on every
    fold the middle of the grid is returned with a warning.
    """
    if not grid:
        raise ValueError("empty tuning grid")
    fold_id = stratified_folds(ds.outcome, folds, rng)
    warnings: list[str] = []
    fold_dev = np.full((len(grid), folds), np.nan)
    for gi, params in enumerate(grid):
        for f in range(folds):
            held = fold_id == f
            if not held.any() or held.all():
                continue
            train = Dataset(ds.features[~held], ds.outcome[~held], ds.provenance)
            try:
                risks = fit_predict(train, ds.features[held], params, f)
            except LearnerError as exc:
                warnings.append(f"fold {f} failed for {params}: {exc}")
                continue
            fold_dev[gi, f] = deviance(risks, ds.outcome[held])
    ok = ~np.isnan(fold_dev)
    sums = np.where(ok, fold_dev, 0.0).sum(axis=1)
    counts = ok.sum(axis=1)
    mean_dev = np.where(counts > 0, sums / np.maximum(counts, 1), np.inf)
    if np.all(np.isinf(mean_dev)):
        chosen = len(grid) // 2
        warnings.append("all grid points failed on all folds; using grid midpoint")
    else:
        chosen = int(np.argmin(mean_dev))
    return TuneResult(params=grid[chosen], grid=grid, mean_deviance=mean_dev,
                      chosen_index=chosen, warnings=warnings)
