"""Probabilistic classifiers trained on (possibly corrected) data."""

from __future__ import annotations

import numpy as np

from ..datagen import Dataset
from .base import LEARNER_KINDS, LearnerError, LearnerSpec, TrainedModel, predict
from .boosting import gbt_default_grid, train_gbt
from .forest import rf_default_grid, rf_full_grid, train_rf
from .imbalance_ensembles import train_easyensemble, train_rusboost
from .logistic import fit_irls, train_lr
from .tuning import TuneResult, deviance, stratified_folds, tune_cv

__all__ = [
    "LEARNER_KINDS", "LearnerError", "LearnerSpec", "TrainedModel", "TuneResult",
    "default_learner_specs", "deviance", "fit_irls", "gbt_default_grid",
    "predict", "rf_default_grid", "rf_full_grid", "stratified_folds", "train",
    "train_easyensemble", "train_gbt", "train_lr", "train_rf", "train_rusboost",
    "tune_cv",
]


def default_learner_specs() -> list[LearnerSpec]:
    return [LearnerSpec(kind=kind) for kind in LEARNER_KINDS]


def train(spec: LearnerSpec, ds: Dataset, rng: np.random.Generator) -> TrainedModel:
    """Train the learner named by ``spec`` on ``ds``.

    Raises :class:`LearnerError` when training cannot proceed; every other
    anomaly (non-convergence, capped rounds, dropped subsets) is recorded
    in the returned diagnostics.
    """
    if spec.kind == "LR":
        return train_lr(ds)
    if spec.kind == "RF":
        return train_rf(ds, spec, rng)
    if spec.kind == "GBT":
        return train_gbt(ds, spec, rng)
    if spec.kind == "RUSBoost":
        return train_rusboost(ds, spec, rng)
    return train_easyensemble(ds, spec, rng)
