"""Maximum-likelihood logistic regression via iteratively reweighted
least squares.

The same solver backs the logistic learner and the calibration
intercept/slope fits: an optional per-row offset enters the linear
predictor, which is exactly the structure of the offset-logistic
calibration models.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from ..datagen import Dataset
from .base import TrainedModel, require_both_classes

SEPARATION_ETA = 30.0


@dataclass
class IRLSFit:
    coef: np.ndarray          # intercept first
    converged: bool
    n_iter: int
    separated: bool
    warnings: list[str]


def fit_irls(X: np.ndarray, y: np.ndarray, offset: np.ndarray | None = None,
             tol: float = 1e-8, max_iter: int = 25) -> IRLSFit:
    """Fit ``logit P(y=1) = b0 + X b + offset`` by Newton steps.

    Stops when the largest coefficient change drops below ``tol``.
    Non-convergence and detected separation (|linear predictor| above 30
    at the optimum) are reported as warnings, not errors.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n = y.shape[0]
    design = np.hstack([np.ones((n, 1)), X])
    if offset is None:
        offset = np.zeros(n)
    beta = np.zeros(design.shape[1])
    warnings: list[str] = []
    converged = False
    n_iter = 0
    for n_iter in range(1, max_iter + 1):
        eta = design @ beta + offset
        prob = expit(eta)
        weight = np.clip(prob * (1.0 - prob), 1e-12, None)
        hessian = design.T @ (design * weight[:, None])
        score = design.T @ (y - prob)
        try:
            delta = np.linalg.solve(hessian, score)
        except np.linalg.LinAlgError:
            hessian += 1e-10 * np.eye(hessian.shape[0])
            delta = np.linalg.solve(hessian, score)
            warnings.append("singular information matrix; ridge-stabilised step")
        beta += delta
        if np.max(np.abs(delta)) < tol:
            converged = True
            break
    if not converged:
        warnings.append(f"IRLS did not converge in {max_iter} iterations")
    eta = design @ beta + offset
    # A stalled fit whose residuals are numerically zero is running off to
    # the infinite MLE even before |eta| crosses the hard threshold.
    saturated = not converged and float(np.max(np.abs(y - expit(eta)))) < 1e-6
    separated = bool(np.max(np.abs(eta)) > SEPARATION_ETA) or saturated
    if separated:
        warnings.append("separation suspected: fitted probabilities saturated")
    return IRLSFit(coef=beta, converged=converged, n_iter=n_iter,
                   separated=separated, warnings=warnings)


class LogisticModel:
    def __init__(self, coef: np.ndarray):
        self.coef = coef

    def predict_risk(self, X: np.ndarray) -> np.ndarray:
        return expit(self.coef[0] + X @ self.coef[1:])


def train_lr(ds: Dataset) -> TrainedModel:
    """Logistic regression with intercept on all predictors."""
    require_both_classes(ds.outcome, "LR")
    fit = fit_irls(ds.features, ds.outcome)
    diagnostics = {
        "converged": fit.converged,
        "n_iter": fit.n_iter,
        "separated": fit.separated,
        "warnings": list(fit.warnings),
    }
    return TrainedModel(kind="LR", model=LogisticModel(fit.coef),
                        n_features=ds.features.shape[1], diagnostics=diagnostics)
