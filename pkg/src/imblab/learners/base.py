"""Shared learner types and the prediction entry point."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import numpy as np

LEARNER_KINDS = ("LR", "RF", "GBT", "RUSBoost", "EasyEnsemble")


class LearnerError(RuntimeError):
    """Training cannot proceed (e.g. single-class data)."""


@dataclass(frozen=True)
class LearnerSpec:
    """Which algorithm to train and how to tune it.

    ``tuning_grid`` of ``None`` means "use the per-kind default", resolved
    against the training data width at fit time (the forest's mtry range
    depends on it).
    """

    kind: str
    tuning_grid: dict | None = None
    fixed_params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in LEARNER_KINDS:
            raise ValueError(f"unknown learner kind {self.kind!r}")


@dataclass
class TrainedModel:
    """An immutable fitted learner: predictions depend only on (model, X)."""

    kind: str
    model: Any
    n_features: int
    diagnostics: dict = field(default_factory=dict)

    @property
    def warnings(self) -> list[str]:
        return self.diagnostics.get("warnings", [])


def predict(trained: TrainedModel, features: np.ndarray) -> np.ndarray:
    """Predicted risks in [0, 1] for each row of ``features``."""
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[1] != trained.n_features:
        raise ValueError(
            f"feature width {features.shape[1] if features.ndim == 2 else 'n/a'} "
            f"does not match training width {trained.n_features}")
    risks = trained.model.predict_risk(np.ascontiguousarray(features))
    return np.clip(risks, 0.0, 1.0)


def require_both_classes(outcome: np.ndarray, kind: str) -> None:
    n1 = int(outcome.sum())
    if n1 == 0 or n1 == outcome.shape[0]:
        raise LearnerError(f"{kind} training requires both classes in the data")
