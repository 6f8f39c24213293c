"""Out-of-sample performance measures for predicted risks.

Concordance, Brier score, calibration intercept and slope (offset /
two-parameter logistic fits on the logit of the predictions), the
intercept-only logistic recalibration, and loess flexible calibration
curves.  All computations are pure; undefined cases are flagged, never
guessed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit, logit
from scipy.stats import rankdata

from .learners.logistic import fit_irls

RISK_EPS = 1e-10
SLOPE_REPORT_CAP = 10.0

METRIC_NAMES = ("c", "brier", "cal_intercept", "cal_slope")


class MetricUndefined(ValueError):
    """The requested measure does not exist for these inputs."""


@dataclass
class PredictionRecord:
    """Validation outcomes and predictions for one (correction, learner) cell."""

    outcomes: np.ndarray | None
    risks_raw: np.ndarray | None
    risks_recalibrated: np.ndarray | None
    scenario_id: int
    iteration: int
    correction: str
    learner: str
    missing: bool = False

    def __post_init__(self):
        if self.missing:
            if self.risks_raw is not None or self.risks_recalibrated is not None:
                raise ValueError("missing records carry no risk vectors")
            return
        if self.outcomes is None or self.risks_raw is None:
            raise ValueError("non-missing records need outcomes and raw risks")
        if self.outcomes.shape != self.risks_raw.shape:
            raise ValueError("outcomes and risks must have equal length")


@dataclass
class MetricSet:
    """One cell's measures; ``None`` entries are undefined (flagged)."""

    c: float | None
    brier: float | None
    cal_intercept: float | None
    cal_slope: float | None
    degenerate_flags: set[str] = field(default_factory=set)

    def as_dict(self) -> dict:
        return {"c": self.c, "brier": self.brier,
                "cal_intercept": self.cal_intercept, "cal_slope": self.cal_slope}


@dataclass
class CurvePoints:
    grid: np.ndarray
    fitted: np.ndarray
    span: float
    degree: int
    notes: list[str] = field(default_factory=list)


@dataclass
class RecalibrationResult:
    beta0: float
    risks: np.ndarray


def _clamped_logit(risks: np.ndarray) -> np.ndarray:
    return logit(np.clip(risks, RISK_EPS, 1.0 - RISK_EPS))


def _check_both_classes(outcomes: np.ndarray) -> None:
    n1 = int(outcomes.sum())
    if n1 == 0 or n1 == outcomes.shape[0]:
        raise MetricUndefined("both an event and a non-event are required")


def concordance(risks: np.ndarray, outcomes: np.ndarray) -> float:
    """Probability that a random event outranks a random non-event.

    Mann-Whitney estimator via rank sums (ties count one half), identical
    to the area under the ROC curve.
    """
    outcomes = np.asarray(outcomes)
    _check_both_classes(outcomes)
    ranks = rankdata(risks, method="average")
    n1 = int(outcomes.sum())
    n0 = outcomes.shape[0] - n1
    rank_sum = float(ranks[outcomes == 1].sum())
    return (rank_sum - n1 * (n1 + 1) / 2.0) / (n1 * n0)


def brier(risks: np.ndarray, outcomes: np.ndarray) -> float:
    """Mean squared difference between predicted risk and outcome."""
    risks = np.asarray(risks, dtype=np.float64)
    outcomes = np.asarray(outcomes, dtype=np.float64)
    if risks.shape[0] == 0:
        raise MetricUndefined("empty input")
    return float(np.mean((risks - outcomes) ** 2))


def calibration_intercept(risks: np.ndarray, outcomes: np.ndarray) -> float:
    """MLE intercept of ``logit P(Y=1) = a + offset(logit p)``.

    Negative values mean the risks over-estimate on average.
    """
    outcomes = np.asarray(outcomes)
    _check_both_classes(outcomes)
    offset = _clamped_logit(np.asarray(risks, dtype=np.float64))
    fit = fit_irls(np.empty((outcomes.shape[0], 0)), outcomes, offset=offset,
                   tol=1e-12, max_iter=100)
    if not fit.converged:
        raise MetricUndefined("calibration intercept fit did not converge")
    return float(fit.coef[0])


def calibration_slope(risks: np.ndarray, outcomes: np.ndarray) -> float:
    """MLE slope of ``logit P(Y=1) = a + b * logit(p)``.

    Values above 1 mean the risks are too moderate, below 1 too extreme.
    Raw values are returned; displays cap at ``SLOPE_REPORT_CAP``.
    """
    outcomes = np.asarray(outcomes)
    _check_both_classes(outcomes)
    logits = _clamped_logit(np.asarray(risks, dtype=np.float64))
    if np.ptp(logits) == 0.0:
        raise MetricUndefined("calibration slope is undefined for constant risks")
    fit = fit_irls(logits[:, None], outcomes, tol=1e-12, max_iter=100)
    return float(fit.coef[1])


def cap_slope_for_report(slope: float) -> float:
    return min(slope, SLOPE_REPORT_CAP)


def recalibrate(risks: np.ndarray, outcomes: np.ndarray) -> RecalibrationResult:
    """Shift all predicted logits by the fitted calibration intercept.

    The output's calibration intercept is zero by construction, while the
    two-parameter calibration slope is left untouched by the shift.
    """
    beta0 = calibration_intercept(risks, outcomes)
    shifted = expit(beta0 + _clamped_logit(np.asarray(risks, dtype=np.float64)))
    return RecalibrationResult(beta0=beta0, risks=shifted)


def flexible_curve(risks: np.ndarray, outcomes: np.ndarray, span: float = 0.75,
                   degree: int = 2, grid_size: int = 100) -> CurvePoints:
    """Loess regression of outcomes on risks over an even grid.

    At each grid point the ``ceil(span * n)`` nearest risks get tricube
    weights and a weighted polynomial of the requested degree is fitted;
    locally rank-deficient fits fall back to a lower degree with a note.
    Fitted values are clipped to [0, 1].
    """
    risks = np.asarray(risks, dtype=np.float64)
    outcomes = np.asarray(outcomes, dtype=np.float64)
    if np.unique(risks).size < 10:
        raise MetricUndefined("flexible curve needs at least 10 distinct risks")
    if not 0.0 < span <= 1.0:
        raise ValueError("span must lie in (0, 1]")
    n = risks.shape[0]
    window = min(n, math.ceil(span * n))
    grid = np.linspace(risks.min(), risks.max(), grid_size)
    fitted = np.empty(grid_size)
    notes: list[str] = []
    for i, g in enumerate(grid):
        dist = np.abs(risks - g)
        order = np.argsort(dist, kind="stable")[:window]
        d = dist[order]
        dmax = d[-1]
        if dmax == 0.0:
            fitted[i] = outcomes[order].mean()
            continue
        w = (1.0 - (d / dmax) ** 3) ** 3
        fitted[i] = _local_fit(risks[order] - g, outcomes[order], w, degree, g, notes)
    return CurvePoints(grid=grid, fitted=np.clip(fitted, 0.0, 1.0),
                       span=span, degree=degree, notes=notes)


def _local_fit(x: np.ndarray, y: np.ndarray, w: np.ndarray, degree: int,
               at: float, notes: list[str]) -> float:
    """Weighted polynomial fit on centred x; returns the value at 0."""
    positive = w > 0.0
    distinct = np.unique(x[positive]).size
    deg = min(degree, max(0, distinct - 1))
    if deg < degree:
        notes.append(f"degree reduced to {deg} at grid point {at:.6g}")
    sw = np.sqrt(w)
    design = np.vander(x, deg + 1, increasing=True) * sw[:, None]
    coef, *_ = np.linalg.lstsq(design, y * sw, rcond=None)
    return float(coef[0])


def compute_metric_set(risks: np.ndarray, outcomes: np.ndarray) -> MetricSet:
    """All four measures with degeneracies flagged instead of raised."""
    flags: set[str] = set()
    out = {"c": None, "brier": brier(risks, outcomes),
           "cal_intercept": None, "cal_slope": None}
    n1 = int(np.asarray(outcomes).sum())
    if n1 == 0 or n1 == len(outcomes):
        flags.add("single_class_outcomes")
    else:
        out["c"] = concordance(risks, outcomes)
        try:
            out["cal_intercept"] = calibration_intercept(risks, outcomes)
        except MetricUndefined:
            flags.add("intercept_fit_failed")
        try:
            out["cal_slope"] = calibration_slope(risks, outcomes)
        except MetricUndefined:
            flags.add("constant_risks")
    return MetricSet(c=out["c"], brier=out["brier"],
                     cal_intercept=out["cal_intercept"],
                     cal_slope=out["cal_slope"], degenerate_flags=flags)
