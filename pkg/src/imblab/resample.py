"""Data-level class-imbalance corrections.

Random under/over-sampling, synthetic minority oversampling and its
edited-nearest-neighbour variant, all targeting an artificially balanced
event fraction.  Failures never escape :func:`apply_correction`; the
uncorrected data are passed through instead, with a diagnostic note.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass

import numpy as np

from .datagen import Dataset

logger = logging.getLogger(__name__)

CORRECTION_KINDS = ("Control", "RUS", "ROS", "SMOTE", "SENN")


class CorrectionError(RuntimeError):
    """A correction cannot be applied to the given dataset."""


class CorrectionNote(UserWarning):
    """A correction succeeded but took a fallback path."""


@dataclass(frozen=True)
class CorrectionSpec:
    """Which correction to run, and its neighbour counts."""

    kind: str
    k: int = 5            # SMOTE neighbours
    k1: int = 5           # SMOTE-step neighbours within SENN
    k2: int = 3           # ENN-step neighbours within SENN
    target_event_fraction: float = 0.5

    def __post_init__(self):
        if self.kind not in CORRECTION_KINDS:
            raise ValueError(f"unknown correction kind {self.kind!r}")
        if self.k < 1 or self.k1 < 1:
            raise ValueError("SMOTE neighbour counts must be >= 1")
        if self.k2 < 1 or self.k2 % 2 == 0:
            raise ValueError("k2 must be an odd positive count (tie-free vote)")
        if not 0.0 < self.target_event_fraction < 1.0:
            raise ValueError("target_event_fraction must lie in (0, 1)")


@dataclass
class CorrectionOutcome:
    dataset: Dataset
    applied: bool
    note: str = ""


def _split_classes(ds: Dataset) -> tuple[np.ndarray, np.ndarray]:
    """Indices of the minority and majority classes (tie: events are minority)."""
    idx1 = np.flatnonzero(ds.outcome == 1)
    idx0 = np.flatnonzero(ds.outcome == 0)
    if idx1.size <= idx0.size:
        return idx1, idx0
    return idx0, idx1


def _require_both_classes(ds: Dataset, what: str) -> None:
    if ds.n_events == 0 or ds.n_nonevents == 0:
        raise CorrectionError(f"{what} requires both classes to be present")


def rus(ds: Dataset, target: float, rng: np.random.Generator) -> Dataset:
    """Randomly drop majority rows until the event fraction reaches ``target``.

    All minority rows are kept; the majority class is subsampled without
    replacement to ``ceil(n_min * (1 - target) / target)`` rows (capped at
    its own size), and the result is shuffled.
    """
    _require_both_classes(ds, "random undersampling")
    min_idx, maj_idx = _split_classes(ds)
    n_keep = min(maj_idx.size, math.ceil(min_idx.size * (1.0 - target) / target))
    kept_maj = rng.choice(maj_idx, size=n_keep, replace=False)
    kept = np.concatenate([min_idx, kept_maj])
    kept = kept[rng.permutation(kept.size)]
    return Dataset(ds.features[kept].copy(), ds.outcome[kept].copy(), provenance="corrected")


def ros(ds: Dataset, target: float, rng: np.random.Generator) -> Dataset:
    """Duplicate random minority rows until the event fraction reaches ``target``.

    Every original row is retained; duplicates are appended.
    """
    _require_both_classes(ds, "random oversampling")
    min_idx, maj_idx = _split_classes(ds)
    wanted = math.ceil(maj_idx.size * target / (1.0 - target))
    extra = wanted - min_idx.size
    if extra <= 0:
        return Dataset(ds.features.copy(), ds.outcome.copy(), provenance="corrected")
    dup = rng.choice(min_idx, size=extra, replace=True)
    features = np.vstack([ds.features, ds.features[dup]])
    outcome = np.concatenate([ds.outcome, ds.outcome[dup]])
    return Dataset(features, outcome, provenance="corrected")


def _pairwise_sq_dists(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    # Explicit differences rather than the expanded quadratic form: exact
    # symmetry matters for index-order tie-breaking.
    return ((a[:, None, :] - b[None, :, :]) ** 2).sum(axis=2)


def _nearest_neighbours(points: np.ndarray, k: int, block: int = 256) -> np.ndarray:
    """Indices of each point's ``k`` nearest other points.

    Euclidean distance; ties broken by lowest row index (stable sort).
    """
    n = points.shape[0]
    out = np.empty((n, k), dtype=np.int64)
    for start in range(0, n, block):
        stop = min(start + block, n)
        d = _pairwise_sq_dists(points[start:stop], points)
        d[np.arange(stop - start), np.arange(start, stop)] = np.inf
        order = np.argsort(d, axis=1, kind="stable")
        out[start:stop] = order[:, :k]
    return out


def smote(ds: Dataset, k: int, target: float, rng: np.random.Generator,
          trace: list | None = None) -> Dataset:
    """Interpolate synthetic minority rows until the event fraction reaches ``target``.

    Each synthetic row is ``x + u * (x' - x)`` for a uniformly chosen
    minority row ``x``, one of its ``min(k, n_min - 1)`` nearest minority
    neighbours ``x'``, and ``u ~ Uniform(0, 1)``.  Original rows are all
    retained.  When ``trace`` is given, tuples ``(base_row, neighbour_row, u)``
    of dataset row indices are appended for each synthetic row.
    """
    min_idx, maj_idx = _split_classes(ds)
    if min_idx.size == 0:
        raise CorrectionError("SMOTE requires a nonempty minority class")
    wanted = math.ceil(maj_idx.size * target / (1.0 - target))
    deficit = wanted - min_idx.size
    if deficit <= 0:
        return Dataset(ds.features.copy(), ds.outcome.copy(), provenance="corrected")

    if min_idx.size == 1:
        warnings.warn("single minority row: duplicating instead of interpolating",
                      CorrectionNote)
        synth = np.repeat(ds.features[min_idx], deficit, axis=0)
        if trace is not None:
            trace.extend((int(min_idx[0]), int(min_idx[0]), 0.0) for _ in range(deficit))
    else:
        k_eff = min(k, min_idx.size - 1)
        if k_eff < k:
            warnings.warn(f"SMOTE k capped at {k_eff} (minority size {min_idx.size})",
                          CorrectionNote)
        neighbours = _nearest_neighbours(ds.features[min_idx], k_eff)
        base = rng.integers(0, min_idx.size, size=deficit)
        pick = rng.integers(0, k_eff, size=deficit)
        u = rng.uniform(size=deficit)
        nb = neighbours[base, pick]
        x = ds.features[min_idx[base]]
        synth = x + u[:, None] * (ds.features[min_idx[nb]] - x)
        if trace is not None:
            trace.extend(zip(min_idx[base].tolist(), min_idx[nb].tolist(), u.tolist()))

    minority_label = int(ds.outcome[min_idx[0]])
    features = np.vstack([ds.features, synth])
    outcome = np.concatenate([ds.outcome,
                              np.full(deficit, minority_label, dtype=ds.outcome.dtype)])
    return Dataset(features, outcome, provenance="corrected")


def enn(ds: Dataset, k2: int, both_classes: bool = True) -> Dataset:
    """Wilson's rule: drop rows whose label disagrees with their neighbourhood.

    Every row's ``k2`` nearest other rows vote; rows losing the vote are all
    removed in a single pass (no cascading).  With ``both_classes=False``
    only majority-class rows are eligible for removal, matching editors
    that protect the (oversampled) minority class.
    """
    if k2 < 1 or k2 % 2 == 0:
        raise ValueError("k2 must be an odd positive count")
    if ds.n < k2 + 1:
        raise CorrectionError(f"ENN needs at least {k2 + 1} rows, got {ds.n}")
    neighbours = _nearest_neighbours(ds.features, k2)
    votes = ds.outcome[neighbours].sum(axis=1)
    majority = (2 * votes > k2).astype(ds.outcome.dtype)
    keep = majority == ds.outcome
    if not both_classes:
        majority_label = 0 if ds.n_nonevents >= ds.n_events else 1
        keep |= ds.outcome != majority_label
    kept_outcome = ds.outcome[keep]
    kept_events = int(kept_outcome.sum())
    if (ds.n_events > 0 and kept_events == 0) or \
            (ds.n_nonevents > 0 and kept_events == kept_outcome.size):
        raise CorrectionError("ENN removal would empty a class")
    return Dataset(ds.features[keep].copy(), kept_outcome.copy(), provenance="corrected")


def senn(ds: Dataset, k1: int, k2: int, target: float,
         rng: np.random.Generator, enn_both_classes: bool = True) -> Dataset:
    """SMOTE followed by the edited-nearest-neighbour cleaning step.

    If the ENN step would fail, it is skipped with a note and the SMOTE
    output proceeds unchanged.
    """
    oversampled = smote(ds, k1, target, rng)
    try:
        return enn(oversampled, k2, both_classes=enn_both_classes)
    except CorrectionError as exc:
        warnings.warn(f"ENN step skipped: {exc}", CorrectionNote)
        return oversampled


def apply_correction(spec: CorrectionSpec, ds: Dataset,
                     rng: np.random.Generator) -> CorrectionOutcome:
    """Dispatch a correction, converting any failure into a passthrough.

    On failure the unmodified input is returned with ``applied=False`` and
    the reason recorded in ``note`` (never raised).
    """
    if spec.kind == "Control":
        return CorrectionOutcome(dataset=ds, applied=True)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", CorrectionNote)
        try:
            target = spec.target_event_fraction
            if spec.kind == "RUS":
                corrected = rus(ds, target, rng)
            elif spec.kind == "ROS":
                corrected = ros(ds, target, rng)
            elif spec.kind == "SMOTE":
                corrected = smote(ds, spec.k, target, rng)
            else:
                corrected = senn(ds, spec.k1, spec.k2, target, rng)
        except CorrectionError as exc:
            logger.warning("%s failed, passing data through uncorrected: %s",
                           spec.kind, exc)
            return CorrectionOutcome(dataset=ds, applied=False, note=str(exc))
    note = "; ".join(str(w.message) for w in caught)
    return CorrectionOutcome(dataset=corrected, applied=True, note=note)
