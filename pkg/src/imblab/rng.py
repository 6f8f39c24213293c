"""Hierarchical random-stream derivation.

Every random draw in the pipeline comes from a stream derived from
``(root seeds, path)`` where the path encodes iteration, pipeline stage
and grid cell.  Streams are backed by the counter-based Philox generator
keyed through :class:`numpy.random.SeedSequence`, so adding or removing
grid cells never perturbs the draws of any other cell, and the same path
yields bit-identical draws regardless of process or thread count.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

# Pipeline stages, frozen: renumbering would silently change every stream.
STAGE_TRAIN_EVENTS = 0
STAGE_TRAIN_FEATURES = 1
STAGE_VAL_EVENTS = 2
STAGE_VAL_FEATURES = 3
STAGE_CORRECTION = 4
STAGE_LEARNER = 5
STAGE_BOOTSTRAP = 6
STAGE_SPLIT = 7


def derive_rng(entropy: int | Sequence[int], *path: int) -> np.random.Generator:
    """Return an independent generator for ``entropy`` and a stage path.

    Parameters
    ----------
    entropy : int or sequence of int
        Root seed material, e.g. ``(plan_seed, scenario_seed)``.
    *path : int
        Non-negative stage/cell coordinates, e.g.
        ``(iteration, STAGE_LEARNER, learner_code)``.
    """
    for part in path:
        if part < 0:
            raise ValueError(f"stream path components must be >= 0, got {part}")
    seq = np.random.SeedSequence(entropy=entropy, spawn_key=tuple(int(p) for p in path))
    return np.random.Generator(np.random.Philox(seq))
