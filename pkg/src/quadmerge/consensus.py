from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .checkpoint import IncompatibleCheckpointError
from .pruning import PrunedTaskVector

__all__ = ["ConsensusSigns", "elect_sign", "exact_sum_sign", "check_pruned_layouts"]


@dataclass(frozen=True)
class ConsensusSigns:
    gamma_m: Mapping[str, np.ndarray]

    def names(self) -> list[str]:
        return list(self.gamma_m)


def check_pruned_layouts(pruned: Sequence[PrunedTaskVector]) -> None:
    if not pruned:
        raise ValueError("need at least one pruned task vector")
    ref = pruned[0].shapes
    for i, other in enumerate(pruned[1:], start=1):
        for name in sorted(set(ref) | set(other.shapes)):
            if name not in other.shapes or name not in ref:
                raise IncompatibleCheckpointError(name, f"missing from task vector {i} or 0")
            if ref[name] != other.shapes[name]:
                raise IncompatibleCheckpointError(
                    name, f"shape {list(ref[name])} vs {list(other.shapes[name])}"
                )


def exact_sum_sign(stacked: np.ndarray) -> np.ndarray:
    """Sign of the exact real sum along axis 0, as int8.

    A float sum decides the sign wherever it clears its worst-case rounding
    error; the remaining near-cancelling columns are summed exactly with
    :func:`math.fsum`. The result therefore does not depend on row order and
    flips exactly under negation.
    """
    n = stacked.shape[0]
    total = stacked.sum(axis=0)
    magnitude = np.abs(stacked).sum(axis=0)
    bound = 2.0 * n * np.finfo(np.float64).eps * magnitude
    signs = np.sign(total).astype(np.int8)
    unsure = np.flatnonzero((np.abs(total) <= bound) & (magnitude > 0))
    for idx in unsure:
        s = math.fsum(stacked[:, idx])
        signs[idx] = (s > 0) - (s < 0)
    return signs


def elect_sign(pruned: Sequence[PrunedTaskVector]) -> ConsensusSigns:
    """Per parameter, the direction carrying the larger total magnitude.

    Zero where nothing survived pruning or the contributions cancel exactly.
    """
    check_pruned_layouts(pruned)
    gamma_m = {}
    for name in pruned[0].names():
        # gamma_hat * mu_hat reproduces tau_hat bit for bit
        stacked = np.stack([p.gamma_hat[name] * p.mu_hat[name] for p in pruned])
        gamma_m[name] = exact_sum_sign(stacked)
    return ConsensusSigns(gamma_m)
