"""Dual-tail magnitude pruning of task vectors.

Within each layer the largest ``alpha`` percent of magnitudes (outliers) and
the smallest ``beta`` percent (near-zero noise) are dropped; the middle band
survives. Elements are ranked by ``(|value|, flat index)``, so ties are
resolved deterministically and the two tails never overlap.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Mapping

import numpy as np

from .task_vector import TaskVector

__all__ = [
    "PruneConfig",
    "PrunedTaskVector",
    "tail_counts",
    "layer_mask",
    "layer_groups",
    "prune_task_vector",
]


@dataclass(frozen=True)
class PruneConfig:
    """Tail fractions in percent.

    ``group_depth`` switches layer granularity from one tensor to all tensors
    sharing the first ``group_depth`` dot-separated name components.
    """

    alpha: float = 20.0
    beta: float = 20.0
    group_depth: int | None = None

    def __post_init__(self) -> None:
        check_tails(self.alpha, self.beta)
        if self.group_depth is not None and self.group_depth < 1:
            raise ValueError("group_depth must be >= 1")


def check_tails(alpha: float, beta: float) -> None:
    if not (math.isfinite(alpha) and math.isfinite(beta)):
        raise ValueError("alpha and beta must be finite")
    if alpha < 0 or beta < 0:
        raise ValueError(f"alpha and beta must be non-negative, got {alpha}, {beta}")
    if alpha + beta > 100:
        raise ValueError(f"alpha + beta must not exceed 100, got {alpha + beta}")


@dataclass(frozen=True)
class PrunedTaskVector:
    tau_hat: Mapping[str, np.ndarray]
    gamma_hat: Mapping[str, np.ndarray]
    mu_hat: Mapping[str, np.ndarray]
    shapes: Mapping[str, tuple[int, ...]]
    source_label: str = ""

    def names(self) -> list[str]:
        return list(self.tau_hat)


def tail_counts(n: int, alpha: float, beta: float) -> tuple[int, int]:
    """Number of elements dropped from the top and bottom tail of ``n``.

    Percentages are read as the decimals they print as: 0.57% of 10000
    elements is 57, not the 56 that a float product floors to.
    """
    return _floor_percent(alpha, n), _floor_percent(beta, n)


def _floor_percent(pct: float, n: int) -> int:
    return math.floor(Fraction(repr(float(pct))) * n / 100)


def layer_mask(values: np.ndarray, alpha: float, beta: float) -> np.ndarray:
    """Boolean keep-mask for one layer.

    >>> layer_mask(np.array([0.1, -0.5, 2.0, 0.05, -0.02, 0.8]), 20, 20)
    array([ True,  True, False,  True, False,  True])
    """
    check_tails(alpha, beta)
    values = np.asarray(values, dtype=np.float64).reshape(-1)
    n = values.size
    n_top, n_bottom = tail_counts(n, alpha, beta)
    keep = np.ones(n, dtype=bool)
    if n_top == 0 and n_bottom == 0:
        return keep
    order = np.argsort(np.abs(values), kind="stable")
    keep[order[:n_bottom]] = False
    keep[order[n - n_top :]] = False
    return keep


def layer_groups(names: list[str], group_depth: int | None = None) -> dict[str, list[str]]:
    """Partition tensor names into layers, each listed in name order."""
    groups: dict[str, list[str]] = {}
    for name in sorted(names):
        key = name if group_depth is None else ".".join(name.split(".")[:group_depth])
        groups.setdefault(key, []).append(name)
    return groups


def prune_task_vector(tau: TaskVector, cfg: PruneConfig) -> PrunedTaskVector:
    tau_hat: dict[str, np.ndarray] = {}
    for members in layer_groups(tau.names(), cfg.group_depth).values():
        flat = np.concatenate([tau.deltas[n] for n in members]) if members else np.empty(0)
        kept = np.where(layer_mask(flat, cfg.alpha, cfg.beta), flat, 0.0)
        start = 0
        for name in members:
            size = tau.deltas[name].size
            tau_hat[name] = kept[start : start + size]
            start += size
    tau_hat = {n: tau_hat[n] for n in sorted(tau_hat)}
    gamma_hat = {n: np.sign(v).astype(np.int8) for n, v in tau_hat.items()}
    mu_hat = {n: np.abs(v) for n, v in tau_hat.items()}
    return PrunedTaskVector(tau_hat, gamma_hat, mu_hat, dict(tau.shapes), tau.source_label)
