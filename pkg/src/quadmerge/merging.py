"""Sign-consensus merging of fine-tuned checkpoints into one model.

Pipeline: task vectors -> dual-tail pruning -> sign election -> average of
the survivors that agree with the elected sign -> ``base + lam * merged``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

from .checkpoint import Checkpoint, validate_compatible
from .consensus import ConsensusSigns, check_pruned_layouts, elect_sign
from .pruning import PruneConfig, PrunedTaskVector, layer_groups, prune_task_vector, tail_counts
from .task_vector import TaskVector, apply_task_vector, build_task_vector

__all__ = [
    "MergeConfig",
    "merge_task_vectors",
    "merge_models",
    "merge_models_with_stats",
    "merge_stats",
]

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class MergeConfig:
    prune: PruneConfig = field(default_factory=PruneConfig)
    lam: float = 1.0
    report_stats: bool = False

    def __post_init__(self) -> None:
        if not math.isfinite(self.lam):
            raise ValueError(f"merge scale must be finite, got {self.lam!r}")


def merge_task_vectors(
    pruned: Sequence[PrunedTaskVector], signs: ConsensusSigns
) -> TaskVector:
    """Average, per parameter, the surviving deltas whose sign matches the consensus.

    A parameter with no such delta (including every parameter whose consensus
    sign is 0) gets a merged delta of exactly 0.
    """
    check_pruned_layouts(pruned)
    shapes = pruned[0].shapes
    if set(signs.gamma_m) != set(shapes):
        raise ValueError("consensus signs do not cover the task vector layout")
    merged = {}
    for name in pruned[0].names():
        gamma_m = signs.gamma_m[name]
        if gamma_m.size != pruned[0].tau_hat[name].size:
            raise ValueError(f"consensus signs for {name!r} have the wrong size")
        tau_hat = np.stack([p.tau_hat[name] for p in pruned])
        gamma_hat = np.stack([p.gamma_hat[name] for p in pruned])
        chosen = (gamma_hat == gamma_m) & (gamma_hat != 0)
        count = chosen.sum(axis=0)
        # average offsets from the smallest survivor so unanimous values come
        # back bit-exact; sorting fixes a summation order independent of the
        # model order
        lo = np.where(chosen, tau_hat, np.inf).min(axis=0)
        lo[count == 0] = 0.0
        spread = np.sort(np.where(chosen, tau_hat - lo, 0.0), axis=0).sum(axis=0)
        mean = lo + np.divide(spread, count, out=np.zeros_like(spread), where=count > 0)
        merged[name] = np.where(count > 0, mean, 0.0)
    return TaskVector(merged, shapes, "merged")


def merge_stats(
    pruned: Sequence[PrunedTaskVector],
    signs: ConsensusSigns,
    cfg: PruneConfig,
) -> dict[str, dict[str, Any]]:
    """Per-layer counts for tuning the tail fractions.

    ``dropped_top``/``dropped_bottom`` are per model (every model drops the
    same number per layer). ``agreement_rate`` is the share of surviving
    entries whose sign equals the consensus; null when nothing survived.
    """
    stats: dict[str, dict[str, Any]] = {}
    for layer, members in layer_groups(pruned[0].names(), cfg.group_depth).items():
        n = sum(pruned[0].tau_hat[m].size for m in members)
        top, bottom = tail_counts(n, cfg.alpha, cfg.beta)
        survivors = agreeing = 0
        abs_sum = 0.0
        for p in pruned:
            for m in members:
                nz = p.gamma_hat[m] != 0
                survivors += int(nz.sum())
                agreeing += int((nz & (p.gamma_hat[m] == signs.gamma_m[m])).sum())
                abs_sum += float(p.mu_hat[m].sum())
        kept = len(pruned) * (n - top - bottom)
        stats[layer] = {
            "n": n,
            "dropped_top": top,
            "dropped_bottom": bottom,
            "agreement_rate": agreeing / survivors if survivors else None,
            "mean_abs_tau_hat": abs_sum / kept if kept else 0.0,
        }
    return stats


def merge_models_with_stats(
    theta_base: Checkpoint, models: Sequence[Checkpoint], cfg: MergeConfig
) -> tuple[Checkpoint, dict[str, dict[str, Any]] | None]:
    if not models:
        raise ValueError("need at least one fine-tuned model")
    for model in models:
        validate_compatible(model, theta_base)
    pruned = [
        prune_task_vector(build_task_vector(m, theta_base, f"model{i}"), cfg.prune)
        for i, m in enumerate(models)
    ]
    signs = elect_sign(pruned)
    merged = merge_task_vectors(pruned, signs)
    out = apply_task_vector(theta_base, merged, cfg.lam)
    stats = merge_stats(pruned, signs, cfg.prune) if cfg.report_stats else None
    log.debug(
        "merged %d models over %d tensors (alpha=%s beta=%s lam=%s)",
        len(models), len(theta_base), cfg.prune.alpha, cfg.prune.beta, cfg.lam,
    )
    return out, stats


def merge_models(
    theta_base: Checkpoint, models: Sequence[Checkpoint], cfg: MergeConfig | None = None
) -> Checkpoint:
    """Merge ``models`` into ``theta_base``; layout, dtypes and metadata follow the base."""
    return merge_models_with_stats(theta_base, models, cfg or MergeConfig())[0]
