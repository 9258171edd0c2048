from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .checkpoint import Checkpoint, IncompatibleCheckpointError, validate_compatible

__all__ = ["TaskVector", "build_task_vector", "apply_task_vector"]


@dataclass(frozen=True)
class TaskVector:
    """Per-tensor parameter deltas of one fine-tuned model against its base.

    ``deltas`` holds flat float64 buffers; ``shapes`` records the layout of
    the checkpoint the vector was built from.
    """

    deltas: Mapping[str, np.ndarray]
    shapes: Mapping[str, tuple[int, ...]]
    source_label: str = ""

    def __post_init__(self) -> None:
        if set(self.deltas) != set(self.shapes):
            raise ValueError("deltas and shapes must cover the same names")
        deltas = {}
        for name in sorted(self.deltas):
            arr = np.array(self.deltas[name], dtype=np.float64).reshape(-1)
            if arr.size != math.prod(self.shapes[name]):
                raise ValueError(f"delta {name!r} does not fit shape {self.shapes[name]}")
            arr.setflags(write=False)
            deltas[name] = arr
        object.__setattr__(self, "deltas", deltas)
        object.__setattr__(self, "shapes", {n: tuple(self.shapes[n]) for n in deltas})

    def names(self) -> list[str]:
        return list(self.deltas)

    def scaled(self, factor: float) -> "TaskVector":
        return TaskVector(
            {n: factor * d for n, d in self.deltas.items()}, self.shapes, self.source_label
        )


def build_task_vector(
    theta_t: Checkpoint, theta_base: Checkpoint, source_label: str = ""
) -> TaskVector:
    """``theta_t - theta_base`` per element, in float64."""
    validate_compatible(theta_t, theta_base)
    deltas = {
        name: theta_t[name].values - theta_base[name].values for name in theta_base.names()
    }
    shapes = {name: theta_base[name].shape for name in deltas}
    return TaskVector(deltas, shapes, source_label)


def check_layout(base: Checkpoint, tau: TaskVector) -> None:
    for name in sorted(set(base.tensors) | set(tau.deltas)):
        if name not in tau.deltas:
            raise IncompatibleCheckpointError(name, "missing from task vector")
        if name not in base.tensors:
            raise IncompatibleCheckpointError(name, "missing from base checkpoint")
        if base[name].shape != tau.shapes[name]:
            raise IncompatibleCheckpointError(
                name, f"shape {list(base[name].shape)} vs {list(tau.shapes[name])}"
            )


def apply_task_vector(theta_base: Checkpoint, tau: TaskVector, lam: float = 1.0) -> Checkpoint:
    """Return ``theta_base + lam * tau`` with the base's dtypes, order and metadata."""
    if not math.isfinite(lam):
        raise ValueError(f"scale must be finite, got {lam!r}")
    check_layout(theta_base, tau)
    if lam == 0:
        return theta_base
    return theta_base.replace_values(
        {name: t.values + lam * tau.deltas[name] for name, t in theta_base.tensors.items()}
    )
