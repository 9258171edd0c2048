from __future__ import annotations

import json
import struct
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from quadmerge.checkpoint import Checkpoint, Tensor  # noqa: E402

FIXTURES = Path(__file__).parent / "fixtures"


def raw_checkpoint(header: dict, data: bytes) -> bytes:
    """Hand-assemble a checkpoint file without going through the writer."""
    text = json.dumps(header).encode("utf-8")
    return struct.pack("<Q", len(text)) + text + data


def random_checkpoint(rng: np.random.Generator, dtypes=("F64", "F32", "F16"), max_tensors=5) -> Checkpoint:
    tensors = {}
    for i in range(rng.integers(0, max_tensors + 1)):
        ndim = rng.integers(0, 4)
        shape = tuple(int(s) for s in rng.integers(0, 5, size=ndim))
        dtype = str(rng.choice(dtypes))
        values = rng.normal(scale=3.0, size=int(np.prod(shape)))
        # store what the dtype can hold so round trips are exact
        values = values.astype({"F64": "<f8", "F32": "<f4", "F16": "<f2"}[dtype]).astype(np.float64)
        tensors[f"t{i}.{rng.integers(0, 100)}"] = Tensor(dtype, shape, values)
    meta = {"format": "pt", "seed": str(int(rng.integers(0, 1000)))} if rng.random() < 0.5 else None
    return Checkpoint(tensors, meta)


def random_layout(rng: np.random.Generator, max_params: int = 1000) -> dict[str, tuple[int, ...]]:
    shapes = {}
    budget = max_params
    for i in range(int(rng.integers(1, 5))):
        shape = tuple(int(s) for s in rng.integers(1, 12, size=rng.integers(1, 3)))
        if int(np.prod(shape)) > budget:
            break
        budget -= int(np.prod(shape))
        shapes[f"layer{i}.weight"] = shape
    return shapes


def checkpoint_like(shapes, rng, scale=1.0, dtype="F64") -> Checkpoint:
    return Checkpoint(
        {n: Tensor(dtype, s, rng.normal(scale=scale, size=int(np.prod(s)))) for n, s in sorted(shapes.items())}
    )


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


ACCEPTANCE_LINES: list[str] = []


def record_criterion(label: str, ok: bool, detail: str) -> None:
    ACCEPTANCE_LINES.append(f"{'PASS' if ok else 'FAIL'}  {label}: {detail}")
    assert ok, f"{label}: {detail}"


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
