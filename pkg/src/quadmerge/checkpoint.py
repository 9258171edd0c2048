"""Reading, writing and validating tensor checkpoint files.

File layout (little-endian throughout)::

    u64 N | N bytes of UTF-8 JSON header | raw data block

The header maps each tensor name to ``{"dtype", "shape", "data_offsets"}``
with offsets relative to the start of the data block, plus an optional
``"__metadata__"`` string map. Values are promoted to float64 on load and
narrowed back to their tagged dtype on save.
"""

from __future__ import annotations

import json
import math
import os
import struct
import tempfile
from dataclasses import dataclass, field
from typing import Iterator, Mapping

import numpy as np

__all__ = [
    "DTYPES",
    "CheckpointError",
    "CheckpointFormatError",
    "IncompatibleCheckpointError",
    "TensorMeta",
    "Tensor",
    "Checkpoint",
    "load_checkpoint",
    "save_checkpoint",
    "read_header",
    "validate_compatible",
]

# tag -> (numpy storage dtype, byte width)
DTYPES: dict[str, tuple[str, int]] = {
    "F64": ("<f8", 8),
    "F32": ("<f4", 4),
    "F16": ("<f2", 2),
}

_METADATA_KEY = "__metadata__"
_HEADER_ALIGN = 8


class CheckpointError(ValueError):
    """Base class for checkpoint problems."""


class CheckpointFormatError(CheckpointError):
    """The file does not conform to the container format.

    ``kind`` is one of ``header``, ``dtype``, ``size``, ``gap``, ``overlap``,
    ``truncated``; ``position`` is the absolute byte offset in the file.
    """

    def __init__(self, message: str, position: int, kind: str):
        super().__init__(f"{message} (byte {position})")
        self.position = position
        self.kind = kind


class IncompatibleCheckpointError(CheckpointError):
    def __init__(self, name: str, reason: str):
        super().__init__(f"tensor {name!r}: {reason}")
        self.name = name
        self.reason = reason


@dataclass(frozen=True)
class TensorMeta:
    name: str
    dtype: str
    shape: tuple[int, ...]
    offsets: tuple[int, int]

    @property
    def numel(self) -> int:
        return math.prod(self.shape)

    @property
    def nbytes(self) -> int:
        return self.numel * DTYPES[self.dtype][1]


@dataclass(frozen=True)
class Tensor:
    """One named parameter: dtype tag, shape and flat float64 values."""

    dtype: str
    shape: tuple[int, ...]
    values: np.ndarray

    def __post_init__(self) -> None:
        if self.dtype not in DTYPES:
            raise CheckpointError(f"unknown dtype tag {self.dtype!r}")
        shape = tuple(int(s) for s in self.shape)
        if any(s < 0 for s in shape):
            raise CheckpointError(f"negative dimension in shape {shape}")
        values = np.array(self.values, dtype=np.float64).reshape(-1)
        if values.size != math.prod(shape):
            raise CheckpointError(
                f"buffer of length {values.size} does not fit shape {shape}"
            )
        values.setflags(write=False)
        object.__setattr__(self, "shape", shape)
        object.__setattr__(self, "values", values)

    @property
    def numel(self) -> int:
        return self.values.size

    def array(self) -> np.ndarray:
        """Values reshaped to ``shape`` (read-only view)."""
        return self.values.reshape(self.shape)

    def with_values(self, values: np.ndarray) -> "Tensor":
        return Tensor(self.dtype, self.shape, values)


@dataclass(frozen=True)
class Checkpoint:
    """Ordered map of named tensors plus optional string metadata.

    Storage order is kept so that a loaded file can be written back
    unchanged; computations iterate names in lexicographic order via
    :meth:`names`.
    """

    tensors: Mapping[str, Tensor]
    metadata: Mapping[str, str] | None = None

    def __post_init__(self) -> None:
        tensors = dict(self.tensors)
        for name, tensor in tensors.items():
            if not isinstance(name, str) or not name:
                raise CheckpointError("tensor names must be non-empty strings")
            if name == _METADATA_KEY:
                raise CheckpointError(f"{_METADATA_KEY!r} is reserved")
            if not isinstance(tensor, Tensor):
                raise CheckpointError(f"tensor {name!r} is not a Tensor")
        object.__setattr__(self, "tensors", tensors)
        if self.metadata is not None:
            meta = dict(self.metadata)
            for k, v in meta.items():
                if not isinstance(k, str) or not isinstance(v, str):
                    raise CheckpointError("metadata must map strings to strings")
            object.__setattr__(self, "metadata", meta)

    @classmethod
    def from_arrays(
        cls,
        arrays: Mapping[str, np.ndarray],
        dtype: str = "F64",
        metadata: Mapping[str, str] | None = None,
    ) -> "Checkpoint":
        """Build a checkpoint from plain arrays, stored in name order."""
        tensors = {}
        for name in sorted(arrays):
            arr = np.asarray(arrays[name], dtype=np.float64)
            tensors[name] = Tensor(dtype, arr.shape, arr.reshape(-1))
        return cls(tensors, metadata)

    def names(self) -> list[str]:
        return sorted(self.tensors)

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def __contains__(self, name: object) -> bool:
        return name in self.tensors

    def __iter__(self) -> Iterator[str]:
        return iter(self.names())

    def __len__(self) -> int:
        return len(self.tensors)

    @property
    def num_params(self) -> int:
        return sum(t.numel for t in self.tensors.values())

    def replace_values(self, values: Mapping[str, np.ndarray]) -> "Checkpoint":
        """Same layout, dtypes, order and metadata with new values."""
        return Checkpoint(
            {name: t.with_values(values[name]) for name, t in self.tensors.items()},
            self.metadata,
        )


@dataclass
class _Header:
    entries: list[TensorMeta] = field(default_factory=list)
    metadata: dict[str, str] | None = None
    header_len: int = 0


def _parse_header(blob: bytes) -> _Header:
    if len(blob) < 8:
        raise CheckpointFormatError(
            f"file is {len(blob)} bytes, too short for the header length", 0, "truncated"
        )
    (n,) = struct.unpack("<Q", blob[:8])
    if n > len(blob) - 8:
        raise CheckpointFormatError(
            f"header length {n} exceeds remaining {len(blob) - 8} bytes", 8, "truncated"
        )
    raw = blob[8 : 8 + n]
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise CheckpointFormatError("header is not valid UTF-8", 8 + exc.start, "header")
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        pos = 8 + len(text[: exc.pos].encode("utf-8"))
        raise CheckpointFormatError(f"malformed header JSON: {exc.msg}", pos, "header")
    if not isinstance(obj, dict):
        raise CheckpointFormatError("header JSON is not an object", 8, "header")

    header = _Header(header_len=n)
    for name, entry in obj.items():
        # positions inside the JSON are reported at the header start; the
        # decoder does not expose per-key offsets
        if name == _METADATA_KEY:
            if not isinstance(entry, dict) or not all(
                isinstance(k, str) and isinstance(v, str) for k, v in entry.items()
            ):
                raise CheckpointFormatError(
                    "__metadata__ must map strings to strings", 8, "header"
                )
            header.metadata = dict(entry)
            continue
        if not name:
            raise CheckpointFormatError("empty tensor name", 8, "header")
        if not isinstance(entry, dict) or {"dtype", "shape", "data_offsets"} - entry.keys():
            raise CheckpointFormatError(
                f"tensor {name!r}: entry needs dtype, shape and data_offsets", 8, "header"
            )
        dtype = entry["dtype"]
        if dtype not in DTYPES:
            raise CheckpointFormatError(
                f"tensor {name!r}: unknown dtype {dtype!r}", 8, "dtype"
            )
        shape = entry["shape"]
        if not isinstance(shape, list) or not all(
            type(s) is int and s >= 0 for s in shape
        ):
            raise CheckpointFormatError(
                f"tensor {name!r}: shape must be a list of non-negative integers",
                8,
                "header",
            )
        offsets = entry["data_offsets"]
        if (
            not isinstance(offsets, list)
            or len(offsets) != 2
            or not all(type(o) is int and o >= 0 for o in offsets)
            or offsets[0] > offsets[1]
        ):
            raise CheckpointFormatError(
                f"tensor {name!r}: data_offsets must be [begin, end] with begin <= end",
                8,
                "header",
            )
        meta = TensorMeta(name, dtype, tuple(shape), (offsets[0], offsets[1]))
        if offsets[1] - offsets[0] != meta.nbytes:
            raise CheckpointFormatError(
                f"tensor {name!r}: data_offsets span {offsets[1] - offsets[0]} bytes, "
                f"shape {meta.shape} as {dtype} needs {meta.nbytes}",
                8 + n + offsets[0],
                "size",
            )
        header.entries.append(meta)
    return header


def _check_tiling(entries: list[TensorMeta], data_start: int, data_len: int) -> None:
    cursor = 0
    for meta in sorted(entries, key=lambda m: (m.offsets, m.name)):
        begin, end = meta.offsets
        if begin > cursor:
            raise CheckpointFormatError(
                f"offset gap of {begin - cursor} bytes before tensor {meta.name!r}",
                data_start + cursor,
                "gap",
            )
        if begin < cursor:
            raise CheckpointFormatError(
                f"offset overlap: tensor {meta.name!r} starts inside a previous tensor",
                data_start + begin,
                "overlap",
            )
        cursor = end
    if cursor > data_len:
        raise CheckpointFormatError(
            f"data block truncated: offsets need {cursor} bytes, file has {data_len}",
            data_start + data_len,
            "truncated",
        )
    if cursor < data_len:
        raise CheckpointFormatError(
            f"offset gap: {data_len - cursor} trailing bytes not covered by any tensor",
            data_start + cursor,
            "gap",
        )


def read_header(path: str | os.PathLike) -> list[TensorMeta]:
    """Parse and validate only the header of a checkpoint file."""
    with open(path, "rb") as fh:
        blob = fh.read()
    header = _parse_header(blob)
    _check_tiling(header.entries, 8 + header.header_len, len(blob) - 8 - header.header_len)
    return header.entries


def load_checkpoint(path: str | os.PathLike) -> Checkpoint:
    """Load every tensor of ``path`` into float64.

    Tensors keep the order of their data in the file, so saving an unmodified
    checkpoint reproduces the file it came from.
    """
    with open(path, "rb") as fh:
        blob = fh.read()
    header = _parse_header(blob)
    data_start = 8 + header.header_len
    _check_tiling(header.entries, data_start, len(blob) - data_start)

    tensors = {}
    for meta in sorted(header.entries, key=lambda m: (m.offsets, m.name)):
        np_dtype, _ = DTYPES[meta.dtype]
        begin, end = meta.offsets
        raw = np.frombuffer(blob, dtype=np_dtype, count=meta.numel, offset=data_start + begin)
        tensors[meta.name] = Tensor(meta.dtype, meta.shape, raw.astype(np.float64))
    return Checkpoint(tensors, header.metadata)


def _narrow(name: str, tensor: Tensor) -> bytes:
    np_dtype, _ = DTYPES[tensor.dtype]
    with np.errstate(over="ignore", invalid="ignore"):
        out = tensor.values.astype(np_dtype)
    overflow = np.isfinite(tensor.values) & ~np.isfinite(out)
    if overflow.any():
        idx = int(np.flatnonzero(overflow)[0])
        raise CheckpointError(
            f"tensor {name!r}: value {tensor.values[idx]!r} at index {idx} "
            f"is out of range for {tensor.dtype}"
        )
    return out.tobytes()


def encode_checkpoint(ckpt: Checkpoint) -> bytes:
    """Serialize to the container format (header padded with spaces to 8 bytes)."""
    header: dict[str, object] = {}
    if ckpt.metadata is not None:
        header[_METADATA_KEY] = dict(ckpt.metadata)
    chunks = []
    cursor = 0
    for name, tensor in ckpt.tensors.items():
        data = _narrow(name, tensor)
        header[name] = {
            "dtype": tensor.dtype,
            "shape": list(tensor.shape),
            "data_offsets": [cursor, cursor + len(data)],
        }
        chunks.append(data)
        cursor += len(data)
    text = json.dumps(header, separators=(",", ":"), ensure_ascii=False).encode("utf-8")
    text += b" " * (-len(text) % _HEADER_ALIGN)
    return struct.pack("<Q", len(text)) + text + b"".join(chunks)


def atomic_write(path: str | os.PathLike, payload: bytes) -> None:
    """Write ``payload`` to a temp file next to ``path`` and rename it into place."""
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_checkpoint(ckpt: Checkpoint, path: str | os.PathLike) -> None:
    """Write ``ckpt`` to ``path``, narrowing each tensor to its dtype tag.

    Narrowing rounds to nearest even. Infinities and NaNs are stored as-is,
    but a finite value that overflows its dtype raises :class:`CheckpointError`.
    Nothing is written unless serialization succeeds.
    """
    atomic_write(path, encode_checkpoint(ckpt))


def validate_compatible(a: Checkpoint, b: Checkpoint) -> None:
    """Raise :class:`IncompatibleCheckpointError` at the first layout difference."""
    for name in sorted(set(a.tensors) | set(b.tensors)):
        if name not in a.tensors:
            raise IncompatibleCheckpointError(name, "missing from first checkpoint")
        if name not in b.tensors:
            raise IncompatibleCheckpointError(name, "missing from second checkpoint")
        ta, tb = a.tensors[name], b.tensors[name]
        if ta.shape != tb.shape:
            raise IncompatibleCheckpointError(
                name, f"shape {list(ta.shape)} vs {list(tb.shape)}"
            )
        if ta.dtype != tb.dtype:
            raise IncompatibleCheckpointError(name, f"dtype {ta.dtype} vs {tb.dtype}")
