"""Shape records and mergeable global mean/variance statistics."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Sequence, Tuple

import numpy as np

from .errors import DuplicateKey, EmptyStats, IoError, MalformedLine, SchemaError, UnsupportedShape


@dataclass
class ShapeRecord:
    id: str
    dims: Dict[str, Tuple[int, ...]]

    def numel(self) -> int:
        return sum(int(np.prod(d)) for d in self.dims.values())


@dataclass
class FeatureStats:
    field_name: str
    count: int
    sum: np.ndarray
    sumsq: np.ndarray

    @classmethod
    def zeros(cls, field_name: str, dim: int) -> "FeatureStats":
        return cls(field_name, 0, np.zeros(dim), np.zeros(dim))

    @property
    def dim(self) -> int:
        return int(self.sum.shape[0])

    def __eq__(self, other) -> bool:
        if not isinstance(other, FeatureStats):
            return NotImplemented
        return (
            self.field_name == other.field_name
            and self.count == other.count
            and np.array_equal(self.sum, other.sum)
            and np.array_equal(self.sumsq, other.sumsq)
        )


def _as_frames(value, field_name: str) -> np.ndarray:
    arr = np.asarray(value, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise UnsupportedShape(f"field {field_name!r} has rank {np.ndim(value)}; need 1 or 2")
    return arr


def _shape_of(value, field_name: str) -> Tuple[int, ...]:
    if isinstance(value, str):
        shape = (len(value.split()),)
    else:
        shape = tuple(int(d) for d in np.shape(value))
        if len(shape) not in (1, 2):
            raise UnsupportedShape(f"field {field_name!r} has rank {len(shape)}; need 1 or 2")
    if any(d < 1 for d in shape):
        raise UnsupportedShape(f"field {field_name!r} has an empty dimension {shape}")
    return shape


def collect_stats(
    ds, fields: Sequence[str] | None = None, num_shards: int = 1
) -> Tuple[List[ShapeRecord], Dict[str, FeatureStats]]:
    """Walk ``ds`` once and return per-item shapes plus per-field feature stats.

    Numeric fields are accumulated over their leading (frame) axis; a rank-1
    field counts as ``n`` frames of dimension 1. String fields get a token-count
    shape and no stats. With ``num_shards > 1`` the dataset is split into
    contiguous shards whose stats are merged in shard order.
    """
    fields = list(ds.fields if fields is None else fields)
    n = len(ds)
    bounds = np.linspace(0, n, max(1, num_shards) + 1).astype(int)
    records: List[ShapeRecord] = []
    stats: Dict[str, FeatureStats] = {}
    for lo, hi in zip(bounds[:-1], bounds[1:]):
        shard_records, shard_stats = _collect_range(ds, fields, range(lo, hi))
        records.extend(shard_records)
        for name, s in shard_stats.items():
            stats[name] = merge_stats(stats[name], s) if name in stats else s
    return records, stats


def _collect_range(ds, fields, indices: Iterable[int]):
    records = []
    stats: Dict[str, FeatureStats] = {}
    for i in indices:
        item = ds[i]
        dims = {}
        for name in fields:
            value = item[name]
            dims[name] = _shape_of(value, name)
            if isinstance(value, str):
                continue
            frames = _as_frames(value, name)
            s = stats.get(name)
            if s is None:
                s = stats[name] = FeatureStats.zeros(name, frames.shape[1])
            elif s.dim != frames.shape[1]:
                raise SchemaError(f"field {name!r}: feature dim {frames.shape[1]} != {s.dim}")
            s.count += frames.shape[0]
            s.sum += frames.sum(axis=0)
            s.sumsq += (frames * frames).sum(axis=0)
        records.append(ShapeRecord(ds.ids[i], dims))
    return records, stats


def merge_stats(a: FeatureStats, b: FeatureStats) -> FeatureStats:
    if a.field_name != b.field_name:
        raise SchemaError(f"cannot merge stats of {a.field_name!r} and {b.field_name!r}")
    if a.dim != b.dim:
        raise SchemaError(f"dim mismatch: {a.dim} vs {b.dim}")
    return FeatureStats(a.field_name, a.count + b.count, a.sum + b.sum, a.sumsq + b.sumsq)


def finalize_normalizer(s: FeatureStats, eps: float = 1e-20) -> Tuple[np.ndarray, np.ndarray]:
    """Return ``(mean, std)`` with the variance floored at ``eps``."""
    if s.count == 0:
        raise EmptyStats(f"no frames collected for {s.field_name!r}")
    mean = s.sum / s.count
    var = np.maximum(s.sumsq / s.count - mean * mean, eps)
    return mean, np.sqrt(var)


def write_shape_file(records: Sequence[ShapeRecord], path, field_name: str | None = None) -> None:
    """Write ``<id> <d1>,<d2>`` lines sorted by id.

    ``field_name`` selects which field's dims to write; it may be omitted when
    every record carries exactly one field.
    """
    lines = {}
    for r in records:
        if r.id in lines:
            raise DuplicateKey(r.id)
        if field_name is None:
            if len(r.dims) != 1:
                raise SchemaError("field_name required for multi-field records")
            (dims,) = r.dims.values()
        else:
            dims = r.dims[field_name]
        lines[r.id] = ",".join(str(int(d)) for d in dims)
    body = "".join(f"{k} {lines[k]}\n" for k in sorted(lines))
    try:
        Path(path).write_text(body, encoding="utf-8")
    except OSError as exc:
        raise IoError(str(exc)) from exc


def read_shape_file(path, field_name: str = "shape") -> List[ShapeRecord]:
    records = []
    seen = set()
    text = Path(path).read_text(encoding="utf-8")
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != 2:
            raise MalformedLine("expected '<id> <dims>'", lineno)
        uid, dims = parts
        if uid in seen:
            raise DuplicateKey(uid, lineno)
        try:
            shape = tuple(int(d) for d in dims.split(","))
        except ValueError as exc:
            raise MalformedLine(f"bad dims {dims!r}", lineno) from exc
        if any(d < 1 for d in shape):
            raise MalformedLine(f"non-positive dim in {dims!r}", lineno)
        seen.add(uid)
        records.append(ShapeRecord(uid, {field_name: shape}))
    return records


def merge_shape_records(per_field: Mapping[str, Sequence[ShapeRecord]]) -> List[ShapeRecord]:
    """Join single-field records (as read from several shape files) by id."""
    merged: Dict[str, Dict[str, Tuple[int, ...]]] = {}
    for name, records in per_field.items():
        for r in records:
            merged.setdefault(r.id, {})[name] = r.dims[next(iter(r.dims))]
    return [ShapeRecord(uid, dims) for uid, dims in merged.items()]


def write_stats_file(stats: Mapping[str, FeatureStats], path) -> None:
    """Write stats as JSON; float ``repr`` keeps the round trip exact."""
    doc = {
        name: {"count": int(s.count), "sum": [float(x) for x in s.sum], "sumsq": [float(x) for x in s.sumsq]}
        for name, s in sorted(stats.items())
    }
    try:
        Path(path).write_text(json.dumps(doc, indent=1) + "\n", encoding="utf-8")
    except OSError as exc:
        raise IoError(str(exc)) from exc


def read_stats_file(path) -> Dict[str, FeatureStats]:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        return {
            name: FeatureStats(name, int(d["count"]), np.array(d["sum"], dtype=float), np.array(d["sumsq"], dtype=float))
            for name, d in doc.items()
        }
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaError(f"malformed stats file {path}: {exc}") from exc
