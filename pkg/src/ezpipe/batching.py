"""Batch planners: greedy length-sorted ``numel`` packing and fixed-size chunking."""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Sequence

import numpy as np

from .stats import ShapeRecord

_SEED_MASK = (1 << 64) - 1


def epoch_rng(seed: int, epoch: int) -> np.random.Generator:
    """PCG64 stream keyed on ``(seed, epoch)``; negative seeds are folded into uint64."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed & _SEED_MASK, epoch & _SEED_MASK])))


@dataclass(frozen=True)
class BatchPlan:
    batches: tuple
    seed: int = 0
    epoch: int = 0

    def __post_init__(self):
        object.__setattr__(self, "batches", tuple(tuple(b) for b in self.batches))
        if any(len(b) == 0 for b in self.batches):
            raise ValueError("empty batch in plan")

    def __len__(self) -> int:
        return len(self.batches)

    def __iter__(self):
        return iter(self.batches)

    def ids(self) -> List[str]:
        return [i for b in self.batches for i in b]


def pack_numel(shapes: Sequence[ShapeRecord], batch_bins: int) -> List[List[str]]:
    """Greedy packing in descending element count, before any shuffling."""
    if batch_bins < 1:
        raise ValueError("batch_bins must be >= 1")
    order = sorted(shapes, key=lambda r: (-r.numel(), r.id))
    batches: List[List[str]] = []
    current: List[str] = []
    total = 0
    for rec in order:
        n = rec.numel()
        if current and total + n > batch_bins:
            batches.append(current)
            current, total = [], 0
        current.append(rec.id)
        total += n
    if current:
        batches.append(current)
    return batches


def build_numel_sampler(shapes: Sequence[ShapeRecord], batch_bins: int, seed: int, epoch: int) -> BatchPlan:
    batches = pack_numel(shapes, batch_bins)
    order = epoch_rng(seed, epoch).permutation(len(batches))
    return BatchPlan([batches[i] for i in order], seed, epoch)


def build_fixed_sampler(ids: Sequence[str], batch_size: int, seed: int, epoch: int, shuffle: bool = True) -> BatchPlan:
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    ids = list(ids)
    if shuffle:
        ids = [ids[i] for i in epoch_rng(seed, epoch).permutation(len(ids))]
    return BatchPlan([ids[i : i + batch_size] for i in range(0, len(ids), batch_size)], seed, epoch)
