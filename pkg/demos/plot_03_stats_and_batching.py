"""
Shape files, normalization stats and length-aware batches
=========================================================

Collect per-utterance shapes and global feature sums, derive a
mean/std normalizer, then pack utterances into batches bounded by
a total element count.
"""

import numpy as np

from ezpipe.batching import build_numel_sampler
from ezpipe.dataset import build_dataset
from ezpipe.stats import collect_stats, finalize_normalizer, merge_stats

rng = np.random.default_rng(1)
feats = [rng.normal(3.0, 2.0, size=(int(rng.integers(5, 60)), 4)) for _ in range(20)]
ds = build_dataset(feats, {"feats": lambda r: r}, ids=[f"u{i:02d}" for i in range(20)])

shapes, stats = collect_stats(ds)
mean, std = finalize_normalizer(stats["feats"])
print("mean", mean.round(3), "std", std.round(3))

# stats from two halves merge to the same totals
left = collect_stats(build_dataset(feats[:10], {"feats": lambda r: r}))[1]["feats"]
right = collect_stats(build_dataset(feats[10:], {"feats": lambda r: r}))[1]["feats"]
print("merged count", merge_stats(left, right).count, "whole count", stats["feats"].count)

# long utterances end up in small batches
plan = build_numel_sampler(shapes, batch_bins=400, seed=0, epoch=1)
numel = {r.id: r.numel() for r in shapes}
for batch in plan:
    print(len(batch), "items,", sum(numel[i] for i in batch), "elements")
