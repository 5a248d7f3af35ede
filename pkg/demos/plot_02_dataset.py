"""
Datasets from plain Python functions
====================================

An ``EZDataset`` is any indexable source plus a map of field
extractors. Nothing runs until an item is requested.
"""

import numpy as np

from ezpipe.dataset import build_dataset

rng = np.random.default_rng(0)
source = [(rng.normal(size=800), "hello world"), (rng.normal(size=1200), "good morning")]

calls = []


def speech(record):
    calls.append(1)
    return record[0]


ds = build_dataset(source, {"speech": speech, "text": lambda r: r[1]}, ids=["a", "b"])
print(len(ds), ds.fields, "extractor calls so far:", len(calls))

# by position or by id
item = ds["b"]
print(item["text"], item["speech"].shape, "extractor calls:", len(calls))
