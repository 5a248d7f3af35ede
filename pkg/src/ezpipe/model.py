"""The model contract the trainer is generic over."""

from __future__ import annotations

import copy
import fnmatch
from typing import Any, Dict, FrozenSet, Iterable, List, Mapping, Tuple

import numpy as np

Params = Dict[str, np.ndarray]
Batch = List[Mapping[str, Any]]


class TrainableModel:
    """Parameters plus pure loss/gradient and prediction functions.

    Subclasses implement :meth:`loss_and_grads` and :meth:`predict`. Both take
    ``params`` explicitly so the trainer can own the only mutable copy.
    Names in :attr:`frozen` receive no optimizer updates.
    """

    def __init__(self, params: Mapping[str, np.ndarray], frozen: Iterable[str] = ()):
        self.params: Params = {k: np.asarray(v, dtype=np.float64) for k, v in params.items()}
        self.frozen: FrozenSet[str] = frozenset(frozen)

    def loss_and_grads(self, params: Params, batch: Batch) -> Tuple[float, Params]:
        raise NotImplementedError

    def predict(self, params: Params, item: Mapping[str, Any]) -> Any:
        raise NotImplementedError

    def batch_metrics(self, params: Params, batch: Batch) -> Dict[str, float]:
        """Per-batch mean metrics beyond the loss; none by default."""
        return {}

    def trainable_names(self) -> List[str]:
        return [k for k in self.params if k not in self.frozen]

    def with_params(self, params: Mapping[str, np.ndarray]) -> "TrainableModel":
        clone = copy.copy(self)
        clone.params = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
        return clone

    def with_frozen(self, frozen: Iterable[str]) -> "TrainableModel":
        clone = copy.copy(self)
        clone.frozen = frozenset(frozen)
        return clone


def match_names(names: Iterable[str], patterns: Iterable[str]) -> List[str]:
    patterns = list(patterns)
    return [n for n in names if any(fnmatch.fnmatchcase(n, p) for p in patterns)]
