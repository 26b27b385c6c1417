"""Budgeted cross-validation scoring of candidate circuits.

Every search method scores circuits through one :class:`CircuitEvaluator`
bound to the training split, the fold plan and the search-time model, so all
methods are compared under the same conditions.
"""
from __future__ import annotations

import json
import math
import threading
import time
from dataclasses import asdict, dataclass
from typing import Optional, TextIO

import numpy as np

from .learners import FoldPlan, ModelConfig, ScoringError, cross_validate
from .pqk import FeatureCache


class BudgetExhausted(RuntimeError):
    pass


@dataclass(frozen=True)
class SearchRecord:
    circuit: str
    cv_score: float
    gate_count: int
    method: str = ""
    seed: Optional[int] = None

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


def sort_records(records) -> list[SearchRecord]:
    """Best first: higher CV score, then fewer gates, then circuit string."""
    return sorted(records, key=lambda r: (-r.cv_score, r.gate_count, r.circuit))


def top_k(records, k: int = 5) -> list[SearchRecord]:
    """Best ``k`` distinct circuits."""
    seen = set()
    out = []
    for rec in sort_records(r for r in records if math.isfinite(r.cv_score)):
        if rec.circuit in seen:
            continue
        seen.add(rec.circuit)
        out.append(rec)
        if len(out) == k:
            break
    return out


class SharedBest:
    """Monotone running maximum, safe to share between workers."""

    def __init__(self, value: float = -math.inf):
        self._value = value
        self._lock = threading.Lock()

    @property
    def value(self) -> float:
        return self._value

    def offer(self, candidate: float) -> float:
        with self._lock:
            if candidate > self._value:
                self._value = candidate
            return self._value


class CircuitEvaluator:
    """Scores circuits by k-fold CV of a PQK model on a fixed training set.

    Each call to :meth:`evaluate` consumes one unit of ``budget`` (repeats
    included; repeated circuits are answered from the score memo). ``None``
    means unlimited.
    """

    def __init__(
        self,
        X,
        y,
        folds: FoldPlan,
        model: ModelConfig,
        dataset_id: str,
        cache: Optional[FeatureCache] = None,
        budget: Optional[int] = None,
        method: str = "",
        seed: Optional[int] = None,
        log: Optional[TextIO] = None,
    ):
        self.X = np.asarray(X, dtype=np.float64)
        self.y = np.asarray(y, dtype=np.float64)
        if folds.n != len(self.X) or len(self.y) != len(self.X):
            raise ValueError("data, labels and fold plan disagree on the number of points")
        self.folds = folds
        self.model = model
        self.dataset_id = dataset_id
        self.cache = cache if cache is not None else FeatureCache()
        self.budget = budget
        self.method = method
        self.seed = seed
        self.log = log
        self.count = 0
        self.records: list[SearchRecord] = []
        self._memo: dict[str, float] = {}
        self._lock = threading.Lock()

    @property
    def remaining(self) -> Optional[int]:
        return None if self.budget is None else self.budget - self.count

    @property
    def exhausted(self) -> bool:
        return self.budget is not None and self.count >= self.budget

    def best(self) -> float:
        scores = [r.cv_score for r in self.records if math.isfinite(r.cv_score)]
        return max(scores) if scores else -math.inf

    def evaluate(self, circuit) -> float:
        """CV score of ``circuit``; NaN when scoring fails.

        Raises:
            BudgetExhausted: the evaluation budget is used up.
        """
        with self._lock:
            if self.exhausted:
                raise BudgetExhausted(f"evaluation budget of {self.budget} used up")
            self.count += 1
        key = circuit.key
        score = self._memo.get(key)
        if score is None:
            features = self.cache.get_or_compute(circuit, self.dataset_id, self.X)
            try:
                score = cross_validate(features, self.y, self.folds, self.model)
            except ScoringError:
                score = math.nan
            self._memo[key] = score
        record = SearchRecord(key, score, circuit.gate_count, self.method, self.seed)
        with self._lock:
            self.records.append(record)
        if self.log is not None:
            self.log.write(json.dumps({"circuit": key, "cv_score": score, "t": time.time()}) + "\n")
        return score
