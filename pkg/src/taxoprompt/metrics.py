"""Ranking metrics (AP, MAP) and correlation coefficients."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

SCHEMA_VERSION = 1


class UndefinedMetricError(ValueError):
    """Raised when a metric has no defined value (no positives, zero variance)."""


@dataclass(frozen=True)
class RankedItem:
    id: str
    score: float
    label: bool = False


@dataclass(frozen=True)
class RankedList:
    """Items ordered by score descending, ties by id ascending."""

    items: tuple[RankedItem, ...]

    def __post_init__(self):
        for a, b in zip(self.items, self.items[1:]):
            if a.score < b.score or (a.score == b.score and a.id > b.id):
                raise ValueError(f"RankedList out of order at {a.id!r} / {b.id!r}")

    @classmethod
    def from_scores(cls, scores: Mapping[str, float], positives: Iterable[str] = ()) -> "RankedList":
        gold = set(positives)
        ordered = sorted(scores.items(), key=lambda kv: (-kv[1], kv[0]))
        return cls(tuple(RankedItem(k, float(v), k in gold) for k, v in ordered))

    def with_labels(self, positives: Iterable[str]) -> "RankedList":
        gold = set(positives)
        return RankedList(tuple(RankedItem(i.id, i.score, i.id in gold) for i in self.items))

    @property
    def ids(self) -> list[str]:
        return [i.id for i in self.items]

    @property
    def labels(self) -> list[bool]:
        return [i.label for i in self.items]

    def __len__(self) -> int:
        return len(self.items)

    def __iter__(self):
        return iter(self.items)


def _labels_of(ranked) -> Sequence[bool]:
    return ranked.labels if isinstance(ranked, RankedList) else list(ranked)


def average_precision(ranked: RankedList | Sequence[bool]) -> float:
    """Mean of precision@i over the ranks i that hold a positive.

    Accepts a :class:`RankedList` or a plain sequence of labels in rank order.
    """
    labels = np.asarray(_labels_of(ranked), dtype=bool)
    m = int(labels.sum())
    if m == 0:
        raise UndefinedMetricError("average precision is undefined without positives")
    hits = np.cumsum(labels)
    ranks = np.arange(1, len(labels) + 1)
    return float(np.sum(hits[labels] / ranks[labels]) / m)


def mean_average_precision(lists: Sequence[RankedList | Sequence[bool]]) -> float:
    if len(lists) == 0:
        raise UndefinedMetricError("MAP over an empty set of ranked lists")
    return float(math.fsum(average_precision(rl) for rl in lists) / len(lists))


def pearson(x: Sequence[float], y: Sequence[float]) -> float:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("pearson needs two 1-d sequences of equal length")
    if len(x) < 2:
        raise UndefinedMetricError("pearson needs at least two points")
    dx, dy = x - x.mean(), y - y.mean()
    sxx, syy = float(np.dot(dx, dx)), float(np.dot(dy, dy))
    if sxx == 0.0 or syy == 0.0:
        raise UndefinedMetricError("pearson is undefined for a constant sequence")
    r = float(np.dot(dx, dy)) / math.sqrt(sxx * syy)
    return max(-1.0, min(1.0, r))


def fractional_ranks(x: Sequence[float]) -> np.ndarray:
    """1-based ranks; tied values share the mean of their positions."""
    x = np.asarray(x, dtype=float)
    order = np.argsort(x, kind="mergesort")
    ranks = np.empty(len(x), dtype=float)
    i = 0
    while i < len(x):
        j = i
        while j + 1 < len(x) and x[order[j + 1]] == x[order[i]]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def spearman(x: Sequence[float], y: Sequence[float]) -> float:
    if len(x) != len(y):
        raise ValueError("spearman needs two sequences of equal length")
    return pearson(fractional_ranks(x), fractional_ranks(y))


@dataclass
class DatasetResult:
    dataset: str
    ap: float | None
    map: float | None
    n_pairs: int
    n_targets: int
    skipped_targets: int


@dataclass
class EvalReport:
    """Scores of one prompt (or prompt combination) in one scoring mode."""

    backend: str
    prompt: str
    mode: str
    datasets: list[DatasetResult] = field(default_factory=list)

    @property
    def mean_ap(self) -> float | None:
        """Mean detection AP across datasets (MAP is not part of it)."""
        aps = [d.ap for d in self.datasets if d.ap is not None]
        return math.fsum(aps) / len(aps) if aps else None

    def result(self, dataset: str) -> DatasetResult | None:
        return next((d for d in self.datasets if d.dataset == dataset), None)

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "backend": self.backend,
            "prompt": self.prompt,
            "mode": self.mode,
            "mean_ap": self.mean_ap,
            "datasets": [asdict(d) for d in self.datasets],
        }
