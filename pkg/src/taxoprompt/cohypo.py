"""Co-hyponym discovery and co-hyponym-augmented prompts.

Discovery runs four stages for a target word: nearest neighbours in an
embedding space, a spelling filter (edit distance to the target), a lexicon
filter, and a rerank with a co-hyponym prompt scored by the language model.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .prompts import (DEFAULT_COHYPO_TEMPLATE, PromptInstance, PromptTemplate, TemplateError, bundled_catalog,
                      instantiate)
from .scoring import ScoreMode, Scorer

logger = logging.getLogger(__name__)


class OOVError(KeyError):
    def __str__(self) -> str:
        return f"{self.args[0]!r} is not in the embedding vocabulary"


class ConfigError(ValueError):
    pass


class EmbeddingStore:
    """Word vectors held as a unit-normalised matrix for cosine search."""

    def __init__(self, vocabulary: Sequence[str], vectors):
        vectors = np.asarray(vectors, dtype=np.float64)
        if vectors.ndim != 2 or vectors.shape[0] != len(vocabulary):
            raise ValueError("need one vector per vocabulary word")
        if len(set(vocabulary)) != len(vocabulary):
            raise ValueError("vocabulary has duplicate words")
        self.vocabulary = list(vocabulary)
        self.vectors = vectors
        self.index = {w: i for i, w in enumerate(self.vocabulary)}
        norms = np.linalg.norm(vectors, axis=1, keepdims=True)
        norms[norms == 0] = 1.0
        self._unit = vectors / norms

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def __contains__(self, word: str) -> bool:
        return word in self.index

    def __len__(self) -> int:
        return len(self.vocabulary)

    @classmethod
    def load(cls, path) -> "EmbeddingStore":
        """Read the textual word-vector format: ``count dim`` then ``word v1 .. vd`` lines."""
        words, rows, seen = [], [], set()
        with open(path, encoding="utf-8") as f:
            header = f.readline().split()
            if len(header) != 2:
                raise ValueError(f"{path}: first line must be '<count> <dim>'")
            count, dim = int(header[0]), int(header[1])
            for lineno, line in enumerate(f, 2):
                parts = line.rstrip("\n").rstrip(" ").split(" ")
                if len(parts) == 1 and not parts[0]:
                    continue
                if len(parts) != dim + 1:
                    raise ValueError(f"{path}:{lineno}: expected {dim} values, got {len(parts) - 1}")
                if parts[0] in seen:
                    # keep the first vector of a repeated word
                    continue
                seen.add(parts[0])
                words.append(parts[0])
                rows.append([float(x) for x in parts[1:]])
        if len(words) != count:
            logger.warning("%s: header says %d words, read %d", path, count, len(words))
        return cls(words, np.array(rows).reshape(len(words), dim))

    def similarities(self, target: str) -> np.ndarray:
        if target not in self.index:
            raise OOVError(target)
        return self._unit @ self._unit[self.index[target]]


def nearest_neighbors(store: EmbeddingStore, target: str, n: int) -> list[str]:
    """Top-``n`` words by cosine similarity to ``target`` (target excluded)."""
    if n < 1:
        raise ValueError("n must be >= 1")
    sims = store.similarities(target)
    sims[store.index[target]] = -np.inf
    words = store.vocabulary
    n = min(n, len(words) - 1)
    if n <= 0:
        return []
    # every word tied with the n-th best must be considered for the tie-break
    cutoff = np.partition(sims, len(sims) - n)[len(sims) - n]
    pool = np.flatnonzero(sims >= cutoff)
    order = sorted(pool, key=lambda i: (-sims[i], words[i]))
    return [words[i] for i in order[:n]]


def levenshtein(a: str, b: str) -> int:
    """Edit distance with unit-cost insertions, deletions and substitutions."""
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, 1):
        cur = [i]
        for j, cb in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


def load_lexicon(path) -> frozenset[str]:
    """One lemma per line; stored lowercased. WordNet multiword lemmas may use '_'."""
    words = set()
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if line and not line.startswith("#"):
            words.add(line.lower())
            words.add(line.lower().replace("_", " "))
    return frozenset(words)


@dataclass
class CohypoPipelineConfig:
    lexicon: frozenset[str] = frozenset()
    top_n_neighbors: int = 100
    levenshtein_min: int = 3
    rerank_template: PromptTemplate | None = None
    rerank_mode: ScoreMode = ScoreMode.FULL
    keep_k: int = 10

    def __post_init__(self):
        if not self.top_n_neighbors >= self.keep_k >= 1:
            raise ConfigError("need top_n_neighbors >= keep_k >= 1")
        self.rerank_mode = ScoreMode(self.rerank_mode)


@dataclass
class CohypoResult:
    target: str
    neighbors: list[str] = field(default_factory=list)
    after_filter: list[str] = field(default_factory=list)
    reranked: list[str] = field(default_factory=list)
    scores: dict[str, float] = field(default_factory=dict)

    @property
    def best(self) -> str | None:
        return self.reranked[0] if self.reranked else None

    def to_dict(self) -> dict:
        return {
            "target": self.target,
            "stages": {
                "neighbors": self.neighbors,
                "after_filter": self.after_filter,
                "reranked": self.reranked,
            },
            "rerank_scores": {w: self.scores[w] for w in self.reranked},
        }


def filter_candidates(target: str, candidates: Iterable[str], config: CohypoPipelineConfig) -> list[str]:
    """Drop spelling variants of ``target`` and words missing from the lexicon.

    Both tests are case-insensitive; input order is kept.
    """
    if not config.lexicon:
        raise ConfigError("the co-hyponym filter needs a non-empty lexicon")
    t = target.lower()
    return [c for c in candidates
            if levenshtein(t, c.lower()) >= config.levenshtein_min and c.lower() in config.lexicon]


def rerank_cohyponyms(scorer: Scorer, config: CohypoPipelineConfig, target: str,
                      candidates: Sequence[str]) -> tuple[list[str], dict[str, float]]:
    template = config.rerank_template
    if template is None:
        template = next(t for t in bundled_catalog("cohyponym") if t.id == DEFAULT_COHYPO_TEMPLATE)
    if template.family != "cohyponym":
        raise ConfigError(f"rerank template {template.id!r} is not a co-hyponym prompt")
    if not candidates:
        return [], {}
    ranked = scorer.rank_candidates(template, config.rerank_mode, target, list(dict.fromkeys(candidates)))
    kept = ranked.items[:config.keep_k]
    return [i.id for i in kept], {i.id: i.score for i in kept}


def discover_cohyponyms(store: EmbeddingStore, scorer: Scorer, config: CohypoPipelineConfig,
                        target: str) -> CohypoResult:
    neighbors = nearest_neighbors(store, target, config.top_n_neighbors)
    kept = filter_candidates(target, neighbors, config)
    reranked, scores = rerank_cohyponyms(scorer, config, target, kept)
    return CohypoResult(target, neighbors, kept, reranked, scores)


def augment_pair(template: PromptTemplate, hypo: str, hyper: str, cohypo: str | None) -> PromptInstance:
    """Hypernym prompt instance with a co-hyponym listed next to the hyponym."""
    if template.family != "cohypo_augmented":
        raise TemplateError(f"template {template.id!r} is not co-hyponym-augmented")
    if cohypo is None:
        raise TemplateError("augment_pair needs a co-hyponym")
    return instantiate(template, hypo, hyper, cohypo)
