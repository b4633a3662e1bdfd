"""Full and selective prompt scoring, prompt combination and candidate ranking.

All scores are natural-log sums of token probabilities. ``exp`` of a score is
the sentence (or suffix) probability; since ``exp`` is monotone, rankings are
computed in log space throughout.
"""

from __future__ import annotations

import enum
import logging
import math
import warnings
from dataclasses import dataclass
from typing import Sequence

from .backend import Backend, ScoredSequenceRaw
from .cache import ScoreCache, ScoreCacheKey
from .metrics import RankedList
from .prompts import PromptInstance, PromptTemplate, TemplateError, instantiate

logger = logging.getLogger(__name__)


class ScoreMode(str, enum.Enum):
    FULL = "full"
    SELECTIVE = "selective"


class ScoringError(Exception):
    pass


class UndefinedScoreError(ScoringError):
    pass


class IncompatibleTemplateError(ScoringError, ValueError):
    pass


class BoundaryWarning(UserWarning):
    """The scored slot starts inside a token rather than at its boundary."""


class PartialScoringError(ScoringError):
    """Some candidates could not be scored; ``partial`` ranks the rest."""

    def __init__(self, message: str, partial, failures):
        super().__init__(message)
        self.partial = partial
        self.failures = failures


@dataclass(frozen=True)
class PairScore:
    hypo: str
    hyper: str | None
    template_id: str
    mode: ScoreMode
    log_score: float
    cohypo: str | None = None

    @property
    def prob(self) -> float:
        return math.exp(self.log_score)


def full_score(seq: ScoredSequenceRaw) -> float:
    scored = seq.scored_tokens
    if not scored:
        raise UndefinedScoreError(f"no scored tokens in {seq.text!r}")
    return math.fsum(t.logprob for t in scored)


def slot_token_index(seq: ScoredSequenceRaw, char_pos: int) -> int:
    """Index of the token whose span contains (or starts at) ``char_pos``.

    A slot whose preceding space is glued to its first token is a clean
    boundary. A slot starting in the middle of a word falls back to the
    containing token, with a warning.
    """
    if not 0 <= char_pos < len(seq.text):
        raise ValueError(f"slot offset {char_pos} outside text of length {len(seq.text)}")
    for k, tok in enumerate(seq.tokens):
        if tok.char_start <= char_pos < tok.char_end:
            head = seq.text[tok.char_start:char_pos]
            if head.strip():
                warnings.warn(f"slot at {char_pos} starts mid-token {tok.text!r} in {seq.text!r}; "
                              "scoring from the token start", BoundaryWarning, stacklevel=3)
            return k
    raise ValueError(f"no token covers offset {char_pos}")


def selective_score(seq: ScoredSequenceRaw, hyper_char_start: int, hyper_char_end: int | None = None) -> float:
    """Sum of log-probs from the token holding ``hyper_char_start`` on.

    By default the sum runs to the end of the sequence. With
    ``hyper_char_end`` it stops at the last token overlapping the slot, so
    any right context after the slot is ignored.
    """
    k = slot_token_index(seq, hyper_char_start)
    tokens = seq.tokens[k:]
    if hyper_char_end is not None:
        tokens = [t for t in tokens if t.char_start < hyper_char_end]
    scored = [t.logprob for t in tokens if t.logprob is not None]
    if not scored:
        raise UndefinedScoreError(f"no scored tokens in the slot suffix of {seq.text!r}")
    return math.fsum(scored)


def combine_scores(scores: Sequence[PairScore], space: str = "log") -> float:
    """Average several prompts' scores for one pair.

    ``space="log"`` takes the arithmetic mean of log scores; ``"prob"``
    averages probabilities and returns the log of that mean.
    """
    if not scores:
        raise ValueError("combine_scores needs at least one score")
    first = scores[0]
    for s in scores[1:]:
        if (s.hypo, s.hyper, s.cohypo, s.mode) != (first.hypo, first.hyper, first.cohypo, first.mode):
            raise ValueError("combine_scores got scores for different pairs or modes")
    ids = [s.template_id for s in scores]
    if len(set(ids)) != len(ids):
        raise ValueError("combine_scores got the same template twice")
    return _mean_log([s.log_score for s in scores], space)


def _mean_log(values: Sequence[float], space: str) -> float:
    if space == "log":
        return math.fsum(values) / len(values)
    if space == "prob":
        top = max(values)
        return top + math.log(math.fsum(math.exp(v - top) for v in values) / len(values))
    raise ValueError(f"unknown combination space {space!r}")


def scored_slot(template: PromptTemplate) -> str:
    """Slot holding the candidate: ``hyper``, or ``cohypo`` for co-hyponym prompts."""
    return "hyper" if "hyper" in template.slots else "cohypo"


@dataclass(frozen=True)
class PairRequest:
    template: PromptTemplate
    hypo: str
    hyper: str | None = None
    cohypo: str | None = None


@dataclass
class PairFailure:
    index: int
    request: PairRequest
    error: Exception


_NO_CACHE = object()


class Scorer:
    """Scores prompt instances against one backend, with caching.

    ``cache`` defaults to a fresh in-memory :class:`ScoreCache`; pass ``None``
    to disable caching. ``lowercase`` lowercases terms when prompts are
    instantiated (results are still keyed by the original strings).
    ``selective_span`` is ``"suffix"`` (score to the end of the sentence) or
    ``"slot"`` (score only the slot's tokens).
    """

    def __init__(self, backend: Backend, cache: ScoreCache | None = _NO_CACHE, lowercase: bool = False,
                 parallelism: int = 1, selective_span: str = "suffix", combine_space: str = "log"):
        if selective_span not in ("suffix", "slot"):
            raise ValueError(f"selective_span must be 'suffix' or 'slot', not {selective_span!r}")
        if combine_space not in ("log", "prob"):
            raise ValueError(f"combine_space must be 'log' or 'prob', not {combine_space!r}")
        self.backend = backend
        self.cache = ScoreCache() if cache is _NO_CACHE else cache
        self.lowercase = lowercase
        self.parallelism = parallelism
        self.selective_span = selective_span
        self.combine_space = combine_space

    # -- single instances -------------------------------------------------

    def _instance(self, req: PairRequest) -> PromptInstance:
        fold = str.lower if self.lowercase else (lambda s: s)
        return instantiate(req.template, fold(req.hypo),
                           None if req.hyper is None else fold(req.hyper),
                           None if req.cohypo is None else fold(req.cohypo))

    def _key(self, inst: PromptInstance, template: PromptTemplate, mode: ScoreMode) -> ScoreCacheKey:
        if mode is ScoreMode.FULL:
            return ScoreCacheKey(self.backend.backend_id, inst.text, mode.value, None, None)
        span = inst.slot_span(scored_slot(template))
        if span is None:
            raise IncompatibleTemplateError(f"template {template.id!r} has no slot to score selectively")
        end = span[1] if self.selective_span == "slot" else None
        return ScoreCacheKey(self.backend.backend_id, inst.text, mode.value, span[0], end)

    @staticmethod
    def _compute(seq: ScoredSequenceRaw, key: ScoreCacheKey) -> float:
        if key.mode == ScoreMode.FULL.value:
            return full_score(seq)
        return selective_score(seq, key.k_char, key.k_end)

    # -- batches ----------------------------------------------------------

    def score_pairs(self, requests: Sequence[PairRequest], mode: ScoreMode | str):
        """Score many pairs; returns ``(scores, failures)`` in input order.

        A bundled template is scored as the mean of its variants. Texts not in
        the cache are sent to the backend in one parallel batch.
        """
        mode = ScoreMode(mode)
        plans: list[list[ScoreCacheKey] | None] = []
        failures: list[PairFailure] = []
        for i, req in enumerate(requests):
            try:
                if mode is ScoreMode.SELECTIVE and scored_slot(req.template) not in req.template.slots:
                    raise IncompatibleTemplateError(f"template {req.template.id!r} cannot be scored selectively")
                plans.append([self._key(self._instance(PairRequest(v, req.hypo, req.hyper, req.cohypo)), v, mode)
                              for v in req.template.variants()])
            except (TemplateError, ScoringError) as exc:
                plans.append(None)
                failures.append(PairFailure(i, req, exc))

        values: dict[ScoreCacheKey, float] = {}
        missing: dict[str, list[ScoreCacheKey]] = {}
        for keys in plans:
            for key in keys or ():
                if key in values or key.text in missing and key in missing[key.text]:
                    continue
                hit = self.cache.get(key) if self.cache is not None else None
                if hit is not None:
                    values[key] = hit
                else:
                    missing.setdefault(key.text, []).append(key)

        key_errors: dict[ScoreCacheKey, Exception] = {}
        if missing:
            texts = list(missing)
            batch = self.backend.score_batch(texts, self.parallelism)
            failed = {e.index: e.error for e in batch.errors}
            for j, text in enumerate(texts):
                for key in missing[text]:
                    if j in failed:
                        key_errors[key] = failed[j]
                        continue
                    seq = batch.results[j]
                    try:
                        values[key] = self._compute(seq, key)
                    except (ScoringError, ValueError) as exc:
                        key_errors[key] = exc
                        continue
                    if self.cache is not None:
                        self.cache.put(key, values[key], len(seq.tokens))

        scores: list[PairScore | None] = []
        for i, (req, keys) in enumerate(zip(requests, plans)):
            if keys is None:
                scores.append(None)
                continue
            err = next((key_errors[k] for k in keys if k in key_errors), None)
            if err is not None:
                failures.append(PairFailure(i, req, err))
                scores.append(None)
                continue
            log_score = math.fsum(values[k] for k in keys) / len(keys)
            scores.append(PairScore(req.hypo, req.hyper, req.template.id, mode, log_score, req.cohypo))
        failures.sort(key=lambda f: f.index)
        return scores, failures

    def score_pair(self, template: PromptTemplate, mode: ScoreMode | str, hypo: str,
                   hyper: str | None = None, cohypo: str | None = None) -> PairScore:
        scores, failures = self.score_pairs([PairRequest(template, hypo, hyper, cohypo)], mode)
        if failures:
            raise failures[0].error
        return scores[0]

    # -- candidates -------------------------------------------------------

    def candidate_scores(self, templates: PromptTemplate | Sequence[PromptTemplate], mode: ScoreMode | str,
                         hypo: str, candidates: Sequence[str], cohypo: str | None = None):
        """Log score per candidate, averaging over ``templates`` when several.

        The candidate fills each template's scored slot. Returns
        ``(scores, failures)`` where failed candidates are absent from
        ``scores``.
        """
        return self.score_grid(templates, mode, [(hypo, c, cohypo) for c in candidates])

    def score_grid(self, templates: PromptTemplate | Sequence[PromptTemplate], mode: ScoreMode | str,
                   triples: Sequence[tuple[str, str, str | None]]):
        """Combined score per ``(hypo, candidate, cohypo)`` triple.

        Returns ``(scores, failures)``: ``scores`` maps ``(hypo, candidate)``
        to a log score; ``failures`` lists ``(hypo, candidate, error)``.
        """
        templates = [templates] if isinstance(templates, PromptTemplate) else list(templates)
        if not templates:
            raise ValueError("no templates given")
        if len({t.id for t in templates}) != len(templates):
            raise ValueError("duplicate template in combination")
        reqs = []
        for hypo, cand, cohypo in triples:
            for t in templates:
                if scored_slot(t) == "hyper":
                    reqs.append(PairRequest(t, hypo, cand, cohypo))
                else:
                    reqs.append(PairRequest(t, hypo, None, cand))
        flat, flat_failures = self.score_pairs(reqs, mode)
        n = len(templates)
        scores, failures = {}, []
        errors = {f.index: f.error for f in flat_failures}
        for j, (hypo, cand, _) in enumerate(triples):
            chunk = flat[j * n:(j + 1) * n]
            bad = next((errors[j * n + i] for i in range(n) if j * n + i in errors), None)
            if bad is not None:
                failures.append((hypo, cand, bad))
                continue
            scores[(hypo, cand)] = chunk[0].log_score if n == 1 else combine_scores(chunk, self.combine_space)
        return scores, failures

    def rank_candidates(self, templates: PromptTemplate | Sequence[PromptTemplate], mode: ScoreMode | str,
                        hypo: str, candidates: Sequence[str], cohypo: str | None = None) -> RankedList:
        if not candidates:
            raise ValueError("no candidates to rank")
        if len(set(candidates)) != len(candidates):
            raise ValueError("candidates must be deduplicated")
        scores, failures = self.candidate_scores(templates, mode, hypo, candidates, cohypo)
        ranked = RankedList.from_scores({c: s for (_, c), s in scores.items()})
        if failures:
            raise PartialScoringError(f"{len(failures)} of {len(candidates)} candidates failed for {hypo!r}",
                                      ranked, failures)
        return ranked


def score_pair(backend: Backend, template: PromptTemplate, mode: ScoreMode | str, hypo: str,
               hyper: str | None = None, cohypo: str | None = None, cache: ScoreCache | None = None) -> PairScore:
    return Scorer(backend, cache=cache).score_pair(template, mode, hypo, hyper, cohypo)


def rank_candidates(backend: Backend, templates, mode: ScoreMode | str, hypo: str,
                    candidates: Sequence[str], cache: ScoreCache | None = None) -> RankedList:
    return Scorer(backend, cache=cache).rank_candidates(templates, mode, hypo, candidates)
