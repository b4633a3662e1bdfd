"""Iterative hypernym-chain ranking.

Starting from the target word, the best candidate so far becomes the new
hyponym ("pivot") and every candidate is rescored against it. Words already
used as pivots get a log score of 0.0, the maximum, so the chain climbs
upward. The loop stops as soon as a step fails to raise the best score among
the not-yet-selected candidates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

from .metrics import SCHEMA_VERSION, RankedList, mean_average_precision
from .scoring import ScoreMode, Scorer, ScoringError

STEP_COLUMNS = ("step 0", "step last", "step mean")


class IterationError(ScoringError):
    """Scoring failed mid-run; ``trace`` holds the steps completed so far."""

    def __init__(self, message: str, trace: "IterationTrace", failures):
        super().__init__(message)
        self.trace = trace
        self.failures = failures


@dataclass(frozen=True)
class IterationStep:
    pivot: str
    scores: dict[str, float]
    max_score_excl_selected: float
    accepted: bool

    def to_dict(self) -> dict:
        return {"pivot": self.pivot, "accepted": self.accepted,
                "max_score_excl_selected": self.max_score_excl_selected,
                "scores": dict(sorted(self.scores.items()))}


@dataclass
class IterationTrace:
    target: str
    candidates: list[str]
    steps: list[IterationStep] = field(default_factory=list)
    selected: list[str] = field(default_factory=list)
    final_ranking_last: RankedList | None = None
    final_ranking_mean: RankedList | None = None

    @property
    def accepted_steps(self) -> list[IterationStep]:
        return [s for s in self.steps if s.accepted]

    def to_dict(self) -> dict:
        def ranking(rl):
            return None if rl is None else [[i.id, i.score] for i in rl]
        return {
            "schema_version": SCHEMA_VERSION,
            "target": self.target,
            "candidates": self.candidates,
            "selected": self.selected,
            "steps": [s.to_dict() for s in self.steps],
            "final_ranking_last": ranking(self.final_ranking_last),
            "final_ranking_mean": ranking(self.final_ranking_mean),
        }


def _mean_scores(steps: Sequence[IterationStep], candidates: Sequence[str]) -> dict[str, float]:
    return {c: math.fsum(s.scores[c] for s in steps) / len(steps) for c in candidates}


def _finish(trace: IterationTrace) -> IterationTrace:
    accepted = trace.accepted_steps
    if accepted:
        trace.final_ranking_last = RankedList.from_scores(accepted[-1].scores)
        trace.final_ranking_mean = RankedList.from_scores(_mean_scores(accepted, trace.candidates))
    return trace


def _score_step(scorer: Scorer, templates, mode: ScoreMode, pivot: str, candidates: Sequence[str],
                selected: set[str], trace: IterationTrace) -> dict[str, float]:
    todo = [c for c in candidates if c not in selected]
    raw, failures = scorer.candidate_scores(templates, mode, pivot, todo)
    if failures:
        _finish(trace)
        raise IterationError(f"{len(failures)} candidates failed with pivot {pivot!r}", trace, failures)
    return {c: 0.0 if c in selected else raw[(pivot, c)] for c in candidates}


def run_iterative(scorer: Scorer, templates, mode: ScoreMode | str, target: str,
                  candidates: Sequence[str], max_steps: int = 10) -> IterationTrace:
    """Run the chain algorithm for one target word.

    ``max_steps`` counts step 0, so ``max_steps=1`` is plain ranking. A
    rejected step stays in ``trace.steps`` (``accepted=False``) but does not
    enter either final ranking.
    """
    mode = ScoreMode(mode)
    candidates = list(candidates)
    if not candidates:
        raise ValueError("no candidates")
    if len(set(candidates)) != len(candidates):
        raise ValueError("candidates must be deduplicated")
    if target in candidates:
        raise ValueError(f"target {target!r} is among its own candidates")
    if max_steps < 1:
        raise ValueError("max_steps must be >= 1")

    trace = IterationTrace(target, candidates)
    scores = _score_step(scorer, templates, mode, target, candidates, set(), trace)
    trace.steps.append(IterationStep(target, scores, max(scores.values()), True))

    selected: set[str] = set()
    best = trace.steps[0].max_score_excl_selected
    while len(trace.steps) < max_steps and len(selected) + 1 < len(candidates):
        mean = RankedList.from_scores(_mean_scores(trace.accepted_steps, candidates))
        pivot = next(i.id for i in mean if i.id not in selected)
        selected.add(pivot)
        trace.selected.append(pivot)
        # the pivot itself is marked like earlier selections (0.0, the log-space maximum)
        scores = _score_step(scorer, templates, mode, pivot, candidates, selected, trace)
        top = max(v for c, v in scores.items() if c not in selected)
        accepted = top > best
        trace.steps.append(IterationStep(pivot, scores, top, accepted))
        if not accepted:
            break
        best = top
    return _finish(trace)


@dataclass
class IterativeResult:
    """MAP of the step-0, step-last and step-mean rankings over a set of pools."""

    dataset: str
    step0: float
    step_last: float
    step_mean: float
    n_targets: int
    traces: list[IterationTrace] = field(default_factory=list)

    def columns(self) -> dict[str, float]:
        return dict(zip(STEP_COLUMNS, (self.step0, self.step_last, self.step_mean)))


def evaluate_iterative(pools, scorer: Scorer, templates, mode: ScoreMode | str, max_steps: int = 10,
                       dataset: str = "") -> IterativeResult:
    """Run the chain algorithm on every target pool and report the three MAPs."""
    if not pools:
        raise ValueError("no target pools")
    first, last, mean, traces = [], [], [], []
    for pool in pools:
        trace = run_iterative(scorer, templates, mode, pool.target, list(pool.candidates), max_steps)
        traces.append(trace)
        first.append(RankedList.from_scores(trace.steps[0].scores, pool.gold))
        last.append(trace.final_ranking_last.with_labels(pool.gold))
        mean.append(trace.final_ranking_mean.with_labels(pool.gold))
    return IterativeResult(dataset, mean_average_precision(first), mean_average_precision(last),
                           mean_average_precision(mean), len(pools), traces)
