"""Zero-shot hypernym prediction by scoring prompts with a language model."""

from .backend import (Backend, BackendDescriptor, BackendError, HttpBackend, ScoredSequenceRaw, TableBackend, Token,
                      UniformBackend, load_backend, score_batch, score_text)
from .cache import ScoreCache, ScoreCacheKey
from .cohypo import (CohypoPipelineConfig, CohypoResult, EmbeddingStore, augment_pair, discover_cohyponyms,
                     filter_candidates, levenshtein, nearest_neighbors)
from .datasets import Dataset, LabeledPair, TargetPool, build_detection_list, build_target_pools, load_dataset
from .iterative import IterationStep, IterationTrace, evaluate_iterative, run_iterative
from .metrics import (EvalReport, RankedItem, RankedList, average_precision, mean_average_precision, pearson,
                      spearman)
from .prompts import PromptInstance, PromptTemplate, bundled_catalog, instantiate, load_catalog, pluralize
from .scoring import (PairScore, ScoreMode, Scorer, combine_scores, full_score, rank_candidates, score_pair,
                      selective_score)

__version__ = "0.1.0"
