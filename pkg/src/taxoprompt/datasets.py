"""Hypernymysuite-format datasets, per-target candidate pools and detection lists.

Rows are ``word1 TAB word2 TAB label TAB relation TAB fold``; a header line is
optional. ``schema`` remaps columns for files laid out differently.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

logger = logging.getLogger(__name__)

DEFAULT_SCHEMA = ("word1", "word2", "label", "relation", "fold")
KNOWN_DATASETS = ("BLESS", "LEDS", "EVAL", "SHWARTZ", "WBLESS")
FOLDS = ("val", "test", "all")

_TRUE = {"true", "1", "yes", "t"}
_FALSE = {"false", "0", "no", "f"}


class DatasetError(ValueError):
    def __init__(self, message: str, path=None, lineno: int | None = None):
        where = f"{path}:{lineno}: " if lineno is not None else (f"{path}: " if path else "")
        super().__init__(where + message)
        self.lineno = lineno


@dataclass(frozen=True)
class LabeledPair:
    hypo: str
    candidate: str
    label: bool
    relation: str = "unknown"
    fold: str = "all"

    @property
    def id(self) -> str:
        return f"{self.hypo}\t{self.candidate}"


@dataclass(frozen=True)
class Dataset:
    name: str
    pairs: tuple[LabeledPair, ...]

    def __post_init__(self):
        if not any(p.label for p in self.pairs):
            raise DatasetError(f"dataset {self.name} has no positive pairs")

    @property
    def n_positive(self) -> int:
        return sum(p.label for p in self.pairs)

    def __len__(self) -> int:
        return len(self.pairs)


@dataclass(frozen=True)
class TargetPool:
    target: str
    candidates: tuple[str, ...]
    gold: frozenset[str]


def parse_schema(spec: str | Sequence[str] | None) -> tuple[str, ...]:
    if spec is None:
        return DEFAULT_SCHEMA
    cols = tuple(c.strip() for c in (spec.split(",") if isinstance(spec, str) else spec))
    for required in ("word1", "word2", "label"):
        if required not in cols:
            raise DatasetError(f"schema {cols} lacks a {required} column")
    unknown = set(cols) - set(DEFAULT_SCHEMA) - {"_"}
    if unknown:
        raise DatasetError(f"unknown schema columns {sorted(unknown)} (use '_' to skip a column)")
    return cols


def _parse_label(value: str) -> bool | None:
    v = value.strip().lower()
    if v in _TRUE:
        return True
    if v in _FALSE:
        return False
    return None


def load_dataset(path, name: str | None = None, schema=None) -> Dataset:
    path = Path(path)
    cols = parse_schema(schema)
    text = path.read_text(encoding="utf-8")
    pairs: list[LabeledPair] = []
    seen: dict[tuple[str, str], int] = {}
    first_data = True
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.rstrip("\r")
        if not line.strip() or line.startswith("#"):
            continue
        fields = line.split("\t")
        if len(fields) < len(cols):
            raise DatasetError(f"expected {len(cols)} tab-separated columns, got {len(fields)}", path, lineno)
        row = dict(zip(cols, fields))
        label = _parse_label(row["label"])
        if label is None:
            if first_data:
                first_data = False  # header line
                continue
            raise DatasetError(f"bad label {row['label']!r}", path, lineno)
        first_data = False
        hypo, cand = row["word1"].strip(), row["word2"].strip()
        if not hypo or not cand:
            raise DatasetError("empty term", path, lineno)
        if hypo == cand:
            raise DatasetError(f"hyponym and candidate are both {hypo!r}", path, lineno)
        fold = row.get("fold", "all").strip().lower() or "all"
        if fold not in FOLDS:
            raise DatasetError(f"unknown fold {fold!r}", path, lineno)
        relation = row.get("relation", "hyper" if label else "unknown").strip() or "unknown"
        if label and "hyper" not in relation.lower():
            logger.warning("%s:%d: positive pair with relation %r", path, lineno, relation)
        if (hypo, cand) in seen:
            raise DatasetError(f"duplicate pair ({hypo}, {cand}), first seen on line {seen[(hypo, cand)]}",
                               path, lineno)
        seen[(hypo, cand)] = lineno
        pairs.append(LabeledPair(hypo, cand, label, relation, fold))
    if not pairs:
        raise DatasetError("no data rows", path)
    ds = Dataset(name or path.stem, tuple(pairs))
    logger.info("loaded %s: %d pairs, %d positive", ds.name, len(ds), ds.n_positive)
    return ds


def save_dataset(ds: Dataset, path) -> None:
    lines = ["\t".join(DEFAULT_SCHEMA)]
    lines += [f"{p.hypo}\t{p.candidate}\t{p.label}\t{p.relation}\t{p.fold}" for p in ds.pairs]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _fold_selected(fold: str, folds: Iterable[str] | None) -> bool:
    return folds is None or "all" in folds or fold == "all" or fold in folds


def build_target_pools(ds: Dataset, folds: Iterable[str] | None = None):
    """One candidate pool per target word.

    Returns ``(pools, skipped)`` where ``skipped`` lists ``(target, reason)``
    for targets without any positive candidate (AP is undefined there).
    """
    folds = None if folds is None else set(folds)
    order: list[str] = []
    cands: dict[str, list[str]] = {}
    gold: dict[str, set[str]] = {}
    for p in ds.pairs:
        if not _fold_selected(p.fold, folds):
            continue
        if p.hypo not in cands:
            order.append(p.hypo)
            cands[p.hypo], gold[p.hypo] = [], set()
        if p.candidate not in cands[p.hypo]:
            cands[p.hypo].append(p.candidate)
        if p.label:
            gold[p.hypo].add(p.candidate)
    pools, skipped = [], []
    for t in order:
        if gold[t]:
            pools.append(TargetPool(t, tuple(cands[t]), frozenset(gold[t])))
        else:
            skipped.append((t, "no positive candidates"))
    return pools, skipped


def build_detection_list(ds: Dataset) -> list[LabeledPair]:
    """All pairs of every fold, in file order, for the global AP ranking."""
    return list(ds.pairs)
