"""Deterministic backends and data used across the test suite."""

from __future__ import annotations

import numpy as np

from taxoprompt.backend import TableBackend, whitespace_spans
from taxoprompt.datasets import TargetPool


def sentence_backend(totals: dict[str, float], **kwargs) -> TableBackend:
    """Whitespace-tokenized sentences whose whole log-prob sits on the last token."""
    seqs = {}
    for text, total in totals.items():
        toks = [text[s:e] for s, e in whitespace_spans(text)]
        seqs[text] = [(t, 0.0) for t in toks[:-1]] + [(toks[-1], total)]
    return TableBackend.from_sequences(seqs, **kwargs)


# hornet chain: step -> pivot -> candidate scores for "{hypo} or some other {hyper}"
HORNET_TEMPLATE = "{hypo} or some other {hyper}"
HORNET_CANDIDATES = ["insect", "animal", "creature", "object", "wasp", "tree", "car"]
HORNET_GOLD = frozenset({"insect", "animal", "creature"})
HORNET_SCORES = {
    "hornet": {"insect": -34.64, "wasp": -36.0, "object": -37.0, "animal": -40.0,
               "creature": -42.0, "tree": -50.0, "car": -55.0},
    "insect": {"animal": -29.78, "creature": -31.0, "object": -33.0, "wasp": -45.0,
               "tree": -48.0, "car": -52.0},
    "animal": {"creature": -25.0, "object": -30.0, "tree": -40.0, "wasp": -44.0, "car": -50.0},
    "creature": {"object": -27.0, "tree": -35.0, "wasp": -41.0, "car": -49.0},
}


def hornet_backend(extra_pivots: dict | None = None) -> TableBackend:
    totals = {}
    for pivot, row in {**HORNET_SCORES, **(extra_pivots or {})}.items():
        for cand, s in row.items():
            totals[HORNET_TEMPLATE.format(hypo=pivot, hyper=cand)] = s
    return sentence_backend(totals)


def hornet_pool() -> TargetPool:
    return TargetPool("hornet", tuple(HORNET_CANDIDATES), HORNET_GOLD)


# co-hyponym search for "jeweller": nearest neighbours in similarity order
JEWELLER_NEIGHBORS = [
    "jeweler", "jewellers", "goldsmith", "jewellery", "jewelers", "silversmith", "Jeweller", "Jewellers",
    "jewler", "goldsmiths", "milliner", "shopkeeper", "watchmaker", "glassworker", "pawnbroker", "glazier",
    "engraver", "artisan", "optician", "blacksmith", "craftsman", "shoemaker", "sculptor", "dressmaker",
]
JEWELLER_FAR = ["ocean", "triangle", "xylophone"]
JEWELLER_LEXICON = [
    "jeweler", "jeweller", "goldsmith", "goldsmiths", "silversmith", "milliner", "shopkeeper", "watchmaker",
    "glassworker", "pawnbroker", "glazier", "engraver", "artisan", "optician", "blacksmith", "craftsman",
    "shoemaker", "sculptor", "dressmaker", "ocean", "triangle",
]
JEWELLER_RERANK = ["watchmaker", "artisan", "optician", "blacksmith", "goldsmith", "craftsman", "shoemaker",
                   "silversmith", "sculptor", "dressmaker"]
COHYPO_TEMPLATE = "such as {hypo}, {cohypo} and other of the same type"


def jeweller_store_rows():
    """(word, vector) rows: similarity to "jeweller" falls strictly along the neighbour list."""
    rows = [("jeweller", [1.0, 0.0, 0.0])]
    for i, w in enumerate(JEWELLER_NEIGHBORS):
        s = 0.95 - 0.02 * i
        rows.append((w, [s, float(np.sqrt(1 - s * s)), 0.0]))
    for i, w in enumerate(JEWELLER_FAR):
        rows.append((w, [-0.5 - 0.1 * i, 0.0, 1.0]))
    return rows


def write_embeddings(path, rows) -> None:
    dim = len(rows[0][1])
    lines = [f"{len(rows)} {dim}"] + [w + " " + " ".join(repr(float(x)) for x in v) for w, v in rows]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def jeweller_rerank_backend() -> TableBackend:
    totals = {}
    words = [w for w in JEWELLER_NEIGHBORS if w not in JEWELLER_RERANK] + JEWELLER_RERANK
    for w in words:
        rank = JEWELLER_RERANK.index(w) if w in JEWELLER_RERANK else 10 + words.index(w)
        totals[COHYPO_TEMPLATE.format(hypo="jeweller", cohypo=w)] = -20.0 - rank
    return sentence_backend(totals)


def brute_average_precision(labels) -> float:
    """Precision at every positive rank, averaged; plain loops, no shortcuts."""
    labels = list(labels)
    total, hits = 0.0, 0
    for i in range(len(labels)):
        if labels[i]:
            hits += 1
            correct = 0
            for j in range(i + 1):
                if labels[j]:
                    correct += 1
            total += correct / (i + 1)
    return total / hits


def write_dataset(path, rows, header=True) -> None:
    lines = ["word1\tword2\tlabel\trelation\tfold"] if header else []
    lines += ["\t".join(str(c) for c in r) for r in rows]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
