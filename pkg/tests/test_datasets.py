import logging

import pytest
from hypothesis import given, strategies as st

from fixture_builders import write_dataset
from taxoprompt.datasets import (Dataset, DatasetError, LabeledPair, build_detection_list, build_target_pools,
                                 load_dataset, parse_schema, save_dataset)


def test_two_row_file(tmp_path):
    p = tmp_path / "tiny.tsv"
    write_dataset(p, [("dog", "animal", "True", "hyper", "val"), ("dog", "cat", "False", "coord", "test")])
    ds = load_dataset(p)
    assert ds.name == "tiny" and len(ds) == 2 and ds.n_positive == 1
    assert ds.pairs[1] == LabeledPair("dog", "cat", False, "coord", "test")


def test_headerless_and_schema(tmp_path):
    p = tmp_path / "x.tsv"
    p.write_text("animal\tdog\t1\nplant\tdog\t0\n", encoding="utf-8")
    ds = load_dataset(p, "X", schema="word2,word1,label")
    assert [(q.hypo, q.candidate, q.label) for q in ds.pairs] == [("dog", "animal", True), ("dog", "plant", False)]
    assert ds.pairs[0].fold == "all"
    with pytest.raises(DatasetError):
        parse_schema("word1,label")
    with pytest.raises(DatasetError):
        parse_schema("word1,word2,label,colour")
    assert parse_schema("word1,_,word2,label") == ("word1", "_", "word2", "label")


@pytest.mark.parametrize("rows,match", [
    ([("a", "b", "True", "hyper", "val"), ("a", "b", "False", "random", "val")], "duplicate"),
    ([("a", "a", "True", "hyper", "val")], "both"),
    ([("a", "b", "maybe", "hyper", "val"), ("a", "c", "True", "hyper", "val")], "bad label"),
    ([("a", "b", "True", "hyper", "train")], "fold"),
    ([("a", "b", "False", "random", "val")], "no positive"),
])
def test_bad_files(tmp_path, rows, match):
    p = tmp_path / "bad.tsv"
    write_dataset(p, rows)
    with pytest.raises(DatasetError, match=match):
        load_dataset(p)


def test_error_has_line_number(tmp_path):
    p = tmp_path / "bad.tsv"
    write_dataset(p, [("a", "b", "True", "hyper", "val"), ("a", "c")])
    with pytest.raises(DatasetError, match=":3:"):
        load_dataset(p)


def test_empty_file(tmp_path):
    p = tmp_path / "empty.tsv"
    p.write_text("", encoding="utf-8")
    with pytest.raises(DatasetError):
        load_dataset(p)


def test_positive_with_odd_relation_warns(tmp_path, caplog):
    p = tmp_path / "odd.tsv"
    write_dataset(p, [("a", "b", "True", "mero", "val")])
    with caplog.at_level(logging.WARNING):
        load_dataset(p)
    assert "positive pair" in caplog.text


def test_target_pools():
    ds = Dataset("d", (LabeledPair("a", "x", True, "hyper", "val"), LabeledPair("a", "y", False, "random", "test"),
                       LabeledPair("b", "z", False, "random", "val")))
    pools, skipped = build_target_pools(ds)
    assert len(pools) == 1 and pools[0].candidates == ("x", "y") and pools[0].gold == {"x"}
    assert skipped == [("b", "no positive candidates")]
    pools, _ = build_target_pools(ds, {"test"})
    assert pools == []
    assert build_detection_list(ds) == list(ds.pairs)


_WORD = st.sampled_from(["a", "b", "c", "d", "e", "f"])


@given(st.lists(st.tuples(_WORD, _WORD, st.booleans(), st.sampled_from(["val", "test", "all"])), min_size=1,
                max_size=30, unique_by=lambda r: (r[0], r[1])))
def test_gold_count_invariant(rows):
    rows = [r for r in rows if r[0] != r[1]]
    if not any(r[2] for r in rows):
        return
    ds = Dataset("d", tuple(LabeledPair(h, c, lbl, "hyper" if lbl else "random", f) for h, c, lbl, f in rows))
    for folds in (None, {"val"}, {"test"}, {"val", "test"}):
        pools, _ = build_target_pools(ds, folds)
        selected = [p for p in ds.pairs if folds is None or p.fold == "all" or p.fold in folds]
        assert sum(len(p.gold) for p in pools) == sum(p.label for p in selected)
        assert all(p.gold <= set(p.candidates) for p in pools)


def test_roundtrip(tmp_path):
    src = tmp_path / "src.tsv"
    write_dataset(src, [("dog", "animal", "True", "hyper", "val"), ("# a comment line",),
                        ("dog", "cat", "False", "coord", "test")])
    ds = load_dataset(src, "S")
    out = tmp_path / "out.tsv"
    save_dataset(ds, out)
    assert load_dataset(out, "S") == ds
    assert out.read_text().splitlines()[1:] == [l for l in src.read_text().splitlines()[1:]
                                                if not l.startswith("#")]
