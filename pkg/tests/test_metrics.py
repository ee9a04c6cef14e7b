from __future__ import annotations

import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.metrics import accuracy_score, f1_score

from builders import corpus_of, labelled
from tod_audit.corpus import Corpus
from tod_audit.errors import ConfigError
from tod_audit.metrics import (
    SplitSpec,
    classification_scores,
    evaluate,
    history_probe,
    split_corpus,
)
from tod_audit.synth import SynthSpec, generate


def _ids_corpus(n, prefix="d"):
    return corpus_of(*(labelled(("u", ["A"])) for _ in range(n)), prefix=prefix)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(st.sampled_from("ABCDE"), st.sampled_from("ABCDEF")), min_size=1, max_size=60))
def test_scores_match_sklearn(pairs):
    gold = [g for g, _ in pairs]
    pred = [p for _, p in pairs]
    s = classification_scores(gold, pred)
    labels = sorted(set(gold) | set(pred))
    assert s.accuracy == pytest.approx(accuracy_score(gold, pred), abs=1e-12)
    assert s.macro_f1 == pytest.approx(f1_score(gold, pred, labels=labels, average="macro", zero_division=0), abs=1e-12)
    assert s.micro_f1 == pytest.approx(f1_score(gold, pred, average="micro"), abs=1e-12)
    assert 0 <= s.macro_f1 <= 1


def test_single_class():
    s = classification_scores(["A"] * 5, ["A"] * 5)
    assert s.accuracy == s.macro_f1 == 1.0


def test_split_examples():
    c = _ids_corpus(10)
    train, test = split_corpus(c, SplitSpec(0.8, seed=0))
    assert (len(train), len(test)) == (8, 2)
    assert set(train.ids).isdisjoint(test.ids) and set(train.ids) | set(test.ids) == set(c.ids)
    again, _ = split_corpus(c, SplitSpec(0.8, seed=0))
    assert again.ids == train.ids
    with pytest.raises(ConfigError):
        SplitSpec(1.0)
    with pytest.raises(ConfigError):
        SplitSpec(0.0)


def test_split_8534():
    n = 8534
    c = _ids_corpus(n, prefix="MUL")
    for seed in (0, 1, 2**63 + 5):
        train, _ = split_corpus(c, SplitSpec(0.8, seed=seed))
        assert abs(len(train) - 6827) <= 1


def test_split_depends_on_id_seed_fraction_only():
    c = _ids_corpus(50)
    shuffled = list(c.dialogues)
    random.Random(1).shuffle(shuffled)
    a, _ = split_corpus(c, SplitSpec(0.7, seed=3))
    b, _ = split_corpus(Corpus(tuple(shuffled)), SplitSpec(0.7, seed=3))
    assert sorted(a.ids) == sorted(b.ids)


def test_conflict_free_train_scores_perfectly():
    c = generate(SynthSpec(dialogues=80, seed=4, horizon=2))
    row = evaluate("memorize", c, None, 10)
    assert row.train.accuracy == row.train.macro_f1 == 1.0


def test_evaluate_invariant_under_reordering():
    c = generate(SynthSpec(dialogues=60, seed=6, injections=({"alternatives": {"a0": 0.5, "a2": 0.5}},)))
    train, test = split_corpus(c)
    a = evaluate("backoff", train, test, 3)
    b = evaluate("backoff", Corpus(tuple(reversed(train.dialogues))), Corpus(tuple(reversed(test.dialogues))), 3)
    assert a.to_json() == b.to_json()


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000))
def test_train_accuracy_monotone_in_k(seed):
    c = generate(SynthSpec(dialogues=30, seed=seed, horizon=3, injections=({"alternatives": {"a0": 0.5, "a1": 0.5}},)))
    accs = [evaluate("memorize", c, None, k).train.exact_accuracy for k in range(1, 8)]
    assert accs == sorted(accs)


def test_probe_identical_ks():
    c = generate(SynthSpec(dialogues=50, seed=7, horizon=3))
    probe = history_probe(c, [10, 10])
    assert probe.deltas
    for d in probe.deltas:
        assert d["train_accuracy"] == d["test_accuracy"] == d["train_macro_f1"] == d["test_macro_f1"] == 0


def test_probe_rows_cover_models_and_ks():
    c = generate(SynthSpec(dialogues=50, seed=7))
    probe = history_probe(c)
    assert [(r.model, r.k) for r in probe.rows] == [("memorize", 10), ("backoff", 10), ("memorize", 2), ("backoff", 2)]
    with pytest.raises(ConfigError):
        history_probe(c, [])
