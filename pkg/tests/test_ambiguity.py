from __future__ import annotations

import itertools
from collections import Counter

from hypothesis import given, settings
from hypothesis import strategies as st

from builders import corpus_of, labelled
from tod_audit.ambiguity import find_conflicts, max_conflict_free_size, prune, verify_unambiguous
from tod_audit.corpus import Corpus
from tod_audit.policy import dialogue_tokens
from tod_audit.synth import SynthSpec, generate


def _pairwise_conflicts(corpus, k):
    # oracle: compare every pair of (window, label) occurrences directly
    occ = []
    for d in corpus.dialogues:
        tokens, targets = dialogue_tokens(d)
        occ += [(tuple(tokens[max(0, p - k):p]), label) for p, label in targets]
    keys = set()
    for (k1, l1), (k2, l2) in itertools.combinations(occ, 2):
        if k1 == k2 and l1 != l2:
            keys.add(k1)
    return {key: Counter(lab for kk, lab in occ if kk == key) for key in keys}


def _exhaustive_max(corpus, k):
    best = 0
    ds = corpus.dialogues
    for r in range(len(ds), 0, -1):
        for combo in itertools.combinations(ds, r):
            if not find_conflicts(Corpus(combo), k):
                return r
    return best


def test_deterministic_corpus_has_no_conflicts():
    c = generate(SynthSpec(dialogues=40, seed=1))
    assert find_conflicts(c, 10) == []
    result = prune(c, 10)
    assert result.rounds == 1 and result.kept.ids == c.ids and not result.removed


def test_shared_prefix_conflict():
    c = corpus_of(labelled(("u", ["X"]), ("v", ["A"])), labelled(("u", ["X"]), ("v", ["B"])))
    conflicts = find_conflicts(c, 10)
    assert len(conflicts) == 1
    assert conflicts[0].alternatives == {"T-A": 1, "T-B": 1}
    assert conflicts[0].witnesses == {"T-A": ("d0",), "T-B": ("d1",)}
    assert {conflicts[0].key: Counter(conflicts[0].alternatives)} == _pairwise_conflicts(c, 10)


def test_three_dialogue_fixture_unique_maximum():
    c = corpus_of(
        labelled(("u", ["X"]), ("v", ["A"])),
        labelled(("u", ["X"]), ("v", ["A"])),
        labelled(("u", ["X"]), ("v", ["B"])),
    )
    result = prune(c, 10)
    assert [did for did, _ in result.removed] == ["d2"]
    # brute force over all 2^3 subsets: {d0, d1} is the only conflict-free subset of size 2
    free = [set(s) for r in range(4) for s in itertools.combinations(c.ids, r) if not find_conflicts(c.subset(s), 10)]
    assert max(len(s) for s in free) == 2
    assert [s for s in free if len(s) == 2] == [{"d0", "d1"}]
    assert result.optimum == 2 and result.gap == 0


def test_verify_unambiguous():
    c = generate(SynthSpec(dialogues=30, seed=2, injections=({"alternatives": {"a0": 0.5, "a1": 0.5}},)))
    ok, conflicts = verify_unambiguous(c, 1)
    assert not ok and len(conflicts) == 1
    assert verify_unambiguous(prune(c, 1).kept, 1)[0]
    assert verify_unambiguous(Corpus(()), 10) == (True, [])


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 6))
def test_find_conflicts_matches_pairwise(seed, k):
    spec = SynthSpec(dialogues=10, mean_turns=3, label_vocab=3, horizon=1, seed=seed, user_vocab=2,
                     injections=({"alternatives": {"a0": 0.5, "a1": 0.5}},))
    c = generate(spec)
    found = {conf.key: Counter(conf.alternatives) for conf in find_conflicts(c, k)}
    assert found == _pairwise_conflicts(c, k)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.integers(2, 9), st.integers(1, 10))
def test_prune_sound_maximal_and_exhaustive(seed, n, k):
    spec = SynthSpec(dialogues=n, mean_turns=3, label_vocab=3, horizon=1, seed=seed, user_vocab=2,
                     injections=({"alternatives": {"a0": 0.5, "a1": 0.5}},))
    c = generate(spec)
    result = prune(c, k)
    assert verify_unambiguous(result.kept, k)[0]
    assert sorted(result.kept.ids + [did for did, _ in result.removed]) == sorted(c.ids)
    for did, _ in result.removed:
        assert not verify_unambiguous(Corpus(result.kept.dialogues + (c.subset([did]).dialogues[0],)), k)[0]
    assert result.optimum == max_conflict_free_size(c, k) == _exhaustive_max(c, k)
    assert result.gap >= 0


def test_prune_removes_only_injected_key_dialogues():
    spec = SynthSpec(dialogues=60, seed=9, horizon=1, injections=({"alternatives": {"a0": 0.5, "a1": 0.5}},))
    c = generate(spec)
    key = tuple(c.provenance["injected_keys"][0]["key"])
    result = prune(c, 1)
    assert result.removed
    for did, conflict in result.removed:
        assert conflict.key == key
        tokens = c.subset([did]).dialogues[0].tokens
        assert any(tuple(tokens[i:i + len(key)]) == key for i in range(len(tokens)))


def test_full_history_granularity():
    c = corpus_of(
        labelled(("u", ["X"]), ("v", ["A"])),
        labelled(("w", ["X"]), ("v", ["B"])),
    )
    assert find_conflicts(c, 2) and not find_conflicts(c, None)
