"""Branch points and pruning to a maximal unambiguous sub-corpus."""

from __future__ import annotations

import itertools
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Mapping

from .corpus import Corpus, DialogueRecord, HistoryKey, key_text, window_tokens
from .errors import InvariantViolation
from .policy import dialogue_tokens, fit, iter_windows, majority, predict_memorize_tokens

EXHAUSTIVE_LIMIT = 12


@dataclass(frozen=True)
class Conflict:
    key: HistoryKey
    alternatives: Mapping[str, int]
    witnesses: Mapping[str, tuple]

    def __post_init__(self):
        if len(self.alternatives) < 2:
            raise InvariantViolation("a conflict needs at least two distinct next actions")

    @property
    def total(self) -> int:
        return sum(self.alternatives.values())

    @property
    def majority(self) -> str:
        return majority(self.alternatives)

    def to_json(self) -> dict:
        return {
            "key": list(self.key),
            "alternatives": dict(sorted(self.alternatives.items())),
            "witnesses": {label: list(ids) for label, ids in sorted(self.witnesses.items())},
        }


@dataclass
class PruneResult:
    kept: Corpus
    removed: list = field(default_factory=list)  # [(dialogue id, dooming Conflict)]
    rounds: int = 0
    readded: int = 0
    optimum: int | None = None

    @property
    def gap(self) -> int | None:
        return None if self.optimum is None else self.optimum - len(self.kept)

    def to_json(self, include_conflicts: bool = True) -> dict:
        out = {
            "kept": len(self.kept),
            "kept_ids": self.kept.ids,
            "removed": [
                {"id": did, "conflict_key": list(c.key)} if include_conflicts else {"id": did}
                for did, c in self.removed
            ],
            "rounds": self.rounds,
            "readded": self.readded,
        }
        if self.optimum is not None:
            out["exhaustive_optimum"] = self.optimum
            out["gap"] = self.gap
        return out


def _collect(dialogues: Iterable[DialogueRecord], k: int | None, end_of_turn: bool):
    counts: dict[HistoryKey, Counter] = {}
    witnesses: dict[HistoryKey, dict[str, set]] = {}
    for did, key, label in iter_windows(dialogues, k, end_of_turn):
        counts.setdefault(key, Counter())[label] += 1
        witnesses.setdefault(key, {}).setdefault(label, set()).add(did)
    return counts, witnesses


def find_conflicts(corpus: Corpus | Iterable[DialogueRecord], k: int | None = 10, end_of_turn: bool = False) -> list[Conflict]:
    """Every history window followed by two or more distinct actions.

    ``k=None`` uses the full history instead of a window.  Sorted by
    descending mass, then by key text.
    """
    counts, witnesses = _collect(corpus, k, end_of_turn)
    out = [
        Conflict(
            key,
            dict(sorted(c.items())),
            {label: tuple(sorted(ids)) for label, ids in sorted(witnesses[key].items())},
        )
        for key, c in counts.items()
        if len(c) > 1
    ]
    out.sort(key=lambda c: (-c.total, key_text(c.key)))
    return out


def _pairs(d: DialogueRecord, k: int | None, end_of_turn: bool) -> list[tuple[HistoryKey, str]]:
    tokens, targets = dialogue_tokens(d, end_of_turn)
    return [(window_tokens(tokens, pos, k), label) for pos, label in targets]


def _fits(pairs, assigned: Mapping[HistoryKey, str]) -> bool:
    local: dict[HistoryKey, str] = {}
    for key, label in pairs:
        if assigned.get(key, label) != label or local.setdefault(key, label) != label:
            return False
    return True


def prune(corpus: Corpus, k: int | None = 10, end_of_turn: bool = False, exhaustive_limit: int = EXHAUSTIVE_LIMIT) -> PruneResult:
    """Greedy majority-keep pruning followed by one re-add pass.

    Each round removes every dialogue witnessing a non-majority alternative of
    some conflict (ties keep the smallest label).  Afterwards each removed
    dialogue is re-tried in id order and kept if it introduces no conflict;
    since adding dialogues only adds constraints, a single pass leaves the
    result maximal.
    """
    by_id = {d.id: d for d in corpus.dialogues}
    kept_ids = set(by_id)
    doom: dict[str, Conflict] = {}
    rounds = 0
    while True:
        rounds += 1
        conflicts = find_conflicts((d for d in corpus.dialogues if d.id in kept_ids), k, end_of_turn)
        if not conflicts:
            break
        losers = set()
        for c in conflicts:
            winner = c.majority
            for label, ids in c.witnesses.items():
                if label != winner:
                    for did in ids:
                        doom.setdefault(did, c)
                        losers.add(did)
        if not losers & kept_ids:
            raise InvariantViolation("pruning round removed nothing")
        kept_ids -= losers

    assigned: dict[HistoryKey, str] = {}
    for did in kept_ids:
        for key, label in _pairs(by_id[did], k, end_of_turn):
            assigned[key] = label
    readded = 0
    for did in sorted(set(by_id) - kept_ids):
        pairs = _pairs(by_id[did], k, end_of_turn)
        if _fits(pairs, assigned):
            assigned.update(pairs)
            kept_ids.add(did)
            readded += 1

    kept = corpus.with_dialogues(d for d in corpus.dialogues if d.id in kept_ids)
    removed = [(d.id, doom[d.id]) for d in corpus.dialogues if d.id not in kept_ids]
    optimum = None
    if len(corpus) <= exhaustive_limit:
        optimum = max_conflict_free_size(corpus, k, end_of_turn)
    return PruneResult(kept, removed, rounds, readded, optimum)


def max_conflict_free_size(corpus: Corpus, k: int | None = 10, end_of_turn: bool = False) -> int:
    """Size of the largest conflict-free subset, by search over the pairwise conflict graph."""
    dialogues = list(corpus.dialogues)
    pairs = [_pairs(d, k, end_of_turn) for d in dialogues]
    usable = [i for i, p in enumerate(pairs) if _fits(p, {})]
    clash = {i: set() for i in usable}
    for i, j in itertools.combinations(usable, 2):
        if not _fits(pairs[i] + pairs[j], {}):
            clash[i].add(j)
            clash[j].add(i)

    best = 0

    def search(chosen: int, candidates: list[int]):
        nonlocal best
        if chosen + len(candidates) <= best:
            return
        if not candidates:
            best = max(best, chosen)
            return
        head, rest = candidates[0], candidates[1:]
        search(chosen + 1, [c for c in rest if c not in clash[head]])
        search(chosen, rest)

    search(0, usable)
    return best


def verify_unambiguous(corpus: Corpus, k: int | None = 10, end_of_turn: bool = False) -> tuple[bool, list[Conflict]]:
    """True iff no conflicts; when true, also checks a fresh memorization fit scores 1.0 on the corpus."""
    conflicts = find_conflicts(corpus, k, end_of_turn)
    ok = not conflicts
    if ok and len(corpus) and k is not None:
        index = fit(corpus, k, end_of_turn)
        for d in corpus.dialogues:
            tokens, targets = dialogue_tokens(d, end_of_turn)
            for pos, label in targets:
                if predict_memorize_tokens(index, tokens[:pos])[0] != label:
                    raise InvariantViolation(f"{d.id}: conflict-free corpus but memorization missed position {pos}")
    return ok, conflicts
