"""History-window policies.

``fit`` counts, for every action position, which label followed the last ``k``
events.  ``predict_memorize`` is an exact lookup of that window;
``predict_backoff`` falls back to ever shorter suffixes of the history using a
suffix trie whose node at depth ``j`` aggregates every training window that
ends in the same ``j`` events.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Iterator, Mapping, Sequence

from .corpus import ActionEvent, CanonicalLabel, Corpus, DialogueRecord, Event, HistoryKey, window_tokens
from .errors import CorpusFormatError, InvariantViolation

INDEX_FORMAT = "tod-audit-history-index"
INDEX_VERSION = 1

END_OF_TURN = CanonicalLabel("General", "EndOfTurn")


def with_turn_ends(events: Sequence[Event]) -> list[Event]:
    """Append a synthetic end-of-turn action after the last action of every system turn."""
    out: list[Event] = []
    for i, ev in enumerate(events):
        out.append(ev)
        nxt = events[i + 1] if i + 1 < len(events) else None
        if ev.kind == "action" and (nxt is None or nxt.kind == "user"):
            out.append(ActionEvent(END_OF_TURN))
    return out


def dialogue_tokens(d: DialogueRecord, end_of_turn: bool = False) -> tuple[list[str], list[tuple[int, str]]]:
    """Event tokens of a dialogue and the (position, label text) of each prediction target."""
    events = with_turn_ends(d.events) if end_of_turn else d.events
    tokens = [ev.token for ev in events]
    targets = [(i, ev.label.text) for i, ev in enumerate(events) if ev.kind == "action"]
    return tokens, targets


def majority(counts: Mapping[str, int]) -> str:
    """Most frequent label; ties go to the lexicographically smallest serialization."""
    return min(counts.items(), key=lambda kv: (-kv[1], kv[0]))[0]


class _Node:
    __slots__ = ("children", "counts")

    def __init__(self):
        self.children: dict[str, _Node] | None = None
        self.counts: Counter = Counter()


@dataclass(frozen=True)
class Prediction:
    label: CanonicalLabel
    support: int
    matched_suffix_length: int
    fallback: bool

    def __post_init__(self):
        if self.fallback != (self.matched_suffix_length == 0):
            raise InvariantViolation("fallback must be set exactly when no suffix matched")


@dataclass
class HistoryIndex:
    k: int
    table: dict = field(default_factory=dict)
    global_counts: Counter = field(default_factory=Counter)
    end_of_turn: bool = False
    _root: _Node | None = field(default=None, repr=False, compare=False)

    @property
    def n_indexed(self) -> int:
        return sum(self.global_counts.values())

    def check_k(self, k: int) -> None:
        if k != self.k:
            raise ValueError(f"index was fitted with k={self.k}, query asked for k={k}")

    def label(self, text: str) -> CanonicalLabel:
        return CanonicalLabel.from_text(text)

    def train_accuracy(self) -> Fraction:
        """Closed form: sum over keys of the majority count divided by all counts."""
        total = self.n_indexed
        if not total:
            return Fraction(0)
        return Fraction(sum(max(c.values()) for c in self.table.values()), total)

    @property
    def trie(self) -> _Node:
        if self._root is None:
            root = _Node()
            for key in sorted(self.table):
                counts = self.table[key]
                node = root
                for token in reversed(key):
                    if node.children is None:
                        node.children = {}
                    node = node.children.setdefault(token, _Node())
                    node.counts.update(counts)
            root.counts = Counter(self.global_counts)
            self._root = root
        return self._root

    def to_json(self) -> dict:
        return {
            "format": INDEX_FORMAT,
            "version": INDEX_VERSION,
            "k": self.k,
            "end_of_turn": self.end_of_turn,
            "entries": [
                {"key": list(key), "counts": dict(sorted(self.table[key].items()))}
                for key in sorted(self.table)
            ],
        }

    @classmethod
    def from_json(cls, obj: Mapping) -> "HistoryIndex":
        if obj.get("format") != INDEX_FORMAT or obj.get("version") != INDEX_VERSION:
            raise CorpusFormatError("not a tod-audit history index (format/version mismatch)")
        table: dict[HistoryKey, Counter] = {}
        global_counts: Counter = Counter()
        for entry in obj["entries"]:
            counts = Counter(entry["counts"])
            table[tuple(entry["key"])] = counts
            global_counts.update(counts)
        return cls(obj["k"], table, global_counts, obj.get("end_of_turn", False))

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True, ensure_ascii=False) + "\n"


def iter_windows(corpus: Corpus | Iterable[DialogueRecord], k: int | None, end_of_turn: bool = False) -> Iterator[tuple[str, HistoryKey, str]]:
    """Yield ``(dialogue id, window key, label text)`` for every action position."""
    for d in corpus:
        tokens, targets = dialogue_tokens(d, end_of_turn)
        for pos, label in targets:
            yield d.id, window_tokens(tokens, pos, k), label


def fit(corpus: Corpus, k: int, end_of_turn: bool = False) -> HistoryIndex:
    if not len(corpus):
        raise ValueError("cannot fit a history index on an empty corpus")
    if k < 1:
        raise ValueError("k must be >= 1")
    table: dict[HistoryKey, Counter] = {}
    global_counts: Counter = Counter()
    for _, key, label in iter_windows(corpus, k, end_of_turn):
        table.setdefault(key, Counter())[label] += 1
        global_counts[label] += 1
    return HistoryIndex(k, table, global_counts, end_of_turn)


def _tokens(history: Sequence) -> list[str]:
    return [ev if isinstance(ev, str) else ev.token for ev in history]


def predict_memorize_tokens(index: HistoryIndex, tokens: Sequence[str]) -> tuple[str, int, int]:
    key = window_tokens(tokens, len(tokens), index.k)
    counts = index.table.get(key)
    if counts:
        text = majority(counts)
        return text, counts[text], len(key)
    text = majority(index.global_counts)
    return text, index.global_counts[text], 0


def predict_backoff_tokens(index: HistoryIndex, tokens: Sequence[str]) -> tuple[str, int, int]:
    key = window_tokens(tokens, len(tokens), index.k)
    exact = index.table.get(key)
    if exact:
        text = majority(exact)
        return text, exact[text], len(key)
    node, best, best_len = index.trie, None, 0
    for depth, token in enumerate(reversed(key), start=1):
        child = node.children.get(token) if node.children else None
        if child is None:
            break
        node = child
        if node.counts:
            best, best_len = node.counts, depth
    if best is None:
        best = index.global_counts
    text = majority(best)
    return text, best[text], best_len


def predict_memorize(index: HistoryIndex, history: Sequence[Event]) -> Prediction:
    """Exact lookup of the last-k window; unseen windows get the global majority."""
    text, support, matched = predict_memorize_tokens(index, _tokens(history))
    return Prediction(index.label(text), support, matched, matched == 0)


def predict_backoff(index: HistoryIndex, history: Sequence[Event]) -> Prediction:
    """Longest training-seen suffix of the history decides; global majority as last resort."""
    text, support, matched = predict_backoff_tokens(index, _tokens(history))
    return Prediction(index.label(text), support, matched, matched == 0)


PREDICTORS = {
    "memorize": predict_memorize_tokens,
    "backoff": predict_backoff_tokens,
}
