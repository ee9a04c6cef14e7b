"""Train/test splitting, next-action scoring and the history-length probe."""

from __future__ import annotations

import hashlib
from collections import Counter
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Iterable, Mapping, Sequence

from .corpus import Corpus
from .errors import ConfigError, InvariantViolation
from .policy import PREDICTORS, HistoryIndex, dialogue_tokens, fit

DEFAULT_KS = (10, 2)


@dataclass
class SplitSpec:
    train_fraction: float = 0.8
    seed: int = 0
    method: str = "hash-rank"

    def __post_init__(self):
        if not 0.0 < float(self.train_fraction) < 1.0:
            raise ConfigError(f"train fraction must lie in (0, 1), got {self.train_fraction}")
        if self.method != "hash-rank":
            raise ConfigError(f"unknown split method {self.method!r}")

    @classmethod
    def from_dict(cls, obj: Mapping[str, Any] | None) -> "SplitSpec":
        obj = dict(obj or {})
        unknown = sorted(set(obj) - {"train_fraction", "seed", "method"})
        if unknown:
            raise ConfigError(f"unknown split keys: {unknown}")
        return cls(**obj)

    def to_dict(self) -> dict:
        return {"train_fraction": self.train_fraction, "seed": self.seed, "method": self.method}


def split_hash(dialogue_id: str, seed: int) -> int:
    digest = hashlib.sha256(f"{seed & 0xFFFFFFFFFFFFFFFF}:{dialogue_id}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


def split_corpus(corpus: Corpus, spec: SplitSpec | None = None) -> tuple[Corpus, Corpus]:
    """Rank dialogues by a seeded hash of their id; the lowest ``round(f * n)`` go to train."""
    spec = spec or SplitSpec()
    if not len(corpus):
        raise ValueError("cannot split an empty corpus")
    n_train = int(float(spec.train_fraction) * len(corpus) + 0.5)
    ranked = sorted(corpus.ids, key=lambda i: (split_hash(i, spec.seed), i))
    train_ids = set(ranked[:n_train])
    train = corpus.with_dialogues(d for d in corpus.dialogues if d.id in train_ids)
    test = corpus.with_dialogues(d for d in corpus.dialogues if d.id not in train_ids)
    return train, test


@dataclass
class Scores:
    correct: int
    total: int
    macro_f1: float
    micro_f1: float

    @property
    def accuracy(self) -> float:
        return self.correct / self.total if self.total else 0.0

    @property
    def exact_accuracy(self) -> Fraction:
        return Fraction(self.correct, self.total) if self.total else Fraction(0)


def classification_scores(gold: Sequence[str], pred: Sequence[str]) -> Scores:
    """Accuracy, macro-F1 over every class seen in gold or predictions, micro-F1."""
    if len(gold) != len(pred):
        raise ValueError("gold and prediction lengths differ")
    tp, fp, fn = Counter(), Counter(), Counter()
    for g, p in zip(gold, pred):
        if g == p:
            tp[g] += 1
        else:
            fp[p] += 1
            fn[g] += 1
    classes = set(gold) | set(pred)
    f1s = [2 * tp[c] / (2 * tp[c] + fp[c] + fn[c]) for c in sorted(classes)]
    correct = sum(tp.values())
    total = len(gold)
    macro = sum(f1s) / len(f1s) if f1s else 0.0
    # single-label multiclass with a prediction at every position: micro-F1 == accuracy
    micro = correct / total if total else 0.0
    return Scores(correct, total, macro, micro)


def predict_corpus(index: HistoryIndex, corpus: Corpus, model: str) -> tuple[list[str], list[str]]:
    predictor = PREDICTORS[model]
    gold, pred = [], []
    for d in corpus.dialogues:
        tokens, targets = dialogue_tokens(d, index.end_of_turn)
        for pos, label in targets:
            gold.append(label)
            pred.append(predictor(index, tokens[:pos])[0])
    return gold, pred


@dataclass
class ScoreRow:
    model: str
    k: int
    stage_log: tuple
    train: Scores
    test: Scores | None
    n_train_dialogues: int
    n_test_dialogues: int
    note: str = ""

    def to_json(self) -> dict:
        def block(s: Scores | None) -> dict | None:
            if s is None:
                return None
            return {
                "accuracy": round(s.accuracy, 4),
                "macro_f1": round(s.macro_f1, 4),
                "micro_f1": round(s.micro_f1, 4),
                "correct": s.correct,
                "actions": s.total,
            }

        return {
            "model": self.model,
            "k": self.k,
            "note": self.note,
            "stage_log": list(self.stage_log),
            "train": block(self.train),
            "test": block(self.test),
            "train_dialogues": self.n_train_dialogues,
            "test_dialogues": self.n_test_dialogues,
        }


def evaluate(
    model: str,
    train: Corpus,
    test: Corpus | None,
    k: int,
    index: HistoryIndex | None = None,
    end_of_turn: bool = False,
    note: str = "",
) -> ScoreRow:
    """Fit (unless ``index`` is given) on ``train`` and score every action position with gold history."""
    if model not in PREDICTORS:
        raise ConfigError(f"unknown model {model!r}; choose from {sorted(PREDICTORS)}")
    if index is None:
        index = fit(train, k, end_of_turn)
    index.check_k(k)
    train_scores = classification_scores(*predict_corpus(index, train, model))
    if model == "memorize" and train_scores.exact_accuracy != index.train_accuracy():
        raise InvariantViolation(
            f"memorization train accuracy {train_scores.exact_accuracy} differs from closed form {index.train_accuracy()}"
        )
    test_scores = None
    if test is not None and len(test):
        test_scores = classification_scores(*predict_corpus(index, test, model))
    return ScoreRow(
        model,
        k,
        tuple(train.stage_log),
        train_scores,
        test_scores,
        len(train),
        len(test) if test is not None else 0,
        note,
    )


@dataclass
class ProbeResult:
    rows: list = field(default_factory=list)
    deltas: list = field(default_factory=list)

    def to_json(self) -> dict:
        return {"rows": [r.to_json() for r in self.rows], "deltas": self.deltas}


def _metric(row: ScoreRow, part: str, name: str) -> float | None:
    scores = getattr(row, part)
    if scores is None:
        return None
    return scores.accuracy if name == "accuracy" else scores.macro_f1


def history_probe(
    corpus: Corpus,
    ks: Sequence[int] = DEFAULT_KS,
    spec: SplitSpec | None = None,
    models: Iterable[str] = ("memorize", "backoff"),
    end_of_turn: bool = False,
) -> ProbeResult:
    """Score every model at every k on one split; deltas are taken against the first k."""
    if not ks:
        raise ConfigError("history probe needs at least one k")
    train, test = split_corpus(corpus, spec)
    rows: dict[tuple[str, int], ScoreRow] = {}
    result = ProbeResult()
    for k in dict.fromkeys(ks):
        index = fit(train, k, end_of_turn)
        for model in models:
            row = evaluate(model, train, test, k, index=index, end_of_turn=end_of_turn, note="probe")
            rows[(model, k)] = row
            result.rows.append(row)
    ref = ks[0]
    for model in models:
        for other in ks[1:]:
            a, b = rows[(model, ref)], rows[(model, other)]
            delta = {"model": model, "k_ref": ref, "k": other}
            for part in ("train", "test"):
                for name in ("accuracy", "macro_f1"):
                    x, y = _metric(a, part, name), _metric(b, part, name)
                    delta[f"{part}_{name}"] = None if x is None or y is None else round(abs(x - y), 4)
                    delta[f"{part}_{name}_signed"] = None if x is None or y is None else round(x - y, 4)
            result.deltas.append(delta)
    return result


def stage_ladder(corpus: Corpus, stages: Sequence[tuple[str, Any]], k: int = 10, spec: SplitSpec | None = None) -> list[ScoreRow]:
    """Memorization train/test scores after each cumulative canonicalization step.

    ``stages`` is a sequence of ``(note, transform)`` pairs; each transform
    receives the previous corpus.
    """
    rows = []
    for note, transform in stages:
        corpus = transform(corpus)
        train, test = split_corpus(corpus, spec)
        rows.append(evaluate("memorize", train, test, k, note=note))
    return rows
