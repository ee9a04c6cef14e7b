"""Synthetic corpora with a known dependence horizon and planted ambiguity.

Every action is a fixed pseudo-random function of the last ``horizon`` events,
except at injected keys, where the action is drawn from the injection's
alternatives.  Injected keys are chosen among windows that actually occur in a
first, injection-free pass; the structural random stream (turn counts, user
events, actions per turn) is separate from the injection stream, so the
second pass replays the same traffic up to the first injected position.
"""

from __future__ import annotations

import hashlib
import random
from collections import Counter
from dataclasses import dataclass
from fractions import Fraction
from typing import Any, Mapping, Sequence

from .corpus import ActionEvent, CanonicalLabel, Corpus, DialogueRecord, UserEvent
from .errors import InfeasibleSpecError

SYNTH_DOMAIN = "synth"


@dataclass(frozen=True)
class Injection:
    alternatives: Mapping[str, float]
    key: tuple | None = None
    rank: int = 0

    def to_dict(self) -> dict:
        out: dict[str, Any] = {"alternatives": dict(sorted(self.alternatives.items())), "rank": self.rank}
        if self.key is not None:
            out["key"] = list(self.key)
        return out


@dataclass(frozen=True)
class SynthSpec:
    dialogues: int = 100
    mean_turns: int = 5
    label_vocab: int = 6
    horizon: int = 1
    injections: tuple = ()
    seed: int = 0
    user_vocab: int = 3
    max_actions_per_turn: int = 2

    def __post_init__(self):
        object.__setattr__(
            self,
            "injections",
            tuple(inj if isinstance(inj, Injection) else Injection(**inj) for inj in self.injections),
        )
        for name in ("dialogues", "mean_turns", "label_vocab", "horizon", "user_vocab", "max_actions_per_turn"):
            if int(getattr(self, name)) < 1:
                raise InfeasibleSpecError(f"{name} must be >= 1")
        for inj in self.injections:
            total = sum(inj.alternatives.values())
            if abs(total - 1.0) > 1e-9 or any(p < 0 for p in inj.alternatives.values()):
                raise InfeasibleSpecError(f"injection probabilities must be non-negative and sum to 1, got {total}")
            unknown = sorted(set(inj.alternatives) - set(self.label_names))
            if unknown:
                raise InfeasibleSpecError(
                    f"injection alternatives {unknown} are outside the label vocabulary {self.label_names}"
                )

    @property
    def label_names(self) -> list[str]:
        return [f"a{j}" for j in range(self.label_vocab)]

    @classmethod
    def from_dict(cls, obj: Mapping[str, Any]) -> "SynthSpec":
        obj = dict(obj)
        unknown = sorted(set(obj) - set(cls.__dataclass_fields__))
        if unknown:
            raise InfeasibleSpecError(f"unknown synth spec keys: {unknown}")
        injections = []
        for inj in obj.pop("injections", ()):
            inj = dict(inj)
            if inj.get("key") is not None:
                inj["key"] = tuple(inj["key"])
            injections.append(Injection(**inj))
        return cls(injections=tuple(injections), **obj)

    def to_dict(self) -> dict:
        return {
            "dialogues": self.dialogues,
            "mean_turns": self.mean_turns,
            "label_vocab": self.label_vocab,
            "horizon": self.horizon,
            "injections": [inj.to_dict() for inj in self.injections],
            "seed": self.seed,
            "user_vocab": self.user_vocab,
            "max_actions_per_turn": self.max_actions_per_turn,
        }


def _rule(seed: int, key: Sequence[str], vocab: int) -> int:
    digest = hashlib.sha256(("%d|" % seed + "\n".join(key)).encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") % vocab


def _sample(rng: random.Random, alternatives: Mapping[str, float]) -> str:
    names = sorted(alternatives)
    return rng.choices(names, weights=[alternatives[n] for n in names])[0]


def _run(spec: SynthSpec, injected: Mapping[tuple, Mapping[str, float]]):
    structure = random.Random(spec.seed)
    draws = random.Random(f"inject:{spec.seed}")
    users = [UserEvent("inform", ((f"synth_s{i}", "specific"),)) for i in range(spec.user_vocab)]
    labels = {name: ActionEvent(CanonicalLabel(SYNTH_DOMAIN, name)) for name in spec.label_names}
    names = spec.label_names
    dialogues, windows, hits = [], Counter(), Counter()
    h = spec.horizon
    for n in range(spec.dialogues):
        events, tokens = [], []
        for _ in range(structure.randint(1, 2 * spec.mean_turns - 1)):
            user = users[structure.randrange(spec.user_vocab)]
            events.append(user)
            tokens.append(user.token)
            for _ in range(structure.randint(1, spec.max_actions_per_turn)):
                key = tuple(tokens[-h:])
                if key in injected:
                    name = _sample(draws, injected[key])
                    hits[key] += 1
                else:
                    name = names[_rule(spec.seed, key, spec.label_vocab)]
                windows[key] += 1
                ev = labels[name]
                events.append(ev)
                tokens.append(ev.token)
        dialogues.append(DialogueRecord(id=f"synth-{spec.seed}-{n:05d}", events=tuple(events), source="synth"))
    return dialogues, windows, hits


def generate(spec: SynthSpec) -> Corpus:
    injected: dict[tuple, Mapping[str, float]] = {}
    if spec.injections:
        if spec.label_vocab < 2:
            raise InfeasibleSpecError("ambiguity injection needs a label vocabulary of at least 2")
        _, windows, _ = _run(spec, {})
        full = sorted((k for k in windows if len(k) == spec.horizon), key=lambda k: (-windows[k], k))
        for inj in spec.injections:
            if inj.key is not None:
                key = tuple(inj.key)
                if key not in windows:
                    raise InfeasibleSpecError(f"injection key {list(key)} never occurs in the generated traffic")
            else:
                free = [k for k in full if k not in injected]
                if inj.rank >= len(free):
                    raise InfeasibleSpecError(
                        f"injection rank {inj.rank} requested but only {len(free)} distinct windows remain"
                    )
                key = free[inj.rank]
            if key in injected:
                raise InfeasibleSpecError(f"two injections target the same key {list(key)}")
            injected[key] = dict(inj.alternatives)
    dialogues, _, hits = _run(spec, injected)
    provenance = {
        "source": "synth",
        "spec": spec.to_dict(),
        "injected_keys": [
            {"key": list(key), "alternatives": dict(sorted(alts.items())), "hits": hits[key]}
            for key, alts in sorted(injected.items())
        ],
    }
    return Corpus(tuple(dialogues), (), provenance)


def injected_keys(corpus: Corpus) -> list[tuple]:
    return [tuple(entry["key"]) for entry in corpus.provenance.get("injected_keys", ())]


def expected_train_accuracy(spec: SynthSpec, realized: Corpus, k: int) -> Fraction:
    """Memorization training accuracy computed straight from the realized window counts."""
    if k < spec.horizon:
        raise ValueError(f"oracle needs k >= horizon ({k} < {spec.horizon})")
    counts: dict[tuple, Counter] = {}
    for d in realized.dialogues:
        seq = [ev.token for ev in d.events]
        for p, ev in enumerate(d.events):
            if ev.kind == "action":
                counts.setdefault(tuple(seq[max(0, p - k) : p]), Counter())[ev.label.text] += 1
    total = sum(sum(c.values()) for c in counts.values())
    return Fraction(sum(max(c.values()) for c in counts.values()), total) if total else Fraction(1)
