"""Event algebra shared by every module, plus its text and JSON encodings.

A dialogue is a flat sequence of events.  User turns render as ``*`` bullets,
knowledge-base lookups and system actions as indented ``-`` bullets::

    ## PMUL0001 source=multiwoz domains=hotel
    * inform{"hotel_area": "specific"}
      - Hotel-Select
    * inform{"hotel_name": "specific"}
      - slot{"hotel_status": "unique"}
      - Hotel-Booking-Book{"hotel_reference": "specific", "hotel_status": "booked"}
    * bye
      - General-Goodbye

The bullet line of an event (``Event.token``) is its canonical serialization;
history keys are tuples of these tokens, so they hash and compare identically
in every process.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Any, Iterable, Iterator, Mapping, Sequence, Union

from .errors import CorpusFormatError, MalformedDialogueError, MalformedLabelError

SPECIFIC = "specific"
DONT_CARE = "do-not-care"
STATUS_VALUES = ("unique", "NA", "available", "booked")
USER_INTENTS = ("inform", "bye")
DONTCARE_VALUES = frozenset({"dontcare", "don't care", "dont care", "do n't care", "do not care"})

GENERAL_DOMAINS = frozenset({"general", "booking"})

CORPUS_FORMAT = "tod-audit-corpus"
CORPUS_VERSION = 1

HistoryKey = tuple  # tuple[str, ...] of Event.token values

Slots = tuple  # tuple[tuple[str, str], ...], sorted by name


def tag_value(value: Any) -> str:
    """Map a raw slot value onto the generic tag scheme."""
    if isinstance(value, str) and " ".join(value.lower().split()) in DONTCARE_VALUES:
        return DONT_CARE
    return SPECIFIC


def qualify_slot(domain: str, name: str) -> str:
    name = "_".join(name.strip().lower().split())
    prefix = domain.strip().lower() + "_"
    return name if name.startswith(prefix) else prefix + name


def _sorted_slots(pairs: Iterable[tuple[str, str]]) -> Slots:
    """Sort by name; the first occurrence of a duplicated name wins."""
    seen: dict[str, str] = {}
    for name, tag in pairs:
        if name not in seen:
            seen[name] = tag
    return tuple(sorted(seen.items()))


def _slots_json(slots: Slots) -> str:
    return json.dumps(dict(slots), ensure_ascii=False)


def _check_token(value: str, what: str, forbid: str = "{}") -> None:
    if not value or any(ch.isspace() for ch in value) or any(ch in value for ch in forbid):
        raise ValueError(f"invalid {what} token: {value!r}")


@dataclass(frozen=True, order=True)
class CanonicalLabel:
    """A system action: domain, dialogue act type and tagged slots."""

    domain: str
    act_type: str
    slots: Slots = ()

    def __post_init__(self):
        _check_token(self.domain, "domain", forbid="{}-")
        _check_token(self.act_type, "act type")
        object.__setattr__(self, "slots", _sorted_slots(tuple(p) for p in self.slots))

    @property
    def name(self) -> str:
        return f"{self.domain}-{self.act_type}"

    @property
    def text(self) -> str:
        return self.name + (_slots_json(self.slots) if self.slots else "")

    def with_act(self, act_type: str) -> "CanonicalLabel":
        return CanonicalLabel(self.domain, act_type, self.slots)

    def with_slot(self, name: str, tag: str) -> "CanonicalLabel":
        rest = [(n, t) for n, t in self.slots if n != name]
        return CanonicalLabel(self.domain, self.act_type, [(name, tag)] + rest)

    def to_json(self) -> dict:
        return {"domain": self.domain, "act": self.act_type, "slots": dict(self.slots)}

    @classmethod
    def from_text(cls, text: str) -> "CanonicalLabel":
        name, brace, rest = text.strip().partition("{")
        domain, dash, act = name.partition("-")
        if not dash:
            raise CorpusFormatError(f"action label without act type: {text!r}")
        slots = json.loads(brace + rest) if brace else {}
        return cls(domain, act, tuple(slots.items()))


def parse_action_label(
    raw_domain: str,
    raw_act: str,
    raw_slots: Iterable[Sequence[str]] = (),
    *,
    qualify: bool = True,
) -> CanonicalLabel:
    """Build a CanonicalLabel from a raw (domain, act, [(slot, value), ...]) triplet.

    Slot values are reduced to ``specific`` / ``do-not-care``; slot names are
    prefixed with the lower-cased domain unless ``qualify`` is false.  Slots
    named ``none`` (MultiWOZ's placeholder for slot-less acts) are dropped.
    """
    raw_slots = list(raw_slots or ())
    domain = (raw_domain or "").strip()
    act = (raw_act or "").strip()
    if not domain or not act:
        raise MalformedLabelError(raw_domain, raw_act, raw_slots)
    pairs = []
    for item in raw_slots:
        if len(item) < 2:
            raise MalformedLabelError(raw_domain, raw_act, raw_slots)
        name, value = str(item[0]), item[1]
        if not name.strip() or name.strip().lower() == "none":
            continue
        pairs.append((qualify_slot(domain, name) if qualify else name.strip(), tag_value(value)))
    try:
        return CanonicalLabel(domain, act, tuple(pairs))
    except ValueError as exc:
        raise MalformedLabelError(raw_domain, raw_act, raw_slots) from exc


@dataclass(frozen=True)
class UserEvent:
    intent: str
    slots: Slots = ()
    token: str = field(init=False, repr=False, compare=False)

    kind = "user"

    def __post_init__(self):
        if self.intent not in USER_INTENTS:
            raise ValueError(f"unknown user intent {self.intent!r}")
        object.__setattr__(self, "slots", _sorted_slots(tuple(p) for p in self.slots))
        object.__setattr__(self, "token", "* " + self.text)

    @property
    def text(self) -> str:
        if self.intent == "bye" and not self.slots:
            return "bye"
        return self.intent + _slots_json(self.slots)

    @property
    def venue_domain(self) -> str | None:
        domains = {name.split("_", 1)[0] for name, _ in self.slots if "_" in name}
        domains -= GENERAL_DOMAINS
        return domains.pop() if len(domains) == 1 else None

    def to_json(self) -> dict:
        return {"kind": self.kind, "intent": self.intent, "slots": dict(self.slots)}


@dataclass(frozen=True)
class StatusEvent:
    """Knowledge-base lookup result for one venue type."""

    domain: str
    status: str
    token: str = field(init=False, repr=False, compare=False)

    kind = "kb_status"

    def __post_init__(self):
        _check_token(self.domain, "status domain", forbid="{}-")
        if self.status not in STATUS_VALUES:
            raise ValueError(f"unknown status value {self.status!r}")
        object.__setattr__(self, "token", "- " + self.text)

    @property
    def text(self) -> str:
        return "slot" + json.dumps({f"{self.domain}_status": self.status})

    @property
    def venue_domain(self) -> str:
        return self.domain

    def to_json(self) -> dict:
        return {"kind": self.kind, "domain": self.domain, "status": self.status}


@dataclass(frozen=True)
class ActionEvent:
    label: CanonicalLabel
    token: str = field(init=False, repr=False, compare=False)

    kind = "action"

    def __post_init__(self):
        object.__setattr__(self, "token", "- " + self.label.text)

    @property
    def text(self) -> str:
        return self.label.text

    @property
    def venue_domain(self) -> str | None:
        domain = self.label.domain.lower()
        return None if domain in GENERAL_DOMAINS else domain

    def to_json(self) -> dict:
        return {"kind": self.kind, **self.label.to_json()}


Event = Union[UserEvent, StatusEvent, ActionEvent]


def action(domain: str, act: str, **slots: str) -> ActionEvent:
    """Shorthand used in fixtures: ``action("Hotel", "Inform", hotel_area="specific")``."""
    return ActionEvent(CanonicalLabel(domain, act, tuple(slots.items())))


def event_from_json(obj: Mapping[str, Any]) -> Event:
    try:
        kind = obj["kind"]
        if kind == "user":
            return UserEvent(obj["intent"], tuple(obj.get("slots", {}).items()))
        if kind == "kb_status":
            return StatusEvent(obj["domain"], obj["status"])
        if kind == "action":
            return ActionEvent(CanonicalLabel(obj["domain"], obj["act"], tuple(obj.get("slots", {}).items())))
    except (KeyError, TypeError, ValueError) as exc:
        raise CorpusFormatError(f"malformed event {obj!r}: {exc}") from exc
    raise CorpusFormatError(f"unknown event kind {obj.get('kind')!r}")


def parse_event_line(line: str) -> Event:
    text = line.strip()
    bullet, _, body = text.partition(" ")
    body = body.strip()
    try:
        if bullet == "*":
            intent, brace, rest = body.partition("{")
            slots = json.loads(brace + rest) if brace else {}
            return UserEvent(intent, tuple(slots.items()))
        if bullet == "-":
            if body.startswith("slot{"):
                ((name, status),) = json.loads(body[4:]).items()
                if not name.endswith("_status"):
                    raise ValueError(f"not a status slot: {name!r}")
                return StatusEvent(name[: -len("_status")], status)
            return ActionEvent(CanonicalLabel.from_text(body))
    except (ValueError, json.JSONDecodeError) as exc:
        raise CorpusFormatError(f"cannot parse event line {line!r}: {exc}") from exc
    raise CorpusFormatError(f"event line must start with '*' or '-': {line!r}")


def _turn_structure_errors(events: Sequence[Event]) -> list[str]:
    errors = []
    if not events:
        return ["dialogue has no events"]
    if events[0].kind != "user":
        errors.append("dialogue does not start with a user event")
    seen_action = True
    for i, ev in enumerate(events):
        if ev.kind == "user":
            if not seen_action:
                errors.append(f"user event at {i} follows a user turn with no action")
            seen_action = False
        elif ev.kind == "kb_status":
            if seen_action and i > 0 and events[i - 1].kind == "action":
                errors.append(f"kb_status at {i} appears after an action")
        else:
            seen_action = True
    if not seen_action:
        errors.append("final user event has no action")
    return errors


@dataclass(frozen=True)
class DialogueRecord:
    id: str
    events: tuple
    source: str = "unknown"
    domains: tuple = ()
    annotation_complete: bool = True
    provenance: Mapping[str, Any] = field(default_factory=dict, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "events", tuple(self.events))
        if not self.id or any(ch.isspace() for ch in self.id):
            raise MalformedDialogueError(f"invalid dialogue id {self.id!r}")
        problems = _turn_structure_errors(self.events)
        if problems:
            raise MalformedDialogueError(f"{self.id}: " + "; ".join(problems))
        domains = self.domains or touched_domains(self.events)
        object.__setattr__(self, "domains", tuple(sorted(set(domains))))

    def actions(self) -> Iterator[tuple[int, CanonicalLabel]]:
        for i, ev in enumerate(self.events):
            if ev.kind == "action":
                yield i, ev.label

    @property
    def tokens(self) -> tuple:
        return tuple(ev.token for ev in self.events)

    def replace(self, events: Sequence[Event], **changes) -> "DialogueRecord":
        kwargs = dict(
            id=self.id,
            source=self.source,
            domains=self.domains,
            annotation_complete=self.annotation_complete,
            provenance=self.provenance,
        )
        kwargs.update(changes)
        return DialogueRecord(events=tuple(events), **kwargs)

    def to_json(self) -> dict:
        out = {
            "id": self.id,
            "source": self.source,
            "domains": list(self.domains),
            "annotation_complete": self.annotation_complete,
            "events": [ev.to_json() for ev in self.events],
        }
        if self.provenance:
            out["provenance"] = dict(self.provenance)
        return out

    @classmethod
    def from_json(cls, obj: Mapping[str, Any]) -> "DialogueRecord":
        try:
            return cls(
                id=obj["id"],
                events=tuple(event_from_json(e) for e in obj["events"]),
                source=obj.get("source", "unknown"),
                domains=tuple(obj.get("domains", ())),
                annotation_complete=obj.get("annotation_complete", True),
                provenance=obj.get("provenance", {}),
            )
        except KeyError as exc:
            raise CorpusFormatError(f"dialogue object missing field {exc}") from exc


def touched_domains(events: Iterable[Event]) -> set[str]:
    out = set()
    for ev in events:
        if ev.kind == "action":
            out.add(ev.label.domain.lower())
        elif ev.venue_domain:
            out.add(ev.venue_domain)
    return out


def serialize_dialogue(d: DialogueRecord, header: bool = True) -> str:
    lines = []
    if header:
        head = f"## {d.id} source={d.source} domains={','.join(d.domains)}"
        if not d.annotation_complete:
            head += " incomplete"
        lines.append(head)
    for ev in d.events:
        lines.append(ev.token if ev.kind == "user" else "  " + ev.token)
    return "\n".join(lines) + "\n"


def deserialize_dialogue(text: str, id: str | None = None) -> DialogueRecord:
    meta: dict[str, Any] = {"source": "unknown", "domains": (), "annotation_complete": True}
    events = []
    for raw in text.splitlines():
        line = raw.strip()
        if not line:
            continue
        if line.startswith("##"):
            parts = line[2:].split()
            if not parts:
                raise CorpusFormatError("empty dialogue header")
            id = parts[0]
            for part in parts[1:]:
                key, _, value = part.partition("=")
                if key == "source":
                    meta["source"] = value
                elif key == "domains":
                    meta["domains"] = tuple(v for v in value.split(",") if v)
                elif key == "incomplete":
                    meta["annotation_complete"] = False
            continue
        events.append(parse_event_line(line))
    if id is None:
        raise CorpusFormatError("dialogue text has no '## <id>' header and no id was given")
    return DialogueRecord(id=id, events=tuple(events), **meta)


def window(events: Sequence[Event], position: int, k: int) -> HistoryKey:
    """Tokens of the last ``min(k, position)`` events before ``position``."""
    if not 0 <= position <= len(events):
        raise IndexError(f"position {position} outside 0..{len(events)}")
    if k < 1:
        raise ValueError("window size k must be >= 1")
    return tuple(ev.token for ev in events[max(0, position - k) : position])


def window_tokens(tokens: Sequence[str], position: int, k: int | None) -> HistoryKey:
    start = 0 if k is None else max(0, position - k)
    return tuple(tokens[start:position])


def key_text(key: HistoryKey) -> str:
    return " | ".join(key)


@dataclass(frozen=True)
class Vocab:
    labels: tuple
    slots: tuple
    intents: tuple
    statuses: tuple
    domains: tuple

    def to_json(self) -> dict:
        return {
            "labels": list(self.labels),
            "slots": list(self.slots),
            "intents": list(self.intents),
            "statuses": list(self.statuses),
            "domains": list(self.domains),
        }


@dataclass(frozen=True)
class Corpus:
    dialogues: tuple = ()
    stage_log: tuple = ()
    provenance: Mapping[str, Any] = field(default_factory=dict, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "dialogues", tuple(self.dialogues))
        object.__setattr__(self, "stage_log", tuple(self.stage_log))
        ids = [d.id for d in self.dialogues]
        if len(set(ids)) != len(ids):
            dupes = sorted({i for i in ids if ids.count(i) > 1})
            raise MalformedDialogueError(f"duplicate dialogue ids: {dupes[:5]}")

    def __len__(self) -> int:
        return len(self.dialogues)

    def __iter__(self) -> Iterator[DialogueRecord]:
        return iter(self.dialogues)

    @cached_property
    def vocab(self) -> Vocab:
        labels, slots, intents, statuses, domains = set(), set(), set(), set(), set()
        for d in self.dialogues:
            domains.update(d.domains)
            for ev in d.events:
                if ev.kind == "user":
                    intents.add(ev.intent)
                    slots.update(n for n, _ in ev.slots)
                elif ev.kind == "kb_status":
                    statuses.add(ev.status)
                    domains.add(ev.domain)
                else:
                    labels.add(ev.label.name)
                    slots.update(n for n, _ in ev.label.slots)
        return Vocab(*(tuple(sorted(s)) for s in (labels, slots, intents, statuses, domains)))

    @property
    def ids(self) -> list[str]:
        return [d.id for d in self.dialogues]

    @property
    def n_actions(self) -> int:
        return sum(1 for d in self.dialogues for ev in d.events if ev.kind == "action")

    def with_dialogues(self, dialogues: Iterable[DialogueRecord], stage: str | None = None) -> "Corpus":
        log = self.stage_log
        if stage is not None and stage not in log:
            log = log + (stage,)
        return Corpus(tuple(dialogues), log, self.provenance)

    def subset(self, ids: Iterable[str]) -> "Corpus":
        wanted = set(ids)
        return self.with_dialogues(d for d in self.dialogues if d.id in wanted)

    def to_json(self) -> dict:
        return {
            "format": CORPUS_FORMAT,
            "version": CORPUS_VERSION,
            "stage_log": list(self.stage_log),
            "provenance": dict(self.provenance),
            "vocab": self.vocab.to_json(),
            "dialogues": [d.to_json() for d in self.dialogues],
        }

    @classmethod
    def from_json(cls, obj: Mapping[str, Any]) -> "Corpus":
        if not isinstance(obj, Mapping) or obj.get("format") != CORPUS_FORMAT:
            raise CorpusFormatError("not a tod-audit corpus file (missing format marker)")
        if obj.get("version") != CORPUS_VERSION:
            raise CorpusFormatError(f"unsupported corpus version {obj.get('version')!r}")
        dialogues = tuple(DialogueRecord.from_json(d) for d in obj.get("dialogues", ()))
        return cls(dialogues, tuple(obj.get("stage_log", ())), obj.get("provenance", {}))

    def to_text(self) -> str:
        return "\n".join(serialize_dialogue(d) for d in self.dialogues)


def dumps_corpus(corpus: Corpus) -> str:
    return json.dumps(corpus.to_json(), indent=1, sort_keys=True, ensure_ascii=False) + "\n"


def read_corpus(path: str | Path) -> Corpus:
    path = Path(path)
    try:
        with path.open(encoding="utf-8") as fh:
            obj = json.load(fh)
    except FileNotFoundError as exc:
        raise CorpusFormatError(f"corpus file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise CorpusFormatError(f"{path}: invalid JSON ({exc})") from exc
    return Corpus.from_json(obj)
