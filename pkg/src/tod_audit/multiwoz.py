"""MultiWOZ 2.1 loader.

Turns the wizard's gold belief states and dialogue-act annotations into event
sequences: user events are inferred from belief-state deltas, ``Booking-Book``
actions inherit the last mentioned venue domain, and the per-turn belief
states are kept in each record's provenance so that status events can be
derived later from the venue database.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Mapping, Sequence

from ._util import parallel_map
from .corpus import (
    SPECIFIC,
    ActionEvent,
    CanonicalLabel,
    Corpus,
    DialogueRecord,
    Event,
    UserEvent,
    parse_action_label,
    qualify_slot,
    tag_value,
)
from .errors import ConfigError, CorpusLoadError, KBMissingError, MalformedLabelError, SchemaProbeError

log = logging.getLogger(__name__)

BeliefState = Mapping[str, Mapping[str, str]]

UNKNOWN_DOMAIN = "unknown"
EMPTY_VALUES = frozenset({"", "not mentioned", "none"})
ACT_ALIASES = {"bye": "Goodbye"}
SLOT_ALIASES = {"ref": "reference"}

DEFAULT_KB_FILES = {
    "attraction": "attraction_db.json",
    "hotel": "hotel_db.json",
    "restaurant": "restaurant_db.json",
    "train": "train_db.json",
}


@dataclass
class SchemaMap:
    """Where things live in the on-disk dataset."""

    data_file: str = "data.json"
    acts_file: str | None = None
    log_key: str = "log"
    text_key: str = "text"
    belief_key: str = "metadata"
    acts_key: str = "dialog_act"
    kb_dir: str | None = None
    kb_files: dict = field(default_factory=lambda: dict(DEFAULT_KB_FILES))

    @classmethod
    def from_dict(cls, obj: Mapping[str, Any] | None) -> "SchemaMap":
        obj = dict(obj or {})
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(obj) - known)
        if unknown:
            raise ConfigError(f"unknown schema keys: {unknown}")
        return cls(**obj)

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


class VenueTable:
    """Read-only venue database for one domain; matching is case-insensitive exact equality."""

    def __init__(self, domain: str, rows: Sequence[Mapping[str, Any]]):
        self.domain = domain
        self.rows = [{str(k).lower(): _norm(v) for k, v in row.items()} for row in rows]
        self.columns = frozenset(c for row in self.rows for c in row)
        self._index: dict[tuple[str, str], frozenset] = {}
        for i, row in enumerate(self.rows):
            for col, value in row.items():
                self._index.setdefault((col, value), set()).add(i)
        self._index = {key: frozenset(ids) for key, ids in self._index.items()}
        self._counts: dict[tuple, int] = {}

    def __len__(self) -> int:
        return len(self.rows)

    def constraints(self, belief: BeliefState) -> tuple:
        """The KB-queryable, specific-valued constraints for this domain, sorted."""
        out = []
        for slot, value in (belief.get(self.domain) or {}).items():
            if slot.lower() in self.columns and tag_value(value) == SPECIFIC:
                out.append((slot.lower(), _norm(value)))
        return tuple(sorted(out))

    def count(self, constraints: Sequence[tuple[str, str]]) -> int:
        constraints = tuple(constraints)
        if constraints not in self._counts:
            if not constraints:
                n = len(self.rows)
            else:
                sets = sorted((self._index.get(c, frozenset()) for c in constraints), key=len)
                n = len(frozenset.intersection(*sets))
            self._counts[constraints] = n
        return self._counts[constraints]


def _norm(value: Any) -> str:
    return " ".join(str(value).lower().split())


def status_for_count(n: int) -> str:
    if n == 0:
        return "NA"
    return "unique" if n == 1 else "available"


def query_kb_status(belief: BeliefState, venue_domain: str, kb: Mapping[str, VenueTable]) -> str:
    """Count venues matching the belief constraints: 0 -> NA, 1 -> unique, more -> available."""
    table = kb.get(venue_domain)
    if table is None:
        raise KBMissingError(f"no venue table loaded for domain {venue_domain!r}")
    return status_for_count(table.count(table.constraints(belief)))


def load_kb(directory: str | Path, kb_files: Mapping[str, str] = DEFAULT_KB_FILES, strict: bool = False) -> dict[str, VenueTable]:
    """Load the venue tables present in ``directory``.

    Missing files are skipped unless ``strict``; a domain that later needs a
    status query without a table raises KBMissingError at that point.
    """
    directory = Path(directory)
    if not directory.is_dir():
        raise KBMissingError(f"venue table directory not found: {directory}")
    kb = {}
    for domain, name in sorted(kb_files.items()):
        path = directory / name
        try:
            with path.open(encoding="utf-8") as fh:
                rows = json.load(fh)
        except FileNotFoundError as exc:
            if strict:
                raise KBMissingError(f"venue table for {domain!r} not found: {path}") from exc
            continue
        except json.JSONDecodeError as exc:
            raise CorpusLoadError(f"{path}: invalid JSON ({exc})") from exc
        if not isinstance(rows, list) or not all(isinstance(r, Mapping) for r in rows):
            raise CorpusLoadError(f"{path}: venue table must be a JSON array of objects")
        kb[domain] = VenueTable(domain, rows)
    if not kb:
        raise KBMissingError(f"no venue tables ({', '.join(sorted(kb_files.values()))}) found in {directory}")
    return kb


def belief_from_metadata(metadata: Mapping[str, Any]) -> dict[str, dict[str, str]]:
    """Flatten MultiWOZ ``{domain: {semi: {...}, book: {...}}}`` into ``{domain: {slot: value}}``."""
    belief: dict[str, dict[str, str]] = {}
    for domain, parts in sorted(metadata.items()):
        if not isinstance(parts, Mapping):
            continue
        slots: dict[str, str] = {}
        for part in ("semi", "book"):
            for slot, value in (parts.get(part) or {}).items():
                if slot == "booked" or not isinstance(value, str):
                    continue
                value = " ".join(value.split())
                if value.lower() in EMPTY_VALUES:
                    continue
                slots.setdefault(slot.lower(), value)
        if slots:
            belief[domain.lower()] = dict(sorted(slots.items()))
    return belief


def belief_delta(prev: BeliefState, nxt: BeliefState) -> tuple[list[tuple[str, str]], int]:
    """Slots whose value appeared or changed, plus the number of deleted slots."""
    slots, deletions = [], 0
    for domain in sorted(set(prev) | set(nxt)):
        before = prev.get(domain) or {}
        after = nxt.get(domain) or {}
        for slot, value in after.items():
            if _norm(before.get(slot, "")) != _norm(value):
                slots.append((qualify_slot(domain, slot), tag_value(value)))
        deletions += sum(1 for slot in before if slot not in after)
    return slots, deletions


def infer_user_event(prev_belief: BeliefState, next_belief: BeliefState, is_last_user_turn: bool) -> UserEvent:
    slots, _ = belief_delta(prev_belief, next_belief)
    intent = "bye" if is_last_user_turn and not slots else "inform"
    return UserEvent(intent, tuple(slots))


def infer_booking_domain(history: Sequence[Event]) -> str:
    """Domain of the most recent event that carries a venue domain, or ``unknown``."""
    for ev in reversed(history):
        domain = ev.venue_domain
        if domain:
            return domain
    return UNKNOWN_DOMAIN


def _label_from_act(key: str, raw_slots: Any) -> CanonicalLabel:
    domain, _, act = key.partition("-")
    domain = domain.strip()
    act = ACT_ALIASES.get(act.strip().lower(), act.strip())
    slots = []
    for item in raw_slots or ():
        if isinstance(item, (list, tuple)) and len(item) >= 2:
            name = str(item[0]).strip()
            slots.append((SLOT_ALIASES.get(name.lower(), name), item[1]))
        else:
            raise MalformedLabelError(domain, act, raw_slots)
    return parse_action_label(domain[:1].upper() + domain[1:], act[:1].upper() + act[1:], slots)


def _requalify(label: CanonicalLabel, domain: str, act_type: str) -> CanonicalLabel:
    slots = []
    for name, tag in label.slots:
        bare = name.split("_", 1)[1] if "_" in name else name
        slots.append((qualify_slot(domain, bare), tag))
    return CanonicalLabel(domain.capitalize(), act_type, tuple(slots))


@dataclass
class _Parsed:
    id: str
    record: DialogueRecord | None = None
    skip_reason: str | None = None
    unknown_domain: bool = False
    deletions: int = 0


def _turn_acts(raw_turn: Mapping[str, Any], acts_entry: Any, turn_no: int, schema: SchemaMap):
    if acts_entry is not None:
        acts = acts_entry.get(str(turn_no)) if isinstance(acts_entry, Mapping) else None
    else:
        acts = raw_turn.get(schema.acts_key)
    if not isinstance(acts, Mapping) or not acts:
        return None
    return acts


def parse_dialogue(dialogue_id: str, raw: Mapping[str, Any], schema: SchemaMap, acts_entry: Any = None) -> _Parsed:
    turns = raw.get(schema.log_key)
    if not isinstance(turns, list) or len(turns) < 2:
        return _Parsed(dialogue_id, skip_reason="no turns")
    if len(turns) % 2:
        return _Parsed(dialogue_id, skip_reason="ends on a user turn")
    if schema.acts_file and acts_entry is None:
        return _Parsed(dialogue_id, skip_reason="no entry in acts file")

    n_user = len(turns) // 2
    events: list[Event] = []
    beliefs: list[dict] = []
    prev: dict = {}
    deletions = 0
    unknown = False
    for i in range(n_user):
        system = turns[2 * i + 1]
        metadata = system.get(schema.belief_key)
        if not isinstance(metadata, Mapping) or not metadata:
            return _Parsed(dialogue_id, skip_reason=f"turn {2 * i + 1}: missing belief state")
        acts = _turn_acts(system, acts_entry, i + 1, schema)
        if acts is None:
            return _Parsed(dialogue_id, skip_reason=f"turn {2 * i + 1}: missing dialogue acts")
        belief = belief_from_metadata(metadata)
        slots, dels = belief_delta(prev, belief)
        deletions += dels
        intent = "bye" if i == n_user - 1 and not slots else "inform"
        events.append(UserEvent(intent, tuple(slots)))
        beliefs.append(belief)
        prev = belief
        for key in acts:
            try:
                label = _label_from_act(key, acts[key])
            except MalformedLabelError:
                return _Parsed(dialogue_id, skip_reason=f"turn {2 * i + 1}: malformed act {key!r}")
            if label.domain == "Booking" and label.act_type == "Book":
                domain = infer_booking_domain(events)
                if domain == UNKNOWN_DOMAIN:
                    unknown = True
                else:
                    label = _requalify(label, domain, "Booking-Book")
            events.append(ActionEvent(label))
    record = DialogueRecord(
        id=dialogue_id,
        events=tuple(events),
        source="multiwoz",
        provenance={"beliefs": beliefs},
    )
    return _Parsed(dialogue_id, record=record, unknown_domain=unknown, deletions=deletions)


def _read_json(path: Path) -> Any:
    try:
        with path.open(encoding="utf-8") as fh:
            return json.load(fh)
    except FileNotFoundError as exc:
        raise CorpusLoadError(f"dataset file not found: {path}") from exc
    except OSError as exc:
        raise CorpusLoadError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise CorpusLoadError(f"{path}: malformed JSON ({exc})") from exc


def _probe(data: Mapping[str, Any], schema: SchemaMap, path: Path) -> None:
    if not isinstance(data, Mapping) or not data:
        raise SchemaProbeError(f"{path}: expected a non-empty object mapping dialogue ids to dialogues")
    probe_id = next(iter(data))
    probe = data[probe_id]
    turns = probe.get(schema.log_key) if isinstance(probe, Mapping) else None
    if not isinstance(turns, list) or not turns:
        raise SchemaProbeError(f"{path}: dialogue {probe_id!r} has no list under log_key={schema.log_key!r}")
    if not isinstance(turns[0], Mapping) or schema.text_key not in turns[0]:
        raise SchemaProbeError(f"{path}: dialogue {probe_id!r} turn 0 lacks text_key={schema.text_key!r}")
    if len(turns) > 1 and schema.belief_key not in turns[1]:
        raise SchemaProbeError(f"{path}: dialogue {probe_id!r} turn 1 lacks belief_key={schema.belief_key!r}")


def _strip_json_suffix(dialogue_id: str) -> str:
    return dialogue_id[:-5] if dialogue_id.lower().endswith(".json") else dialogue_id


def load_corpus(path: str | Path, schema: SchemaMap | None = None, jobs: int = 1) -> tuple[Corpus, int]:
    """Load a MultiWOZ-shaped directory.  Returns ``(corpus, skipped)``.

    Dialogues lacking action or belief annotations on any system turn are
    counted in ``skipped``.  Dialogues whose ``Booking-Book`` domain cannot be
    inferred are parsed but excluded from the corpus and listed in its
    provenance, so ``parsed + skipped`` always equals the number of input
    dialogues.
    """
    schema = schema or SchemaMap()
    root = Path(path)
    if not root.is_dir():
        raise CorpusLoadError(f"not a directory: {root}")
    data_path = root / schema.data_file
    if not data_path.exists():
        raise CorpusLoadError(f"{root} does not contain {schema.data_file}")
    data = _read_json(data_path)
    _probe(data, schema, data_path)
    acts = None
    if schema.acts_file:
        acts = _read_json(root / schema.acts_file)
        if not isinstance(acts, Mapping):
            raise SchemaProbeError(f"{schema.acts_file}: expected an object keyed by dialogue id")

    def work(item):
        raw_id, raw = item
        did = _strip_json_suffix(raw_id)
        if not isinstance(raw, Mapping):
            return _Parsed(did, skip_reason="not an object")
        entry = None
        if acts is not None:
            entry = acts.get(did, acts.get(raw_id))
            if not isinstance(entry, Mapping):
                entry = None
        return parse_dialogue(did, raw, schema, entry)

    results = parallel_map(work, data.items(), jobs)
    kept, skipped, unknown = [], {}, []
    deletions = 0
    for res in results:
        if res.record is None:
            skipped[res.id] = res.skip_reason
            continue
        deletions += res.deletions
        if res.unknown_domain:
            unknown.append(res.id)
        else:
            kept.append(res.record)
    if deletions:
        log.info("belief-state slot deletions ignored: %d", deletions)
    provenance = {
        "source": "multiwoz",
        "total": len(results),
        "parsed": len(results) - len(skipped),
        "skipped": len(skipped),
        "skip_reasons": dict(sorted(skipped.items())),
        "excluded_unknown_booking_domain": sorted(unknown),
        "belief_slot_deletions": deletions,
        "slot_names": "domain-qualified",
    }
    return Corpus(tuple(kept), (), provenance), len(skipped)
