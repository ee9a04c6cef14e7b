"""Simplification ladder: status slots, act-type merging, Reqmore filtering.

Every stage is a pure ``Corpus -> Corpus`` transform and is idempotent; the
name of each applied stage is appended to ``Corpus.stage_log`` once.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping

from ._util import parallel_map
from .corpus import ActionEvent, Corpus, DialogueRecord, StatusEvent
from .errors import ConfigError, CorpusFormatError, KBMissingError
from .multiwoz import DEFAULT_KB_FILES, VenueTable, status_for_count

STAGE_ORDER = ("status_slots", "merge_labels", "drop_reqmore")

DEFAULT_MERGE_TABLE = {
    "Inform": "Reply",
    "Recommend": "Reply",
    "Select": "Reply",
    "Request": "Reply",
    "Goodbye": "Welcome",
    "Welcome": "Welcome",
    "Greet": "Welcome",
}

BOOK_ACTS = frozenset({"Booking-Book", "Book", "OfferBooked"})


@dataclass
class StageConfig:
    status_slots: bool = True
    merge_labels: bool = True
    drop_reqmore: bool = True
    merge_table: dict = field(default_factory=lambda: dict(DEFAULT_MERGE_TABLE))

    @classmethod
    def from_dict(cls, obj: Mapping[str, Any] | None) -> "StageConfig":
        obj = dict(obj or {})
        unknown = sorted(set(obj) - {"status_slots", "merge_labels", "drop_reqmore", "merge_table"})
        if unknown:
            raise ConfigError(f"unknown stage config keys: {unknown}")
        cfg = cls(**obj)
        resolved_merge_table(cfg.merge_table)
        return cfg

    @classmethod
    def only(cls, stages: Iterable[str], merge_table: Mapping[str, str] | None = None) -> "StageConfig":
        stages = set(stages)
        unknown = sorted(stages - set(STAGE_ORDER))
        if unknown:
            raise ConfigError(f"unknown stages {unknown}; choose from {list(STAGE_ORDER)}")
        table = dict(merge_table) if merge_table is not None else dict(DEFAULT_MERGE_TABLE)
        return cls(*(name in stages for name in STAGE_ORDER), merge_table=table)

    @property
    def enabled(self) -> list[str]:
        return [name for name in STAGE_ORDER if getattr(self, name)]

    def to_dict(self) -> dict:
        return {
            "status_slots": self.status_slots,
            "merge_labels": self.merge_labels,
            "drop_reqmore": self.drop_reqmore,
            "merge_table": dict(sorted(self.merge_table.items())),
        }


def resolved_merge_table(table: Mapping[str, str]) -> dict[str, str]:
    """Follow chains (A->B, B->C) to their end so a single rewrite pass is idempotent."""
    out = {}
    for src in table:
        seen, cur = [src], table[src]
        while cur in table and table[cur] != cur:
            if cur in seen:
                raise ConfigError(f"merge table has a cycle through {cur!r}")
            seen.append(cur)
            cur = table[cur]
        out[src] = cur
    return out


def _strip_status(events) -> list:
    out = []
    for ev in events:
        if ev.kind == "kb_status":
            continue
        if ev.kind == "action":
            slots = tuple(
                (n, t) for n, t in ev.label.slots if not (n.endswith("_status") and t == "booked")
            )
            if slots != ev.label.slots:
                ev = ActionEvent(type(ev.label)(ev.label.domain, ev.label.act_type, slots))
        out.append(ev)
    return out


def _with_status(d: DialogueRecord, kb: Mapping[str, VenueTable]) -> DialogueRecord:
    beliefs = (d.provenance or {}).get("beliefs")
    if beliefs is None:
        return d
    base = _strip_status(d.events)
    n_user = sum(1 for ev in base if ev.kind == "user")
    if n_user != len(beliefs):
        raise CorpusFormatError(f"{d.id}: {len(beliefs)} belief states for {n_user} user turns")

    missing = sorted({dom for b in beliefs for dom in b if dom in DEFAULT_KB_FILES and dom not in kb})
    if missing:
        raise KBMissingError(f"{d.id}: no venue table loaded for {', '.join(missing)}")
    current = {dom: status_for_count(len(table)) for dom, table in kb.items()}
    booked_at: dict[str, tuple] = {}
    out = []
    turn = -1
    for ev in base:
        if ev.kind == "user":
            turn += 1
            out.append(ev)
            for dom in sorted(kb):
                table = kb[dom]
                cons = table.constraints(beliefs[turn])
                if dom in booked_at:
                    # booked sticks until the user changes what is being looked up
                    if cons == booked_at[dom]:
                        continue
                    del booked_at[dom]
                status = status_for_count(table.count(cons))
                if status != current[dom]:
                    out.append(StatusEvent(dom, status))
                    current[dom] = status
        else:
            dom = ev.label.domain.lower()
            if ev.label.act_type in BOOK_ACTS and dom in kb:
                ev = ActionEvent(ev.label.with_slot(f"{dom}_status", "booked"))
                current[dom] = "booked"
                booked_at[dom] = kb[dom].constraints(beliefs[max(turn, 0)])
            out.append(ev)
    return d.replace(out)


def add_status_slots(corpus: Corpus, kb: Mapping[str, VenueTable], jobs: int = 1) -> Corpus:
    """Insert knowledge-base status events after user turns where a venue status changes.

    Book actions on a KB domain carry ``<domain>_status: booked`` and pin that
    domain's status to ``booked`` until its constraints change.  Dialogues
    without belief-state provenance pass through unchanged.
    """
    if not kb:
        raise KBMissingError("status slots need at least one venue table")
    dialogues = parallel_map(lambda d: _with_status(d, kb), corpus.dialogues, jobs)
    return corpus.with_dialogues(dialogues, stage="status_slots")


def merge_labels(corpus: Corpus, cfg: StageConfig | None = None) -> Corpus:
    table = resolved_merge_table((cfg or StageConfig()).merge_table)
    dialogues = []
    for d in corpus.dialogues:
        events = []
        for ev in d.events:
            if ev.kind == "action" and ev.label.act_type in table:
                ev = ActionEvent(ev.label.with_act(table[ev.label.act_type]))
            events.append(ev)
        dialogues.append(d.replace(events))
    return corpus.with_dialogues(dialogues, stage="merge_labels")


def _is_reqmore(ev) -> bool:
    return ev.kind == "action" and ev.label.domain == "General" and ev.label.act_type == "Reqmore"


def _drop_reqmore_events(events) -> list:
    out, turn = [], []

    def flush():
        n_actions = sum(1 for ev in turn if ev.kind == "action")
        n_reqmore = sum(1 for ev in turn if _is_reqmore(ev))
        if n_reqmore and n_reqmore < n_actions:
            out.extend(ev for ev in turn if not _is_reqmore(ev))
        else:
            out.extend(turn)
        turn.clear()

    for ev in events:
        if ev.kind == "user":
            flush()
            out.append(ev)
        else:
            turn.append(ev)
    flush()
    return out


def drop_reqmore(corpus: Corpus) -> Corpus:
    """Remove General-Reqmore unless the system turn consists of nothing else."""
    dialogues = [d.replace(_drop_reqmore_events(d.events)) for d in corpus.dialogues]
    return corpus.with_dialogues(dialogues, stage="drop_reqmore")


def canonicalize(
    corpus: Corpus,
    cfg: StageConfig | None = None,
    kb: Mapping[str, VenueTable] | None = None,
    jobs: int = 1,
) -> Corpus:
    cfg = cfg or StageConfig()
    if cfg.status_slots:
        corpus = add_status_slots(corpus, kb or {}, jobs=jobs)
    if cfg.merge_labels:
        corpus = merge_labels(corpus, cfg)
    if cfg.drop_reqmore:
        corpus = drop_reqmore(corpus)
    return corpus
