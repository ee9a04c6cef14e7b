from __future__ import annotations

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from builders import HOTELS, hotel_meta, turn, write_multiwoz
from tod_audit.canonicalize import (
    DEFAULT_MERGE_TABLE,
    STAGE_ORDER,
    StageConfig,
    add_status_slots,
    canonicalize,
    drop_reqmore,
    merge_labels,
    resolved_merge_table,
)
from tod_audit.corpus import ActionEvent, CanonicalLabel, Corpus, DialogueRecord, UserEvent, action, serialize_dialogue
from tod_audit.errors import ConfigError, KBMissingError
from tod_audit.multiwoz import VenueTable, load_corpus, load_kb

BOOKING_WITH_STATUS = [
    '* inform{"hotel_area": "specific"}',
    "  - Hotel-Select",
    '* inform{"hotel_name": "specific"}',
    '  - slot{"hotel_status": "unique"}',
    '  - Hotel-Booking-Book{"hotel_reference": "specific", "hotel_status": "booked"}',
    "  - Hotel-Inform",
    "* bye",
    "  - General-Goodbye",
]


@pytest.fixture
def parsed(mwoz_dir):
    corpus, _ = load_corpus(mwoz_dir)
    return corpus, load_kb(mwoz_dir)


def test_default_merge_table():
    assert DEFAULT_MERGE_TABLE == {
        "Inform": "Reply", "Recommend": "Reply", "Select": "Reply", "Request": "Reply",
        "Goodbye": "Welcome", "Welcome": "Welcome", "Greet": "Welcome",
    }


def test_booking_status_slots(parsed):
    corpus, kb = parsed
    out = add_status_slots(corpus, kb)
    assert serialize_dialogue(out.dialogues[0], header=False).splitlines() == BOOKING_WITH_STATUS
    assert out.stage_log == ("status_slots",)


def test_no_kb_domain_unchanged(parsed):
    _, kb = parsed
    raw = DialogueRecord(
        id="t",
        events=(UserEvent("inform", (("taxi_leaveat", "specific"),)), action("Taxi", "Inform")),
        provenance={"beliefs": [{"taxi": {"leaveat": "10:00"}}]},
    )
    out = add_status_slots(Corpus((raw,)), kb)
    assert out.dialogues[0].events == raw.events


def test_na_status_precedes_nooffer(tmp_path):
    raw = {"log": [
        turn("A hotel in the south?"),
        turn("None there.", hotel_meta(area="south"), {"Hotel-NoOffer": [["Area", "south"]]}),
    ]}
    write_multiwoz(tmp_path, {"N.json": raw})
    corpus, _ = load_corpus(tmp_path)
    out = add_status_slots(corpus, load_kb(tmp_path))
    lines = serialize_dialogue(out.dialogues[0], header=False).splitlines()
    assert lines[1] == '  - slot{"hotel_status": "NA"}'
    assert lines[2].startswith("  - Hotel-NoOffer")


def test_missing_table_for_queried_domain(tmp_path):
    raw = {"log": [
        turn("A train?"),
        turn("Where to?", {"train": {"semi": {"destination": "ely"}, "book": {}}}, {"Train-Request": [["Depart", "?"]]}),
    ]}
    write_multiwoz(tmp_path, {"T.json": raw})
    corpus, _ = load_corpus(tmp_path)
    with pytest.raises(KBMissingError):
        add_status_slots(corpus, load_kb(tmp_path))


def test_merge_examples():
    d = DialogueRecord(
        id="m",
        events=(
            UserEvent("inform"),
            action("Hotel", "Recommend"),
            action("General", "Greet"),
            ActionEvent(CanonicalLabel("Hotel", "Booking-Book", (("hotel_reference", "specific"),))),
            action("Booking", "NoBook"),
        ),
    )
    out = merge_labels(Corpus((d,)))
    names = [lab.name for _, lab in out.dialogues[0].actions()]
    assert names == ["Hotel-Reply", "General-Welcome", "Hotel-Booking-Book", "Booking-NoBook"]
    assert len(out.dialogues[0].events) == len(d.events)


def test_merge_table_chains_and_cycles():
    assert resolved_merge_table({"A": "B", "B": "C"}) == {"A": "C", "B": "C"}
    with pytest.raises(ConfigError):
        resolved_merge_table({"A": "B", "B": "A"})


def _turns(*acts_per_turn):
    events = []
    for acts in acts_per_turn:
        events.append(UserEvent("inform"))
        events.extend(action(*a.split("-")) for a in acts)
    return DialogueRecord(id="r", events=tuple(events))


def test_drop_reqmore_examples():
    d = _turns(["Hotel-Reply", "General-Reqmore"], ["General-Reqmore"], ["Hotel-Reply"])
    out = drop_reqmore(Corpus((d,))).dialogues[0]
    assert [lab.name for _, lab in out.actions()] == ["Hotel-Reply", "General-Reqmore", "Hotel-Reply"]


ACTS = st.sampled_from(["Hotel-Inform", "Hotel-Select", "General-Reqmore", "General-Greet", "Hotel-Request", "Booking-NoBook"])


@settings(max_examples=100, deadline=None)
@given(st.lists(st.lists(ACTS, min_size=1, max_size=4), min_size=1, max_size=5))
def test_stages_idempotent_and_never_empty_turns(turns):
    c = Corpus((_turns(*turns),))
    for stage in (merge_labels, drop_reqmore):
        once = stage(c)
        twice = stage(once)
        assert once.dialogues == twice.dialogues
        assert once.stage_log == twice.stage_log
    # drop_reqmore keeps at least one action per turn (the record would not construct otherwise)
    out = drop_reqmore(c).dialogues[0]
    assert sum(1 for e in out.events if e.kind == "user") == len(turns)


def test_status_stage_idempotent(parsed):
    corpus, kb = parsed
    once = add_status_slots(corpus, kb)
    twice = add_status_slots(once, kb)
    assert once.dialogues == twice.dialogues and twice.stage_log == ("status_slots",)


def test_full_pipeline_order(parsed):
    corpus, kb = parsed
    out = canonicalize(corpus, StageConfig(), kb)
    assert out.stage_log == STAGE_ORDER
    text = serialize_dialogue(out.dialogues[1], header=False)
    assert "Reqmore" not in text and "Hotel-Reply" in text


def test_stage_config():
    cfg = StageConfig.only(["merge_labels"])
    assert cfg.enabled == ["merge_labels"]
    assert StageConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ConfigError):
        StageConfig.from_dict({"bogus": True})


def test_booked_status_sticks_until_constraints_change():
    kb = {"hotel": VenueTable("hotel", HOTELS)}
    b1 = {"hotel": {"name": "gonville hotel"}}
    b2 = {"hotel": {"name": "acorn guest house"}}
    d = DialogueRecord(
        id="b",
        events=(
            UserEvent("inform", (("hotel_name", "specific"),)),
            ActionEvent(CanonicalLabel("Hotel", "Booking-Book")),
            UserEvent("inform", (("hotel_people", "specific"),)),
            action("Hotel", "Inform"),
            UserEvent("inform", (("hotel_name", "specific"),)),
            action("Hotel", "Inform"),
        ),
        provenance={"beliefs": [b1, b1, b2]},
    )
    lines = serialize_dialogue(add_status_slots(Corpus((d,)), kb).dialogues[0], header=False).splitlines()
    assert lines.count('  - slot{"hotel_status": "unique"}') == 2
    assert lines[2] == '  - Hotel-Booking-Book{"hotel_status": "booked"}'
