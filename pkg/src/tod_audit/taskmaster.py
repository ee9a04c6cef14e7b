"""Taskmaster-1 self-dialogue loader.

Each system utterance becomes one action whose label is its annotation
signature: ``<dialogue domain>-<regex domain>{<segment labels>: specific}``.
These are proxy targets for the plain-text responses of a retrieval model.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

from ._util import parallel_map
from .corpus import SPECIFIC, ActionEvent, CanonicalLabel, Corpus, DialogueRecord, UserEvent
from .errors import ConfigError, CorpusLoadError, MalformedDialogueError, SchemaProbeError

USER, SYSTEM = "USER", "ASSISTANT"
RULES_RESOURCE = "taskmaster_domain_rules.json"


@dataclass(frozen=True, order=True)
class SegmentAnnotation:
    start: int
    end: int
    label: str


@dataclass(frozen=True)
class DomainRegexRules:
    rules: tuple  # ((domain, (compiled pattern, ...)), ...), first match wins
    fallthrough: str = "none"
    version: str = "1"

    def classify(self, text: str) -> str:
        for domain, patterns in self.rules:
            if any(p.search(text) for p in patterns):
                return domain
        return self.fallthrough

    @classmethod
    def from_mapping(cls, obj: Mapping[str, Any]) -> "DomainRegexRules":
        rules_obj = obj.get("rules", obj) if isinstance(obj, Mapping) else None
        if not isinstance(rules_obj, Mapping):
            raise ConfigError("domain rules must be a JSON object of domain -> pattern list")
        rules = []
        for domain, patterns in rules_obj.items():
            if isinstance(patterns, str):
                patterns = [patterns]
            try:
                compiled = tuple(re.compile(p, re.IGNORECASE) for p in patterns)
            except re.error as exc:
                raise ConfigError(f"bad pattern for domain {domain!r}: {exc}") from exc
            rules.append((domain, compiled))
        return cls(tuple(rules), obj.get("fallthrough", "none"), str(obj.get("version", "1")))

    @classmethod
    def load(cls, path: str | Path | None = None) -> "DomainRegexRules":
        try:
            if path is None:
                text = resources.files("tod_audit.data").joinpath(RULES_RESOURCE).read_text(encoding="utf-8")
            else:
                text = Path(path).read_text(encoding="utf-8")
            return cls.from_mapping(json.loads(text))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read domain rules {path or RULES_RESOURCE}: {exc}") from exc


def annotation_label(name: str) -> str:
    """``restaurant_reservation.num.guests.accept`` -> ``num_guests``."""
    parts = [p for p in re.split(r"[.\s]+", name.strip()) if p]
    if parts and parts[-1] in ("accept", "reject"):
        parts = parts[:-1]
    if len(parts) > 1:
        parts = parts[1:]
    label = "_".join(parts).lower()
    label = re.sub(r"[{}\"\s]", "_", label)
    return label or "segment"


def segments_from_raw(raw_segments: Iterable[Mapping[str, Any]] | None) -> list[SegmentAnnotation]:
    out = []
    for seg in raw_segments or ():
        start, end = int(seg["start_index"]), int(seg["end_index"])
        for ann in seg.get("annotations") or ():
            out.append(SegmentAnnotation(start, end, annotation_label(ann["name"])))
    return out


def _check_bounds(utterance: str, segments: Sequence[SegmentAnnotation]) -> None:
    for seg in segments:
        if not 0 <= seg.start < seg.end <= len(utterance):
            raise ValueError(f"segment {seg} outside utterance of length {len(utterance)}")


def resolve_overlaps(segments: Sequence[SegmentAnnotation]) -> list[SegmentAnnotation]:
    """Non-overlapping subset, longer spans first; returned in text order."""
    chosen: list[SegmentAnnotation] = []
    for seg in sorted(segments, key=lambda s: (s.start - s.end, s.start, s.label)):
        if all(seg.end <= c.start or c.end <= seg.start for c in chosen):
            chosen.append(seg)
    return sorted(chosen)


def delexicalize(utterance: str, segments: Sequence[SegmentAnnotation]) -> str:
    _check_bounds(utterance, segments)
    out = utterance
    for seg in reversed(resolve_overlaps(segments)):
        out = out[: seg.start] + f"<{seg.label}>" + out[seg.end :]
    return out


def tag_utterance(
    utterance: str,
    dialogue_domain: str,
    segments: Sequence[SegmentAnnotation],
    rules: DomainRegexRules,
) -> CanonicalLabel:
    slots = tuple((label, SPECIFIC) for label in sorted({s.label for s in segments}))
    return CanonicalLabel(dialogue_domain, rules.classify(utterance), slots)


def dialogue_domain(instruction_id: str) -> str:
    head = re.split(r"[-_\s]", instruction_id.strip().lower(), maxsplit=1)[0]
    return head or "unknown"


@dataclass
class _Turn:
    speaker: str
    text: str
    segments: list


def _merge_turns(utterances: Sequence[Mapping[str, Any]]) -> tuple[list[_Turn], int]:
    turns: list[_Turn] = []
    merged = 0
    for utt in utterances:
        speaker = str(utt.get("speaker", "")).upper()
        text = str(utt.get("text", ""))
        segs = segments_from_raw(utt.get("segments"))
        _check_bounds(text, segs)
        if turns and turns[-1].speaker == speaker:
            prev = turns[-1]
            offset = len(prev.text) + 1
            prev.text = prev.text + " " + text
            prev.segments.extend(SegmentAnnotation(s.start + offset, s.end + offset, s.label) for s in segs)
            merged += 1
        else:
            turns.append(_Turn(speaker, text, list(segs)))
    return turns, merged


def parse_dialogue(raw: Mapping[str, Any], rules: DomainRegexRules) -> dict:
    did = str(raw.get("conversation_id", "")).strip()
    domain = dialogue_domain(str(raw.get("instruction_id", "unknown")))
    utterances = sorted(raw.get("utterances") or (), key=lambda u: u.get("index", 0))
    try:
        turns, merged = _merge_turns(utterances)
    except (ValueError, KeyError, TypeError) as exc:
        return {"id": did, "skip": f"bad segments: {exc}"}
    for t in turns:
        if t.speaker not in (USER, SYSTEM):
            return {"id": did, "skip": f"unknown speaker {t.speaker!r}"}
    dropped = 0
    while turns and turns[0].speaker != USER:
        turns.pop(0)
        dropped += 1
    if turns and turns[-1].speaker == USER:
        turns.pop()
        dropped += 1
    if not turns:
        return {"id": did, "skip": "no user/assistant exchange"}

    last_user = max(i for i, t in enumerate(turns) if t.speaker == USER)
    events, templates = [], []
    mismatched = 0
    for i, t in enumerate(turns):
        templates.append(delexicalize(t.text, t.segments))
        regex_domain = rules.classify(t.text)
        mismatched += regex_domain != domain
        if t.speaker == USER:
            intent = "bye" if i == last_user and not t.segments else "inform"
            labels = sorted({s.label for s in t.segments})
            events.append(UserEvent(intent, tuple((label, SPECIFIC) for label in labels)))
        else:
            events.append(ActionEvent(tag_utterance(t.text, domain, t.segments, rules)))
    try:
        record = DialogueRecord(
            id=did,
            events=tuple(events),
            source="taskmaster",
            domains=(domain,),
            provenance={"templates": templates},
        )
    except MalformedDialogueError as exc:
        return {"id": did, "skip": str(exc)}
    return {
        "id": did,
        "record": record,
        "merged": merged,
        "dropped": dropped,
        "utterances": len(turns),
        "mismatched": mismatched,
    }


def load_corpus(path: str | Path, rules: DomainRegexRules | None = None, jobs: int = 1) -> tuple[Corpus, int]:
    """Load ``self-dialogs.json`` (a JSON array of dialogues).  Returns ``(corpus, skipped)``."""
    rules = rules or DomainRegexRules.load()
    path = Path(path)
    if path.is_dir():
        path = path / "self-dialogs.json"
    try:
        with path.open(encoding="utf-8") as fh:
            data = json.load(fh)
    except FileNotFoundError as exc:
        raise CorpusLoadError(f"dataset file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise CorpusLoadError(f"{path}: malformed JSON ({exc})") from exc
    if not isinstance(data, list) or not data:
        raise SchemaProbeError(f"{path}: expected a non-empty JSON array of dialogues")
    probe = data[0]
    if not isinstance(probe, Mapping) or "conversation_id" not in probe or "utterances" not in probe:
        raise SchemaProbeError(f"{path}: dialogues need 'conversation_id' and 'utterances' fields")

    results = parallel_map(lambda raw: parse_dialogue(raw, rules), data, jobs)
    kept, skipped = [], {}
    merged = dropped = utterances = mismatched = 0
    for res in results:
        if "record" not in res:
            skipped[res["id"]] = res["skip"]
            continue
        kept.append(res["record"])
        merged += res["merged"]
        dropped += res["dropped"]
        utterances += res["utterances"]
        mismatched += res["mismatched"]
    provenance = {
        "source": "taskmaster",
        "proxy_labels": True,
        "total": len(results),
        "parsed": len(kept),
        "skipped": len(skipped),
        "skip_reasons": dict(sorted(skipped.items())),
        "merged_same_speaker_turns": merged,
        "dropped_edge_turns": dropped,
        "utterances": utterances,
        "regex_domain_mismatch": round(mismatched / utterances, 4) if utterances else 0.0,
        "rules_version": rules.version,
    }
    return Corpus(tuple(kept), (), provenance), len(skipped)
