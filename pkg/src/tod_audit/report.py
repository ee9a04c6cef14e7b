"""AuditReport assembly and rendering (json, md, csv).

Reports contain no timestamps or absolute machine state, so identical inputs,
config and tool version give byte-identical output.
"""

from __future__ import annotations

import csv
import io
import json
from typing import Any, Mapping, Sequence

from . import __version__
from .ambiguity import Conflict, PruneResult
from .corpus import Corpus
from .errors import CorpusFormatError
from .metrics import ProbeResult, ScoreRow

REPORT_SCHEMA = "tod-audit-report"
REPORT_VERSION = 1

PROXY_NOTE = (
    "Taskmaster labels are annotation signatures standing in for plain-text responses; "
    "scores are proxy metrics, not reproductions of retrieval-model results."
)


def corpus_stats(corpus: Corpus) -> dict:
    prov = corpus.provenance or {}
    out = {
        "source": prov.get("source", "unknown"),
        "dialogues": len(corpus),
        "actions": corpus.n_actions,
        "events": sum(len(d.events) for d in corpus.dialogues),
        "label_classes": len(corpus.vocab.labels),
    }
    for key in ("total", "parsed", "skipped", "belief_slot_deletions", "merged_same_speaker_turns",
                "dropped_edge_turns", "regex_domain_mismatch"):
        if key in prov:
            out[key] = prov[key]
    if "excluded_unknown_booking_domain" in prov:
        out["excluded_unknown_booking_domain"] = len(prov["excluded_unknown_booking_domain"])
        out["excluded_ids"] = list(prov["excluded_unknown_booking_domain"])
    return out


def conflict_summary(conflicts: Sequence[Conflict], top: int = 10) -> dict:
    return {
        "count": len(conflicts),
        "mass": sum(c.total for c in conflicts),
        "minority_mass": sum(c.total - c.alternatives[c.majority] for c in conflicts),
        "top": [
            {"key": list(c.key), "alternatives": dict(sorted(c.alternatives.items())), "total": c.total}
            for c in conflicts[:top]
        ],
    }


def prune_summary(result: PruneResult, total: int) -> dict:
    out = {
        "input": total,
        "kept": len(result.kept),
        "removed": len(result.removed),
        "rounds": result.rounds,
        "readded": result.readded,
        "removed_ids": [did for did, _ in result.removed],
    }
    if result.optimum is not None:
        out["exhaustive_optimum"] = result.optimum
        out["gap"] = result.gap
    return out


def build_report(
    command: str,
    config: Mapping[str, Any],
    inputs: Sequence[Mapping[str, str]],
    corpus: Corpus,
    *,
    conflicts: Sequence[Conflict] | None = None,
    prune: PruneResult | None = None,
    scores: Sequence[ScoreRow] = (),
    probe: ProbeResult | None = None,
    top: int = 10,
) -> dict:
    notes = []
    prov = corpus.provenance or {}
    proxy = prov.get("source") == "taskmaster" or bool(prov.get("proxy_labels"))
    if proxy:
        notes.append(PROXY_NOTE)
    if prov.get("source") == "multiwoz":
        notes.append("Slot names are domain-qualified; status values are derived from venue-table counts.")
    report = {
        "schema": REPORT_SCHEMA,
        "schema_version": REPORT_VERSION,
        "tool_version": __version__,
        "command": command,
        "config": dict(config),
        "inputs": [dict(i) for i in inputs],
        "stage_log": list(corpus.stage_log),
        "corpus": corpus_stats(corpus),
        "proxy_metrics": proxy,
        "conflicts": conflict_summary(conflicts, top) if conflicts is not None else None,
        "prune": prune_summary(prune, len(corpus)) if prune is not None else None,
        "scores": [r.to_json() for r in scores] + ([r.to_json() for r in probe.rows] if probe else []),
        "probe_deltas": probe.deltas if probe else None,
        "notes": notes,
    }
    return report


def validate_report(obj: Any) -> dict:
    if not isinstance(obj, Mapping) or obj.get("schema") != REPORT_SCHEMA:
        raise CorpusFormatError("not a tod-audit report (missing schema marker)")
    if obj.get("schema_version") != REPORT_VERSION:
        raise CorpusFormatError(f"unsupported report schema version {obj.get('schema_version')!r}")
    return dict(obj)


def _fmt(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return f"{value:.4f}"
    return str(value)


SCORE_COLUMNS = (
    ("model", lambda r: r["model"]),
    ("k", lambda r: r["k"]),
    ("note", lambda r: r.get("note", "")),
    ("stages", lambda r: "+".join(r["stage_log"]) or "none"),
    ("train_dialogues", lambda r: r["train_dialogues"]),
    ("train_f1", lambda r: (r["train"] or {}).get("macro_f1")),
    ("train_accuracy", lambda r: (r["train"] or {}).get("accuracy")),
    ("test_dialogues", lambda r: r["test_dialogues"]),
    ("test_f1", lambda r: (r["test"] or {}).get("macro_f1")),
    ("test_accuracy", lambda r: (r["test"] or {}).get("accuracy")),
)

DELTA_COLUMNS = ("model", "k_ref", "k", "train_accuracy", "train_macro_f1", "test_accuracy", "test_macro_f1")


def render_json(report: Mapping[str, Any]) -> str:
    return json.dumps(report, indent=2, sort_keys=True, ensure_ascii=False) + "\n"


def render_csv(report: Mapping[str, Any]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow([name for name, _ in SCORE_COLUMNS])
    for row in report.get("scores") or ():
        writer.writerow([_fmt(get(row)) for _, get in SCORE_COLUMNS])
    return buf.getvalue()


def _md_table(header: Sequence[str], rows: Sequence[Sequence[Any]]) -> list[str]:
    lines = ["| " + " | ".join(header) + " |", "|" + "|".join("---" for _ in header) + "|"]
    lines += ["| " + " | ".join(_fmt(v) for v in row) + " |" for row in rows]
    return lines


def render_md(report: Mapping[str, Any]) -> str:
    lines = [f"# tod-audit {report['command']} report", ""]
    lines.append(f"tool version {report['tool_version']}, report schema {report['schema_version']}")
    lines.append("")
    for inp in report.get("inputs") or ():
        lines.append(f"- input `{inp['path']}` sha256 `{inp['sha256']}`")
    lines.append(f"- stage log: {' -> '.join(report['stage_log']) or '(none)'}")
    for note in report.get("notes") or ():
        lines.append(f"- note: {note}")
    lines += ["", "## Corpus", ""]
    stats = {k: v for k, v in report["corpus"].items() if k != "excluded_ids"}
    lines += _md_table(["statistic", "value"], sorted(stats.items()))
    if report.get("conflicts") is not None:
        c = report["conflicts"]
        lines += ["", "## Conflicts", "", f"{c['count']} branch points, mass {c['mass']}, minority mass {c['minority_mass']}", ""]
        rows = [[i + 1, " / ".join(f"{k}:{v}" for k, v in item["alternatives"].items()), item["total"]]
                for i, item in enumerate(c["top"])]
        if rows:
            lines += _md_table(["#", "alternatives", "total"], rows)
    if report.get("prune") is not None:
        p = report["prune"]
        lines += ["", "## Pruning", ""]
        keys = ["input", "kept", "removed", "rounds", "readded", "exhaustive_optimum", "gap"]
        lines += _md_table(["statistic", "value"], [(k, p[k]) for k in keys if k in p])
    if report.get("scores"):
        lines += ["", "## Scores", ""]
        lines += _md_table([n for n, _ in SCORE_COLUMNS], [[get(r) for _, get in SCORE_COLUMNS] for r in report["scores"]])
    if report.get("probe_deltas"):
        lines += ["", "## History probe deltas", ""]
        lines += _md_table(DELTA_COLUMNS, [[d.get(c) for c in DELTA_COLUMNS] for d in report["probe_deltas"]])
    return "\n".join(lines) + "\n"


RENDERERS = {"json": render_json, "md": render_md, "csv": render_csv}
