"""``tod-audit`` command line.

Exit status: 0 success, 1 input/config error, 2 internal invariant violation.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from typing import Any, Sequence

from . import __version__
from ._util import atomic_write_text, sha256_file
from .ambiguity import find_conflicts, prune
from .canonicalize import STAGE_ORDER, StageConfig, canonicalize
from .corpus import dumps_corpus, read_corpus
from .errors import AuditError, ConfigError, CorpusFormatError, InvariantViolation
from .metrics import DEFAULT_KS, SplitSpec, evaluate, history_probe, split_corpus
from .multiwoz import SchemaMap, load_kb
from .report import RENDERERS, build_report, validate_report
from . import multiwoz, synth, taskmaster

log = logging.getLogger("tod_audit")

CONFIG_ENV = "TOD_AUDIT_CONFIG"
CONFIG_KEYS = {"schema", "stages", "split", "taskmaster_rules", "k", "ks", "end_of_turn", "top_conflicts", "jobs"}


class UsageError(AuditError):
    hint = "run `tod-audit --help` or `tod-audit <command> --help`"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _int_list(text: str) -> list[int]:
    try:
        values = [int(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from exc
    if not values or any(v < 1 for v in values):
        raise argparse.ArgumentTypeError("window sizes must be positive integers")
    return values


def _stage_list(text: str) -> list[str]:
    stages = [s.strip() for s in text.split(",") if s.strip() and s.strip() != "none"]
    unknown = [s for s in stages if s not in STAGE_ORDER]
    if unknown:
        raise argparse.ArgumentTypeError(f"unknown stages {unknown}; choose from {','.join(STAGE_ORDER)}")
    return stages


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help=f"JSON config file (default: ${CONFIG_ENV})")
    common.add_argument("--jobs", type=int, default=None, help="worker threads for per-dialogue work")
    common.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="tod-audit", description=__doc__.splitlines()[0] if __doc__ else None)
    p.add_argument("--version", action="version", version=f"tod-audit {__version__}")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    ing = sub.add_parser("ingest", parents=[common], help="convert a raw dataset into corpus JSON")
    ing.add_argument("dataset", choices=["multiwoz", "taskmaster"])
    ing.add_argument("--in", dest="inp", required=True, help="dataset directory (multiwoz) or self-dialogs.json")
    ing.add_argument("--out", required=True)
    ing.add_argument("--rules", help="Taskmaster domain regex rules (JSON)")

    can = sub.add_parser("canonicalize", parents=[common], help="apply simplification stages")
    can.add_argument("--in", dest="inp", required=True)
    can.add_argument("--out", required=True)
    can.add_argument("--stages", type=_stage_list, help=f"comma list from {','.join(STAGE_ORDER)} (or 'none')")
    can.add_argument("--kb", help="directory with the venue *_db.json files")

    def report_cmd(name, help_text):
        cmd = sub.add_parser(name, parents=[common], help=help_text)
        cmd.add_argument("--in", dest="inp", required=True)
        cmd.add_argument("--out", help="report path (default: stdout)")
        cmd.add_argument("--seed", type=int)
        cmd.add_argument("--format", choices=sorted(RENDERERS), default="json")
        return cmd

    aud = report_cmd("audit", "conflicts, pruning and memorization/backoff scores")
    aud.add_argument("--k", type=int)
    aud.add_argument("--ks", type=_int_list, help="also run the history probe over these window sizes")

    prb = report_cmd("probe", "history-length probe")
    prb.add_argument("--ks", type=_int_list)

    pru = sub.add_parser("prune", parents=[common], help="write the maximal unambiguous sub-corpus")
    pru.add_argument("--in", dest="inp", required=True)
    pru.add_argument("--out", required=True, help="pruned corpus JSON")
    pru.add_argument("--k", type=int)
    pru.add_argument("--result", help="prune result JSON (default: <out>.prune.json)")

    syn = sub.add_parser("synth", parents=[common], help="generate a synthetic corpus from a spec JSON")
    syn.add_argument("--in", dest="inp", required=True, help="synth spec JSON")
    syn.add_argument("--out", required=True)
    syn.add_argument("--seed", type=int)

    rep = sub.add_parser("report", parents=[common], help="re-render a JSON report")
    rep.add_argument("--in", dest="inp", required=True)
    rep.add_argument("--out")
    rep.add_argument("--format", choices=sorted(RENDERERS), default="md")
    return p


def load_config(path: str | None) -> dict:
    path = path or os.environ.get(CONFIG_ENV)
    if not path:
        return {}
    try:
        with open(path, encoding="utf-8") as fh:
            cfg = json.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(cfg, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    unknown = sorted(set(cfg) - CONFIG_KEYS)
    if unknown:
        raise ConfigError(f"{path}: unknown config keys {unknown}")
    return cfg


class Settings:
    """Config file merged with command-line overrides."""

    def __init__(self, args: argparse.Namespace):
        cfg = load_config(getattr(args, "config", None))
        self.schema = SchemaMap.from_dict(cfg.get("schema"))
        self.stages = StageConfig.from_dict(cfg.get("stages"))
        if getattr(args, "stages", None) is not None:
            self.stages = StageConfig.only(args.stages, self.stages.merge_table)
        split = dict(cfg.get("split") or {})
        if getattr(args, "seed", None) is not None:
            split["seed"] = args.seed
        self.split = SplitSpec.from_dict(split)
        self.k = getattr(args, "k", None) or cfg.get("k", 10)
        self.ks = getattr(args, "ks", None) or cfg.get("ks", list(DEFAULT_KS))
        self.end_of_turn = bool(cfg.get("end_of_turn", False))
        self.top = int(cfg.get("top_conflicts", 10))
        self.jobs = args.jobs if getattr(args, "jobs", None) else int(cfg.get("jobs", 1))
        self.rules = getattr(args, "rules", None) or cfg.get("taskmaster_rules")
        if not isinstance(self.k, int) or self.k < 1:
            raise ConfigError(f"k must be a positive integer, got {self.k!r}")

    def echo(self, command: str) -> dict:
        # jobs is deliberately left out: it must not change any output byte
        out: dict[str, Any] = {"end_of_turn": self.end_of_turn, "split": self.split.to_dict()}
        if command == "audit":
            out.update(k=self.k, top_conflicts=self.top)
        if command in ("audit", "probe"):
            out["ks"] = list(self.ks)
        return out


def _input_record(path: str) -> dict:
    return {"path": path, "sha256": sha256_file(path)}


def _emit(text: str, out: str | None) -> None:
    if out:
        atomic_write_text(out, text)
    else:
        sys.stdout.write(text)


def cmd_ingest(args, s: Settings) -> None:
    if args.dataset == "multiwoz":
        corpus, skipped = multiwoz.load_corpus(args.inp, s.schema, jobs=s.jobs)
    else:
        rules = taskmaster.DomainRegexRules.load(s.rules)
        corpus, skipped = taskmaster.load_corpus(args.inp, rules, jobs=s.jobs)
    atomic_write_text(args.out, dumps_corpus(corpus))
    log.info("wrote %d dialogues (%d skipped) to %s", len(corpus), skipped, args.out)


def _kb_for(args, s: Settings):
    kb_dir = args.kb or s.schema.kb_dir
    if not kb_dir:
        raise ConfigError("the status_slots stage needs venue tables: pass --kb DIR or set schema.kb_dir")
    return load_kb(kb_dir, s.schema.kb_files)


def cmd_canonicalize(args, s: Settings) -> None:
    corpus = read_corpus(args.inp)
    kb = _kb_for(args, s) if s.stages.status_slots else None
    out = canonicalize(corpus, s.stages, kb, jobs=s.jobs)
    atomic_write_text(args.out, dumps_corpus(out))


def cmd_audit(args, s: Settings) -> None:
    corpus = read_corpus(args.inp)
    if not len(corpus):
        raise CorpusFormatError(f"{args.inp}: corpus has no dialogues")
    conflicts = find_conflicts(corpus, s.k, s.end_of_turn)
    pruned = prune(corpus, s.k, s.end_of_turn)
    rows = []
    train, test = split_corpus(corpus, s.split)
    for model in ("memorize", "backoff"):
        rows.append(evaluate(model, train, test, s.k, end_of_turn=s.end_of_turn, note="all"))
    if len(pruned.kept) and len(pruned.kept) < len(corpus):
        ptrain, ptest = split_corpus(pruned.kept, s.split)
        rows.append(evaluate("memorize", ptrain, ptest, s.k, end_of_turn=s.end_of_turn, note="pruned"))
    probe = history_probe(corpus, s.ks, s.split, end_of_turn=s.end_of_turn) if args.ks else None
    report = build_report(
        "audit", s.echo("audit"), [_input_record(args.inp)], corpus,
        conflicts=conflicts, prune=pruned, scores=rows, probe=probe, top=s.top,
    )
    _emit(RENDERERS[args.format](report), args.out)


def cmd_probe(args, s: Settings) -> None:
    corpus = read_corpus(args.inp)
    if not len(corpus):
        raise CorpusFormatError(f"{args.inp}: corpus has no dialogues")
    probe = history_probe(corpus, s.ks, s.split, end_of_turn=s.end_of_turn)
    report = build_report("probe", s.echo("probe"), [_input_record(args.inp)], corpus, probe=probe)
    _emit(RENDERERS[args.format](report), args.out)


def cmd_prune(args, s: Settings) -> None:
    corpus = read_corpus(args.inp)
    result = prune(corpus, s.k, s.end_of_turn)
    body = result.to_json()
    body.update(k=s.k, input=_input_record(args.inp))
    atomic_write_text(args.out, dumps_corpus(result.kept))
    atomic_write_text(args.result or args.out + ".prune.json", json.dumps(body, indent=2, sort_keys=True) + "\n")


def cmd_synth(args, s: Settings) -> None:
    try:
        with open(args.inp, encoding="utf-8") as fh:
            obj = json.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"synth spec not found: {args.inp}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{args.inp}: invalid JSON ({exc})") from exc
    if args.seed is not None:
        obj["seed"] = args.seed
    corpus = synth.generate(synth.SynthSpec.from_dict(obj))
    atomic_write_text(args.out, dumps_corpus(corpus))


def cmd_report(args, s: Settings) -> None:
    try:
        with open(args.inp, encoding="utf-8") as fh:
            report = validate_report(json.load(fh))
    except FileNotFoundError as exc:
        raise ConfigError(f"report not found: {args.inp}") from exc
    except json.JSONDecodeError as exc:
        raise CorpusFormatError(f"{args.inp}: invalid JSON ({exc})") from exc
    _emit(RENDERERS[args.format](report), args.out)


COMMANDS = {
    "ingest": cmd_ingest,
    "canonicalize": cmd_canonicalize,
    "audit": cmd_audit,
    "probe": cmd_probe,
    "prune": cmd_prune,
    "synth": cmd_synth,
    "report": cmd_report,
}


def run(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    if not argv:
        parser.print_help(sys.stderr)
        return 1
    try:
        args = parser.parse_args(argv)
        if not args.command:
            parser.print_help(sys.stderr)
            return 1
        logging.basicConfig(
            level=logging.INFO if args.verbose else logging.WARNING,
            format="%(levelname)s %(name)s: %(message)s",
        )
        COMMANDS[args.command](args, Settings(args))
    except InvariantViolation as exc:
        print(f"tod-audit: internal invariant violated: {exc}", file=sys.stderr)
        return 2
    except AuditError as exc:
        print(f"tod-audit: error: {exc}", file=sys.stderr)
        if exc.hint:
            print(f"hint: {exc.hint}", file=sys.stderr)
        return 1
    except (OSError, ValueError) as exc:
        print(f"tod-audit: error: {exc}", file=sys.stderr)
        return 1
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
