"""Exception hierarchy.

Everything derived from ``AuditError`` is an input/config problem (CLI exit 1);
``InvariantViolation`` signals a bug in the pipeline itself (CLI exit 2).
"""

from __future__ import annotations


class AuditError(Exception):
    hint: str = ""


class MalformedLabelError(AuditError, ValueError):
    def __init__(self, raw_domain, raw_act, raw_slots):
        self.raw = (raw_domain, raw_act, list(raw_slots or ()))
        super().__init__(f"malformed action label: {self.raw!r}")


class MalformedDialogueError(AuditError, ValueError):
    pass


class CorpusFormatError(AuditError, ValueError):
    hint = "check that the file was written by `tod-audit ingest` or `tod-audit synth`"


class CorpusLoadError(AuditError):
    hint = "check --in and the dataset file names in the config's schema section"


class SchemaProbeError(CorpusLoadError):
    hint = "the dataset layout does not match the configured schema accessors; adjust the schema section"


class KBMissingError(AuditError):
    hint = "point --kb (or schema.kb_dir in the config) at the directory holding the *_db.json files"


class InfeasibleSpecError(AuditError, ValueError):
    hint = "increase label_vocab or reduce the requested injections"


class ConfigError(AuditError):
    hint = "see README for the config file layout"


class InvariantViolation(RuntimeError):
    pass
