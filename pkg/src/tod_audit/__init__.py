"""Audit task-oriented dialogue corpora for ambiguous system actions and history independence."""

__version__ = "0.1.0"
