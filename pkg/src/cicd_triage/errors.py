"""Exception hierarchy shared across the triage pipeline."""

from __future__ import annotations


class TriageError(Exception):
    """Base class for all pipeline errors."""


class IngestError(TriageError):
    """Raised when a log file or knowledge document cannot be ingested."""


class StoreError(TriageError):
    """Raised on invalid template-store mutations (e.g. duplicate run ids)."""


class PromptError(TriageError):
    """Raised when a prompt cannot be assembled from the given inputs."""


class LlmError(TriageError):
    """Raised when the LLM backend fails after exhausting retries."""


class ParseError(TriageError):
    """Raised when model output is not parseable as the expected JSON."""


class ValidationError(ParseError):
    """Raised when parsed output violates the report schema or line bounds."""


class RcaError(TriageError):
    """Raised when the root-cause-analysis stage cannot produce a report."""


class PlanError(TriageError):
    """Raised for invalid remediation plan steps (unknown tool, bad arguments)."""


class DatasetError(TriageError):
    """Raised when an evaluation dataset is empty or unusable."""
