"""Deterministic in-process stand-ins for the LLM boundary.

Selected via ``mock:`` endpoints so the whole pipeline can run offline
and reproducibly.  The closed-world analyst derives its answer purely
from the numbered excerpt payload it is shown: lines matching a marker
pattern become the cited ranges.  That makes end-to-end expectations
computable: if the true error lines reach the prompt, they are cited;
if they were pruned away, they cannot be.
"""

from __future__ import annotations

import json
import re
from urllib.parse import parse_qs, urlparse

from .rca import TransportFailure

# Case-sensitive, so lowercase "error"/"failed" chatter is ignored.
DEFAULT_MARKER_PATTERN = r"FATAL:|--- FAIL:|panic:|ERROR"

_PAYLOAD_LINE_RE = re.compile(r"^(\d+)\t(.*)$")


def _numbered_lines(content: str) -> list[tuple[int, str]]:
    out = []
    for raw in content.split("\n"):
        m = _PAYLOAD_LINE_RE.match(raw)
        if m:
            out.append((int(m.group(1)), m.group(2)))
    return out


def _last_payload(messages: list[dict[str, str]]) -> list[tuple[int, str]]:
    """Most recent user message that carries numbered log lines.

    Corrective follow-ups carry none, few-shot exemplars come earlier,
    so this finds the real excerpt payload.
    """
    for msg in reversed(messages):
        if msg.get("role") != "user":
            continue
        lines = _numbered_lines(msg.get("content", ""))
        if lines:
            return lines
    return []


def _group_ranges(numbers: list[int]) -> list[tuple[int, int]]:
    """Collapse a sorted list of line numbers into contiguous ranges."""
    ranges: list[tuple[int, int]] = []
    for n in numbers:
        if ranges and n == ranges[-1][1] + 1:
            ranges[-1] = (ranges[-1][0], n)
        else:
            ranges.append((n, n))
    return ranges


class ClosedWorldMock:
    """Cites exactly the payload lines matching the marker pattern."""

    def __init__(self, marker_pattern: str = DEFAULT_MARKER_PATTERN):
        self.marker = re.compile(marker_pattern)

    def complete(self, messages: list[dict[str, str]]) -> str:
        payload = _last_payload(messages)
        hits = sorted(n for n, text in payload if self.marker.search(text))
        ranges = _group_ranges(hits)
        if not ranges:
            return json.dumps(
                {
                    "log_analysis": [],
                    "root_cause": ["No failure indicators present in the provided excerpts"],
                }
            )
        entries = [
            {
                "error_logs": [[a] if a == b else [a, b] for a, b in ranges],
                "analysis": "These lines carry explicit failure markers in the excerpt.",
            }
        ]
        return json.dumps({"log_analysis": entries, "root_cause": ["Pipeline step reported a fatal failure"]})


class PlanMock:
    """Emits a minimal valid remediation plan citing the first listed doc."""

    _TOOL_RE = re.compile(r'"name":\s*"([A-Za-z0-9_]+)"')
    _DOC_RE = re.compile(r"\[doc:([A-Za-z0-9_.:#-]+)\]")

    def complete(self, messages: list[dict[str, str]]) -> str:
        # system instructions mention [doc:ID] as a format example; only the
        # user context carries real chunk tags and tool schemas
        text = "\n".join(
            m.get("content", "") for m in messages if m.get("role") == "user"
        )
        tools = self._TOOL_RE.findall(text)
        docs = self._DOC_RE.findall(text)
        steps = [{"tool": tools[0], "arguments": {}}] if tools else []
        return json.dumps(
            {
                "explanation": "Re-run the failed stage after clearing transient state.",
                "citations": docs[:1],
                "steps": steps,
            }
        )


class ScriptedMock:
    """Replays a fixed sequence of responses; repeats the last one after."""

    def __init__(self, responses: list[str]):
        if not responses:
            raise ValueError("ScriptedMock needs at least one response")
        self.responses = list(responses)
        self.calls = 0

    def complete(self, messages: list[dict[str, str]]) -> str:
        idx = min(self.calls, len(self.responses) - 1)
        self.calls += 1
        return self.responses[idx]


class FlakyMock:
    """Fails the first N attempts, then delegates to an inner backend.

    mode "transport" raises a retryable failure; mode "garbage" returns
    unparseable prose (exercising the corrective re-query path).
    """

    def __init__(self, inner, failures: int = 1, mode: str = "transport"):
        if mode not in ("transport", "garbage"):
            raise ValueError(f"unknown flaky mode {mode!r}")
        self.inner = inner
        self.failures = failures
        self.mode = mode
        self.calls = 0

    def complete(self, messages: list[dict[str, str]]) -> str:
        self.calls += 1
        if self.calls <= self.failures:
            if self.mode == "transport":
                raise TransportFailure("injected transport failure")
            return "Let me think about this log out loud instead of answering properly."
        return self.inner.complete(messages)


def resolve_mock(endpoint: str):
    """Build a mock backend from a ``mock:`` endpoint string.

    Forms:
      mock:closed-world[?pattern=REGEX]
      mock:plan
      mock:flaky?failures=N&mode=transport|garbage[&inner=closed-world]
    """
    parsed = urlparse(endpoint)
    if parsed.scheme != "mock":
        raise ValueError(f"not a mock endpoint: {endpoint!r}")
    kind = parsed.path
    params = {k: v[-1] for k, v in parse_qs(parsed.query).items()}
    if kind == "closed-world":
        return ClosedWorldMock(params.get("pattern", DEFAULT_MARKER_PATTERN))
    if kind == "plan":
        return PlanMock()
    if kind == "flaky":
        inner = resolve_mock("mock:" + params.get("inner", "closed-world"))
        return FlakyMock(
            inner,
            failures=int(params.get("failures", "1")),
            mode=params.get("mode", "transport"),
        )
    raise ValueError(f"unknown mock backend {kind!r}")
