"""Log loading and token counting.

Every token-budget decision downstream goes through the ``Tokenizer``
contract defined here, so the default implementation must be cheap,
deterministic, and dependency-free.  Real BPE tokenizers can be plugged
in by implementing the same interface.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Protocol, runtime_checkable

from .errors import IngestError

FAILED = "failed"
SUCCESS = "success"

# Maximal alphanumeric runs plus each standalone non-space glyph.
# "error: build failed" -> ["error", ":", "build", "failed"]
_TOKEN_RE = re.compile(r"[A-Za-z0-9]+|[^\sA-Za-z0-9]")


@runtime_checkable
class Tokenizer(Protocol):
    """Behavioral contract: a named, deterministic token counter.

    Implementations must guarantee ``count("") == 0`` and subadditivity:
    ``count(a + b) <= count(a) + count(b) + 1``.
    """

    name: str

    def count(self, text: str) -> int: ...


class RegexTokenizer:
    """Default tokenizer: alphanumeric runs + single punctuation glyphs.

    Whitespace never produces tokens, so counts are invariant under
    leading/trailing whitespace changes.  Tracks BPE counts on log text
    to within roughly +-20%.
    """

    name = "regex"

    def count(self, text: str) -> int:
        return len(_TOKEN_RE.findall(text))

    def split(self, text: str) -> list[str]:
        """Token stream backing ``count`` (used for overlap metrics)."""
        return _TOKEN_RE.findall(text)


DEFAULT_TOKENIZER = RegexTokenizer()


def count_tokens(text: str, tok: Tokenizer | None = None) -> int:
    """Count tokens of ``text`` under ``tok`` (default: regex tokenizer)."""
    return (tok or DEFAULT_TOKENIZER).count(text)


@dataclass(frozen=True)
class LogLine:
    """One physical log line with its 1-based line number."""

    number: int
    text: str

    def __post_init__(self) -> None:
        if self.number < 1:
            raise ValueError(f"line numbers are 1-based, got {self.number}")


@dataclass(frozen=True)
class RawLog:
    """An ordered, immutable sequence of log lines for one pipeline run."""

    run_id: str
    task_key: str
    lines: tuple[LogLine, ...]
    outcome: str  # FAILED or SUCCESS

    def __post_init__(self) -> None:
        if self.outcome not in (FAILED, SUCCESS):
            raise ValueError(f"outcome must be '{FAILED}' or '{SUCCESS}', got {self.outcome!r}")
        for pos, line in enumerate(self.lines, start=1):
            if line.number != pos:
                raise ValueError(f"line at position {pos} carries number {line.number}")

    def __len__(self) -> int:
        return len(self.lines)

    def text_of(self, number: int) -> str:
        """Text of the 1-based line ``number``."""
        return self.lines[number - 1].text

    def texts(self) -> list[str]:
        return [line.text for line in self.lines]


def from_lines(
    texts: Iterable[str],
    run_id: str = "run",
    task_key: str = "task",
    outcome: str = FAILED,
) -> RawLog:
    """Build a RawLog directly from line texts (fixtures, tests, adapters)."""
    lines = tuple(LogLine(i, t) for i, t in enumerate(texts, start=1))
    return RawLog(run_id=run_id, task_key=task_key, lines=lines, outcome=outcome)


def load_log(path: str | Path, run_id: str, task_key: str, outcome: str = FAILED) -> RawLog:
    """Load a log file as UTF-8 with lossy replacement of invalid bytes.

    One LogLine per physical line; a zero-byte file yields zero lines.
    Lines keep their original content apart from the terminating newline,
    so joining with "\\n" round-trips the file modulo a trailing newline.
    """
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise IngestError(f"cannot read log file {path}: {exc}") from exc
    text = data.decode("utf-8", errors="replace")
    if not text:
        return from_lines([], run_id=run_id, task_key=task_key, outcome=outcome)
    pieces = text.split("\n")
    if pieces and pieces[-1] == "":
        pieces.pop()
    return from_lines(pieces, run_id=run_id, task_key=task_key, outcome=outcome)
