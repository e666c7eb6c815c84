"""Key-log extraction: keyword, tail, and diff strategies plus expansion.

Three parallel strategies feed one candidate pool: lines containing
failure keywords, lines near the end of the file (failures usually kill
a pipeline abruptly), and lines whose structural template never appears
in recent successful runs of the same task.  Surviving key lines are then
expanded into merged context blocks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .ingest import RawLog
from .templates import DrainConfig, TemplateMiner, TemplateStore

# Curated failure indicators. Matching is case-insensitive substring
# containment; " err " keeps its surrounding spaces so it hits the bare
# word without re-matching "error" (covered separately).
K_ERROR = (
    "fatal",
    "fail",
    "panic",
    "error",
    "exit",
    "kill",
    "no such file",
    "err:",
    "err!",
    "failures:",
    " err ",
    "missing",
    "exception",
    "cannot",
)


@dataclass(frozen=True)
class KeywordSet:
    patterns: tuple[str, ...] = K_ERROR

    def __post_init__(self) -> None:
        if not self.patterns:
            raise ValueError("keyword set must not be empty")
        object.__setattr__(self, "_lowered", tuple(p.lower() for p in self.patterns))

    def matches(self, line: str) -> bool:
        lowered = line.lower()
        return any(p in lowered for p in self._lowered)


@dataclass(frozen=True)
class FilterConfig:
    keywords: KeywordSet = field(default_factory=KeywordSet)
    tail_fraction: float = 0.05
    tail_min_lines: int = 50
    m: int = 4  # context lines before a key line
    n: int = 6  # context lines after a key line (post-error info matters more)

    def __post_init__(self) -> None:
        if not 0.0 < self.tail_fraction <= 1.0:
            raise ValueError("tail_fraction must be in (0, 1]")
        if self.tail_min_lines < 1:
            raise ValueError("tail_min_lines must be positive")
        if self.m < 0 or self.n < 0:
            raise ValueError("context radii must be non-negative")


KEYWORD = "keyword"
TAIL = "tail"
DIFF = "diff"


@dataclass(frozen=True)
class CandidatePool:
    """Candidate line numbers with the strategies that recalled them."""

    entries: dict[int, frozenset[str]]

    def lines(self) -> list[int]:
        return sorted(self.entries)

    def __len__(self) -> int:
        return len(self.entries)

    def __contains__(self, line: int) -> bool:
        return line in self.entries


def is_in_log_tail(position: int, total: int, cfg: FilterConfig) -> bool:
    """True when ``position`` falls in the prioritized tail of the file."""
    if not 1 <= position <= total:
        raise ValueError(f"position {position} out of range 1..{total}")
    tail_len = max(cfg.tail_min_lines, math.ceil(cfg.tail_fraction * total))
    return position > total - tail_len


def filter_candidates(
    failed: RawLog,
    store: TemplateStore,
    cfg: FilterConfig | None = None,
    drain_cfg: DrainConfig | None = None,
) -> CandidatePool:
    """Run the three strategies over a failed log and deduplicate.

    Deduplication keeps, among candidates with identical text, only the
    occurrence nearest the end of the file, merging provenance flags of
    the dropped duplicates into the survivor.
    """
    cfg = cfg or FilterConfig()
    matcher = TemplateMiner.from_templates(store.active_templates(), drain_cfg)
    total = len(failed)

    flagged: dict[int, set[str]] = {}
    for line in failed.lines:
        flags: set[str] = set()
        if cfg.keywords.matches(line.text):
            flags.add(KEYWORD)
        if is_in_log_tail(line.number, total, cfg):
            flags.add(TAIL)
        if not store.contains(matcher.match(line.text)):
            flags.add(DIFF)
        if flags:
            flagged[line.number] = flags

    survivors: dict[str, int] = {}
    merged: dict[int, set[str]] = {}
    for number in sorted(flagged):
        text = failed.text_of(number)
        flags = flagged[number]
        prev = survivors.get(text)
        if prev is not None:
            flags = merged.pop(prev) | flags
        survivors[text] = number
        merged[number] = flags

    return CandidatePool({n: frozenset(f) for n, f in merged.items()})


@dataclass(frozen=True)
class LogBlock:
    """A contiguous line range [start, end] around one or more key lines."""

    start: int
    end: int
    key_lines: frozenset[int]

    def __post_init__(self) -> None:
        if not 1 <= self.start <= self.end:
            raise ValueError(f"invalid block range [{self.start}, {self.end}]")
        if not self.key_lines:
            raise ValueError("a block needs at least one key line")
        if not all(self.start <= k <= self.end for k in self.key_lines):
            raise ValueError("key lines must fall inside the block range")

    def __len__(self) -> int:
        return self.end - self.start + 1


def expand(pool: CandidatePool, log_len: int, cfg: FilterConfig | None = None) -> list[LogBlock]:
    """Grow each key line into [i-m, i+n] and merge touching ranges.

    Returned blocks are sorted by start, pairwise disjoint (adjacent
    ranges merge too), and jointly cover every pool line.
    """
    cfg = cfg or FilterConfig()
    key_lines = pool.lines()
    if not key_lines:
        return []
    if key_lines[-1] > log_len:
        raise ValueError(f"pool line {key_lines[-1]} beyond log length {log_len}")

    blocks: list[LogBlock] = []
    cur_start = cur_end = None
    cur_keys: list[int] = []
    for key in key_lines:
        lo, hi = max(1, key - cfg.m), min(log_len, key + cfg.n)
        if cur_start is None:
            cur_start, cur_end, cur_keys = lo, hi, [key]
        elif lo <= cur_end + 1:
            cur_end = max(cur_end, hi)
            cur_keys.append(key)
        else:
            blocks.append(LogBlock(cur_start, cur_end, frozenset(cur_keys)))
            cur_start, cur_end, cur_keys = lo, hi, [key]
    blocks.append(LogBlock(cur_start, cur_end, frozenset(cur_keys)))
    return blocks
