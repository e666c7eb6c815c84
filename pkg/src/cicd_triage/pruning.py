"""Weight-based pruning of candidate context under a hard token budget.

Pipeline: assign an initial weight to every line of the failed log from
the candidate pool, enhance weights with failure patterns, re-expand
context around heavy lines, segment the weight vector into contiguous
blocks, score each block by weight density, and greedily keep the
densest blocks that fit the token limit.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

from .filtering import CandidatePool, KeywordSet, LogBlock
from .ingest import RawLog, Tokenizer, count_tokens

FAIL_MARKERS = ("--- FAIL:", "Failures:", "=== FAIL:")

MAX_WEIGHT = 10


@dataclass(frozen=True)
class PrunerConfig:
    alpha: float = 0.7  # sparse-pool ratio bound
    beta: int = 500  # sparse-pool size bound
    gamma: int = 500  # weighted-line count bound for the expansion threshold
    token_limit: int = 22_000
    fail_markers: tuple[str, ...] = FAIL_MARKERS
    header_prefix: str = "#"
    m: int = 4
    n: int = 6

    def __post_init__(self) -> None:
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError("alpha must be in (0, 1]")
        if min(self.beta, self.gamma, self.token_limit) < 1:
            raise ValueError("beta, gamma, and token_limit must be positive")
        if self.m < 0 or self.n < 0:
            raise ValueError("context radii must be non-negative")


def assign_initial_weights(log_len: int, pool: CandidatePool, cfg: PrunerConfig | None = None) -> list[int]:
    """Initial per-line weights: 3 for pool lines of a sparse pool, else 1.

    The sparse test (pool/log ratio <= alpha and pool size <= beta) is a
    single global branch: all pool lines share one value.
    """
    cfg = cfg or PrunerConfig()
    if log_len == 0:
        return []
    if pool and max(pool.entries) > log_len:
        raise ValueError("pool references lines beyond the log")
    sparse = len(pool) / log_len <= cfg.alpha and len(pool) <= cfg.beta
    pool_weight = 3 if sparse else 1
    weights = [0] * log_len
    for number in pool.entries:
        weights[number - 1] = pool_weight
    return weights


def enhance_weights(
    weights: list[int],
    log: RawLog,
    pool: CandidatePool,
    cfg: PrunerConfig | None = None,
    keywords: KeywordSet | None = None,
) -> list[int]:
    """Pattern-based enhancement, one rule per line.

    Test-failure markers force the maximum weight on any line; pool lines
    otherwise get +2 when they carry a failure keyword or a section
    header, +1 when they were recalled without one.  Weights never
    decrease.
    """
    cfg = cfg or PrunerConfig()
    keywords = keywords or KeywordSet()
    if len(weights) != len(log):
        raise ValueError("weight vector length must equal log length")
    out = list(weights)
    for line in log.lines:
        i = line.number - 1
        if any(marker in line.text for marker in cfg.fail_markers):
            out[i] = MAX_WEIGHT
        elif line.number in pool:
            if keywords.matches(line.text) or line.text.startswith(cfg.header_prefix):
                out[i] += 2
            else:
                out[i] += 1
    return out


def expansion_threshold(weights: list[int], cfg: PrunerConfig | None = None) -> int:
    """Adaptive threshold: broad (1) when filtering isolated little, else 3."""
    cfg = cfg or PrunerConfig()
    weighted = sum(1 for w in weights if w >= 1)
    if (weights and max(weights) == 1) or weighted <= cfg.gamma:
        return 1
    return 3


def contextual_expand(weights: list[int], cfg: PrunerConfig | None = None) -> list[int]:
    """Raise zero weights to 1 around every line at or above the threshold.

    Expansion reads the input vector only (raised lines never cascade) and
    never touches lines that already carry weight.
    """
    cfg = cfg or PrunerConfig()
    theta = expansion_threshold(weights, cfg)
    out = list(weights)
    for i, w in enumerate(weights):
        if w >= theta:
            lo = max(0, i - cfg.m)
            hi = min(len(weights) - 1, i + cfg.n)
            for j in range(lo, hi + 1):
                if out[j] == 0:
                    out[j] = 1
    return out


@dataclass(frozen=True)
class ScoredBlock:
    """A contiguous weighted block with its density and token cost."""

    block: LogBlock
    density: float
    token_count: int
    total_weight: int
    weights: tuple[int, ...]  # per line in [start, end]
    line_tokens: tuple[int, ...]  # per-line token cost incl. newline charge

    def __len__(self) -> int:
        return len(self.block)


def _block_key_lines(start: int, end: int, weights: tuple[int, ...], pool: CandidatePool | None) -> frozenset[int]:
    if pool is not None:
        keys = frozenset(n for n in pool.entries if start <= n <= end)
        if keys:
            return keys
    peak = max(range(len(weights)), key=lambda i: (weights[i], -i))
    return frozenset({start + peak})


def score_blocks(
    weights: list[int],
    tok: Tokenizer | None,
    log: RawLog,
    pool: CandidatePool | None = None,
) -> list[ScoredBlock]:
    """Segment maximal runs of weighted lines and score them.

    Density is the arithmetic mean of the block's weights; token cost
    charges one extra token per line for the newline.
    """
    if len(weights) != len(log):
        raise ValueError("weight vector length must equal log length")
    blocks: list[ScoredBlock] = []
    i = 0
    n = len(weights)
    while i < n:
        if weights[i] < 1:
            i += 1
            continue
        j = i
        while j + 1 < n and weights[j + 1] >= 1:
            j += 1
        start, end = i + 1, j + 1
        run = tuple(weights[i : j + 1])
        tokens = tuple(count_tokens(log.text_of(k), tok) + 1 for k in range(start, end + 1))
        total = sum(run)
        blocks.append(
            ScoredBlock(
                block=LogBlock(start, end, _block_key_lines(start, end, run, pool)),
                density=total / len(run),
                token_count=sum(tokens),
                total_weight=total,
                weights=run,
                line_tokens=tokens,
            )
        )
        i = j + 1
    return blocks


class TruncatedBlockWarning(UserWarning):
    """A single block exceeded the token limit and lost head lines."""


def _truncate_to_tail(sb: ScoredBlock, limit: int, pool: CandidatePool | None) -> ScoredBlock | None:
    """Largest tail suffix of the block that fits ``limit`` tokens."""
    total = 0
    cut = len(sb.line_tokens)  # index of first kept line, relative to block start
    for idx in range(len(sb.line_tokens) - 1, -1, -1):
        if total + sb.line_tokens[idx] > limit:
            break
        total += sb.line_tokens[idx]
        cut = idx
    if cut == len(sb.line_tokens):
        return None
    start = sb.block.start + cut
    run = sb.weights[cut:]
    tokens = sb.line_tokens[cut:]
    return ScoredBlock(
        block=LogBlock(start, sb.block.end, _block_key_lines(start, sb.block.end, run, pool)),
        density=sum(run) / len(run),
        token_count=sum(tokens),
        total_weight=sum(run),
        weights=run,
        line_tokens=tokens,
    )


def select_blocks(
    blocks: list[ScoredBlock],
    cfg: PrunerConfig | None = None,
    pool: CandidatePool | None = None,
) -> list[ScoredBlock]:
    """Greedy density-ordered selection under the token limit.

    Blocks are ranked by density (ties: higher total weight, then later
    start), and the longest rank-order prefix whose cumulative token count
    stays within the limit is kept.  Selection stops at the first block
    that would overflow.  If the very first block alone exceeds the limit
    it is truncated to its tail and returned alone, with a
    TruncatedBlockWarning.  Results come back re-sorted by start line.
    """
    cfg = cfg or PrunerConfig()
    if not blocks:
        return []
    ranked = sorted(
        range(len(blocks)),
        key=lambda i: (-blocks[i].density, -blocks[i].total_weight, -blocks[i].block.start, i),
    )
    selected: list[ScoredBlock] = []
    budget = cfg.token_limit
    for rank, i in enumerate(ranked):
        sb = blocks[i]
        if sb.token_count > budget:
            if rank == 0:
                warnings.warn(
                    f"block [{sb.block.start}, {sb.block.end}] alone exceeds the "
                    f"{cfg.token_limit}-token limit; keeping its tail",
                    TruncatedBlockWarning,
                    stacklevel=2,
                )
                truncated = _truncate_to_tail(sb, budget, pool)
                return [truncated] if truncated else []
            break
        selected.append(sb)
        budget -= sb.token_count
    return sorted(selected, key=lambda sb: sb.block.start)


GAP_MARKER = "..."


def render_blocks(selected: list[ScoredBlock], log: RawLog) -> str:
    """Render selected blocks as ``number<TAB>text`` stanzas with gap markers."""
    stanzas = []
    for sb in selected:
        lines = [f"{k}\t{log.text_of(k)}" for k in range(sb.block.start, sb.block.end + 1)]
        stanzas.append("\n".join(lines))
    return f"\n{GAP_MARKER}\n".join(stanzas)
