"""Deterministic synthetic CI/CD failure corpus and adversarial fixtures.

Each generated case ships a failed log, success logs for the template
store, and annotations marking the injected failure lines.  Failure
lines carry uppercase markers (matched by the closed-world mock);
background chatter uses lowercase failure words only, so it reaches the
candidate pool through keywords but is never cited.

Case kinds differ in where the truth lives:
  tail     all failure lines near the end of the log
  partial  failure lines split between mid-file and the tail
  mid      failure lines only mid-file

With the full pipeline every kind is recoverable.  When filtering is
disabled the whole log collapses into one block that gets truncated to
its tail, so partial cases lose part of their truth (false positives)
and mid cases lose all of it (false negatives).
"""

from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass
from pathlib import Path

from .filtering import CandidatePool
from .ingest import FAILED, RawLog, from_lines
from .knowledge import KnowledgeDoc

DEFAULT_SEED = 20260402
CASE_KINDS = ("tail", "tail", "tail", "partial", "mid")  # cycle over cases


def _ts(rng: random.Random) -> int:
    return rng.randrange(1_700_000_000, 1_800_000_000)


def _hex(rng: random.Random, n: int = 12) -> str:
    return "".join(rng.choice("0123456789abcdef") for _ in range(n))


_NOISE = (
    lambda r: f"[{_ts(r)}] INFO scheduler step {r.randrange(1, 9000)} completed in {r.randrange(2, 900)} ms",
    lambda r: f"[{_ts(r)}] INFO fetch artifact cache/{_hex(r)} took {r.randrange(5, 700)} ms",
    lambda r: f"INFO worker {r.randrange(1, 64)} processed {r.randrange(10, 5000)} items from queue q{r.randrange(1, 9)}",
    lambda r: f"DEBUG gc pause {r.randrange(1, 40)} ms heap {r.randrange(100, 900)} mb target {r.randrange(900, 1400)} mb",
    lambda r: f"INFO uploading layer {_hex(r)} to registry mirror {r.randrange(1, 5)}",
    lambda r: f"[{_ts(r)}] INFO test shard {r.randrange(1, 40)} of 40 scheduled on node {r.randrange(1, 30)}",
    lambda r: f"INFO compiled {r.randrange(1, 2000)} of 2000 translation units in {r.randrange(10, 2000)} ms",
    lambda r: f"DEBUG cache hit ratio {r.randrange(10, 99)} pct over {r.randrange(100, 90000)} lookups",
    lambda r: f"INFO linker pass {r.randrange(1, 4)} resolved {r.randrange(100, 60000)} symbols in {r.randrange(5, 800)} ms",
    lambda r: f"[{_ts(r)}] INFO downloading module registry index page {r.randrange(1, 200)}",
    lambda r: f"INFO docker layer {_hex(r)} already exists skipping push",
    lambda r: f"DEBUG retry budget {r.randrange(1, 8)} remaining for endpoint api{r.randrange(1, 6)}",
    lambda r: f"INFO checkpoint {r.randrange(1, 500)} written to disk in {r.randrange(3, 400)} ms",
    lambda r: f"INFO pulled base image tag v{r.randrange(1, 9)}.{r.randrange(0, 20)}.{r.randrange(0, 40)} digest {_hex(r, 16)}",
)

# lowercase failure vocabulary: pooled by the keyword strategy, invisible
# to the uppercase marker scan
_KEYWORD_NOISE = (
    lambda r: f"WARN transient error retrying request {r.randrange(1, 9)} of 8 to shard {r.randrange(1, 30)}",
    lambda r: f"INFO probe failed for replica {r.randrange(1, 12)} will retry in {r.randrange(50, 900)} ms",
    lambda r: f"DEBUG ignoring missing optional dependency plugin{r.randrange(1, 40)}",
    lambda r: f"WARN slow shard {r.randrange(1, 40)} cannot reuse warm cache yet",
    lambda r: f"INFO recovered from soft error code {r.randrange(1, 90)} on volume vol{r.randrange(1, 9)}",
)

_FAILURES = (
    (
        "symbol resolution failure in core module",
        lambda r: f"ERROR failed to resolve symbol sym_{_hex(r, 6)} in module core{r.randrange(1, 9)}",
    ),
    (
        "unit test assertion failure",
        lambda r: f"--- FAIL: TestPipelineStage{r.randrange(1, 90)} ({r.randrange(0, 3)}.{r.randrange(10, 99)}s)",
    ),
    (
        "runtime panic during test execution",
        lambda r: f"panic: runtime error: index out of range [{r.randrange(1, 400)}] in frame {_hex(r, 6)}",
    ),
    (
        "fatal build termination",
        lambda r: f"FATAL: build terminated with exit status {r.randrange(1, 4)} after {r.randrange(100, 9000)} tasks",
    ),
    (
        "missing generated source file",
        lambda r: f"ERROR cannot open no such file or directory src/gen_{r.randrange(1, 900)}_{_hex(r, 4)}.go",
    ),
)


def _unique_line(maker, rng: random.Random, seen: set[str]) -> str:
    """Failure lines must stay textually distinct within a case: the
    key-line dedup keeps only the occurrence nearest the end of the log,
    so duplicated mid-file failures would vanish from the pool."""
    for _ in range(200):
        text = maker(rng)
        if text not in seen:
            seen.add(text)
            return text
    raise RuntimeError("failure template value space exhausted")


@dataclass(frozen=True)
class SynthCase:
    case_id: str
    kind: str
    failed_lines: tuple[str, ...]
    success_logs: tuple[tuple[str, ...], ...]
    ground_truth: frozenset[int]
    root_cause_label: str


def _noise_line(rng: random.Random) -> str:
    return rng.choice(_NOISE)(rng)


def _grid_positions(rng: random.Random, lo: int, hi: int, count: int, gap: int = 18) -> list[int]:
    """Distinct positions at least `gap` apart, so blocks never merge."""
    grid = list(range(lo, hi, gap))
    if count > len(grid):
        raise ValueError("not enough room for requested positions")
    return sorted(rng.sample(grid, count))


def make_case(index: int, seed: int = DEFAULT_SEED) -> SynthCase:
    rng = random.Random(f"{seed}:{index}")
    kind = CASE_KINDS[index % len(CASE_KINDS)]
    case_id = f"case-{index:02d}"
    n = rng.randrange(5200, 6400)
    tail_start = n - max(50, math.ceil(0.05 * n)) + 1

    label, gt_maker = _FAILURES[index % len(_FAILURES)]

    # scattered keyword chatter keeps the selected payload at a realistic size
    keyword_count = rng.randrange(92, 108)
    keyword_at = _grid_positions(rng, int(0.08 * n), int(0.72 * n), keyword_count)
    # truth anchors stay in the low half: a whole-log block truncated to
    # ~22k tokens of tail never reaches them
    mid_anchors = _grid_positions(rng, int(0.15 * n) + 9, int(0.45 * n), 2, gap=36)

    gt_runs: list[tuple[int, int]] = []  # (start, length)
    if kind == "tail":
        gt_runs.append((n - 8, 6))
    elif kind == "partial":
        gt_runs.append((mid_anchors[0], 6))
        gt_runs.append((mid_anchors[1], 6))
        gt_runs.append((n - 7, 5))
    else:  # mid
        gt_runs.append((mid_anchors[0], 6))
        gt_runs.append((mid_anchors[1], 5))

    lines: dict[int, str] = {}
    for pos in keyword_at:
        lines[pos] = rng.choice(_KEYWORD_NOISE)(rng)
    truth: set[int] = set()
    seen_failures: set[str] = set()
    for start, length in gt_runs:
        for i in range(length):
            lines[start + i] = _unique_line(gt_maker, rng, seen_failures)
            truth.add(start + i)
    failed = tuple(lines.get(i) or _noise_line(rng) for i in range(1, n + 1))

    success_logs = []
    for _ in range(2):
        m = rng.randrange(550, 650)
        body = [_noise_line(rng) for _ in range(m)]
        for pos in sorted(rng.sample(range(m), 12)):
            body[pos] = rng.choice(_KEYWORD_NOISE)(rng)
        success_logs.append(tuple(body))

    if not (1 <= min(truth) and max(truth) <= n):
        raise RuntimeError("generated truth lines out of range")
    if kind == "tail" and min(truth) < tail_start:
        raise RuntimeError("tail-kind truth escaped the tail window")
    return SynthCase(
        case_id=case_id,
        kind=kind,
        failed_lines=failed,
        success_logs=tuple(success_logs),
        ground_truth=frozenset(truth),
        root_cause_label=label,
    )


def build_corpus(root: str | Path, cases: int = 30, seed: int = DEFAULT_SEED) -> list[Path]:
    """Write a dataset directory tree; returns the case directories."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    dirs = []
    for index in range(cases):
        case = make_case(index, seed)
        case_dir = root / case.case_id
        (case_dir / "success").mkdir(parents=True, exist_ok=True)
        (case_dir / "failed.log").write_text("\n".join(case.failed_lines) + "\n", encoding="utf-8")
        for i, body in enumerate(case.success_logs):
            (case_dir / "success" / f"{i:02d}.log").write_text("\n".join(body) + "\n", encoding="utf-8")
        (case_dir / "annotations.json").write_text(
            json.dumps(
                {
                    "ground_truth_lines": sorted(case.ground_truth),
                    "root_cause": case.root_cause_label,
                },
                indent=2,
            )
            + "\n",
            encoding="utf-8",
        )
        dirs.append(case_dir)
    return dirs


# -- adversarial fixtures --------------------------------------------------


def adversarial_fixture(kind: str, seed: int = DEFAULT_SEED) -> tuple[RawLog, CandidatePool]:
    """10^5-line stress logs plus a ready-made candidate pool.

    flood      every line is a candidate (one giant block)
    scattered  hundreds of isolated candidates whose blocks overflow the budget
    oversized  the best-density block alone exceeds the budget
    """
    rng = random.Random(f"{seed}:{kind}")
    n = 100_000
    if kind == "flood":
        texts = [rng.choice(_KEYWORD_NOISE)(rng) for _ in range(n)]
        pool = CandidatePool({i: frozenset({"keyword"}) for i in range(1, n + 1)})
    elif kind == "scattered":
        texts = [_noise_line(rng) for _ in range(n)]
        positions = _grid_positions(rng, 100, n - 100, 600, gap=40)
        for pos in positions:
            texts[pos - 1] = rng.choice(_KEYWORD_NOISE)(rng)
        pool = CandidatePool({pos: frozenset({"keyword"}) for pos in positions})
    elif kind == "oversized":
        texts = [_noise_line(rng) for _ in range(n)]
        start = 40_000
        run = range(start, start + 10)
        frames = lambda: " ".join(f"frame_{_hex(rng, 5)}" for _ in range(1100))
        for pos in run:
            texts[pos - 1] = f"--- FAIL: TestGiantTrace {frames()}"
        extras = _grid_positions(rng, 100, 30_000, 100, gap=40)
        for pos in extras:
            texts[pos - 1] = rng.choice(_KEYWORD_NOISE)(rng)
        pool = CandidatePool(
            {pos: frozenset({"keyword"}) for pos in [*run, *extras]}
        )
    else:
        raise ValueError(f"unknown adversarial fixture kind {kind!r}")
    log = from_lines(texts, run_id=f"adversarial-{kind}", task_key="adversarial", outcome=FAILED)
    return log, pool


# -- demo knowledge base ----------------------------------------------------


def make_demo_kb() -> list[KnowledgeDoc]:
    long_body = "\n\n".join(
        f"Section {i}: when pipeline stage {i} fails with a cache related error, "
        "clear the build cache and retry the stage. Persistent failures after a "
        "cache clear usually indicate a dependency version drift that needs pinning. "
        + " ".join(f"detail_{i}_{j}" for j in range(90))
        for i in range(1, 9)
    )
    return [
        KnowledgeDoc(
            "qa-flaky-test",
            "qa_record",
            "Flaky unit test failures",
            "Q: A unit test fails intermittently with assertion mismatches.\n"
            "A: Re-run the failed stage first. If the test fails consistently, "
            "the assertion failure is real and the owning team should be paged.",
        ),
        KnowledgeDoc(
            "qa-missing-file",
            "qa_record",
            "Missing generated file",
            "Q: Build fails with no such file or directory for a generated source.\n"
            "A: The code generation step was skipped or its cache is stale. "
            "Clear the cache and retry the pipeline.",
        ),
        KnowledgeDoc(
            "manual-retry-policy",
            "manual",
            "Retry policy for transient failures",
            "Transient infrastructure errors (network timeouts, registry blips) "
            "should be retried at most twice. Use the retry pipeline operation "
            "for the failed run before escalating.",
        ),
        KnowledgeDoc(
            "manual-dependency-pinning",
            "manual",
            "Dependency pinning guidance",
            "When a build breaks after an upstream release, pin the dependency "
            "to the last known good version in the lockfile and open a ticket "
            "to track the upgrade.",
        ),
        KnowledgeDoc(
            "case-linker-failure",
            "case_study",
            "Linker failure after toolchain upgrade",
            "A failed link with unresolved symbols in core modules was traced "
            "to a toolchain upgrade. Resolution: pin the toolchain version and "
            "rebuild from a clean cache.",
        ),
        KnowledgeDoc(
            "case-panic-oom",
            "case_study",
            "Runtime panic from exhausted memory",
            "Test executors hitting runtime panics with index range errors were "
            "caused by corrupted cached fixtures. Clearing the cache fixed the panic.",
        ),
        KnowledgeDoc(
            "manual-cache-playbook",
            "manual",
            "Cache troubleshooting playbook",
            long_body,
        ),
    ]


def write_demo_kb(path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for doc in make_demo_kb():
            fh.write(
                json.dumps(
                    {"doc_id": doc.doc_id, "kind": doc.kind, "title": doc.title, "body": doc.body}
                )
                + "\n"
            )


def write_demo_tools(path: str | Path) -> None:
    from .solution import demo_tools

    specs = []
    for spec in demo_tools().specs.values():
        specs.append(
            {
                "name": spec.name,
                "description": spec.description,
                "dry_run_capable": spec.dry_run_capable,
                "parameters": [
                    {
                        "name": p.name,
                        "type": p.type,
                        "description": p.description,
                        "required": p.required,
                    }
                    for p in spec.parameters
                ],
            }
        )
    Path(path).write_text(json.dumps(specs, indent=2) + "\n", encoding="utf-8")
