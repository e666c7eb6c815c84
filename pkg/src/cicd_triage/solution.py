"""Remediation stage: retrieval-augmented solution generation and tool calls.

Pipeline: analysis report -> semantic query -> multi-route recall ->
reciprocal-rank fusion -> rerank -> solution prompt -> plan parsing ->
guarded (dry-run by default) tool execution.
"""

from __future__ import annotations

import concurrent.futures
import json
import warnings
from dataclasses import dataclass, field

from .errors import PlanError
from .ingest import RawLog, RegexTokenizer, Tokenizer, count_tokens
from .knowledge import KnowledgeStore, ScoredChunk
from .rca import CostRecord, LlmConfig, RcaReport, invoke_llm, resolve_backend

QUERY_TOKEN_LIMIT = 3_000
OVERLAP_THRESHOLD = 0.8
PER_ROUTE_CAP = 60
FUSED_CAP = 100
RRF_K = 60
MAX_ROUTES = 8

_tok = RegexTokenizer()


# -- query construction -------------------------------------------------


@dataclass(frozen=True)
class RetrievalQuery:
    summary: str
    trace: str
    rendered: str


def _token_multiset(line: str) -> dict[str, int]:
    counts: dict[str, int] = {}
    for t in _tok.split(line):
        counts[t] = counts.get(t, 0) + 1
    return counts


def line_overlap(a: str, b: str) -> float:
    """Shared token multiset size over the smaller line's multiset size."""
    ma, mb = _token_multiset(a), _token_multiset(b)
    if not ma or not mb:
        return 1.0 if not ma and not mb else 0.0
    shared = sum(min(ma.get(t, 0), c) for t, c in mb.items())
    return shared / min(sum(ma.values()), sum(mb.values()))


def _clip_to_tokens(text: str, budget: int, tok: Tokenizer | None) -> str:
    """Longest character prefix within the token budget (count is monotone)."""
    if count_tokens(text, tok) <= budget:
        return text
    lo, hi = 0, len(text)
    while lo < hi:
        mid = (lo + hi + 1) // 2
        if count_tokens(text[:mid], tok) <= budget:
            lo = mid
        else:
            hi = mid - 1
    return text[:lo]


def build_query(
    report: RcaReport,
    log: RawLog,
    *,
    token_limit: int = QUERY_TOKEN_LIMIT,
    overlap_threshold: float = OVERLAP_THRESHOLD,
    tok: Tokenizer | None = None,
) -> RetrievalQuery:
    """Combine root causes with the cited log lines into a search query.

    Near-duplicate trace lines (token overlap at or above the threshold
    against any already-kept line) are dropped.  The rendering is
    truncated from the tail down to the token limit; the summary always
    survives, trimmed in place only if it alone exceeds the limit.
    """
    summary = " ".join(report.root_cause)
    cited = sorted(report.all_lines())
    kept: list[str] = []
    for number in cited:
        text = log.text_of(number)
        if any(line_overlap(text, prior) >= overlap_threshold for prior in kept):
            continue
        kept.append(text)

    summary_tokens = count_tokens(summary, tok)
    if summary_tokens >= token_limit:
        rendered = _clip_to_tokens(summary, token_limit, tok)
        return RetrievalQuery(summary=summary, trace="", rendered=rendered)

    trace_lines: list[str] = []
    used = summary_tokens
    for text in kept:
        cost = count_tokens("\n" + text, tok)
        if used + cost > token_limit:
            break
        trace_lines.append(text)
        used += cost
    trace = "\n".join(trace_lines)
    rendered = summary if not trace else summary + "\n" + trace
    return RetrievalQuery(summary=summary, trace=trace, rendered=rendered)


# -- multi-route recall --------------------------------------------------


@dataclass
class RetrievalCandidate:
    chunk_id: str
    text: str
    title: str
    kind: str
    route: str
    route_score: float
    fused_score: float = 0.0
    rerank_score: float | None = None
    sources: tuple[tuple[str, int], ...] = ()  # (route, 1-based rank)


def _route_sparse_summary(query, store: KnowledgeStore, limit: int):
    return store.sparse_search(query.summary, limit)


def _route_sparse_trace(query, store: KnowledgeStore, limit: int):
    return store.sparse_search(query.trace or query.summary, limit)


def _route_dense_summary(query, store: KnowledgeStore, limit: int):
    return store.dense_search(query.summary, limit)


def _route_dense_trace(query, store: KnowledgeStore, limit: int):
    return store.dense_search(query.trace or query.summary, limit)


def _route_noop(query, store, limit):
    return []


# Four live strategies plus reserved slots for strategies whose inputs
# (rewrite model, summary tables, doc tree) this package does not ship.
DEFAULT_ROUTES: dict[str, object] = {
    "sparse-summary": _route_sparse_summary,
    "sparse-trace": _route_sparse_trace,
    "dense-summary": _route_dense_summary,
    "dense-trace": _route_dense_trace,
    "query-rewrite": _route_noop,
    "hyde": _route_noop,
    "relational": _route_noop,
    "document-tree": _route_noop,
}


def multi_route_recall(
    query: RetrievalQuery,
    store: KnowledgeStore,
    routes: dict[str, object] | None = None,
    *,
    per_route: int = PER_ROUTE_CAP,
    top_k: int = FUSED_CAP,
    rrf_k: int = RRF_K,
) -> list[RetrievalCandidate]:
    """Run every route, fuse by reciprocal rank, keep the top candidates.

    A route that raises is skipped with a warning; fusion sums
    1/(rrf_k + rank) over the routes that returned each chunk.
    """
    routes = DEFAULT_ROUTES if routes is None else routes
    if not routes:
        raise ValueError("at least one retrieval route is required")
    if len(routes) > MAX_ROUTES:
        raise ValueError(f"at most {MAX_ROUTES} routes supported, got {len(routes)}")

    merged: dict[str, RetrievalCandidate] = {}
    for name, fn in routes.items():
        try:
            results: list[ScoredChunk] = fn(query, store, per_route)[:per_route]
        except Exception as exc:  # a broken route must not abort recall
            warnings.warn(f"retrieval route {name!r} failed and was skipped: {exc}")
            continue
        for rank, hit in enumerate(results, start=1):
            contribution = 1.0 / (rrf_k + rank)
            cand = merged.get(hit.chunk_id)
            if cand is None:
                cand = RetrievalCandidate(
                    chunk_id=hit.chunk_id,
                    text=hit.chunk.text,
                    title=hit.chunk.title,
                    kind=hit.chunk.kind,
                    route=name,
                    route_score=hit.score,
                )
                merged[hit.chunk_id] = cand
            cand.fused_score += contribution
            cand.sources = cand.sources + ((name, rank),)
    ranked = sorted(merged.values(), key=lambda c: (-c.fused_score, c.chunk_id))
    return ranked[:top_k]


# -- reranking -----------------------------------------------------------


class PassthroughReranker:
    """Keeps fused order: score = fused score."""

    def __call__(self, query: RetrievalQuery, candidates: list[RetrievalCandidate]) -> list[float]:
        return [c.fused_score for c in candidates]


@dataclass
class RerankResult:
    candidates: list[RetrievalCandidate]
    degraded: bool = False


def rerank(
    candidates: list[RetrievalCandidate],
    query: RetrievalQuery,
    reranker=None,
    *,
    timeout: float = 10.0,
    retries: int = 2,
) -> RerankResult:
    """Order candidates by reranker score, falling back to fused order.

    Each attempt gets a wall-clock timeout; after the retry budget the
    fused order is returned unchanged with the degraded flag set.
    """
    if not candidates:
        return RerankResult([], degraded=False)
    reranker = reranker or PassthroughReranker()
    attempts = 1 + max(0, retries)
    with concurrent.futures.ThreadPoolExecutor(max_workers=1) as pool:
        for _ in range(attempts):
            future = pool.submit(reranker, query, list(candidates))
            try:
                scores = future.result(timeout=timeout)
            except Exception:
                continue
            if len(scores) != len(candidates):
                continue
            for cand, score in zip(candidates, scores):
                cand.rerank_score = float(score)
            ordered = sorted(candidates, key=lambda c: (-c.rerank_score, c.chunk_id))
            return RerankResult(ordered, degraded=False)
    return RerankResult(list(candidates), degraded=True)


# -- tools ---------------------------------------------------------------


@dataclass(frozen=True)
class ToolParam:
    name: str
    type: str  # string | integer | number | boolean
    description: str = ""
    required: bool = False


@dataclass(frozen=True)
class ToolSpec:
    name: str
    description: str
    parameters: tuple[ToolParam, ...] = ()
    dry_run_capable: bool = True

    def schema(self) -> dict:
        return {
            "name": self.name,
            "description": self.description,
            "parameters": {
                p.name: {"type": p.type, "description": p.description, "required": p.required}
                for p in self.parameters
            },
        }


@dataclass(frozen=True)
class ToolCall:
    tool: str
    arguments: dict
    dry_run: bool = True


_TYPE_CHECKS = {
    "string": lambda v: isinstance(v, str),
    "integer": lambda v: isinstance(v, int) and not isinstance(v, bool),
    "number": lambda v: isinstance(v, (int, float)) and not isinstance(v, bool),
    "boolean": lambda v: isinstance(v, bool),
}


class ToolRegistry:
    """Known tools plus their implementations; gatekeeper for plan steps."""

    def __init__(self, specs: list[ToolSpec], impls: dict[str, object] | None = None):
        self.specs = {s.name: s for s in specs}
        if len(self.specs) != len(specs):
            raise ValueError("duplicate tool names in registry")
        self.impls = dict(impls or {})

    def validate(self, call: ToolCall) -> ToolSpec:
        spec = self.specs.get(call.tool)
        if spec is None:
            raise PlanError(f"unknown tool {call.tool!r}")
        params = {p.name: p for p in spec.parameters}
        for key, value in call.arguments.items():
            param = params.get(key)
            if param is None:
                raise PlanError(f"tool {call.tool!r} has no parameter {key!r}")
            check = _TYPE_CHECKS.get(param.type)
            if check and not check(value):
                raise PlanError(
                    f"argument {key!r} of {call.tool!r} must be {param.type}, got {type(value).__name__}"
                )
        missing = [p.name for p in spec.parameters if p.required and p.name not in call.arguments]
        if missing:
            raise PlanError(f"tool {call.tool!r} missing required arguments: {missing}")
        return spec

    def execute(self, call: ToolCall) -> str:
        spec = self.validate(call)
        impl = self.impls.get(call.tool)
        if call.dry_run or impl is None:
            args = json.dumps(call.arguments, sort_keys=True)
            return f"would invoke {spec.name} with {args}"
        return impl(**call.arguments)

    @classmethod
    def from_file(cls, path, impls: dict[str, object] | None = None) -> "ToolRegistry":
        try:
            raw = json.loads(open(path, encoding="utf-8").read())
        except (OSError, json.JSONDecodeError) as exc:
            raise PlanError(f"cannot load tool registry {path}: {exc}") from exc
        specs = []
        try:
            for item in raw:
                params = tuple(
                    ToolParam(
                        name=p["name"],
                        type=p["type"],
                        description=p.get("description", ""),
                        required=p.get("required", False),
                    )
                    for p in item.get("parameters", [])
                )
                specs.append(
                    ToolSpec(
                        name=item["name"],
                        description=item.get("description", ""),
                        parameters=params,
                        dry_run_capable=item.get("dry_run_capable", True),
                    )
                )
        except (KeyError, TypeError) as exc:
            raise PlanError(f"malformed tool spec in {path}: {exc}") from exc
        return cls(specs, impls)


def _stub(action: str):
    def impl(**kwargs) -> str:
        args = json.dumps(kwargs, sort_keys=True)
        return f"{action} (simulated) with {args}"

    return impl


def demo_tools() -> ToolRegistry:
    """Bundled remediation stubs.  No real side effects in either mode."""
    specs = [
        ToolSpec(
            "retry_pipeline",
            "Re-run the failed pipeline, optionally a single stage.",
            (
                ToolParam("run_id", "string", "identifier of the failed run"),
                ToolParam("stage", "string", "stage to retry; whole pipeline when omitted"),
            ),
        ),
        ToolSpec(
            "clear_cache",
            "Invalidate the build/dependency cache for a task.",
            (ToolParam("task_key", "string", "task whose cache to clear"),),
        ),
        ToolSpec(
            "pin_dependency",
            "Pin a dependency to a known-good version in the lockfile.",
            (
                ToolParam("package", "string", "dependency name", required=True),
                ToolParam("version", "string", "version to pin", required=True),
            ),
        ),
        ToolSpec(
            "open_ticket",
            "File a ticket with the failure summary for manual follow-up.",
            (
                ToolParam("title", "string", "ticket title", required=True),
                ToolParam("body", "string", "ticket body"),
            ),
        ),
    ]
    impls = {
        "retry_pipeline": _stub("retried pipeline"),
        "clear_cache": _stub("cleared cache"),
        "pin_dependency": _stub("pinned dependency"),
        "open_ticket": _stub("opened ticket"),
    }
    return ToolRegistry(specs, impls)


# -- solution prompt -----------------------------------------------------

PLAN_SCHEMA = (
    '{"explanation": "<why these steps fix the failure>", '
    '"citations": ["<doc id>"], '
    '"steps": [{"tool": "<tool name>", "arguments": {}}]}'
)

SOLUTION_INSTRUCTIONS = """\
You are a CI/CD remediation assistant. You receive a root cause analysis \
of a failed pipeline run, retrieved knowledge entries (each tagged \
[doc:ID]), and a list of callable tools.

Propose a remediation plan as a single JSON object, nothing else:
{schema}
Use only the listed tools; leave "steps" empty if no tool applies. Cite \
the [doc:ID] entries that informed the plan."""


@dataclass(frozen=True)
class SolutionPrompt:
    system: str
    context: str

    def messages(self) -> list[dict[str, str]]:
        return [
            {"role": "system", "content": self.system},
            {"role": "user", "content": self.context},
        ]

    def rendered(self) -> str:
        return self.system + "\n\n" + self.context

    def token_count(self, tok: Tokenizer | None = None) -> int:
        return count_tokens(self.rendered(), tok)


def build_solution_prompt(
    report: RcaReport,
    query: RetrievalQuery,
    reranked: list[RetrievalCandidate],
    tools: ToolRegistry,
    token_limit: int = 22_000,
    tok: Tokenizer | None = None,
) -> SolutionPrompt:
    """Pack reranked knowledge into the plan prompt under the token limit.

    The analysis summary and tool schemas are always present; knowledge
    chunks are added in rank order and packing stops at the first chunk
    that would overflow.
    """
    system = SOLUTION_INSTRUCTIONS.format(schema=PLAN_SCHEMA)
    tool_schemas = json.dumps([s.schema() for s in tools.specs.values()], indent=2, sort_keys=True)
    header = (
        "Root cause analysis:\n"
        + "\n".join(f"- {c}" for c in report.root_cause)
        + "\n\nCritical trace:\n"
        + (query.trace or "(no trace lines)")
        + "\n\nAvailable tools:\n"
        + tool_schemas
    )
    base = count_tokens(system, tok) + count_tokens(header, tok)
    sections: list[str] = []
    used = base
    for cand in reranked:
        section = f"[doc:{cand.chunk_id}] {cand.title}\n{cand.text}"
        cost = count_tokens("\n\n" + section, tok)
        if used + cost > token_limit:
            break
        sections.append(section)
        used += cost
    knowledge = "\n\nRetrieved knowledge:\n" + "\n\n".join(sections) if sections else ""
    return SolutionPrompt(system=system, context=header + knowledge)


# -- plan parsing and execution -------------------------------------------


@dataclass(frozen=True)
class SolutionPlan:
    explanation: str
    steps: tuple[ToolCall, ...]
    citations: tuple[str, ...]


@dataclass
class StepOutcome:
    tool: str
    arguments: dict
    status: str  # dry_run | executed | rejected | failed
    detail: str

    def as_dict(self) -> dict:
        return {"tool": self.tool, "arguments": self.arguments, "status": self.status, "detail": self.detail}


def _parse_plan_json(raw: str) -> tuple[str, list, list[str]]:
    text = raw.strip()
    if text.startswith("```"):
        text = text.strip("`")
        first_nl = text.find("\n")
        if first_nl != -1 and not text[:first_nl].strip().startswith("{"):
            text = text[first_nl + 1 :]
    try:
        data = json.loads(text)
    except json.JSONDecodeError:
        start, end = raw.find("{"), raw.rfind("}")
        if start == -1 or end <= start:
            raise PlanError("model output is not JSON")
        try:
            data = json.loads(raw[start : end + 1])
        except json.JSONDecodeError as exc:
            raise PlanError(f"model output is not valid JSON: {exc}") from exc
    if isinstance(data, list):
        return "", data, []
    if not isinstance(data, dict):
        raise PlanError(f"plan must be a JSON object or array, got {type(data).__name__}")
    steps = data.get("steps", [])
    if not isinstance(steps, list):
        raise PlanError("'steps' must be an array")
    citations = data.get("citations", [])
    if not isinstance(citations, list) or not all(isinstance(c, str) for c in citations):
        raise PlanError("'citations' must be an array of strings")
    explanation = data.get("explanation", "")
    if not isinstance(explanation, str):
        raise PlanError("'explanation' must be a string")
    return explanation, steps, citations


def execute_plan(
    raw: str,
    registry: ToolRegistry,
    *,
    context_ids: set[str] | None = None,
    dry_run: bool = True,
) -> tuple[SolutionPlan, list[StepOutcome]]:
    """Parse the model's plan and run its steps in order.

    Invalid steps are recorded and skipped; later steps still run.
    Citations not present in the retrieved context are dropped.
    """
    explanation, raw_steps, citations = _parse_plan_json(raw)
    if context_ids is not None:
        citations = [c for c in citations if c in context_ids]

    accepted: list[ToolCall] = []
    transcript: list[StepOutcome] = []
    for step in raw_steps:
        if not isinstance(step, dict) or "tool" not in step:
            transcript.append(StepOutcome("?", {}, "rejected", f"malformed step: {step!r}"))
            continue
        name = step["tool"]
        args = step.get("arguments", {})
        if not isinstance(args, dict):
            transcript.append(StepOutcome(str(name), {}, "rejected", "'arguments' must be an object"))
            continue
        call = ToolCall(tool=str(name), arguments=args, dry_run=dry_run)
        try:
            registry.validate(call)
        except PlanError as exc:
            transcript.append(StepOutcome(call.tool, args, "rejected", str(exc)))
            continue
        accepted.append(call)
        try:
            detail = registry.execute(call)
        except PlanError as exc:
            transcript.append(StepOutcome(call.tool, args, "rejected", str(exc)))
            continue
        except Exception as exc:
            transcript.append(StepOutcome(call.tool, args, "failed", f"{type(exc).__name__}: {exc}"))
            continue
        transcript.append(StepOutcome(call.tool, args, "dry_run" if dry_run else "executed", detail))

    plan = SolutionPlan(explanation=explanation, steps=tuple(accepted), citations=tuple(citations))
    return plan, transcript


# -- orchestration --------------------------------------------------------


def solve(
    report: RcaReport,
    log: RawLog,
    store: KnowledgeStore,
    tools: ToolRegistry | None = None,
    llm_cfg: LlmConfig | None = None,
    *,
    routes: dict[str, object] | None = None,
    reranker=None,
    token_limit: int = 22_000,
    dry_run: bool = True,
    backend=None,
    tok: Tokenizer | None = None,
) -> tuple[SolutionPlan, list[StepOutcome], CostRecord]:
    """Full second stage, issued as a fresh LLM call seeded with the report."""
    tools = tools or demo_tools()
    llm_cfg = llm_cfg or LlmConfig(endpoint="mock:plan")
    query = build_query(report, log, tok=tok)
    candidates = multi_route_recall(query, store, routes)
    ranked = rerank(candidates, query, reranker)
    prompt = build_solution_prompt(report, query, ranked.candidates, tools, token_limit, tok)

    cost = CostRecord(case_id=log.run_id)
    backend = backend or resolve_backend(llm_cfg)
    raw = invoke_llm(prompt, llm_cfg, cost, backend=backend, tok=tok)
    context_ids = {c.chunk_id for c in ranked.candidates}
    plan, transcript = execute_plan(raw, tools, context_ids=context_ids, dry_run=dry_run)
    return plan, transcript, cost
