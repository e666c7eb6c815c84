"""Root cause analysis: prompt assembly, LLM invocation, report parsing.

The LLM boundary is a chat-completion POST (or an in-process mock chosen
by the ``mock:`` URL scheme); everything else here is pure.  Model output
must be a JSON report with line-range references back into the failed
log; malformed output triggers a corrective re-query, each attempt
counting as one query round.
"""

from __future__ import annotations

import hashlib
import json
import os
import re
from dataclasses import dataclass, field

import requests

from .errors import LlmError, ParseError, PromptError, RcaError, ValidationError
from .filtering import FilterConfig, filter_candidates
from .ingest import RawLog, Tokenizer, count_tokens
from .pruning import (
    PrunerConfig,
    ScoredBlock,
    assign_initial_weights,
    contextual_expand,
    enhance_weights,
    render_blocks,
    score_blocks,
    select_blocks,
)
from .templates import DrainConfig, TemplateStore

ENV_URL = "CICD_TRIAGE_LLM_URL"
ENV_MODEL = "CICD_TRIAGE_LLM_MODEL"
ENV_KEY = "CICD_TRIAGE_LLM_KEY"

# Instruction/few-shot headroom on top of the payload budget.
PROMPT_OVERHEAD_TOKENS = 2_000


@dataclass(frozen=True)
class LlmConfig:
    endpoint: str = "mock:closed-world"
    model: str = "triage-default"
    temperature: float = 0.1
    max_retries: int = 3
    timeout: float = 60.0
    api_key: str = ""

    def __post_init__(self) -> None:
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")

    @classmethod
    def from_env(cls, **overrides) -> "LlmConfig":
        values = {
            "endpoint": os.environ.get(ENV_URL, cls.endpoint),
            "model": os.environ.get(ENV_MODEL, cls.model),
            "api_key": os.environ.get(ENV_KEY, cls.api_key),
        }
        values.update(overrides)
        return cls(**values)


@dataclass
class CostRecord:
    """Token and query-round accounting for one analyzed case."""

    case_id: str
    prompt_tokens: int = 0
    completion_tokens: int = 0
    query_rounds: int = 0

    @property
    def total_tokens(self) -> int:
        return self.prompt_tokens + self.completion_tokens


# -- structured report --------------------------------------------------


@dataclass(frozen=True)
class AnalysisEntry:
    """One analyzed group of error lines: ranges plus a prose explanation."""

    error_logs: tuple[tuple[int, int], ...]
    analysis: str

    def __post_init__(self) -> None:
        if not self.analysis:
            raise ValueError("analysis text must be non-empty")
        for a, b in self.error_logs:
            if not 1 <= a <= b:
                raise ValueError(f"invalid line range [{a}, {b}]")


@dataclass(frozen=True)
class RcaReport:
    log_analysis: tuple[AnalysisEntry, ...]
    root_cause: tuple[str, ...]

    def __post_init__(self) -> None:
        if not self.root_cause or any(not c for c in self.root_cause):
            raise ValueError("root_cause must be a non-empty list of non-empty strings")

    def all_lines(self) -> set[int]:
        """Union of every referenced line number."""
        return {
            n
            for entry in self.log_analysis
            for a, b in entry.error_logs
            for n in range(a, b + 1)
        }

    def has_findings(self) -> bool:
        return bool(self.all_lines())


def serialize_report(report: RcaReport) -> str:
    """Canonical JSON rendering; single-line ranges collapse to [a]."""
    payload = {
        "log_analysis": [
            {
                "error_logs": [[a] if a == b else [a, b] for a, b in entry.error_logs],
                "analysis": entry.analysis,
            }
            for entry in report.log_analysis
        ],
        "root_cause": list(report.root_cause),
    }
    return json.dumps(payload, indent=4)


_FENCE_RE = re.compile(r"```(?:[A-Za-z0-9_-]+)?\s*\n?(.*?)```", re.DOTALL)


def _extract_json(raw: str) -> dict:
    candidates = [raw.strip()]
    fenced = _FENCE_RE.search(raw)
    if fenced:
        candidates.append(fenced.group(1).strip())
    start, end = raw.find("{"), raw.rfind("}")
    if start != -1 and end > start:
        candidates.append(raw[start : end + 1])
    for candidate in candidates:
        try:
            parsed = json.loads(candidate)
        except json.JSONDecodeError:
            continue
        if isinstance(parsed, dict):
            return parsed
        raise ParseError(f"expected a JSON object, got {type(parsed).__name__}")
    raise ParseError("no parseable JSON object in model output")


def _validate_range(item: object, log_len: int) -> tuple[int, int]:
    if not isinstance(item, list) or not 1 <= len(item) <= 2:
        raise ValidationError(f"range must be a 1- or 2-element array, got {item!r}")
    if not all(isinstance(v, int) and not isinstance(v, bool) for v in item):
        raise ValidationError(f"range bounds must be integers, got {item!r}")
    a, b = (item[0], item[-1])
    if not 1 <= a <= b:
        raise ValidationError(f"invalid range [{a}, {b}]: bounds must satisfy 1 <= start <= end")
    if b > log_len:
        raise ValidationError(f"range [{a}, {b}] exceeds log length {log_len}")
    return a, b


def parse_report(raw: str, log_len: int) -> RcaReport:
    """Parse and validate model output into an RcaReport.

    Tolerates code fences and surrounding prose; everything inside the
    JSON itself is validated strictly (exact keys, typed fields, line
    ranges within 1..log_len).
    """
    data = _extract_json(raw)
    extra = set(data) - {"log_analysis", "root_cause"}
    if extra:
        raise ValidationError(f"unexpected report keys: {sorted(extra)}")
    if "log_analysis" not in data or "root_cause" not in data:
        raise ValidationError("report must contain 'log_analysis' and 'root_cause'")
    if not isinstance(data["log_analysis"], list):
        raise ValidationError("'log_analysis' must be an array")

    entries = []
    for entry in data["log_analysis"]:
        if not isinstance(entry, dict) or set(entry) != {"error_logs", "analysis"}:
            raise ValidationError(f"analysis entry must have exactly 'error_logs' and 'analysis': {entry!r}")
        if not isinstance(entry["error_logs"], list):
            raise ValidationError("'error_logs' must be an array of ranges")
        if not isinstance(entry["analysis"], str) or not entry["analysis"]:
            raise ValidationError("'analysis' must be a non-empty string")
        ranges = tuple(_validate_range(r, log_len) for r in entry["error_logs"])
        entries.append(AnalysisEntry(error_logs=ranges, analysis=entry["analysis"]))

    causes = data["root_cause"]
    if (
        not isinstance(causes, list)
        or not causes
        or not all(isinstance(c, str) and c for c in causes)
    ):
        raise ValidationError("'root_cause' must be a non-empty array of non-empty strings")
    return RcaReport(log_analysis=tuple(entries), root_cause=tuple(causes))


# -- prompt -------------------------------------------------------------

OUTPUT_SCHEMA = (
    '{"log_analysis": [{"error_logs": [[start, end], [line]], '
    '"analysis": "<what these lines show>"}], '
    '"root_cause": ["<short root cause statement>"]}'
)

SYSTEM_INSTRUCTIONS = f"""\
You are a senior CI/CD reliability engineer. You will receive numbered \
excerpts from the log of a failed pipeline run, in the form \
"line_number<TAB>log text", with "..." marking gaps between excerpts.

Work step by step: scan the excerpts, identify the lines that actually \
explain the failure (not incidental warnings), and derive the underlying \
root cause.

Respond with a single JSON object and nothing else, exactly following \
this schema:
{OUTPUT_SCHEMA}
Each element of "error_logs" is either [start, end] for a contiguous \
range or [line] for a single line, using the line numbers shown in the \
excerpts. "root_cause" lists one short statement per distinct cause."""

# (excerpt, expected JSON answer) exemplar pairs.
FewShot = tuple[str, str]

DEFAULT_FEW_SHOTS: tuple[FewShot, ...] = (
    (
        "88\tgo: downloading github.com/stretchr/testify v1.8.4\n"
        "89\t--- FAIL: TestOrderSubmit (0.42s)\n"
        "90\t    order_test.go:57: expected status 201, got 500\n"
        "91\tFAIL\n"
        "92\texit status 1",
        '{"log_analysis": [{"error_logs": [[89, 92]], "analysis": '
        '"Unit test TestOrderSubmit failed: the handler returned HTTP 500 where 201 was expected."}], '
        '"root_cause": ["Unit test execution failure"]}',
    ),
    (
        "412\tnpm ERR! code ERESOLVE\n"
        "413\tnpm ERR! ERESOLVE unable to resolve dependency tree\n"
        "414\tnpm ERR! peer react@\"^18.0.0\" from react-dom@18.2.0",
        '{"log_analysis": [{"error_logs": [[412, 414]], "analysis": '
        '"npm aborted while resolving the dependency tree because of a conflicting react peer dependency."}], '
        '"root_cause": ["Dependency resolution conflict"]}',
    ),
    (
        "731\tmake[2]: *** [CMakeFiles/core.dir/src/engine.cpp.o] Error 1\n"
        "732\t/usr/bin/ld: cannot find -lssl\n"
        "733\tcollect2: error: ld returned 1 exit status",
        '{"log_analysis": [{"error_logs": [[731, 733]], "analysis": '
        '"Linking failed because the OpenSSL library could not be found."}], '
        '"root_cause": ["Missing build dependency (libssl)"]}',
    ),
)


@dataclass(frozen=True)
class RcaPrompt:
    system: str
    few_shots: tuple[FewShot, ...]
    payload: str
    output_schema: str = OUTPUT_SCHEMA

    def messages(self) -> list[dict[str, str]]:
        msgs = [{"role": "system", "content": self.system}]
        for excerpt, answer in self.few_shots:
            msgs.append({"role": "user", "content": excerpt})
            msgs.append({"role": "assistant", "content": answer})
        msgs.append({"role": "user", "content": self.payload})
        return msgs

    def rendered(self) -> str:
        return "\n\n".join(m["content"] for m in self.messages())

    def token_count(self, tok: Tokenizer | None = None) -> int:
        return count_tokens(self.rendered(), tok)


def select_few_shots(pool: tuple[FewShot, ...], count: int, task_key: str) -> tuple[FewShot, ...]:
    """Deterministic rotation of the pool keyed on the task."""
    if count <= 0 or not pool:
        return ()
    digest = hashlib.sha256(task_key.encode("utf-8")).digest()
    start = int.from_bytes(digest[:4], "big") % len(pool)
    return tuple(pool[(start + i) % len(pool)] for i in range(min(count, len(pool))))


def build_rca_prompt(
    blocks: list[ScoredBlock],
    log: RawLog,
    *,
    few_shot_pool: tuple[FewShot, ...] = DEFAULT_FEW_SHOTS,
    few_shot_count: int = 2,
    token_limit: int = 22_000,
    tok: Tokenizer | None = None,
) -> RcaPrompt:
    """Assemble the analysis prompt from selected blocks.

    The block payload must already fit the token limit; exceeding it here
    means the pruning contract was violated upstream.
    """
    if not blocks:
        raise PromptError("no log blocks to analyze")
    payload = render_blocks(blocks, log)
    payload_tokens = count_tokens(payload, tok)
    # line-number prefixes stand in for the newline charge; gap markers
    # between blocks cost 3 tokens each
    if payload_tokens > token_limit + 3 * len(blocks):
        raise PromptError(
            f"block payload is {payload_tokens} tokens, over the {token_limit} limit"
        )
    return RcaPrompt(
        system=SYSTEM_INSTRUCTIONS,
        few_shots=select_few_shots(few_shot_pool, few_shot_count, log.task_key),
        payload=payload,
    )


# -- LLM boundary -------------------------------------------------------


class TransportFailure(Exception):
    """Retryable backend failure (timeout, connection error, HTTP 5xx)."""


class HttpBackend:
    """JSON-over-HTTP chat-completion client."""

    def __init__(self, cfg: LlmConfig):
        self.cfg = cfg

    def complete(self, messages: list[dict[str, str]]) -> str:
        headers = {"Content-Type": "application/json"}
        if self.cfg.api_key:
            headers["Authorization"] = f"Bearer {self.cfg.api_key}"
        body = {
            "model": self.cfg.model,
            "temperature": self.cfg.temperature,
            "messages": messages,
        }
        try:
            resp = requests.post(self.cfg.endpoint, json=body, headers=headers, timeout=self.cfg.timeout)
            resp.raise_for_status()
            data = resp.json()
            return data["choices"][0]["message"]["content"]
        except (requests.RequestException, KeyError, IndexError, ValueError) as exc:
            raise TransportFailure(str(exc)) from exc


def resolve_backend(cfg: LlmConfig):
    if cfg.endpoint.startswith("mock:"):
        from .mockllm import resolve_mock

        try:
            return resolve_mock(cfg.endpoint)
        except ValueError as exc:
            raise LlmError(str(exc)) from exc
    return HttpBackend(cfg)


def invoke_llm(
    prompt: RcaPrompt,
    cfg: LlmConfig,
    cost: CostRecord,
    backend=None,
    tok: Tokenizer | None = None,
    extra_messages: list[dict[str, str]] | None = None,
) -> str:
    """Send the prompt, retrying transport failures.

    Every attempt counts as one query round; token usage is accounted on
    the successful attempt.
    """
    backend = backend or resolve_backend(cfg)
    messages = prompt.messages() + list(extra_messages or ())
    attempts = max(1, cfg.max_retries)
    last_failure: Exception | None = None
    for _ in range(attempts):
        cost.query_rounds += 1
        try:
            text = backend.complete(messages)
        except TransportFailure as exc:
            last_failure = exc
            continue
        sent = "\n\n".join(m["content"] for m in messages)
        cost.prompt_tokens += count_tokens(sent, tok)
        cost.completion_tokens += count_tokens(text, tok)
        return text
    raise LlmError(f"LLM backend failed after {attempts} attempts: {last_failure}")


# -- full stage ---------------------------------------------------------


@dataclass
class StageArtifacts:
    """Intermediate products of one analysis run, for inspection/output."""

    pool_size: int = 0
    selected: list[ScoredBlock] = field(default_factory=list)
    payload: str = ""
    prompt: RcaPrompt | None = None


def prepare_context(
    failed: RawLog,
    store: TemplateStore,
    filter_cfg: FilterConfig | None = None,
    pruner_cfg: PrunerConfig | None = None,
    *,
    drain_cfg: DrainConfig | None = None,
    tok: Tokenizer | None = None,
    use_filter: bool = True,
    use_expansion: bool = True,
) -> tuple[list[ScoredBlock], StageArtifacts]:
    """Filter, weight, expand, and prune a failed log into final blocks.

    ``use_filter`` / ``use_expansion`` are ablation switches: disabling
    the filter admits every line into the candidate pool; disabling
    expansion zeroes both context radii.
    """
    from .filtering import CandidatePool

    filter_cfg = filter_cfg or FilterConfig()
    pruner_cfg = pruner_cfg or PrunerConfig()
    if not use_expansion:
        filter_cfg = FilterConfig(
            keywords=filter_cfg.keywords,
            tail_fraction=filter_cfg.tail_fraction,
            tail_min_lines=filter_cfg.tail_min_lines,
            m=0,
            n=0,
        )
        pruner_cfg = PrunerConfig(
            alpha=pruner_cfg.alpha,
            beta=pruner_cfg.beta,
            gamma=pruner_cfg.gamma,
            token_limit=pruner_cfg.token_limit,
            fail_markers=pruner_cfg.fail_markers,
            header_prefix=pruner_cfg.header_prefix,
            m=0,
            n=0,
        )
    if use_filter:
        pool = filter_candidates(failed, store, filter_cfg, drain_cfg)
    else:
        pool = CandidatePool({line.number: frozenset() for line in failed.lines})

    weights = assign_initial_weights(len(failed), pool, pruner_cfg)
    weights = enhance_weights(weights, failed, pool, pruner_cfg, filter_cfg.keywords)
    if use_expansion:
        weights = contextual_expand(weights, pruner_cfg)
    blocks = score_blocks(weights, tok, failed, pool)
    selected = select_blocks(blocks, pruner_cfg, pool)

    artifacts = StageArtifacts(pool_size=len(pool), selected=selected)
    artifacts.payload = render_blocks(selected, failed)
    return selected, artifacts


def run_rca(
    failed: RawLog,
    store: TemplateStore,
    filter_cfg: FilterConfig | None = None,
    pruner_cfg: PrunerConfig | None = None,
    llm_cfg: LlmConfig | None = None,
    *,
    drain_cfg: DrainConfig | None = None,
    tok: Tokenizer | None = None,
    few_shot_pool: tuple[FewShot, ...] = DEFAULT_FEW_SHOTS,
    few_shot_count: int = 2,
    backend=None,
    use_filter: bool = True,
    use_expansion: bool = True,
) -> tuple[RcaReport, CostRecord]:
    """Full first stage: filter -> prune -> prompt -> invoke -> parse.

    Malformed model output triggers corrective re-queries (the validator
    message plus the schema are appended) up to the retry limit.
    """
    llm_cfg = llm_cfg or LlmConfig()
    pruner_cfg = pruner_cfg or PrunerConfig()
    selected, artifacts = prepare_context(
        failed,
        store,
        filter_cfg,
        pruner_cfg,
        drain_cfg=drain_cfg,
        tok=tok,
        use_filter=use_filter,
        use_expansion=use_expansion,
    )
    if not selected:
        raise RcaError(f"no candidate log lines found in run {failed.run_id!r}")
    prompt = build_rca_prompt(
        selected,
        failed,
        few_shot_pool=few_shot_pool,
        few_shot_count=few_shot_count,
        token_limit=pruner_cfg.token_limit,
        tok=tok,
    )
    artifacts.prompt = prompt

    cost = CostRecord(case_id=failed.run_id)
    report = query_until_valid(prompt, llm_cfg, cost, len(failed), backend=backend, tok=tok)
    return report, cost


def query_until_valid(
    prompt: RcaPrompt,
    llm_cfg: LlmConfig,
    cost: CostRecord,
    log_len: int,
    backend=None,
    tok: Tokenizer | None = None,
) -> RcaReport:
    """Invoke and parse, re-querying with a corrective message on bad output."""
    backend = backend or resolve_backend(llm_cfg)
    corrective: list[dict[str, str]] = []
    attempts = max(1, llm_cfg.max_retries)
    last_error: Exception | None = None
    for _ in range(attempts):
        raw = invoke_llm(prompt, llm_cfg, cost, backend=backend, tok=tok, extra_messages=corrective)
        try:
            return parse_report(raw, log_len)
        except ParseError as exc:
            last_error = exc
            corrective = [
                {"role": "assistant", "content": raw},
                {
                    "role": "user",
                    "content": (
                        f"Your previous response was rejected: {exc}. "
                        f"Respond again with a single JSON object matching the schema: {OUTPUT_SCHEMA}"
                    ),
                },
            ]
    raise RcaError(f"model never produced a valid report: {last_error}")
