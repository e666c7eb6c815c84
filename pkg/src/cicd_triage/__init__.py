"""Deterministic, LLM-pluggable triage for failed CI/CD pipeline runs.

Stage 1 distills a failed log into a token-budgeted set of critical
blocks and asks an analysis model for a structured root-cause report.
Stage 2 retrieves remediation knowledge for that report and drives
guarded tool execution.  Every model boundary accepts an offline mock,
so the whole pipeline runs reproducibly without network access.
"""

from .errors import (
    DatasetError,
    IngestError,
    LlmError,
    ParseError,
    PlanError,
    PromptError,
    RcaError,
    StoreError,
    TriageError,
    ValidationError,
)
from .evaluation import (
    CaseBundle,
    CaseResult,
    CostSummary,
    EvalOutcome,
    EvalRun,
    Metrics,
    aggregate,
    cost_report,
    evaluate_case,
    judge_case,
    load_dataset,
    run_evaluation,
)
from .filtering import (
    DIFF,
    K_ERROR,
    KEYWORD,
    TAIL,
    CandidatePool,
    FilterConfig,
    KeywordSet,
    LogBlock,
    expand,
    filter_candidates,
    is_in_log_tail,
)
from .ingest import (
    FAILED,
    SUCCESS,
    LogLine,
    RawLog,
    RegexTokenizer,
    Tokenizer,
    count_tokens,
    from_lines,
    load_log,
)
from .knowledge import (
    Chunk,
    DenseIndex,
    HashedBowEmbedder,
    KnowledgeDoc,
    KnowledgeStore,
    ScoredChunk,
    SparseIndex,
    chunk_doc,
    ingest,
    load_docs_jsonl,
)
from .knowledge import load_store as load_knowledge_store
from .knowledge import save_store as save_knowledge_store
from .pruning import (
    FAIL_MARKERS,
    PrunerConfig,
    ScoredBlock,
    TruncatedBlockWarning,
    assign_initial_weights,
    contextual_expand,
    enhance_weights,
    expansion_threshold,
    render_blocks,
    score_blocks,
    select_blocks,
)
from .rca import (
    AnalysisEntry,
    CostRecord,
    LlmConfig,
    RcaPrompt,
    RcaReport,
    build_rca_prompt,
    invoke_llm,
    parse_report,
    prepare_context,
    query_until_valid,
    run_rca,
    serialize_report,
)
from .solution import (
    PassthroughReranker,
    RetrievalCandidate,
    RetrievalQuery,
    SolutionPlan,
    SolutionPrompt,
    StepOutcome,
    ToolCall,
    ToolRegistry,
    ToolSpec,
    build_query,
    build_solution_prompt,
    demo_tools,
    execute_plan,
    multi_route_recall,
    rerank,
    solve,
)
from .templates import (
    BLANK_TEMPLATE,
    DrainConfig,
    LogTemplate,
    TemplateMiner,
    TemplateStore,
    extract_template,
    load_store,
    mine_templates,
    save_store,
    update_store,
)

__version__ = "0.1.0"
