"""Evaluation harness: annotated cases, TP/FP/FN judging, cost statistics.

A prediction is judged against the annotated key lines of its case:
the union of all cited ranges must cover at least 90% of the ground
truth to count as a true positive.  A case where the analyzer produces
no line references at all is a false negative.
"""

from __future__ import annotations

import concurrent.futures
import csv
import json
import statistics
import warnings
from dataclasses import dataclass, field
from pathlib import Path

from .errors import DatasetError, LlmError, RcaError
from .filtering import FilterConfig
from .ingest import FAILED, SUCCESS, Tokenizer, count_tokens, load_log
from .pruning import PrunerConfig
from .rca import (
    CostRecord,
    LlmConfig,
    RcaReport,
    build_rca_prompt,
    prepare_context,
    query_until_valid,
    resolve_backend,
)
from .templates import DrainConfig, TemplateStore, mine_templates, update_store

TP = "TP"
FP = "FP"
FN = "FN"

OVERLAP_THRESHOLD = 0.9


@dataclass(frozen=True)
class CaseBundle:
    case_id: str
    failed_log: Path
    success_logs: tuple[Path, ...]
    ground_truth: frozenset[int]
    root_cause_label: str

    def __post_init__(self) -> None:
        if not self.ground_truth:
            raise ValueError("a case needs at least one ground-truth line")
        if any(n < 1 for n in self.ground_truth):
            raise ValueError("ground-truth line numbers are 1-based")


@dataclass(frozen=True)
class EvalOutcome:
    case_id: str
    verdict: str
    overlap: float

    def __post_init__(self) -> None:
        if self.verdict not in (TP, FP, FN):
            raise ValueError(f"verdict must be TP/FP/FN, got {self.verdict!r}")
        if not 0.0 <= self.overlap <= 1.0:
            raise ValueError("overlap must lie in [0, 1]")


def judge_case(report: RcaReport | None, truth: frozenset[int] | set[int], case_id: str = "") -> EvalOutcome:
    """Apply the overlap rule: TP iff |P ∩ truth| / |truth| >= 0.9."""
    if not truth:
        raise ValueError("ground truth must be non-empty")
    if report is None or not report.has_findings():
        return EvalOutcome(case_id=case_id, verdict=FN, overlap=0.0)
    predicted = report.all_lines()
    overlap = len(predicted & set(truth)) / len(truth)
    verdict = TP if overlap >= OVERLAP_THRESHOLD else FP
    return EvalOutcome(case_id=case_id, verdict=verdict, overlap=overlap)


@dataclass(frozen=True)
class Metrics:
    precision: float
    recall: float
    f1: float
    tp: int
    fp: int
    fn: int
    tn: int = 0
    # set when a zero denominator forced the metric to 0
    precision_flagged: bool = False
    recall_flagged: bool = False
    f1_flagged: bool = False


def aggregate(outcomes: list[EvalOutcome], tn: int = 0) -> Metrics:
    """Precision, recall, F1 over the verdict counts.

    The TN count is carried through for analyzers that emit explicit
    no-anomaly verdicts; it never enters these metrics.
    """
    if not outcomes:
        raise ValueError("aggregate needs at least one outcome")
    tp = sum(1 for o in outcomes if o.verdict == TP)
    fp = sum(1 for o in outcomes if o.verdict == FP)
    fn = sum(1 for o in outcomes if o.verdict == FN)
    p_flag = tp + fp == 0
    r_flag = tp + fn == 0
    precision = 0.0 if p_flag else tp / (tp + fp)
    recall = 0.0 if r_flag else tp / (tp + fn)
    f1_flag = precision + recall == 0
    f1 = 0.0 if f1_flag else 2 * precision * recall / (precision + recall)
    return Metrics(
        precision=precision,
        recall=recall,
        f1=f1,
        tp=tp,
        fp=fp,
        fn=fn,
        tn=tn,
        precision_flagged=p_flag,
        recall_flagged=r_flag,
        f1_flagged=f1_flag,
    )


@dataclass(frozen=True)
class CostSummary:
    avg_tokens: float
    avg_queries: float
    token_variability: float  # coefficient of variation, percent


def cost_report(records: list[CostRecord]) -> CostSummary:
    if not records:
        raise ValueError("cost_report needs at least one record")
    totals = [r.total_tokens for r in records]
    mean = statistics.mean(totals)
    variability = 0.0 if mean == 0 or len(totals) == 1 else statistics.pstdev(totals) / mean * 100.0
    return CostSummary(
        avg_tokens=mean,
        avg_queries=statistics.mean(r.query_rounds for r in records),
        token_variability=variability,
    )


# -- dataset loading ------------------------------------------------------


def _load_case(case_dir: Path) -> CaseBundle:
    failed = case_dir / "failed.log"
    annotations = case_dir / "annotations.json"
    if not failed.is_file():
        raise DatasetError(f"{case_dir.name}: missing failed.log")
    if not annotations.is_file():
        raise DatasetError(f"{case_dir.name}: missing annotations.json")
    try:
        meta = json.loads(annotations.read_text(encoding="utf-8"))
        lines = meta["ground_truth_lines"]
        label = meta["root_cause"]
    except (OSError, json.JSONDecodeError, KeyError) as exc:
        raise DatasetError(f"{case_dir.name}: bad annotations.json: {exc}") from exc
    if (
        not isinstance(lines, list)
        or not lines
        or not all(isinstance(n, int) and not isinstance(n, bool) for n in lines)
    ):
        raise DatasetError(f"{case_dir.name}: ground_truth_lines must be a non-empty int array")
    if any(n < 1 for n in lines):
        raise DatasetError(f"{case_dir.name}: ground-truth lines are 1-based")
    if not isinstance(label, str):
        raise DatasetError(f"{case_dir.name}: root_cause must be a string")
    pieces = failed.read_bytes().split(b"\n")
    if pieces and pieces[-1] == b"":
        pieces.pop()
    log_len = len(pieces)
    if any(n > log_len for n in lines):
        raise DatasetError(f"{case_dir.name}: ground-truth line beyond end of failed.log")
    success_dir = case_dir / "success"
    success = tuple(sorted(success_dir.glob("*.log"))) if success_dir.is_dir() else ()
    return CaseBundle(
        case_id=case_dir.name,
        failed_log=failed,
        success_logs=success,
        ground_truth=frozenset(lines),
        root_cause_label=label,
    )


def load_dataset(root: str | Path) -> tuple[list[CaseBundle], list[str]]:
    """Load every case directory under root; malformed cases are skipped.

    Returns (bundles, skipped case names).  An empty result set is an
    error: a dataset with nothing loadable cannot be evaluated.
    """
    root = Path(root)
    if not root.is_dir():
        raise DatasetError(f"dataset root {root} is not a directory")
    bundles: list[CaseBundle] = []
    skipped: list[str] = []
    for case_dir in sorted(p for p in root.iterdir() if p.is_dir()):
        try:
            bundles.append(_load_case(case_dir))
        except DatasetError as exc:
            warnings.warn(f"skipping case {case_dir.name}: {exc}")
            skipped.append(case_dir.name)
    if not bundles:
        raise DatasetError(f"no loadable cases under {root}")
    return bundles, skipped


# -- per-case pipeline ----------------------------------------------------


@dataclass
class CaseResult:
    case_id: str
    outcome: EvalOutcome
    record: CostRecord
    report: RcaReport | None = None
    selected_ranges: tuple[tuple[int, int], ...] = ()
    payload_tokens: int = 0
    error: str = ""


def build_case_store(bundle: CaseBundle, drain_cfg: DrainConfig | None = None, x: int = 3) -> TemplateStore:
    store = TemplateStore(task_key=bundle.case_id, x=x)
    for idx, path in enumerate(bundle.success_logs):
        log = load_log(path, run_id=f"{bundle.case_id}-ok-{idx}", task_key=bundle.case_id, outcome=SUCCESS)
        store = update_store(store, log.run_id, mine_templates(log, drain_cfg))
    return store


def evaluate_case(
    bundle: CaseBundle,
    llm_cfg: LlmConfig | None = None,
    filter_cfg: FilterConfig | None = None,
    pruner_cfg: PrunerConfig | None = None,
    drain_cfg: DrainConfig | None = None,
    *,
    tok: Tokenizer | None = None,
    use_filter: bool = True,
    use_expansion: bool = True,
    backend=None,
) -> CaseResult:
    """Analyze one case end to end and judge the result.

    Pipeline errors (nothing selected, LLM exhaustion) downgrade to a
    judged false negative rather than aborting the whole run.
    """
    llm_cfg = llm_cfg or LlmConfig()
    pruner_cfg = pruner_cfg or PrunerConfig()
    failed = load_log(bundle.failed_log, run_id=bundle.case_id, task_key=bundle.case_id, outcome=FAILED)
    store = build_case_store(bundle, drain_cfg)
    cost = CostRecord(case_id=bundle.case_id)
    result = CaseResult(
        case_id=bundle.case_id,
        outcome=EvalOutcome(case_id=bundle.case_id, verdict=FN, overlap=0.0),
        record=cost,
    )
    try:
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
        result.selected_ranges = tuple((b.block.start, b.block.end) for b in selected)
        if not selected:
            raise RcaError("no log blocks selected")
        result.payload_tokens = count_tokens(artifacts.payload, tok)
        prompt = build_rca_prompt(
            selected, failed, token_limit=pruner_cfg.token_limit, tok=tok
        )
        backend = backend or resolve_backend(llm_cfg)
        report = query_until_valid(prompt, llm_cfg, cost, len(failed), backend=backend, tok=tok)
        result.report = report
    except (RcaError, LlmError) as exc:
        result.error = str(exc)
        result.outcome = judge_case(None, bundle.ground_truth, bundle.case_id)
        return result
    result.outcome = judge_case(report, bundle.ground_truth, bundle.case_id)
    return result


@dataclass
class EvalRun:
    results: list[CaseResult]
    metrics: Metrics
    costs: CostSummary
    skipped: list[str] = field(default_factory=list)


def run_evaluation(
    bundles: list[CaseBundle],
    llm_cfg: LlmConfig | None = None,
    filter_cfg: FilterConfig | None = None,
    pruner_cfg: PrunerConfig | None = None,
    drain_cfg: DrainConfig | None = None,
    *,
    tok: Tokenizer | None = None,
    use_filter: bool = True,
    use_expansion: bool = True,
    jobs: int = 1,
    backend_factory=None,
    skipped: list[str] | None = None,
) -> EvalRun:
    """Evaluate all cases, in parallel when jobs > 1.

    Each case gets a fresh backend so stateful mocks (fault injection)
    behave identically regardless of scheduling.
    """
    if not bundles:
        raise DatasetError("no cases to evaluate")

    def one(bundle: CaseBundle) -> CaseResult:
        backend = backend_factory() if backend_factory else None
        return evaluate_case(
            bundle,
            llm_cfg,
            filter_cfg,
            pruner_cfg,
            drain_cfg,
            tok=tok,
            use_filter=use_filter,
            use_expansion=use_expansion,
            backend=backend,
        )

    if jobs <= 1:
        results = [one(b) for b in bundles]
    else:
        with concurrent.futures.ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(one, bundles))
    metrics = aggregate([r.outcome for r in results])
    costs = cost_report([r.record for r in results])
    return EvalRun(results=results, metrics=metrics, costs=costs, skipped=list(skipped or ()))


# -- artifact writers -----------------------------------------------------


def write_metrics(path: str | Path, run: EvalRun) -> None:
    payload = {
        "cases": len(run.results),
        "precision": round(run.metrics.precision, 6),
        "recall": round(run.metrics.recall, 6),
        "f1": round(run.metrics.f1, 6),
        "tp": run.metrics.tp,
        "fp": run.metrics.fp,
        "fn": run.metrics.fn,
        "tn": run.metrics.tn,
        "flags": {
            "precision_zero_denominator": run.metrics.precision_flagged,
            "recall_zero_denominator": run.metrics.recall_flagged,
            "f1_zero_denominator": run.metrics.f1_flagged,
        },
        "avg_tokens": round(run.costs.avg_tokens, 6),
        "avg_queries": round(run.costs.avg_queries, 6),
        "token_variability_pct": round(run.costs.token_variability, 6),
        "skipped_cases": sorted(run.skipped),
        "verdicts": {r.case_id: r.outcome.verdict for r in run.results},
    }
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def write_costs_csv(path: str | Path, records: list[CostRecord]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["case_id", "prompt_tokens", "completion_tokens", "query_rounds"])
        for rec in records:
            writer.writerow([rec.case_id, rec.prompt_tokens, rec.completion_tokens, rec.query_rounds])
