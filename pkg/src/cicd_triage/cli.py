"""Operator command line: template mining, analysis, solving, evaluation.

Configuration resolves in three layers, rightmost wins:
defaults <- TOML config file <- command-line flags.  The resolved
configuration is written next to every artifact so any run can be
reproduced exactly.

Exit codes: 0 success, 2 input or configuration problem, 3 upstream
(LLM/network) failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
import warnings
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from .errors import LlmError, RcaError, TriageError
from .evaluation import (
    load_dataset,
    run_evaluation,
    write_costs_csv,
    write_metrics,
)
from .filtering import FilterConfig
from .ingest import count_tokens, load_log
from .knowledge import KnowledgeStore, ingest, load_docs_jsonl
from .knowledge import load_store as load_kb
from .pruning import PrunerConfig
from .rca import (
    CostRecord,
    LlmConfig,
    build_rca_prompt,
    parse_report,
    prepare_context,
    query_until_valid,
    serialize_report,
)
from .solution import ToolRegistry, demo_tools, solve
from .templates import DrainConfig, load_store, mine_templates, save_store, update_store

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_UPSTREAM = 3

UNLIMITED_TOKENS = 10**12  # --no-pruning disables the budget, not the ordering

_FILTER_KEYS = ("tail_fraction", "tail_min_lines", "m", "n")
_PRUNER_KEYS = ("alpha", "beta", "gamma", "token_limit", "header_prefix", "m", "n")
_DRAIN_KEYS = ("tree_depth", "similarity_threshold", "max_children")
_LLM_KEYS = ("endpoint", "model", "temperature", "max_retries", "timeout", "api_key")


@dataclasses.dataclass
class RunConfig:
    filter: FilterConfig
    pruner: PrunerConfig
    drain: DrainConfig
    llm: LlmConfig
    store_x: int = 3
    use_filter: bool = True
    use_expansion: bool = True
    use_pruning: bool = True
    jobs: int = 1

    def as_dict(self) -> dict:
        def plain(cfg, keys):
            return {k: getattr(cfg, k) for k in keys}

        return {
            "filter": plain(self.filter, _FILTER_KEYS),
            "pruner": plain(self.pruner, _PRUNER_KEYS),
            "drain": plain(self.drain, _DRAIN_KEYS),
            "llm": {k: getattr(self.llm, k) for k in _LLM_KEYS if k != "api_key"},
            "store_x": self.store_x,
            "use_filter": self.use_filter,
            "use_expansion": self.use_expansion,
            "use_pruning": self.use_pruning,
            "jobs": self.jobs,
        }


def _round_floats(obj):
    if isinstance(obj, float):
        return round(obj, 6)
    if isinstance(obj, dict):
        return {k: _round_floats(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_round_floats(v) for v in obj]
    return obj


def write_json(path: Path, obj) -> None:
    path.write_text(
        json.dumps(_round_floats(obj), indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def _load_toml(path: str | None) -> dict:
    if not path:
        return {}
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except (OSError, tomllib.TOMLDecodeError) as exc:
        raise TriageError(f"cannot read config file {path}: {exc}") from exc


def _merge(defaults: dict, file_section: dict, flag_values: dict, keys) -> dict:
    out = dict(defaults)
    for k in keys:
        if k in file_section:
            out[k] = file_section[k]
    for k in keys:
        v = flag_values.get(k)
        if v is not None:
            out[k] = v
    return out


def resolve_config(args: argparse.Namespace) -> RunConfig:
    conf = _load_toml(getattr(args, "config", None))
    flags = vars(args)

    filter_vals = _merge(
        {k: getattr(FilterConfig(), k) for k in _FILTER_KEYS},
        conf.get("filter", {}),
        flags,
        _FILTER_KEYS,
    )
    pruner_vals = _merge(
        {k: getattr(PrunerConfig(), k) for k in _PRUNER_KEYS},
        conf.get("pruner", {}),
        flags,
        _PRUNER_KEYS,
    )
    drain_vals = _merge(
        {k: getattr(DrainConfig(), k) for k in _DRAIN_KEYS},
        conf.get("drain", {}),
        flags,
        _DRAIN_KEYS,
    )
    env_llm = LlmConfig.from_env()
    llm_vals = _merge(
        {k: getattr(env_llm, k) for k in _LLM_KEYS},
        conf.get("llm", {}),
        flags,
        _LLM_KEYS,
    )

    pipeline = conf.get("pipeline", {})
    use_filter = not flags.get("no_filter", False) and pipeline.get("use_filter", True)
    use_expansion = not flags.get("no_expansion", False) and pipeline.get("use_expansion", True)
    use_pruning = not flags.get("no_pruning", False) and pipeline.get("use_pruning", True)
    if flags.get("mock_oracle"):
        llm_vals["endpoint"] = "mock:closed-world"
    if not use_pruning:
        pruner_vals["token_limit"] = UNLIMITED_TOKENS

    store_x = flags.get("x") or conf.get("store", {}).get("x", 3)
    jobs = flags.get("jobs") or pipeline.get("jobs") or os.cpu_count() or 1
    try:
        return RunConfig(
            filter=FilterConfig(**filter_vals),
            pruner=PrunerConfig(**pruner_vals),
            drain=DrainConfig(**drain_vals),
            llm=LlmConfig(**llm_vals),
            store_x=store_x,
            use_filter=use_filter,
            use_expansion=use_expansion,
            use_pruning=use_pruning,
            jobs=jobs,
        )
    except (TypeError, ValueError) as exc:
        raise TriageError(f"invalid configuration: {exc}") from exc


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="TOML config file")
    g = p.add_argument_group("filter")
    g.add_argument("--tail-fraction", dest="tail_fraction", type=float)
    g.add_argument("--tail-min-lines", dest="tail_min_lines", type=int)
    g.add_argument("--m", type=int, help="context lines before a key line")
    g.add_argument("--n", type=int, help="context lines after a key line")
    g = p.add_argument_group("pruner")
    g.add_argument("--alpha", type=float)
    g.add_argument("--beta", type=int)
    g.add_argument("--gamma", type=int)
    g.add_argument("--token-limit", dest="token_limit", type=int)
    g.add_argument("--header-prefix", dest="header_prefix")
    g = p.add_argument_group("template miner")
    g.add_argument("--tree-depth", dest="tree_depth", type=int)
    g.add_argument("--similarity-threshold", dest="similarity_threshold", type=float)
    g.add_argument("--max-children", dest="max_children", type=int)
    g.add_argument("--x", type=int, help="success runs retained per task")
    g = p.add_argument_group("llm")
    g.add_argument("--endpoint")
    g.add_argument("--model")
    g.add_argument("--temperature", type=float)
    g.add_argument("--max-retries", dest="max_retries", type=int)
    g.add_argument("--timeout", type=float)
    g = p.add_argument_group("pipeline")
    g.add_argument("--no-filter", dest="no_filter", action="store_true")
    g.add_argument("--no-expansion", dest="no_expansion", action="store_true")
    g.add_argument("--no-pruning", dest="no_pruning", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cicd-triage",
        description="Two-stage CI/CD failure triage: root cause analysis, then remediation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("mine-templates", help="update a task's template store from success logs")
    p.add_argument("logs", nargs="+", help="success log files, oldest first")
    p.add_argument("--task-key", required=True)
    p.add_argument("--store-dir", required=True)
    p.add_argument("--x", type=int)
    _add_config_flags_minimal(p)
    p.set_defaults(func=cmd_mine_templates)

    p = sub.add_parser("analyze", help="root cause analysis of a failed log")
    p.add_argument("failed_log")
    p.add_argument("--task-key", required=True)
    p.add_argument("--store-dir", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--dry-prompt", action="store_true", help="emit the prompt, skip the LLM call")
    p.add_argument("--require-store", action="store_true", help="fail if the task has no template store")
    p.add_argument("--mock-oracle", action="store_true", help="force the closed-world mock backend")
    _add_config_flags(p)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("solve", help="generate a remediation plan from an analysis report")
    p.add_argument("report", help="rca_report.json from analyze")
    p.add_argument("--failed-log", required=True)
    p.add_argument("--kb-dir", help="persisted knowledge index directory")
    p.add_argument("--kb-jsonl", help="knowledge corpus as JSON-Lines (indexed on the fly)")
    p.add_argument("--tools", help="tool registry JSON; bundled demo tools when omitted")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--execute", action="store_true", help="run tools for real instead of dry-run")
    p.add_argument(
        "--confirm-execute",
        action="store_true",
        help="required together with --execute",
    )
    _add_config_flags(p)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("eval", help="run the harness over an annotated dataset")
    p.add_argument("dataset_dir")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--jobs", type=int, help="parallel case workers")
    p.add_argument("--mock-oracle", action="store_true")
    _add_config_flags(p)
    p.set_defaults(func=cmd_eval)
    return parser


def _add_config_flags_minimal(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="TOML config file")
    p.add_argument("--tree-depth", dest="tree_depth", type=int)
    p.add_argument("--similarity-threshold", dest="similarity_threshold", type=float)
    p.add_argument("--max-children", dest="max_children", type=int)


def cmd_mine_templates(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    store = load_store(args.store_dir, args.task_key, x=cfg.store_x)
    for path in args.logs:
        run_id = Path(path).stem
        log = load_log(path, run_id=run_id, task_key=args.task_key, outcome="success")
        store = update_store(store, run_id, mine_templates(log, cfg.drain))
    path = save_store(store, args.store_dir)
    print(
        json.dumps(
            {
                "store": str(path),
                "task_key": args.task_key,
                "runs": list(store.run_ids()),
                "active_templates": len(store.active_templates()),
            },
            sort_keys=True,
        )
    )
    return EXIT_OK


def cmd_analyze(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    store = load_store(args.store_dir, args.task_key, x=cfg.store_x)
    if not store.run_ids():
        if args.require_store:
            raise TriageError(f"no template store for task {args.task_key!r} in {args.store_dir}")
        warnings.warn(
            f"no template store for task {args.task_key!r}: "
            "the success-log diff degenerates to a pass-through"
        )
    failed = load_log(args.failed_log, run_id=Path(args.failed_log).stem, task_key=args.task_key)
    if len(failed) == 0:
        raise TriageError(f"{args.failed_log} is empty")

    selected, artifacts = prepare_context(
        failed,
        store,
        cfg.filter,
        cfg.pruner,
        drain_cfg=cfg.drain,
        use_filter=cfg.use_filter,
        use_expansion=cfg.use_expansion,
    )
    if not selected:
        raise RcaError(f"no analyzable log lines found in {args.failed_log}")
    (out_dir / "selected_blocks.txt").write_text(artifacts.payload + "\n", encoding="utf-8")
    write_json(out_dir / "run_config.json", cfg.as_dict())

    prompt = build_rca_prompt(selected, failed, token_limit=cfg.pruner.token_limit)
    if args.dry_prompt:
        (out_dir / "rca_prompt.txt").write_text(prompt.rendered() + "\n", encoding="utf-8")
        print(json.dumps({"out_dir": str(out_dir), "dry_prompt": True}, sort_keys=True))
        return EXIT_OK

    cost = CostRecord(case_id=failed.run_id)
    report = query_until_valid(prompt, cfg.llm, cost, len(failed))
    (out_dir / "rca_report.json").write_text(serialize_report(report) + "\n", encoding="utf-8")
    write_json(
        out_dir / "cost.json",
        {
            "case_id": cost.case_id,
            "prompt_tokens": cost.prompt_tokens,
            "completion_tokens": cost.completion_tokens,
            "total_tokens": cost.total_tokens,
            "query_rounds": cost.query_rounds,
            "payload_tokens": count_tokens(artifacts.payload),
        },
    )
    print(
        json.dumps(
            {
                "out_dir": str(out_dir),
                "blocks": len(selected),
                "query_rounds": cost.query_rounds,
                "root_causes": len(report.root_cause),
            },
            sort_keys=True,
        )
    )
    return EXIT_OK


def cmd_solve(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if args.execute and not args.confirm_execute:
        raise TriageError("--execute requires --confirm-execute")

    failed = load_log(args.failed_log, run_id=Path(args.failed_log).stem, task_key="solve")
    try:
        raw = Path(args.report).read_text(encoding="utf-8")
    except OSError as exc:
        raise TriageError(f"cannot read report {args.report}: {exc}") from exc
    report = parse_report(raw, len(failed))

    if args.kb_dir:
        kb = load_kb(args.kb_dir)
    elif args.kb_jsonl:
        kb = ingest(load_docs_jsonl(args.kb_jsonl))
    else:
        kb = KnowledgeStore([])
    registry = ToolRegistry.from_file(args.tools, demo_tools().impls) if args.tools else demo_tools()

    llm = cfg.llm
    if llm.endpoint.startswith("mock:closed-world"):
        # the analysis mock cannot emit plans; switch to the plan mock
        llm = dataclasses.replace(llm, endpoint="mock:plan")
    plan, transcript, cost = solve(
        report,
        failed,
        kb,
        registry,
        llm,
        token_limit=cfg.pruner.token_limit,
        dry_run=not args.execute,
    )
    write_json(
        out_dir / "solution.json",
        {
            "explanation": plan.explanation,
            "citations": list(plan.citations),
            "steps": [{"tool": s.tool, "arguments": s.arguments} for s in plan.steps],
        },
    )
    write_json(
        out_dir / "transcript.json",
        {
            "dry_run": not args.execute,
            "steps": [s.as_dict() for s in transcript],
            "query_rounds": cost.query_rounds,
        },
    )
    write_json(out_dir / "run_config.json", cfg.as_dict())
    print(
        json.dumps(
            {"out_dir": str(out_dir), "steps": len(transcript), "citations": len(plan.citations)},
            sort_keys=True,
        )
    )
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    bundles, skipped = load_dataset(args.dataset_dir)
    run = run_evaluation(
        bundles,
        cfg.llm,
        cfg.filter,
        cfg.pruner,
        cfg.drain,
        use_filter=cfg.use_filter,
        use_expansion=cfg.use_expansion,
        jobs=cfg.jobs,
        skipped=skipped,
    )
    write_metrics(out_dir / "metrics.json", run)
    write_costs_csv(out_dir / "costs.csv", [r.record for r in run.results])
    write_json(out_dir / "run_config.json", cfg.as_dict())
    print(
        json.dumps(
            {
                "cases": len(run.results),
                "precision": round(run.metrics.precision, 6),
                "recall": round(run.metrics.recall, 6),
                "f1": round(run.metrics.f1, 6),
                "avg_tokens": round(run.costs.avg_tokens, 2),
                "avg_queries": round(run.costs.avg_queries, 4),
                "skipped": skipped,
            },
            sort_keys=True,
        )
    )
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except LlmError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_UPSTREAM
    except TriageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
