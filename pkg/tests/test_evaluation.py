from __future__ import annotations

import csv
import json

import pytest

from cicd_triage.errors import DatasetError
from cicd_triage.evaluation import (
    FN,
    FP,
    TP,
    CostSummary,
    EvalOutcome,
    aggregate,
    cost_report,
    evaluate_case,
    judge_case,
    load_dataset,
    run_evaluation,
    write_costs_csv,
    write_metrics,
)
from cicd_triage.mockllm import FlakyMock, ClosedWorldMock
from cicd_triage.rca import AnalysisEntry, CostRecord, RcaReport
from cicd_triage.synth import build_corpus


def _citing(*ranges: tuple[int, int]) -> RcaReport:
    return RcaReport(
        log_analysis=(AnalysisEntry(error_logs=tuple(ranges), analysis="because"),),
        root_cause=("something broke",),
    )


TRUTH = frozenset(range(10, 20))  # ten lines, 10..19


def test_judge_overlap_boundary_is_inclusive():
    # [10, 18] covers 9 of 10 truth lines: exactly 0.9, a TP
    out = judge_case(_citing((10, 18)), TRUTH, "c")
    assert out.verdict == TP
    assert out.overlap == pytest.approx(0.9)


def test_judge_below_boundary_is_fp():
    out = judge_case(_citing((10, 17)), TRUTH, "c")  # 8/10
    assert out.verdict == FP
    assert out.overlap == pytest.approx(0.8)


def test_judge_disjoint_findings_are_fp():
    out = judge_case(_citing((30, 40)), TRUTH, "c")
    assert out.verdict == FP
    assert out.overlap == 0.0


def test_judge_superset_is_tp():
    assert judge_case(_citing((1, 50)), TRUTH, "c").verdict == TP


def test_judge_absent_or_empty_report_is_fn():
    assert judge_case(None, TRUTH, "c").verdict == FN
    empty = RcaReport(log_analysis=(), root_cause=("no findings",))
    assert judge_case(empty, TRUTH, "c").verdict == FN


def test_judge_requires_truth():
    with pytest.raises(ValueError):
        judge_case(_citing((1, 2)), frozenset(), "c")


def _outcomes(tp: int, fp: int, fn: int) -> list[EvalOutcome]:
    out = []
    for i in range(tp):
        out.append(EvalOutcome(case_id=f"tp{i}", verdict=TP, overlap=1.0))
    for i in range(fp):
        out.append(EvalOutcome(case_id=f"fp{i}", verdict=FP, overlap=0.5))
    for i in range(fn):
        out.append(EvalOutcome(case_id=f"fn{i}", verdict=FN, overlap=0.0))
    return out


def test_aggregate_example():
    m = aggregate(_outcomes(8, 2, 0))
    assert m.precision == pytest.approx(0.8)
    assert m.recall == pytest.approx(1.0)
    assert m.f1 == pytest.approx(2 * 0.8 / 1.8)
    assert (m.tp, m.fp, m.fn) == (8, 2, 0)


def test_aggregate_zero_denominators_flagged_not_crashed():
    m = aggregate(_outcomes(0, 0, 4))
    assert m.precision == 0.0 and m.precision_flagged
    assert m.recall == 0.0 and not m.recall_flagged  # tp+fn = 4, a real zero
    assert m.f1 == 0.0 and m.f1_flagged


def test_aggregate_carries_tn_without_using_it():
    m = aggregate(_outcomes(2, 0, 0), tn=7)
    assert m.tn == 7
    assert m.precision == 1.0


def test_aggregate_rejects_empty():
    with pytest.raises(ValueError):
        aggregate([])


def test_cost_report_example():
    recs = [
        CostRecord(case_id="a", prompt_tokens=9_000, completion_tokens=1_000, query_rounds=1),
        CostRecord(case_id="b", prompt_tokens=18_000, completion_tokens=2_000, query_rounds=1),
    ]
    s = cost_report(recs)
    assert s.avg_tokens == pytest.approx(15_000.0)
    assert s.avg_queries == pytest.approx(1.0)
    # population stdev 5000 over mean 15000
    assert s.token_variability == pytest.approx(100 / 3, abs=1e-9)


def test_cost_report_single_record_has_zero_variability():
    s = cost_report([CostRecord(case_id="a", prompt_tokens=100, query_rounds=2)])
    assert s == CostSummary(avg_tokens=100.0, avg_queries=2.0, token_variability=0.0)


def test_cost_report_rejects_empty():
    with pytest.raises(ValueError):
        cost_report([])


def test_load_dataset_skips_corrupt_case(tmp_path):
    build_corpus(tmp_path, cases=2)
    victim = sorted(tmp_path.iterdir())[0] / "annotations.json"
    victim.write_text("{not json", encoding="utf-8")
    with pytest.warns(UserWarning, match="skipping case"):
        bundles, skipped = load_dataset(tmp_path)
    assert len(bundles) == 1
    assert skipped == ["case-00"]


def test_load_dataset_rejects_out_of_range_truth(tmp_path):
    build_corpus(tmp_path, cases=1)
    case = sorted(tmp_path.iterdir())[0]
    meta = json.loads((case / "annotations.json").read_text())
    meta["ground_truth_lines"] = [10 ** 9]
    (case / "annotations.json").write_text(json.dumps(meta), encoding="utf-8")
    with pytest.warns(UserWarning):
        with pytest.raises(DatasetError):
            load_dataset(tmp_path)


def test_load_dataset_rejects_empty_root(tmp_path):
    with pytest.raises(DatasetError):
        load_dataset(tmp_path)
    with pytest.raises(DatasetError):
        load_dataset(tmp_path / "absent")


def test_evaluate_case_judges_a_corpus_case(bundles):
    result = evaluate_case(bundles[0])
    assert result.outcome.verdict == TP
    assert result.report is not None
    assert result.record.query_rounds == 1
    assert result.payload_tokens > 0
    assert result.selected_ranges


def test_evaluate_case_downgrades_llm_exhaustion_to_fn(bundles):
    dead = FlakyMock(ClosedWorldMock(), failures=99, mode="transport")
    result = evaluate_case(bundles[0], backend=dead)
    assert result.outcome.verdict == FN
    assert "attempts" in result.error
    assert result.report is None


def test_run_evaluation_parallel_matches_serial(bundles):
    subset = bundles[:4]
    serial = run_evaluation(subset, jobs=1)
    parallel = run_evaluation(subset, jobs=3)
    assert [r.outcome for r in serial.results] == [r.outcome for r in parallel.results]
    assert serial.metrics == parallel.metrics


def test_run_evaluation_rejects_no_cases():
    with pytest.raises(DatasetError):
        run_evaluation([])


def test_full_corpus_metrics(eval_full):
    assert eval_full.metrics.precision == 1.0
    assert eval_full.metrics.recall == 1.0
    assert eval_full.metrics.tp == 30
    assert eval_full.costs.avg_queries == 1.0


def test_metrics_and_costs_files(tmp_path, eval_full):
    mpath, cpath = tmp_path / "metrics.json", tmp_path / "costs.csv"
    write_metrics(mpath, eval_full)
    write_costs_csv(cpath, [r.record for r in eval_full.results])

    metrics = json.loads(mpath.read_text())
    assert metrics["cases"] == 30
    assert metrics["precision"] == 1.0
    assert metrics["skipped_cases"] == []
    assert set(metrics["verdicts"].values()) == {"TP"}

    with open(cpath, newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["case_id", "prompt_tokens", "completion_tokens", "query_rounds"]
    assert len(rows) == 31
    assert all(row[3] == "1" for row in rows[1:])
