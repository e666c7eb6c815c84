"""
Root cause analysis of a synthetic failed pipeline
===================================================

The full first stage on one generated case: mine templates from the
case's success logs, filter and prune the failed log, build the prompt,
query the bundled closed-world backend, and validate the JSON report.
No network involved; the default endpoint is a deterministic mock.
"""

from cicd_triage.ingest import from_lines
from cicd_triage.rca import run_rca, serialize_report
from cicd_triage.synth import make_case
from cicd_triage.templates import TemplateStore, mine_templates, update_store

case = make_case(3)  # a "partial" case: truth split between mid-file and tail
failed = from_lines(case.failed_lines, run_id=case.case_id, task_key="ci")

store = TemplateStore(task_key="ci", x=3)
for i, body in enumerate(case.success_logs):
    ok = from_lines(body, run_id=f"ok-{i}", task_key="ci", outcome="success")
    store = update_store(store, f"ok-{i}", mine_templates(ok))

report, cost = run_rca(failed, store)

print(f"case {case.case_id} ({case.kind}), {len(failed)} lines")
print(f"ground truth lines: {sorted(case.ground_truth)}")
print(f"query rounds: {cost.query_rounds}, prompt tokens: {cost.prompt_tokens}")
print()
print(serialize_report(report))
print()
found = report.all_lines()
missed = case.ground_truth - found
extras = found - case.ground_truth
print(f"cited {len(found)} lines; missed {len(missed)}, extraneous {len(extras)}")
