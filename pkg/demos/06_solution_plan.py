"""
From analysis report to a dry-run remediation plan
===================================================

The second stage: the report's root causes and cited log lines become a
deduplicated retrieval query, recalled knowledge is packed into the
prompt, and the plan backend answers with an explanation, citations,
and tool calls. Tools run in dry-run mode unless explicitly executed,
and every argument is validated against the registry first.
"""

import json

from cicd_triage.ingest import from_lines
from cicd_triage.knowledge import ingest
from cicd_triage.rca import parse_report
from cicd_triage.solution import build_query, demo_tools, solve
from cicd_triage.synth import make_demo_kb

texts = [f"pipeline stage {i} ok" for i in range(1, 61)]
texts[39] = "ERROR cannot open no such file or directory src/gen_41_ab.go"
texts[40] = "ERROR cannot open no such file or directory src/gen_42_cd.go"
log = from_lines(texts, run_id="red-17", task_key="codegen")

report = parse_report(
    json.dumps(
        {
            "log_analysis": [
                {"error_logs": [[40, 41]], "analysis": "Generated sources are missing."}
            ],
            "root_cause": ["Build failed because generated source files are missing"],
        }
    ),
    len(log),
)

query = build_query(report, log)
print("retrieval query:")
print(" ", query.summary)
for line in query.trace.splitlines():
    print("  |", line)

plan, transcript, cost = solve(report, log, ingest(make_demo_kb()), demo_tools())
print()
print("plan explanation:", plan.explanation)
print("citations:", list(plan.citations))
print()
print("dry-run transcript:")
for step in transcript:
    print(f"  {step.tool}: {step.status} ({step.detail})")
print()
print("query rounds:", cost.query_rounds)
