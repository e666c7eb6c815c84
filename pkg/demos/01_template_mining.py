"""
Mining log templates from successful runs
==========================================

Structurally identical log lines collapse into one template: numbers are
masked up front, and a fixed-depth parse tree groups the rest by token
count and leading tokens. A per-task store keeps the templates of the
three most recent successful runs; anything older falls out.
"""

from cicd_triage.ingest import from_lines
from cicd_triage.templates import TemplateStore, mine_templates, update_store

# Four successive green runs of the same task. The texts differ only in
# counters and durations, which the miner masks away.
runs = {
    f"run-{n}": [
        f"fetching dependency bundle {n * 17 + i} of 40" for i in range(4)
    ]
    + [
        f"compiled module core in {300 + 7 * n} ms",
        f"compiled module api in {120 + 9 * n} ms",
        "uploading artifacts to cache",
        f"pipeline finished in {50 + n} s",
    ]
    for n in range(1, 5)
}

store = TemplateStore(task_key="backend-build", x=3)
for run_id, texts in runs.items():
    log = from_lines(texts, run_id=run_id, task_key="backend-build", outcome="success")
    store = update_store(store, run_id, mine_templates(log))
    print(f"after {run_id}: retained runs = {list(store.run_ids())}")

# run-1 was evicted: only the latest x=3 runs back the template union
print()
print("active templates:")
for template in sorted(t.canonical for t in store.active_templates()):
    print(" ", template)
