"""
Key-log extraction from a failed run
=====================================

Three strategies run over the failed log in parallel: failure keywords,
the tail of the file, and lines whose template never occurs in recent
successful runs. Every candidate remembers which strategies recalled it,
and textual duplicates collapse onto the occurrence nearest the end.
"""

from cicd_triage.filtering import expand, filter_candidates
from cicd_triage.ingest import from_lines
from cicd_triage.templates import TemplateStore, mine_templates, update_store

# a quiet green run to diff against
success = [f"sync shard {i} of 64 done" for i in range(1, 61)]
ok_log = from_lines(success, run_id="ok", task_key="sync")
store = update_store(TemplateStore(task_key="sync", x=3), "ok", mine_templates(ok_log))

# the red run: same chatter plus three anomalies, one of them duplicated
failed_texts = [f"sync shard {i} of 64 done" for i in range(1, 201)]
failed_texts[39] = "connection reset while streaming chunk 9"  # novel, line 40
failed_texts[99] = "error: checksum mismatch on shard 12"  # keyword + novel, line 100
failed_texts[197] = "error: checksum mismatch on shard 12"  # duplicate, line 198
failed = from_lines(failed_texts, run_id="red", task_key="sync")

pool = filter_candidates(failed, store)
tail_only = [n for n, flags in pool.entries.items() if flags == {"tail"}]
print(f"{len(pool)} candidates; {len(tail_only)} recalled by the tail strategy alone")
print()
print("candidates with more provenance than plain tail:")
for number in pool.lines():
    flags = pool.entries[number]
    if flags == {"tail"}:
        continue
    print(f"  {number:>4}  [{','.join(sorted(flags))}]  {failed.text_of(number)}")

# the duplicate at line 100 is gone; line 198 carries its merged flags.
# Key lines then grow into context blocks (4 before, 6 after), and
# touching blocks merge.
print()
print("expanded context blocks:")
for block in expand(pool, len(failed)):
    keys = sorted(block.key_lines)
    shown = keys if len(keys) <= 4 else [*keys[:3], "..."]
    print(f"  lines {block.start}..{block.end}, {len(keys)} key lines {shown}")
