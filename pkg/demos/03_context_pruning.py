"""
Pruning candidate context under a hard token budget
====================================================

Candidate lines get weights, failure patterns raise them, context around
heavy lines is re-expanded, and the weight vector is cut into contiguous
blocks. The densest blocks are kept greedily until the token budget is
spent; everything else is dropped.
"""

from cicd_triage.filtering import CandidatePool
from cicd_triage.ingest import from_lines
from cicd_triage.pruning import (
    PrunerConfig,
    assign_initial_weights,
    contextual_expand,
    enhance_weights,
    expansion_threshold,
    render_blocks,
    score_blocks,
    select_blocks,
)

texts = [f"worker heartbeat {i} ok" for i in range(1, 121)]
texts[29] = "warn retry budget low on endpoint api2"  # line 30
texts[59] = "--- FAIL: TestCheckoutFlow (0.42s)"  # line 60
texts[60] = "assertion mismatch: want 3 items got 0"  # line 61
texts[99] = "error: cart service returned 503"  # line 100
log = from_lines(texts, run_id="red", task_key="shop")

pool = CandidatePool({
    30: frozenset({"keyword"}),
    60: frozenset({"keyword", "diff"}),
    61: frozenset({"diff"}),
    100: frozenset({"keyword", "diff", "tail"}),
})

weights = assign_initial_weights(len(log), pool)
print("initial pool weight:", max(weights), "(sparse pool, so 3 instead of 1)")

weights = enhance_weights(weights, log, pool)
print("after enhancement:", {n: weights[n - 1] for n in sorted(pool.entries)})
print("expansion threshold:", expansion_threshold(weights))

weights = contextual_expand(weights)
blocks = score_blocks(weights, None, log, pool)
print()
print(f"{len(blocks)} scored blocks:")
for sb in blocks:
    print(
        f"  [{sb.block.start:>3}, {sb.block.end:>3}]"
        f"  density {sb.density:.2f}  weight {sb.total_weight:>2}  tokens {sb.token_count}"
    )

# a deliberately tiny budget forces a choice: the test-failure block wins
tight = PrunerConfig(token_limit=120)
kept = select_blocks(blocks, tight, pool)
print()
print(f"selected under a {tight.token_limit}-token budget:")
print(render_blocks(kept, log))
