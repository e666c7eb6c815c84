"""
Scoring the pipeline on an annotated corpus
============================================

Generates a small annotated dataset on disk, evaluates every case with
the deterministic mock backend, and aggregates verdicts: a case counts
as a true positive only when at least 90 percent of its ground-truth
lines are cited. An ablation run with filtering disabled shows why the
filter earns its keep.
"""

import tempfile
from pathlib import Path

from cicd_triage.evaluation import load_dataset, run_evaluation
from cicd_triage.synth import build_corpus

with tempfile.TemporaryDirectory() as scratch:
    root = Path(scratch) / "corpus"
    build_corpus(root, cases=10)
    bundles, skipped = load_dataset(root)
    print(f"dataset: {len(bundles)} cases, {len(skipped)} skipped")

    run = run_evaluation(bundles, jobs=4)
    print("\nfull pipeline:")
    print(f"  precision {run.metrics.precision:.3f}  recall {run.metrics.recall:.3f}  f1 {run.metrics.f1:.3f}")
    print(f"  avg payload tokens {run.costs.avg_tokens:.0f}, avg query rounds {run.costs.avg_queries:.1f}")
    for result in run.results:
        print(f"    {result.case_id}: {result.outcome.verdict} (overlap {result.outcome.overlap:.2f})")

    import warnings

    with warnings.catch_warnings():
        warnings.simplefilter("ignore")  # whole-log blocks get truncated here
        ablated = run_evaluation(bundles, use_filter=False, jobs=4)
    print("\nfiltering disabled:")
    print(f"  precision {ablated.metrics.precision:.3f}  recall {ablated.metrics.recall:.3f}")
    worse = sum(
        a.outcome.verdict != b.outcome.verdict for a, b in zip(run.results, ablated.results)
    )
    print(f"  {worse} of {len(bundles)} verdicts changed")
