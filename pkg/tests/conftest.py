"""Shared fixtures: one synthetic corpus, evaluation runs cached per session."""

from __future__ import annotations

import pytest
from hypothesis import HealthCheck, settings

from cicd_triage.evaluation import EvalRun, load_dataset, run_evaluation
from cicd_triage.mockllm import ClosedWorldMock, FlakyMock
from cicd_triage.synth import build_corpus

settings.register_profile(
    "suite", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("suite")

_JOBS = 4


@pytest.fixture(scope="session")
def corpus_root(tmp_path_factory):
    root = tmp_path_factory.mktemp("corpus")
    build_corpus(root, cases=30)
    return root


@pytest.fixture(scope="session")
def bundles(corpus_root):
    loaded, skipped = load_dataset(corpus_root)
    assert len(loaded) == 30 and not skipped
    return loaded


@pytest.fixture(scope="session")
def eval_full(bundles) -> EvalRun:
    return run_evaluation(bundles, jobs=_JOBS)


@pytest.fixture(scope="session")
def eval_no_filter(bundles) -> EvalRun:
    return run_evaluation(bundles, use_filter=False, jobs=_JOBS)


@pytest.fixture(scope="session")
def eval_no_both(bundles) -> EvalRun:
    return run_evaluation(bundles, use_filter=False, use_expansion=False, jobs=_JOBS)


@pytest.fixture(scope="session")
def eval_flaky(bundles) -> EvalRun:
    # every case hits one garbage response first, then the corrective
    # re-query succeeds: exactly two rounds per case
    factory = lambda: FlakyMock(ClosedWorldMock(), failures=1, mode="garbage")
    return run_evaluation(bundles, jobs=_JOBS, backend_factory=factory)


# acceptance tests append one verdict line each; echoed after the run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
