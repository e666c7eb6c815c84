from __future__ import annotations

import pytest
from hypothesis import given
from hypothesis import strategies as st

from cicd_triage.ingest import (
    FAILED,
    SUCCESS,
    RegexTokenizer,
    count_tokens,
    from_lines,
    load_log,
)

tok = RegexTokenizer()


def test_tokenizer_reference_example():
    # error / : / build / failed
    assert tok.count("error: build failed") == 4
    assert tok.split("error: build failed") == ["error", ":", "build", "failed"]


def test_tokenizer_punctuation_is_one_token_each():
    assert tok.split("a=b;c") == ["a", "=", "b", ";", "c"]


def test_tokenizer_whitespace_is_free():
    assert tok.count("") == 0
    assert tok.count(" \t  \n ") == 0
    assert tok.count("a b") == tok.count("a\t\tb") == tok.count("  a   b  ")


def test_tokenizer_runs_of_alphanumerics():
    assert tok.split("exit_code=137") == ["exit", "_", "code", "=", "137"]


@given(st.text(max_size=200))
def test_count_never_negative_and_matches_split(s):
    assert count_tokens(s) == len(tok.split(s)) >= 0


@given(st.text(max_size=100), st.text(max_size=100))
def test_count_subadditive_under_concatenation(a, b):
    # gluing strings can merge boundary tokens, never create extras
    assert tok.count(a + b) <= tok.count(a) + tok.count(b)


@given(st.text(alphabet="ab <>#\n", max_size=120))
def test_count_invariant_to_surrounding_whitespace(s):
    assert tok.count(s) == tok.count("  " + s + "\t")


def test_from_lines_numbers_are_one_based():
    log = from_lines(["first", "second"], run_id="r", task_key="t")
    assert len(log) == 2
    assert log.text_of(1) == "first"
    assert log.text_of(2) == "second"
    with pytest.raises(IndexError):
        log.text_of(3)


def test_load_log_round_trips_lines(tmp_path):
    p = tmp_path / "build.log"
    p.write_text("one\ntwo\nthree\n", encoding="utf-8")
    log = load_log(p, run_id="build", task_key="demo")
    assert log.texts() == ["one", "two", "three"]
    assert log.outcome == FAILED
    ok = load_log(p, run_id="build2", task_key="demo", outcome=SUCCESS)
    assert ok.outcome == SUCCESS


def test_load_log_without_trailing_newline(tmp_path):
    p = tmp_path / "a.log"
    p.write_bytes(b"alpha\nbeta")
    assert load_log(p, run_id="a", task_key="t").texts() == ["alpha", "beta"]


def test_load_log_empty_file(tmp_path):
    p = tmp_path / "empty.log"
    p.write_bytes(b"")
    assert len(load_log(p, run_id="e", task_key="t")) == 0


def test_load_log_invalid_utf8_is_replaced(tmp_path):
    p = tmp_path / "bin.log"
    p.write_bytes(b"ok\n\xff\xfe broken\n")
    log = load_log(p, run_id="b", task_key="t")
    assert len(log) == 2
    assert "broken" in log.text_of(2)
