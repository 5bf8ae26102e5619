"""Shared fixtures and the acceptance-suite reporter.

Each test in test_acceptance.py covers one release criterion; the hook below
prints an explicit PASS/FAIL line per criterion so the suite's verdict is
readable straight off the terminal.
"""

from __future__ import annotations

import json
from pathlib import Path

import pytest

from convsearch.config import default_demonstrations_path
from convsearch.prompting import load_demonstrations

_ACCEPTANCE_RESULTS: list[tuple[str, str]] = []


def pytest_runtest_logreport(report):
    if report.when != "call" or "test_acceptance" not in report.nodeid:
        return
    name = report.nodeid.split("::")[-1]
    status = "PASS" if report.passed else ("FAIL" if report.failed else "SKIP")
    _ACCEPTANCE_RESULTS.append((status, name))
    print(f"\n[acceptance] {status}: {name}", flush=True)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for status, name in _ACCEPTANCE_RESULTS:
        terminalreporter.write_line(f"{status}: {name}")


@pytest.fixture(scope="session")
def demos():
    return load_demonstrations(default_demonstrations_path())


@pytest.fixture()
def write_corpus(tmp_path):
    """Write a deterministic passage corpus JSONL and return its path."""

    def _write(count: int, name: str = "corpus.jsonl", dim_hint: int = 7) -> Path:
        path = tmp_path / name
        with open(path, "w", encoding="utf-8") as handle:
            for i in range(count):
                record = {
                    "passage_id": f"p{i:05d}",
                    "doc_id": f"d{i // 4:05d}",
                    "text": (
                        f"Passage {i} covers subject {i % dim_hint} in depth, "
                        f"mentioning term{i} term{(i * 3) % count if count else 0} "
                        f"and the recurring theme {i % 3}."
                    ),
                }
                handle.write(json.dumps(record) + "\n")
        return path

    return _write


@pytest.fixture()
def write_topics(tmp_path):
    """Write a deterministic sessions JSONL and return its path."""

    def _write(sessions: int, turns: int, name: str = "topics.jsonl") -> Path:
        path = tmp_path / name
        with open(path, "w", encoding="utf-8") as handle:
            for s in range(sessions):
                record = {
                    "session_id": f"sess{s}",
                    "turns": [
                        {
                            "turn_id": t + 1,
                            "query": f"What about aspect {t} of subject {s}?",
                            "response": (
                                f"Canonical answer {s}-{t} describing aspect {t} of subject {s}."
                                if t + 1 < turns
                                else None
                            ),
                        }
                        for t in range(turns)
                    ],
                }
                handle.write(json.dumps(record) + "\n")
        return path

    return _write
