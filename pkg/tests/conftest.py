import pytest
import torch

torch.set_num_threads(1)


@pytest.fixture
def drop_doc():
    return {
        "p1": {
            "passage": "In 2010 there were 7,791 people, 3,155 households and 12 Germans.",
            "qa_pairs": [
                {"question": "How many people were there?", "query_id": "q1",
                 "answer": {"number": "7791", "spans": [], "date": {"day": "", "month": "", "year": ""}}},
                {"question": "Which is bigger: Germans or households?", "query_id": "q2",
                 "answer": {"number": "", "spans": ["households"]},
                 "validated_answers": [{"number": "", "spans": ["households"]}]},
            ],
        },
        "p2": {
            "passage": "The treaty was signed on 3 May 1815.",
            "qa_pairs": [
                {"question": "When was the treaty signed?", "query_id": "q3",
                 "answer": {"number": "", "spans": [], "date": {"day": "3", "month": "May", "year": "1815"}}},
                {"question": "How many treaties were signed?", "query_id": "q4",
                 "answer": {"number": "1", "spans": []}},
            ],
        },
    }


_ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def acceptance():
    """Record one pass/fail line per acceptance criterion for the run summary."""
    def record(number: int, title: str, passed: bool, detail: str = "") -> bool:
        status = "PASS" if passed else "FAIL"
        _ACCEPTANCE_LINES.append(f"criterion {number:2d} [{status}] {title}" + (f" -- {detail}" if detail else ""))
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
