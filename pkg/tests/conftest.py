import pytest

from hydra_lamp.datamodel import HistoryItem, UserRecord


def make_user(uid, n, query="q0 topic", gold="A"):
    hist = tuple(HistoryItem(f"{uid}-{i}", f"query {i} word{i % 3}", f"ans{i % 2}") for i in range(n))
    return UserRecord(uid, query, gold, hist)


@pytest.fixture
def lamp_lines():
    return [
        '{"user_id": "u1", "input": "article one", "output": "sports", '
        '"profile": [{"id": "a", "input": "old article", "output": "politics"}]}',
        '{"user_id": "u2", "input": "article two", "output": "crime", '
        '"profile": [{"id": "b", "input": "x", "output": "crime"}, {"id": "c", "input": "y", "output": "sports"}]}',
    ]


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
