import pytest

ACCEPTANCE_LINES: list[str] = []


def pytest_collection_modifyitems(session, config, items):
    # acceptance checks (transition conformance in particular) want to see the whole suite first
    items.sort(key=lambda it: it.nodeid.split("::")[0].endswith("test_acceptance.py"))


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
        terminalreporter.write_line(line)


@pytest.fixture
def rng():
    import numpy as np
    return np.random.default_rng(12345)
