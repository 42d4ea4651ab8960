import pytest

_criteria = []


@pytest.fixture(scope="session")
def criterion_recorder():
    def record(name, ok, detail=""):
        _criteria.append((name, bool(ok), detail))

    return record


def pytest_terminal_summary(terminalreporter):
    if _criteria:
        terminalreporter.write_sep("-", "acceptance criteria")
        for name, ok, detail in _criteria:
            status = "PASS" if ok else "FAIL"
            terminalreporter.write_line(f"{status}  {name}  {detail}")
