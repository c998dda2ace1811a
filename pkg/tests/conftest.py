import pytest

_ACCEPTANCE = []


@pytest.fixture(scope="session")
def acceptance_log():
    def record(key, passed, detail=""):
        line = f"criterion {key}: {'PASS' if passed else 'FAIL'}  {detail}".rstrip()
        _ACCEPTANCE.append(line)
        print(line)
    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE:
            terminalreporter.write_line(line)
