import pytest

# criterion id -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE = {}


def record(cid: int, title: str, passed: bool, detail: str) -> None:
    ACCEPTANCE[cid] = (title, bool(passed), detail)
    print(f"[{'PASS' if passed else 'FAIL'}] criterion {cid}: {title} ({detail})")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for cid in sorted(ACCEPTANCE):
        title, ok, detail = ACCEPTANCE[cid]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {cid:>2}. {title}: {detail}")


@pytest.fixture
def acceptance():
    return record
