import pytest

_RESULTS = pytest.StashKey[dict]()


def pytest_configure(config):
    config.stash[_RESULTS] = {}


@pytest.fixture
def criterion(request):
    """Record one acceptance verdict; the test still asserts it."""

    def record(number: int, title: str, ok: bool, detail: str) -> bool:
        request.config.stash[_RESULTS][number] = (title, bool(ok), detail)
        return bool(ok)

    return record


def pytest_terminal_summary(terminalreporter, config):
    results = config.stash[_RESULTS]
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number in range(1, 14):
        if number not in results:
            if any(n > 0 for n in results):
                terminalreporter.write_line(f"[FAIL] {number:2d} (no result recorded)")
            continue
        title, ok, detail = results[number]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {number:2d} {title}: {detail}")
