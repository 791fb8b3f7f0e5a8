import pytest

_KEY = pytest.StashKey[list]()


@pytest.fixture
def criterion(request):
    """Record one PASS/FAIL line per acceptance criterion for the terminal summary."""
    store = request.config.stash.setdefault(_KEY, [])

    def record(num, title, ok, detail="", runtime=None, budget=None):
        timing = "" if runtime is None else f" [{runtime:.2f}s / {budget:g}s]"
        line = f"{'PASS' if ok else 'FAIL'} criterion {num:2d}: {title}{timing} {detail}".rstrip()
        store.append((num, line))
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
