import pytest

LINES = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[LINES] = []


@pytest.fixture
def acceptance_line(request):
    """Record one acceptance verdict line; all lines are repeated in the terminal summary."""
    def record(line):
        print(line)
        request.config.stash[LINES].append(line)
    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(LINES, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
