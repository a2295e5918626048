import pytest

_LINES = pytest.StashKey[list]()


class CriterionLog:
    def __init__(self, lines):
        self.lines = lines

    def record(self, number, title, passed, detail, elapsed=None):
        status = "PASS" if passed else "FAIL"
        timing = "" if elapsed is None else f" [{elapsed:.2f}s]"
        self.lines.append(f"criterion {number:>2} {status}  {title}: {detail}{timing}")

    def skip(self, number, title, reason):
        self.lines.append(f"criterion {number:>2} SKIP  {title}: {reason}")


def pytest_configure(config):
    config.stash[_LINES] = []


@pytest.fixture
def criteria(request):
    return CriterionLog(request.config.stash[_LINES])


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_LINES, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
