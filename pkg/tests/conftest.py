import pytest

from apbias.apstore import db_create


@pytest.fixture(scope="session")
def db13(tmp_path_factory):
    return db_create(tmp_path_factory.mktemp("db") / "d13.apdb", 13, "naive", threads=1)


@pytest.fixture(scope="session")
def db200(tmp_path_factory):
    return db_create(tmp_path_factory.mktemp("db") / "d200.apdb", 211, "naive", threads=1)


_ACCEPTANCE = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_ACCEPTANCE] = []


@pytest.fixture
def acceptance(request):
    """Record one pass/fail line per acceptance criterion; they are echoed in the summary."""

    def record(number: int, ok: bool, detail: str) -> None:
        line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        request.config.stash[_ACCEPTANCE].append(line)
        print(line)

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
