import pytest

from ljmeso.kernel import LJParams, build_mollified_kernel, mollifier_spec


@pytest.fixture(scope="session")
def lj2():
    return LJParams(2.0, 1.0, 0.8, 0.4, 2)


@pytest.fixture(scope="session")
def lj3():
    return LJParams(0.005, 1.0, 0.8, 0.4, 3)


@pytest.fixture(scope="session")
def table2(lj2):
    return build_mollified_kernel(lj2, mollifier_spec(2), 64, 0.3)


@pytest.fixture(scope="session")
def table3(lj3):
    return build_mollified_kernel(lj3, mollifier_spec(3), 512, 0.15)


_ACCEPTANCE = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_ACCEPTANCE] = []


@pytest.fixture()
def criterion(request):
    """Record one acceptance line, print it, and fail the test when it does not hold."""

    def record(number: int, title: str, ok: bool, detail: str) -> None:
        line = f"criterion {number:>2} {'PASS' if ok else 'FAIL'}  {title}: {detail}"
        request.config.stash[_ACCEPTANCE].append((number, line))
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
