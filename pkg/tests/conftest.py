import warnings

import pytest

from ossbb.model import reference_case

# numba may already be imported by a third-party pytest plugin, so the worker
# count cannot be set here; thread-count invariance is checked in subprocesses
warnings.filterwarnings("ignore", message="The TBB threading layer")


@pytest.fixture(scope="session")
def t1():
    """(model, option, S0) of the reference barrier example."""
    return reference_case()


_CRITERIA = pytest.StashKey[list]()


@pytest.fixture
def criterion(request):
    """Record one pass/fail line for the acceptance summary and return the verdict."""
    lines = request.config.stash.setdefault(_CRITERIA, [])

    def record(number: int, title: str, ok: bool, detail: str) -> bool:
        line = f"criterion {number} ({title}): {'PASS' if ok else 'FAIL'}  {detail}"
        lines.append(line)
        tr = request.config.pluginmanager.get_plugin("terminalreporter")
        if tr is not None:
            tr.write_line("")
            tr.write_line(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_CRITERIA, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda l: int(l.split()[1])):
            terminalreporter.write_line(line)
