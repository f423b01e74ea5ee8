import numpy as np
import pytest

from risradar.channel import build_channels
from risradar.scenario import Scenario


@pytest.fixture(scope="session")
def reference():
    return Scenario.reference()


@pytest.fixture(scope="session")
def channels(reference):
    return build_channels(reference)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# one verdict line per acceptance criterion, printed after the run
_VERDICTS: dict[str, str] = {}


@pytest.fixture
def verdict():
    def record(key, ok: bool, detail: str) -> bool:
        _VERDICTS[str(key)] = f"criterion {key}: {'PASS' if ok else 'FAIL'}  {detail}"
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    order = sorted(_VERDICTS, key=lambda k: (int(k.split()[0].rstrip("abcdefghijklmnopqrstuvwxyz")), k))
    for k in order:
        terminalreporter.write_line(_VERDICTS[k])
