import numpy as np
import pytest

from support import ACCEPTANCE


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for k in range(1, 13):
        status, title, detail = ACCEPTANCE.get(k, ("NOT RUN", "", ""))
        line = f"criterion {k:2d} {status}: {title}"
        if detail:
            line += f" ({detail})"
        terminalreporter.write_line(line)
