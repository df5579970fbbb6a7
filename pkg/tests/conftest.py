"""Shared fixtures and the acceptance-criterion reporter.

Acceptance tests register one line per criterion through the `criterion`
fixture; a terminal-summary hook prints every registered PASS/FAIL line at
the end of the session so the gate status is visible in one block.
"""

from __future__ import annotations

import numpy as np
import pytest
import torch

_CRITERIA: list[tuple[str, bool, str]] = []


class CriterionRecorder:
    def check(self, name: str, passed: bool, detail: str = "") -> None:
        _CRITERIA.append((name, bool(passed), detail))
        assert passed, f"acceptance criterion failed: {name} ({detail})"


@pytest.fixture
def criterion() -> CriterionRecorder:
    return CriterionRecorder()


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _CRITERIA:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for name, passed, detail in _CRITERIA:
        status = "PASS" if passed else "FAIL"
        line = f"[{status}] {name}"
        if detail:
            line += f" -- {detail}"
        terminalreporter.write_line(line)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(0)


@pytest.fixture(autouse=True)
def _torch_seed():
    torch.manual_seed(0)
    yield
