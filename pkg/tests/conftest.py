import shutil

import numpy as np
import pytest

from clc.fixture import fixture_dir


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture
def fixture_corpus(tmp_path):
    """A writable copy of the bundled demo corpus."""
    dst = tmp_path / "fixture"
    shutil.copytree(fixture_dir(), dst)
    return dst


# criterion number -> (passed, description); filled by test_acceptance.py
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    if rep.when == "call":
        item.rep_call = rep


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(ACCEPTANCE):
        passed, desc = ACCEPTANCE[num]
        terminalreporter.write_line(f"criterion {num}: {'PASS' if passed else 'FAIL'}  {desc}")
