import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from ctl_lab.data import GaussianDomainSpec, LabeledDomainSample, generate_evolving_sequence  # noqa: E402


def make_sample(x, y, domain_id="A", stamp=0, labeled=None):
    x = np.asarray(x, dtype=float).reshape(-1, 2)
    y = np.asarray(y, dtype=np.int64)
    lab = np.ones(len(y), dtype=bool) if labeled is None else np.asarray(labeled, dtype=bool)
    return LabeledDomainSample(domain_id, stamp, x, y, lab)


@pytest.fixture(scope="session")
def benchmark():
    """Source plus T1..T8 on the default seed."""
    return generate_evolving_sequence(8, GaussianDomainSpec(seed=42), include_source=True)


_CRITERIA: dict = {}


@pytest.fixture
def criterion():
    """``criterion(n, ok, detail)`` stores one acceptance line and returns ``ok``."""
    def record(number, ok, detail):
        _CRITERIA[number] = (bool(ok), detail)
        return bool(ok)
    return record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        ok, detail = _CRITERIA[number]
        terminalreporter.write_line(f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}")
