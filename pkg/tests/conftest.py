import math
from fractions import Fraction

import pytest


def mms_exact(lam, mu, s):
    """Textbook M/M/s in exact rational arithmetic: (P0, C, Wq)."""
    lam, mu = Fraction(lam), Fraction(mu)
    a = lam / mu
    rho = a / s
    head = sum(a ** z / math.factorial(z) for z in range(s))
    tail = a ** s / math.factorial(s) / (1 - rho)
    p0 = 1 / (head + tail)
    c = tail * p0
    return p0, c, c / (s * mu - lam)


@pytest.fixture
def mms_oracle():
    return mms_exact


_ACCEPTANCE: dict[int, tuple[bool, str]] = {}


@pytest.fixture
def acceptance():
    """Record one pass/fail line per acceptance criterion; printed in the terminal summary."""
    def record(number: int, ok: bool, detail: str) -> None:
        _ACCEPTANCE[number] = (bool(ok), detail)
    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        ok, detail = _ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}")
