"""Every acceptance criterion at its stated tolerance.

One PASS/FAIL line per criterion is written straight to the terminal, so it
shows up in the log whether or not the check passes.
"""
import pytest

from twofold.acceptance import REGISTRY, format_line, run_one


@pytest.mark.slow
@pytest.mark.parametrize("number", sorted(REGISTRY), ids=lambda n: f"criterion-{n:02d}")
def test_criterion(number, capsys):
    check = run_one(number)
    line = format_line(check)
    with capsys.disabled():
        print("\n" + line)
    assert check.passed, line
