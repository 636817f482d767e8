"""The nine acceptance criteria at their stated tolerances.

Each test prints one pass/fail line (run with -s to see them live; the
lines are also written to the captured output on failure).
"""
import pytest

from levybellman import acceptance

CRITERIA = {fn.__name__: fn for fn in acceptance.CRITERIA}


@pytest.mark.parametrize("number,name", list(enumerate(CRITERIA, start=1)))
def test_criterion(number, name, capsys):
    res = CRITERIA[name]()
    with capsys.disabled():
        print("\n" + res.line())
    assert res.number == number
    assert res.passed, res.line()
