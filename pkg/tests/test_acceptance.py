"""Acceptance criteria A1-A9, each at its stated tolerance and runtime limit.

The terminal summary lists one PASS/FAIL line per criterion.
"""

import pytest

from conftest import ACCEPTANCE_LINES
from rwre_lab.acceptance import CHECKS, summary_line


@pytest.mark.parametrize("cid", list(CHECKS))
def test_acceptance(cid):
    res = CHECKS[cid]()
    line = summary_line(res)
    print(line)
    ACCEPTANCE_LINES.append(line)
    assert res["values_ok"], line
    assert res["passed"], line
