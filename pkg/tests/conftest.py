"""Shared fixtures: reference programs used across the test suite."""

from __future__ import annotations

import pytest

# Six-statement branching sample: stdin -3 takes the else branch, computes
# y = abs(x) = 3, then raises ValueError on sqrt(-3) at line 6. With the two
# synthetic terminals the CFG has 8 nodes; the raise node is last.
SAMPLE_BRANCHING_SOURCE = """\
x = input_int()
if x > 0:
  y = 4 / 3 * x
else:
  y = abs(x)
z = y + sqrt(x)
"""

# Same computation wrapped in try/except: the ValueError on line 6 lands on
# the except handler and the program completes normally.
SAMPLE_GUARDED_SOURCE = """\
x = input_int()
try:
  if x > 0:
    y = 4 / 3 * x
  else:
    y = abs(x)
  z = y + sqrt(x)
except:
  z = 0
"""


@pytest.fixture
def branching_source() -> str:
    return SAMPLE_BRANCHING_SOURCE


@pytest.fixture
def guarded_source() -> str:
    return SAMPLE_GUARDED_SOURCE
