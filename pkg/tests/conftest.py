"""Shared fixtures: the hand-checked 4x4 instance and small helpers."""

import pytest

from seval_jssp.instance import JsspInstance

# Four jobs, four machines, 12 operations. Known facts (derived by
# exhaustive enumeration, frozen):
#   initial feasible pairs: {(j0,m3), (j1,m3), (j2,m2), (j3,m1)}
#   initial conflict-free subset count: 11
#   optimal makespan: 22
REF4X4_JOBS = (
    ((3, 5), (1, 6), (0, 3), (2, 2)),
    ((3, 8), (0, 3)),
    ((2, 3), (0, 4), (3, 5)),
    ((1, 6), (3, 4), (2, 5)),
)
REF4X4_OPTIMAL_MAKESPAN = 22

REF4X4_TEXT = """\
# four jobs, four machines
4 4
3 5 1 6 0 3 2 2
3 8 0 3
2 3 0 4 3 5
1 6 3 4 2 5
"""


@pytest.fixture
def ref4x4() -> JsspInstance:
    return JsspInstance(4, 4, REF4X4_JOBS, name="ref4x4")


@pytest.fixture
def one_by_one() -> JsspInstance:
    return JsspInstance(1, 1, (((0, 5),),), name="one")
