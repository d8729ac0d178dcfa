"""Hand-checked fixed matrices shared across test modules.

A small five-variable configuration with three shared factors and two
studies.  The per-study products LA1 = LAM5 @ A1 and LA2 = LAM5 @ A2
were computed by hand and are frozen here as oracles; tests verify the
library reproduces them exactly.
"""

import numpy as np

LAM5 = np.array([
    [7.0, 5.0, 6.0],
    [6.0, 6.0, 7.0],
    [6.0, 9.0, 4.0],
    [5.0, 5.0, 6.0],
    [4.0, 6.0, 6.0],
])

A1 = np.array([
    [3.0, 0.0],
    [0.0, 2.0],
    [0.0, 0.0],
])

A2 = np.array([
    [0.0, 0.0],
    [2.0, 0.0],
    [0.0, 4.0],
])

# hand-computed products, frozen
LA1 = np.array([
    [21.0, 10.0],
    [18.0, 12.0],
    [18.0, 18.0],
    [15.0, 10.0],
    [12.0, 12.0],
])

LA2 = np.array([
    [10.0, 24.0],
    [12.0, 28.0],
    [18.0, 16.0],
    [10.0, 24.0],
    [12.0, 24.0],
])

# the same configuration repaired to satisfy the counting condition:
# the shared column space absorbs the overlap direction, leaving one
# specific factor per study
LAM5_REPAIRED = np.column_stack([LAM5, np.array([10.0, 12.0, 18.0, 10.0, 12.0])])
Q_REPAIRED = 4
QS_REPAIRED = (1, 1)
