"""Numeric tolerances shared by every module.

Kept in one place so the evaluation, greedy and oracle code agree on what
"equal" means.
"""

# row sums of transition matrices
ROW_SUM = 1e-12
# residual of the hitting-time / policy-evaluation linear systems
RESIDUAL = 1e-9
# comparison of solved hitting times, scaled by (1 + |phi|)
COMPARE = 1e-9
# Eq. reconstruction of the taboo-chain decomposition
DECOMPOSITION = 1e-8
# stationary distribution residual
STATIONARY = 1e-12
# value iteration stopping threshold (sup-norm displacement)
VI_EPSILON = 1e-10

# cost charged for a zapping (restart) step
ZAP_COST = 1.0


def close(a: float, b: float, tol: float = COMPARE) -> bool:
    return abs(a - b) <= tol * (1.0 + max(abs(a), abs(b)))
