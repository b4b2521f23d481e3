"""Empirical transport distances between equal-size point clouds.

``wasserstein_empirical(P, Q, p)`` matches the two clouds by an exact
minimum-cost assignment and returns ``(mean of matched distances**p)**(1/p)``
— i.e. the W_p distance between the two empirical measures with uniform
weights.  In one dimension the optimal matching is the sorted order, which
is used as a fast path; in higher dimension the Hungarian assignment on the
full cost matrix is exact but quadratic in memory, so the cloud size is
capped rather than silently approximated.
"""

from __future__ import annotations

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import EmptySampleError, SizeMismatchError, TooLargeError

MAX_ASSIGNMENT_SIZE = 2048


def _clouds(P, Q) -> tuple[np.ndarray, np.ndarray]:
    P = np.atleast_2d(np.asarray(P, dtype=float))
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    if P.ndim != 2 or Q.ndim != 2 or P.shape[1] != Q.shape[1]:
        raise SizeMismatchError("point clouds must be (m, d) with equal d")
    if P.shape[0] != Q.shape[0]:
        raise SizeMismatchError(
            f"need equally many points, got {P.shape[0]} vs {Q.shape[0]}")
    if P.shape[0] == 0:
        raise EmptySampleError("empty point clouds have no distance")
    if P.shape[0] > MAX_ASSIGNMENT_SIZE:
        raise TooLargeError(
            f"{P.shape[0]} points exceeds the exact-assignment cap "
            f"{MAX_ASSIGNMENT_SIZE}")
    return P, Q


def wasserstein_empirical(P, Q, p: int = 2) -> float:
    """Exact W_p between two m-point empirical measures (p in {1, 2})."""
    if p not in (1, 2):
        raise ValueError("only p = 1 and p = 2 are supported")
    P, Q = _clouds(P, Q)
    if P.shape[1] == 1:
        dists = np.abs(np.sort(P[:, 0]) - np.sort(Q[:, 0]))
    else:
        diff = P[:, None, :] - Q[None, :, :]
        cost = np.einsum("ijk,ijk->ij", diff, diff)
        rows, cols = linear_sum_assignment(cost if p == 2
                                           else np.sqrt(cost))
        dists = np.sqrt(cost[rows, cols])
    return float(np.mean(dists ** p) ** (1.0 / p))


def wasserstein2_empirical(P, Q) -> float:
    """W_2 between two equal-size clouds (sorted match in 1-D, exact
    assignment otherwise)."""
    return wasserstein_empirical(P, Q, p=2)
