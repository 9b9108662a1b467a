"""Exact Wasserstein distances between uniform empirical measures of equal size.

For two n-point clouds with weights 1/n an optimal coupling can be taken to be
a permutation, so W_p reduces to a linear assignment problem on the matrix of
p-th powers of pairwise distances.
"""
from __future__ import annotations

import itertools
import math

import numpy as np
from scipy.optimize import linear_sum_assignment

from .dynamics import as_cloud
from .errors import AttnLabError, DimensionMismatch, SizeMismatch, TooLarge

BRUTEFORCE_MAX_N = 9


def cost_matrix(a, b, p: float = 2.0) -> np.ndarray:
    x, y = _pair(a, b)
    if p < 1:
        raise AttnLabError("p must be >= 1")
    dist = np.linalg.norm(x[:, None, :] - y[None, :, :], axis=2)
    return dist**p


def _pair(a, b):
    x, y = as_cloud(a), as_cloud(b)
    if x.shape[0] != y.shape[0]:
        raise SizeMismatch(f"clouds have {x.shape[0]} and {y.shape[0]} points")
    if x.shape[1] != y.shape[1]:
        raise DimensionMismatch(f"clouds have dimensions {x.shape[1]} and {y.shape[1]}")
    return x, y


def _permutation_cost(rows: list, perm) -> float:
    # correctly rounded sum: independent of pairing order, so equal optimal
    # values are bit-identical and W(a, b) == W(b, a) exactly
    return math.fsum(rows[i][j] for i, j in enumerate(perm)) / len(rows)


def optimal_assignment(a, b, p: float = 2.0) -> tuple[np.ndarray, float]:
    """Optimal permutation ``sigma`` and its mean cost (1/n) sum |x_i - y_sigma(i)|^p."""
    c = cost_matrix(a, b, p)
    rows, cols = linear_sum_assignment(c)
    perm = cols[np.argsort(rows)]
    return perm, _permutation_cost(c.tolist(), perm)


def wasserstein(a, b, p: float = 2.0) -> float:
    _, cost = optimal_assignment(a, b, p)
    return float(cost ** (1.0 / p))


def wasserstein_bruteforce(a, b, p: float = 2.0) -> float:
    """Same quantity by enumerating all n! permutations (n <= 9)."""
    c = cost_matrix(a, b, p)
    n = c.shape[0]
    if n > BRUTEFORCE_MAX_N:
        raise TooLarge(f"brute force limited to n <= {BRUTEFORCE_MAX_N}, got {n}")
    rows = c.tolist()
    best = min(_permutation_cost(rows, perm) for perm in itertools.permutations(range(n)))
    return float(best ** (1.0 / p))


def wasserstein_series(traj_a, traj_b, p: float = 2.0) -> np.ndarray:
    """W_p between matching snapshots of two trajectories on the same time grid."""
    if traj_a.times.shape != traj_b.times.shape or not np.allclose(traj_a.times, traj_b.times, atol=1e-12):
        raise AttnLabError("trajectories must share their time grid")
    return np.array([wasserstein(x, y, p) for x, y in zip(traj_a.snapshots, traj_b.snapshots)])
