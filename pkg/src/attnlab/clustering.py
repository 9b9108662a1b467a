"""delta-approximate clustering: tubes around reference centers, characteristic
times, single-linkage cluster extraction and limit-geometry checks."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .dynamics import AttentionTriple, Trajectory, as_cloud
from .errors import AttnLabError, EmptyCenters, ModeMismatch, NoDualBasis


def _centers(centers, d: int | None = None) -> np.ndarray:
    c = np.array(centers, dtype=float)
    if c.size == 0:
        raise EmptyCenters("at least one center is required")
    c = c.reshape(-1, c.shape[-1]) if c.ndim > 1 else c.reshape(1, -1)
    if d is not None and c.shape[1] != d:
        raise AttnLabError(f"centers have dimension {c.shape[1]}, expected {d}")
    return c


def distance_to_centers(cloud, centers) -> np.ndarray:
    """dist(z_i, {c_1..c_k}) for every token."""
    z = as_cloud(cloud)
    c = _centers(centers, z.shape[1])
    return np.min(np.linalg.norm(z[:, None, :] - c[None, :, :], axis=2), axis=1)


def s_delta(cloud, centers, delta: float) -> set[int]:
    if not delta > 0:
        raise AttnLabError("delta must be positive")
    dist = distance_to_centers(cloud, centers)
    return {int(i) for i in np.flatnonzero(dist <= delta)}


def extract_clusters(cloud, merge_radius: float) -> tuple[np.ndarray, np.ndarray]:
    """Single-linkage merge at ``merge_radius``.

    Returns ``(centers, assignment)``: centers are cluster means, labelled in
    order of each cluster's first token.
    """
    if not merge_radius > 0:
        raise AttnLabError("merge_radius must be positive")
    z = as_cloud(cloud)
    n = z.shape[0]
    parent = list(range(n))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    dist = np.linalg.norm(z[:, None, :] - z[None, :, :], axis=2)
    for i, j in zip(*np.nonzero(np.triu(dist <= merge_radius, k=1))):
        ri, rj = find(int(i)), find(int(j))
        if ri != rj:
            parent[max(ri, rj)] = min(ri, rj)

    labels: dict[int, int] = {}
    assignment = np.empty(n, dtype=int)
    for i in range(n):
        assignment[i] = labels.setdefault(find(i), len(labels))
    centers = np.array([z[assignment == k].mean(axis=0) for k in range(len(labels))])
    return centers, assignment


@dataclass
class ClusterReport:
    centers: np.ndarray
    assignment: np.ndarray | None
    delta: float
    T_delta: float | None
    T_star: float | None
    times: np.ndarray = field(repr=False)
    max_dist_series: np.ndarray = field(repr=False)

    def to_dict(self) -> dict:
        return {
            "delta": self.delta,
            "T_delta": self.T_delta,
            "T_star": self.T_star,
            "centers": np.asarray(self.centers).tolist(),
            "assignment": None if self.assignment is None else [int(a) for a in self.assignment],
            "max_dist_series": [[float(t), float(d)] for t, d in zip(self.times, self.max_dist_series)],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def detect_times(traj: Trajectory, centers, delta: float, exit_factor: float = 1.0) -> ClusterReport:
    """T_delta = first recorded t with d(t) <= delta; T* = first later t with
    d(t) >= exit_factor * delta, where d(t) = max_i dist(z_i(t), centers).

    ``exit_factor=2`` gives the 2-delta tube variant. Absent times are None.
    """
    if traj.mode != "rescaled":
        raise ModeMismatch("detect_times expects a rescaled trajectory")
    if not delta > 0:
        raise AttnLabError("delta must be positive")
    c = _centers(centers, traj.d)
    series = np.array([distance_to_centers(s, c).max() for s in traj.snapshots])
    inside = np.flatnonzero(series <= delta)
    t_delta = t_star = None
    if inside.size:
        k0 = int(inside[0])
        t_delta = float(traj.times[k0])
        later = np.flatnonzero(series[k0:] >= exit_factor * delta)
        if later.size:
            t_star = float(traj.times[k0 + int(later[0])])
    return ClusterReport(
        centers=c, assignment=None, delta=float(delta), T_delta=t_delta, T_star=t_star,
        times=traj.times.copy(), max_dist_series=series,
    )


def reference_centers(traj: Trajectory, t_ref: float, merge_radius: float) -> tuple[np.ndarray, np.ndarray]:
    """Clusters of the snapshot recorded at ``t_ref``."""
    return extract_clusters(traj.at(t_ref), merge_radius)


def _dual_first(triple: AttentionTriple) -> np.ndarray:
    spec = triple.v_spectrum
    if spec.dual_basis is None:
        raise NoDualBasis("V has no real, well-conditioned eigenbasis")
    return spec.dual_basis[0]


@dataclass
class LimitPattern:
    values: np.ndarray
    groups: list[float]
    a: float | None
    zero: bool
    c: float | None
    fits: bool

    def to_dict(self) -> dict:
        return {
            "values": [float(v) for v in self.values],
            "groups": self.groups,
            "a": self.a,
            "zero_group": self.zero,
            "c": self.c,
            "fits": self.fits,
        }


def fit_limit_pattern(values, tol: float) -> LimitPattern:
    """Group 1-D values (chain gaps <= tol) and test the {-a, 0, c} shape.

    Fits when there is at most one negative, one zero (|g| <= tol) and one
    positive group.
    """
    v = np.sort(np.asarray(values, dtype=float))
    groups: list[list[float]] = [[v[0]]]
    for x in v[1:]:
        if x - groups[-1][-1] <= tol:
            groups[-1].append(x)
        else:
            groups.append([x])
    means = [float(np.mean(g)) for g in groups]
    neg = [m for m in means if m < -tol]
    pos = [m for m in means if m > tol]
    zero = [m for m in means if abs(m) <= tol]
    fits = len(neg) <= 1 and len(pos) <= 1 and len(zero) <= 1
    return LimitPattern(
        values=np.asarray(values, dtype=float), groups=means,
        a=-neg[0] if len(neg) == 1 else None, zero=bool(zero),
        c=pos[0] if len(pos) == 1 else None, fits=fits,
    )


def check_phi1_limit_pattern(traj: Trajectory, triple: AttentionTriple, tol: float) -> LimitPattern:
    phi1 = _dual_first(triple)
    if abs(triple.v_spectrum.eigenvalues[0].imag) > 0:
        raise NoDualBasis("leading eigenvalue of V is not real")
    return fit_limit_pattern(traj.final @ phi1, tol)


@dataclass(frozen=True)
class GoodClustering:
    C_min: float
    D: float
    passes: bool
    # |phi*_1(c_i)| >= delta for every center (stronger variant used in the T* argument)
    C_min_at_least_delta: bool


def check_good_clustering(centers, triple: AttentionTriple, delta: float) -> GoodClustering:
    """C_min = min |phi*_1(c_i)|, D = min_{i != j} |phi*_1(c_i) - phi*_1(c_j)|.

    ``passes`` only needs C_min > 0 and D > 0 (D is +inf for a single center);
    the comparison of C_min with ``delta`` is reported separately.
    """
    phi1 = _dual_first(triple)
    proj = _centers(centers, triple.d) @ phi1
    c_min = float(np.min(np.abs(proj)))
    if proj.size > 1:
        gaps = np.abs(proj[:, None] - proj[None, :])[~np.eye(proj.size, dtype=bool)]
        d_min = float(gaps.min())
    else:
        d_min = math.inf
    return GoodClustering(
        C_min=c_min, D=d_min, passes=c_min > 0 and d_min > 0, C_min_at_least_delta=c_min >= delta
    )
