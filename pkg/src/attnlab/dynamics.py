"""Self-attention particle dynamics and their RK4 integration.

Two vector fields are provided:

* raw:       x_i' = sum_j P_ij V x_j,  P_ij = softmax_j <Q x_i, K x_j>
* rescaled:  z_i' = sum_j P~_ij(t) V (z_j - z_i),  with logits taken at e^{tV} z

Token clouds are ``(n, d)`` float arrays. All field evaluations sort the
tokens into a canonical order first, which makes them exactly permutation
equivariant in floating point.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import AttnLabError, DimensionMismatch, ModeMismatch, NonFiniteState
from .linalg import Spectrum, as_matrix, eig, mat_exp, op_norm, scaled_exp

DEFAULT_STEP = 0.1
MODES = ("raw", "rescaled")


def as_cloud(points, d: int | None = None) -> np.ndarray:
    x = np.array(points, dtype=float)
    if x.ndim == 1:
        x = x.reshape(-1, 1) if d == 1 else x.reshape(1, -1)
    if x.ndim != 2 or x.shape[0] < 1 or x.shape[1] < 1:
        raise AttnLabError(f"token cloud must be a non-empty (n, d) array, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise AttnLabError("token coordinates must be finite")
    if d is not None and x.shape[1] != d:
        raise DimensionMismatch(f"cloud has dimension {x.shape[1]}, expected {d}")
    return x


@dataclass(frozen=True, eq=False)
class AttentionTriple:
    """Query/Key/Value matrices with A = K^T Q and the spectrum of V cached."""

    Q: np.ndarray
    K: np.ndarray
    V: np.ndarray
    A: np.ndarray = field(init=False, repr=False)
    v_spectrum: Spectrum = field(init=False, repr=False)

    def __post_init__(self):
        q, k, v = (as_matrix(m, square=True) for m in (self.Q, self.K, self.V))
        if not q.shape == k.shape == v.shape:
            raise DimensionMismatch(f"Q, K, V shapes differ: {q.shape}, {k.shape}, {v.shape}")
        for name, m in (("Q", q), ("K", k), ("V", v)):
            m.setflags(write=False)
            object.__setattr__(self, name, m)
        a = k.T @ q
        a.setflags(write=False)
        object.__setattr__(self, "A", a)
        object.__setattr__(self, "v_spectrum", eig(v))

    @classmethod
    def identity(cls, d: int) -> "AttentionTriple":
        return cls(np.eye(d), np.eye(d), np.eye(d))

    @property
    def d(self) -> int:
        return self.V.shape[0]

    def replace(self, Q=None, K=None, V=None) -> "AttentionTriple":
        return AttentionTriple(
            self.Q if Q is None else Q,
            self.K if K is None else K,
            self.V if V is None else V,
        )

    def to_dict(self) -> dict:
        return {"Q": self.Q.tolist(), "K": self.K.tolist(), "V": self.V.tolist()}


def _check(triple: AttentionTriple, cloud) -> np.ndarray:
    return as_cloud(cloud, triple.d)


def _canonical_order(x: np.ndarray) -> np.ndarray:
    return np.lexsort(x.T[::-1])


def _softmax_rows(logits: np.ndarray, log_gain: float = 0.0) -> np.ndarray:
    """Row softmax of ``exp(log_gain) * logits`` with row-max stabilization.

    The gain is applied after the max subtraction, so it never overflows on
    its own; entries pushed below -inf simply get weight 0.
    """
    diff = logits - logits.max(axis=1, keepdims=True)
    if log_gain < 700.0:
        scaled = diff * np.exp(log_gain)
    else:
        with np.errstate(divide="ignore", over="ignore"):
            scaled = np.where(diff < 0, -np.exp(np.log(np.abs(diff)) + log_gain), 0.0)
    w = np.exp(scaled)
    return w / w.sum(axis=1, keepdims=True)


def _weights_sorted(triple: AttentionTriple, x: np.ndarray, log_gain: float) -> np.ndarray:
    return _softmax_rows((x @ triple.Q.T) @ (x @ triple.K.T).T, log_gain)


def _unsort_square(p: np.ndarray, order: np.ndarray) -> np.ndarray:
    inv = np.empty_like(order)
    inv[order] = np.arange(order.size)
    return p[np.ix_(inv, inv)]


def attention_weights_raw(triple: AttentionTriple, cloud) -> np.ndarray:
    x = _check(triple, cloud)
    order = _canonical_order(x)
    with np.errstate(over="ignore", invalid="ignore"):
        p = _weights_sorted(triple, x[order], 0.0)
    return _unsort_square(p, order)


def _rescaled_inputs(triple, z, t, exp_cache=None):
    if t < 0:
        raise AttnLabError("time must be non-negative")
    if exp_cache is not None and t in exp_cache:
        log_scale, e = exp_cache[t]
    else:
        log_scale, e = scaled_exp(triple.V, t, triple.v_spectrum)
        if exp_cache is not None:
            exp_cache[t] = (log_scale, e)
    return z @ e.T, 2.0 * log_scale


def attention_weights_rescaled(triple: AttentionTriple, cloud, t: float) -> np.ndarray:
    z = _check(triple, cloud)
    order = _canonical_order(z)
    y, log_gain = _rescaled_inputs(triple, z[order], t)
    with np.errstate(over="ignore", invalid="ignore"):
        p = _weights_sorted(triple, y, log_gain)
    return _unsort_square(p, order)


def velocity_raw(triple: AttentionTriple, cloud) -> np.ndarray:
    x = _check(triple, cloud)
    return _velocity_raw(triple, x)


def _velocity_raw(triple, x):
    order = _canonical_order(x)
    xs = x[order]
    with np.errstate(over="ignore", invalid="ignore"):
        p = _weights_sorted(triple, xs, 0.0)
        v = p @ (xs @ triple.V.T)
    out = np.empty_like(v)
    out[order] = v
    return out


def velocity_rescaled(triple: AttentionTriple, cloud, t: float) -> np.ndarray:
    z = _check(triple, cloud)
    return _velocity_rescaled(triple, z, t)


def _velocity_rescaled(triple, z, t, exp_cache=None):
    order = _canonical_order(z)
    zs = z[order]
    y, log_gain = _rescaled_inputs(triple, zs, t, exp_cache)
    with np.errstate(over="ignore", invalid="ignore"):
        p = _weights_sorted(triple, y, log_gain)
        v = (p @ zs - p.sum(axis=1, keepdims=True) * zs) @ triple.V.T
    out = np.empty_like(v)
    out[order] = v
    return out


@dataclass(frozen=True, eq=False)
class Trajectory:
    mode: str
    step: float
    times: np.ndarray
    snapshots: np.ndarray  # (len(times), n, d)

    @property
    def n(self) -> int:
        return self.snapshots.shape[1]

    @property
    def d(self) -> int:
        return self.snapshots.shape[2]

    @property
    def final(self) -> np.ndarray:
        return self.snapshots[-1]

    def at(self, t: float) -> np.ndarray:
        """Snapshot recorded closest to time ``t``."""
        return self.snapshots[int(np.argmin(np.abs(self.times - t)))]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "token_index"] + [f"coord_{k}" for k in range(self.d)])
            for t, snap in zip(self.times, self.snapshots):
                for i, row in enumerate(snap):
                    w.writerow([repr(float(t)), i] + [repr(float(c)) for c in row])


def read_trajectory_csv(path, mode: str = "rescaled") -> Trajectory:
    rows = list(csv.reader(Path(path).read_text(encoding="utf-8").splitlines()))
    if not rows or rows[0][:2] != ["t", "token_index"]:
        raise AttnLabError(f"{path}: missing trajectory header")
    data = np.array([[float(c) for c in r] for r in rows[1:] if r], dtype=float)
    times = np.unique(data[:, 0])
    n = int(data[:, 1].max()) + 1
    if data.shape[0] != times.size * n:
        raise AttnLabError(f"{path}: every recorded time must list all {n} tokens")
    snaps = np.empty((times.size, n, data.shape[1] - 2))
    t_index = np.searchsorted(times, data[:, 0])
    snaps[t_index, data[:, 1].astype(int)] = data[:, 2:]
    step = float(np.min(np.diff(times))) if times.size > 1 else DEFAULT_STEP
    return Trajectory(mode=mode, step=step, times=times, snapshots=snaps)


def _rk4_step(f, t, y, t_next):
    h = t_next - t
    t_mid = t + h / 2
    k1 = f(t, y)
    k2 = f(t_mid, y + (h / 2) * k1)
    k3 = f(t_mid, y + (h / 2) * k2)
    k4 = f(t_next, y + h * k3)
    return y + (h / 6) * (k1 + 2 * k2 + 2 * k3 + k4)


def integrate(
    triple: AttentionTriple,
    cloud0,
    mode: str = "rescaled",
    step: float = DEFAULT_STEP,
    t_end: float = 1.0,
    record_every: int = 1,
) -> Trajectory:
    """Classical RK4 on a fixed grid.

    Snapshots are kept every ``record_every`` steps plus the final state. If
    ``t_end`` is not a multiple of ``step`` one shortened step finishes the run.
    Raises :class:`NonFiniteState` carrying the finite prefix on blow-up.
    """
    if mode not in MODES:
        raise ModeMismatch(f"unknown mode {mode!r}")
    if not step > 0 or not t_end >= 0:
        raise AttnLabError("step must be > 0 and t_end >= 0")
    if record_every < 1:
        raise AttnLabError("record_every must be a positive integer")
    y = _check(triple, cloud0).copy()

    if mode == "raw":
        def f(t, x):
            return _velocity_raw(triple, x)
    else:
        cache: dict = {}

        def f(t, z):
            if len(cache) > 6:
                cache.clear()
            return _velocity_rescaled(triple, z, t, cache)

    n_full = int(np.floor(t_end / step + 1e-9))
    rest = t_end - n_full * step
    grid = [k * step for k in range(n_full + 1)]
    if rest > 1e-12 * max(1.0, t_end):
        grid.append(t_end)

    times, snaps = [0.0], [y.copy()]
    last = len(grid) - 1
    for k in range(last):
        t, t_next = grid[k], grid[k + 1]
        y_next = _rk4_step(f, t, y, t_next)
        if not np.all(np.isfinite(y_next)):
            if times[-1] != t:
                times.append(t)
                snaps.append(y.copy())
            partial = Trajectory(mode, step, np.array(times), np.array(snaps))
            raise NonFiniteState(
                f"non-finite state at t={t_next:g} ({mode} mode)", trajectory=partial, blowup_time=t_next
            )
        y = y_next
        if (k + 1) % record_every == 0 or k + 1 == last:
            times.append(t_next)
            snaps.append(y.copy())
    return Trajectory(mode=mode, step=step, times=np.array(times), snapshots=np.array(snaps))


def rescale_trajectory(raw_traj: Trajectory, triple: AttentionTriple) -> Trajectory:
    if raw_traj.mode != "raw":
        raise ModeMismatch("rescale_trajectory expects a raw trajectory")
    snaps = np.array(
        [s if t == 0 else s @ mat_exp(triple.V, -t).T for t, s in zip(raw_traj.times, raw_traj.snapshots)]
    )
    return Trajectory(mode="rescaled", step=raw_traj.step, times=raw_traj.times.copy(), snapshots=snaps)


def raw_norm_envelope(triple: AttentionTriple, cloud0, t: float) -> float:
    """Gronwall envelope max_i |x_i(0)| * exp(|V|_op t) for the raw dynamics."""
    x = as_cloud(cloud0)
    return float(np.max(np.linalg.norm(x, axis=1)) * np.exp(op_norm(triple.V) * t))
