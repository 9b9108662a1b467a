"""Fast invariant suites run by ``attnlab verify``.

Each check returns ``(ok, detail)``. ``fault`` deliberately corrupts the
measured quantity so the failure path can be exercised.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bounds import kernel_field, kernel_sup_bound, stability_w2_bound
from .dynamics import AttentionTriple, attention_weights_raw, attention_weights_rescaled, integrate
from .linalg import eig, mat_exp
from .perturbation import InitSpec, apply_lora, generate_init, value_perturbation
from .transport import optimal_assignment, wasserstein, wasserstein_bruteforce


@dataclass(frozen=True)
class Invariant:
    name: str
    suite: str
    check: object  # callable(fault: bool) -> (bool, str)


def _rng(seed):
    return np.random.default_rng(seed)


def nonneg_spectrum_triple(seed: int, d: int = 3) -> AttentionTriple:
    """Random Q, K and a diagonalizable V = S diag(lam) S^-1 with lam in [0, 2]."""
    rng = _rng(seed)
    lam = rng.uniform(0.0, 2.0, d)
    s = np.eye(d) + 0.3 * rng.uniform(-1.0, 1.0, (d, d))
    v = s @ np.diag(lam) @ np.linalg.inv(s)
    return AttentionTriple(rng.uniform(-1.0, 1.0, (d, d)), rng.uniform(-1.0, 1.0, (d, d)), v)


def monotone_violation(traj, triple: AttentionTriple) -> float:
    """Largest per-step increase of max_j phi*_k(z_j) or decrease of min_j, over k with lambda_k >= 0."""
    spec = triple.v_spectrum
    if spec.dual_basis is None:
        raise ValueError("V has no dual basis")
    keep = [k for k, lam in enumerate(spec.eigenvalues) if lam.real >= 0 and abs(lam.imag) == 0]
    proj = traj.snapshots @ spec.dual_basis[keep].T  # (T, n, k)
    up = np.diff(proj.max(axis=1), axis=0).max(initial=0.0)
    down = -np.diff(proj.min(axis=1), axis=0).min(initial=0.0)
    return float(max(up, down, 0.0))


def _dual_basis(fault):
    worst = 0.0
    for seed in range(5):
        rng = _rng(seed)
        m = rng.uniform(-1, 1, (4, 4))
        m = m + m.T
        s = eig(m)
        worst = max(worst, float(np.abs(s.dual_basis @ s.right_eigenvectors - np.eye(4)).max()))
    worst += 1.0 if fault else 0.0
    return worst <= 1e-8, f"max |phi*_k(phi_j) - delta_kj| = {worst:.2e}"


def _exp_group(fault):
    m = _rng(11).uniform(-1, 1, (3, 3))
    err = float(np.abs(mat_exp(m, 0.3) @ mat_exp(m, 0.5) - mat_exp(m, 0.8)).max()) + (1.0 if fault else 0.0)
    return err <= 1e-10, f"group property error {err:.2e}"


def _row_stochastic(fault):
    worst = 0.0
    for seed in range(5):
        rng = _rng(seed)
        t = AttentionTriple(*(rng.uniform(-1, 1, (3, 3)) for _ in range(3)))
        x = rng.uniform(-3, 3, (12, 3))
        for p in (attention_weights_raw(t, x), attention_weights_rescaled(t, x, 2.5)):
            worst = max(worst, float(np.abs(p.sum(axis=1) - 1).max()), float(-p.min()))
    worst += 1.0 if fault else 0.0
    return worst <= 1e-12, f"max row-sum defect {worst:.2e}"


def _barycenter(fault):
    q = np.diag([1.0, 0.0, 0.0])
    t = AttentionTriple(q, q, np.diag([2.0, 1.5, 1.0]))
    z0 = generate_init(InitSpec("in_orth_complement", n=10, d=3, seed=3, of=q.tolist(), radius=1.0))
    traj = integrate(t, z0, "rescaled", 0.05, 3.0)
    drift = float(np.abs(traj.snapshots.mean(axis=1) - z0.mean(axis=0)).max()) + (1.0 if fault else 0.0)
    return drift <= 1e-10, f"barycenter drift {drift:.2e}"


def _w2_oracle(fault):
    worst = 0.0
    for seed in range(30):
        rng = _rng(seed)
        n, d, p = int(rng.integers(2, 8)), int(rng.integers(1, 4)), float(rng.integers(1, 3))
        a, b = rng.uniform(-1, 1, (n, d)), rng.uniform(-1, 1, (n, d))
        cost = optimal_assignment(a, b, p)[1]
        worst = max(worst, abs(cost - wasserstein_bruteforce(a, b, p) ** p))
    worst += 1.0 if fault else 0.0
    return worst <= 1e-12, f"max cost gap {worst:.2e}"


def _monotonicity(fault):
    worst = 0.0
    for seed in range(3):
        t = nonneg_spectrum_triple(seed)
        z0 = _rng(100 + seed).uniform(-2, 2, (8, 3))
        worst = max(worst, monotone_violation(integrate(t, z0, "rescaled", 0.1, 5.0), t))
    worst += 1.0 if fault else 0.0
    return worst <= 1e-7, f"max monotonicity violation {worst:.2e}"


def _kernel_sup(fault):
    rng = _rng(5)
    t = AttentionTriple(*(rng.uniform(-1, 1, (3, 3)) for _ in range(3)))
    mu = rng.normal(size=(15, 3))
    mu *= rng.uniform(0, 2, (15, 1)) / np.linalg.norm(mu, axis=1, keepdims=True)
    x = rng.uniform(-3, 3, (1000, 3))
    measured = float(np.linalg.norm(kernel_field(t, mu, x), axis=1).max()) + (100.0 if fault else 0.0)
    bound = kernel_sup_bound(t, 2.0)
    return bound >= measured - 1e-9, f"sup |X[mu](x)| = {measured:.4g} <= {bound:.4g}"


def _stability(fault):
    t = AttentionTriple.identity(2)
    tt = apply_lora(t, [value_perturbation(2, 0.05)])
    z0 = _rng(2).uniform(-0.25, 0.25, (6, 2))
    r0 = float(np.linalg.norm(z0, axis=1).max())
    a = integrate(t, z0, "raw", 0.01, 0.5)
    b = integrate(tt, z0, "raw", 0.01, 0.5)
    measured = wasserstein(a.final, b.final) + (1e300 if fault else 0.0)
    bound = stability_w2_bound("value", t, tt, r0, 0.5)
    return bound >= measured - 1e-9, f"W2 = {measured:.3g} <= bound {bound:.3g}"


INVARIANTS = (
    Invariant("dual_basis", "linalg", _dual_basis),
    Invariant("exp_group", "linalg", _exp_group),
    Invariant("row_stochastic", "dynamics", _row_stochastic),
    Invariant("barycenter", "dynamics", _barycenter),
    Invariant("w2_oracle", "transport", _w2_oracle),
    Invariant("monotonicity", "clustering", _monotonicity),
    Invariant("kernel_sup", "bounds", _kernel_sup),
    Invariant("stability_domination", "bounds", _stability),
)
SUITES = tuple(sorted({inv.suite for inv in INVARIANTS}))


def run(suite: str | None = None, inject_fault: str | None = None) -> list[tuple[Invariant, bool, str]]:
    selected = [inv for inv in INVARIANTS if suite in (None, "all", inv.suite)]
    results = []
    for inv in selected:
        try:
            ok, detail = inv.check(inv.name == inject_fault)
        except Exception as exc:  # a crashing check is a failing check
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        results.append((inv, bool(ok), detail))
    return results
