import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from attnlab.bounds import (
    BoundReport,
    c2_bound,
    kernel_field,
    kernel_sup_bound,
    lipschitz_in_x_bound,
    log_c2_bound,
    meanfield_rate,
    meanfield_T_delta_bound,
    meanfield_T_delta_prob_bound,
    perturbation_constant,
    radius_envelope,
    stability_report,
    stability_w2_bound,
    stability_w2_log_bound,
    t_star_upper_bound,
)
from attnlab.clustering import detect_times
from attnlab.dynamics import AttentionTriple, Trajectory, integrate
from attnlab.errors import AttnLabError, InvalidLog, NonPositiveEigenvalue
from attnlab.linalg import mat_exp
from attnlab.perturbation import InitSpec, apply_lora, generate_init, value_perturbation
from attnlab.transport import wasserstein

# frozen from scalar evaluation of the displayed formulas (norms by power iteration)
R0_SEED1 = 5.796438157478344  # max initial norm, hypercube n=20, d=2, seed 1
RADIUS_T2 = 42.830206719589704  # R0_SEED1 * e^2
LIP_SEED42 = 10.326856759697487  # R = 1.5
C2_SEED42 = 24.975139386757075  # R = 0.8
PC_SEED42 = 18.45725420311987  # R0 = 1.2, t = 0.7

seeds = st.integers(min_value=0, max_value=2**32 - 1)


def seeded_triple():
    rng = np.random.default_rng(42)
    return AttentionTriple(*(rng.uniform(-1, 1, (3, 3)) for _ in range(3)))


def seeded_pair():
    t = seeded_triple()
    r2 = np.random.default_rng(43)
    q2 = t.Q + 0.1 * r2.uniform(-1, 1, (3, 3))
    v2 = t.V + 0.1 * r2.uniform(-1, 1, (3, 3))
    return t, AttentionTriple(q2, t.K, v2)


def phase_pair():
    t = AttentionTriple.identity(2)
    return t, apply_lora(t, [value_perturbation(2, 0.01)])


def test_radius_envelope():
    t, tt = phase_pair()
    assert radius_envelope(2.5, t.V, tt.V, 0.0) == 2.5
    assert radius_envelope(1.0, np.eye(2), np.eye(2), 1.0) == pytest.approx(math.e, rel=1e-15)
    z0 = generate_init(InitSpec("uniform_hypercube", n=20, d=2, seed=1))
    r0 = float(np.linalg.norm(z0, axis=1).max())
    assert r0 == pytest.approx(R0_SEED1, rel=1e-15)
    assert radius_envelope(r0, t.V, tt.V, 2.0) == pytest.approx(RADIUS_T2, rel=1e-13)
    with pytest.raises(AttnLabError):
        radius_envelope(0.0, t.V, tt.V, 1.0)


def test_lipschitz_bound():
    assert lipschitz_in_x_bound(AttentionTriple.identity(2), 1.0) == pytest.approx(2.0, rel=1e-15)
    t = seeded_triple()
    assert lipschitz_in_x_bound(t, 3.0) == pytest.approx(4 * lipschitz_in_x_bound(t, 1.5), rel=1e-14)
    assert lipschitz_in_x_bound(t, 1.5) == pytest.approx(LIP_SEED42, rel=1e-12)


def test_kernel_sup_bound_examples_and_monte_carlo():
    assert kernel_sup_bound(AttentionTriple.identity(3), 1.0) == pytest.approx(1.0, rel=1e-15)
    z = np.zeros((3, 3))
    assert kernel_sup_bound(AttentionTriple(np.eye(3), np.eye(3), z), 5.0) == 0.0
    t = seeded_triple()
    rng = np.random.default_rng(0)
    mu = rng.normal(size=(12, 3))
    mu *= rng.uniform(0, 1.5, (12, 1)) / np.linalg.norm(mu, axis=1, keepdims=True)
    x = rng.uniform(-5, 5, (1000, 3))
    measured = np.linalg.norm(kernel_field(t, mu, x), axis=1).max()
    assert kernel_sup_bound(t, 1.5) >= measured


def test_c2_bound():
    z = np.zeros((2, 2))
    assert c2_bound(AttentionTriple(z, z, np.eye(2)), 3.0) == 0.0
    t = seeded_triple()
    assert c2_bound(t, 0.0) == 0.0
    assert c2_bound(t, 1e-6) < 1e-9
    assert c2_bound(t, 0.8) == pytest.approx(C2_SEED42, rel=1e-12)
    assert c2_bound(t, 100.0) == math.inf
    assert math.isfinite(log_c2_bound(t, 100.0))


def test_perturbation_constant():
    t, tt = seeded_pair()
    assert perturbation_constant(t, t, 1.0, 2.0) == 0.0
    assert perturbation_constant(t, tt, 1.2, 0.7) == pytest.approx(PC_SEED42, rel=1e-12)
    v_only = AttentionTriple(t.Q, t.K, tt.V)
    r = radius_envelope(1.2, t.V, tt.V, 0.7)
    first = 2 * np.linalg.norm(t.V - tt.V, 2) ** 2 * r**2
    assert perturbation_constant(t, v_only, 1.2, 0.7) == pytest.approx(first, rel=1e-12)


def test_stability_trivial_cases():
    t, tt = phase_pair()
    for s in (0.0, 0.3, 5.0):
        assert stability_w2_bound("zero", t, t, 1.0, s) == 0.0
    # empty integral at t = 0: sqrt(2) C_1(R0) with C_1(R) = |V - V~| R
    assert stability_w2_bound("value", t, tt, 2.0, 0.0) == pytest.approx(math.sqrt(2) * 0.01 * 2.0, rel=1e-12)
    with pytest.raises(AttnLabError):
        stability_w2_bound("value", *seeded_pair(), 1.0, 0.1)
    with pytest.raises(AttnLabError):
        stability_w2_bound("mystery", t, tt, 1.0, 0.1)


def test_stability_bound_dominates_small_init():
    t, tt = phase_pair()
    z0 = np.random.default_rng(2).uniform(-0.25, 0.25, (8, 2))
    r0 = float(np.linalg.norm(z0, axis=1).max())
    a = integrate(t, z0, "raw", 0.01, 0.5)
    b = integrate(tt, z0, "raw", 0.01, 0.5)
    measured = wasserstein(a.final, b.final)
    rep = stability_report("value", t, tt, r0, 0.5).compare(measured)
    assert math.isfinite(rep.value) and rep.dominates["verdict"] == "holds"


def test_stability_saturates_to_vacuous():
    t, tt = phase_pair()
    rep = stability_report("value", t, tt, R0_SEED1, 0.5)
    assert rep.value == math.inf and rep.saturated
    rep.compare(0.3)
    assert rep.dominates["holds"] and rep.dominates["verdict"] == "vacuous"
    data = json.loads(json.dumps(rep.to_dict()))
    assert data["value"] == "inf" and data["dominates"]["verdict"] == "vacuous"


def test_bound_report_compare_tolerance():
    r = BoundReport("x", {}, 1.0)
    assert r.compare(1.0 + 5e-10).dominates["holds"]
    assert not r.compare(1.0 + 1e-8).dominates["holds"]
    assert r.dominates["verdict"] == "violated"


@settings(max_examples=25, deadline=None)
@given(seeds, st.floats(0.1, 2.0), st.floats(0.0, 1.0))
def test_bounds_monotone_in_r(seed, r, dr):
    rng = np.random.default_rng(seed)
    t = AttentionTriple(*(rng.uniform(-1, 1, (3, 3)) for _ in range(3)))
    for f in (lipschitz_in_x_bound, kernel_sup_bound, c2_bound):
        assert f(t, r) <= f(t, r + dr) * (1 + 1e-12)


def test_stability_monotone_in_t_grid():
    t, tt = phase_pair()
    grid = np.linspace(0.0, 0.6, 13)
    logs = [stability_w2_log_bound("value", t, tt, 1.0, s) for s in grid]
    assert all(b >= a for a, b in zip(logs, logs[1:]))
    t2, tt2 = seeded_pair()
    logs = [stability_w2_log_bound("lora", t2, tt2, 0.5, s) for s in grid]
    assert all(b >= a for a, b in zip(logs, logs[1:]))


def test_quadrature_converges():
    t, tt = phase_pair()
    coarse = stability_w2_log_bound("value", t, tt, 0.3, 0.4, quadrature_step=1e-2)
    fine = stability_w2_log_bound("value", t, tt, 0.3, 0.4, quadrature_step=1e-4)
    assert coarse == pytest.approx(fine, rel=1e-3)


def meanfield_triple(v_diag):
    p = np.diag([1.0, 0.0, 0.0])
    return AttentionTriple(p, p, np.diag(v_diag))


def test_meanfield_bound_examples():
    t = meanfield_triple([1.0, 1.0, 1.0])
    assert meanfield_T_delta_bound(np.tile([0.0, 0.3, -0.2], (4, 1)), t, 0.1) == 0.0
    z = np.array([[0.0, 1.0, 0.0], [0.0, -1.0, 0.0]])
    assert meanfield_T_delta_bound(z, t, math.exp(-1)) == pytest.approx(1.0, rel=1e-14)
    with pytest.raises(AttnLabError):
        meanfield_T_delta_bound([[1.0, 0.0, 0.0], [0.0, 0.0, 0.0]], t, 0.1)
    with pytest.raises(NonPositiveEigenvalue):
        meanfield_rate(meanfield_triple([1.0, -0.5, 1.0]))


def closed_form_traj(triple, z0, step, horizon):
    times = step * np.arange(int(round(horizon / step)) + 1)
    m = z0.mean(axis=0)
    snaps = np.array([(z0 - m) @ mat_exp(triple.V, -s).T + m for s in times])
    return Trajectory("rescaled", step, times, snaps), m


def test_meanfield_leading_eigenvalue_reading_fails():
    # slow direction e_3 (rate 0.5) carries the spread; lambda_1 of the restriction is 3
    t = meanfield_triple([1.0, 3.0, 0.5])
    z0 = np.array([[0.0, 0.1, 1.0], [0.0, -0.1, -1.0], [0.0, 0.0, 0.5]])
    traj = integrate(t, z0, "rescaled", 0.01, 12.0)
    measured = detect_times(traj, [z0.mean(axis=0)], 0.1).T_delta
    slow = meanfield_T_delta_bound(z0, t, 0.1, "slowest")
    lead = meanfield_T_delta_bound(z0, t, 0.1, "leading")
    assert measured <= slow
    assert measured > lead


def test_meanfield_prob_bound_algebra():
    b = meanfield_T_delta_prob_bound(1.0, 2, 10, 0.1, 0.05, 2.0)
    b4 = meanfield_T_delta_prob_bound(1.0, 2, 40, 0.1, 0.05, 2.0)
    assert b4 - b == pytest.approx(math.log(2) / 2.0, rel=1e-12)
    scale = math.sqrt(2 * 1.0 * 2 * math.log(1 / 0.05) * 10)
    assert meanfield_T_delta_prob_bound(1.0, 2, 10, scale, 0.05, 2.0) == pytest.approx(0.0, abs=1e-15)
    with pytest.raises(AttnLabError):
        meanfield_T_delta_prob_bound(1.0, 2, 10, 0.1, 0.6, 2.0)


def test_meanfield_prob_bound_monte_carlo():
    q, _ = np.linalg.qr(np.random.default_rng(7).normal(size=(4, 4)))
    t = AttentionTriple(q @ np.diag([1.0, 0.5, 0.0, 0.0]) @ q.T, np.eye(4), q @ np.diag([4.0, 1.0, 3.0, 2.0]) @ q.T)
    lam = meanfield_rate(t)
    radius, eps, n, delta = 1.0, 0.05, 16, 0.01
    bound = meanfield_T_delta_prob_bound(radius, 2, n, delta, eps, lam)
    exceed = 0
    for seed in range(200):
        z0 = generate_init(InitSpec("in_orth_complement", n=n, d=4, seed=seed, of=t.A.tolist(), radius=radius))
        traj, m = closed_form_traj(t, z0, 0.05, 6.0)
        measured = detect_times(traj, [m], delta).T_delta
        exceed += measured is None or measured > bound
    assert exceed <= 2 * eps * 200 + 2


def test_t_star_branches():
    b = t_star_upper_bound(0.1, 0.01, 1.0, 1.0, 5.0, 1.0, 20.0, 1.0)
    assert b.value == b.first_branch == pytest.approx(math.log(5.0 / 0.01) / 0.01, rel=1e-14)
    assert b.second_branch == pytest.approx(math.log(math.log(2.0) / 0.1) / 2.0, rel=1e-14)
    # delta -> delta / e adds 2 / eps_gap to the first branch
    b2 = t_star_upper_bound(0.1 / math.e, 0.01, 1.0, 1.0, 5.0, 1.0, 20.0 * math.e, 1.0)
    assert b2.first_branch - b.first_branch == pytest.approx(2 / 0.01, rel=1e-10)
    # large gap: the second branch takes over
    b3 = t_star_upper_bound(0.1, 100.0, 0.01, 1.0, 5.0, 1.0, 20.0, 1.0)
    assert b3.value == b3.second_branch > b3.first_branch
    assert b.asymptotic == pytest.approx(math.log(10) / 0.01, rel=1e-14)


def test_t_star_invalid_log():
    with pytest.raises(InvalidLog):
        t_star_upper_bound(0.1, 0.01, 1.0, 1.0, 5.0, 1.0, 5.0, 1.0)  # log(0.5) < 0
    with pytest.raises(InvalidLog):
        t_star_upper_bound(0.1, 0.01, 1.0, 1.0, 5.0, 0.0, 20.0, 1.0)
    with pytest.raises(AttnLabError):
        t_star_upper_bound(0.1, 0.0, 1.0, 1.0, 5.0, 1.0, 20.0, 1.0)
