"""Regenerate configs/*.json (the pinned scenario configurations)."""
from pathlib import Path

import numpy as np

from attnlab.experiments import ScenarioConfig

OUT = Path(__file__).resolve().parent.parent / "configs"


def meanfield_matrices(seed: int = 7):
    # symmetric A with a 2-dim image; V symmetric, leaves Im(A)^perp invariant,
    # spectrum {4, 1} on Im(A) and {3, 2} on its complement
    u, _ = np.linalg.qr(np.random.default_rng(seed).standard_normal((4, 4)))
    q = u @ np.diag([1.0, 0.5, 0.0, 0.0]) @ u.T
    v = u @ np.diag([4.0, 1.0, 3.0, 2.0]) @ u.T
    return (q + q.T) / 2, np.eye(4), (v + v.T) / 2


def configs():
    identity2 = {"constructor": "identity", "d": 2}
    value_eps = {"kind": "value", "eps": 0.01, "axis": 1}
    cube = {"kind": "uniform_hypercube", "n": 20, "d": 2, "seed": 1, "half_width": 5.0}
    q, k, v = meanfield_matrices()
    e1 = np.diag([1.0, 0.0, 0.0])
    return [
        ScenarioConfig(
            name="phase_transition", scenario="phase_transition", triple=identity2, perturbation=value_eps,
            init=cube, horizon=300.0,
            params={"t_ref": 20.0, "merge_radius": 1e-2, "exit_factor": 1.0, "window_factor": 10.0, "pattern_tol": 0.05},
            output={"trajectories": True},
        ),
        ScenarioConfig(
            name="phase_diagram", scenario="phase_diagram", triple=identity2, init=cube, horizon=500.0,
            params={
                "eps_count": 24, "eps_min": 1e-4, "eps_max": 1e-1, "horizon_scale": 200.0,
                "t_ref": 20.0, "merge_radius": 1e-2, "exit_factor": 1.0,
                "t_star_constants": {"C0": 1.0, "N": 20, "d_cluster": 1.0},
            },
        ),
        ScenarioConfig(
            name="rank_one", scenario="rank_one", triple={"constructor": "rank_one", "v": [1.0, 0.0]},
            init=cube, horizon=40.0, params={"merge_radius": 1e-2},
        ),
        ScenarioConfig(
            name="meanfield", scenario="meanfield",
            triple={"Q": q.tolist(), "K": k.tolist(), "V": v.tolist()},
            init={"kind": "in_orth_complement", "n": 16, "d": 4, "seed": 2, "of": q.tolist(), "radius": 1.0},
            step=0.01, horizon=5.0,
            params={"deltas": [1e-1, 1e-2, 1e-3], "closed_form_horizon": 5.0, "eigenvalue": "slowest", "prob_eps": 0.05},
        ),
        ScenarioConfig(
            name="orthogonal_lora", scenario="orthogonal_lora",
            triple={"Q": e1.tolist(), "K": e1.tolist(), "V": np.diag([0.5, 1.0, 1.0]).tolist()},
            perturbation={"kind": "orthogonal", "seed": 0},
            init={"kind": "separated_along", "n": 20, "d": 3, "seed": 0, "C": 5.0},
            horizon=20.0, params={"merge_radius": 1e-2, "offline_fraction": 0.01, "k_prime_max": 10.0},
        ),
        ScenarioConfig(
            name="bound_comparison", scenario="bound_comparison", triple=identity2, perturbation=value_eps,
            init=cube, params={"c1": "value", "points": 10, "fine_step": 1e-3, "quadrature_step": 1e-3,
                               "extra_times": [0.5, 1.0]},
        ),
    ]


if __name__ == "__main__":
    OUT.mkdir(exist_ok=True)
    for cfg in configs():
        cfg.dump(OUT / f"{cfg.name}.json")
        print(OUT / f"{cfg.name}.json")
