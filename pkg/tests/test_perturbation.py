import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from attnlab.dynamics import AttentionTriple, attention_weights_rescaled, integrate
from attnlab.errors import AttnLabError, DimensionMismatch, FullRank, PredicateUnsatisfiable, ZeroVector
from attnlab.linalg import numerical_rank, op_norm
from attnlab.perturbation import (
    InitSpec,
    LoRAFactors,
    apply_lora,
    check_init,
    generate_init,
    orthogonal_lora,
    orthogonal_lora_direction,
    random_lora_factors,
    rank_one_attention,
    value_perturbation,
)

from oracles import gram_schmidt_complement, power_op_norm

seeds = st.integers(min_value=0, max_value=2**32 - 1)


def test_zero_factors_identity():
    t = AttentionTriple.identity(3)
    z = LoRAFactors("V", np.zeros((2, 3)), np.zeros((2, 3)))
    out = apply_lora(t, [z])
    assert np.array_equal(out.V, t.V) and np.array_equal(out.Q, t.Q)


def test_value_perturbation_example():
    out = apply_lora(AttentionTriple.identity(2), [value_perturbation(2, 0.01)])
    assert np.array_equal(out.V, np.diag([1.0, 0.99]))
    assert np.allclose(out.v_spectrum.eigenvalues, [1.0, 0.99])


def test_lora_errors():
    with pytest.raises(AttnLabError):
        LoRAFactors("W", np.zeros((1, 2)), np.zeros((1, 2)))
    with pytest.raises(DimensionMismatch):
        LoRAFactors("V", np.zeros((1, 2)), np.zeros((2, 2)))
    with pytest.raises(DimensionMismatch):
        apply_lora(AttentionTriple.identity(3), [value_perturbation(2, 0.1)])


def test_random_rank2_factors_norm_against_power_oracle():
    f = random_lora_factors("V", 6, 2, 0.3, seed=0)
    t = AttentionTriple.identity(6)
    diff = apply_lora(t, [f]).V - t.V
    assert op_norm(diff) == pytest.approx(0.3, rel=1e-12)
    assert power_op_norm(diff) == pytest.approx(op_norm(f.delta), rel=1e-10)
    assert numerical_rank(f.delta, 1e-10) <= 2


def test_lora_serialization_roundtrip():
    f = random_lora_factors("Q", 3, 1, 1.0, seed=4)
    g = LoRAFactors.from_dict(f.to_dict())
    assert g.target == "Q" and np.array_equal(g.delta, f.delta)


@settings(max_examples=40, deadline=None)
@given(seeds, st.integers(1, 6), st.sampled_from(["Q", "K", "V"]))
def test_from_delta_is_exact(seed, d, target):
    rng = np.random.default_rng(seed)
    delta = rng.normal(size=(d, d))
    t = AttentionTriple(*(rng.normal(size=(d, d)) for _ in range(3)))
    out = apply_lora(t, [LoRAFactors.from_delta(target, delta)])
    assert np.abs(getattr(out, target) - getattr(t, target) - delta).max() <= 1e-12
    assert np.abs(out.A - out.K.T @ out.Q).max() <= 1e-12


@settings(max_examples=30, deadline=None)
@given(seeds, st.integers(2, 6), st.integers(1, 3))
def test_random_factors_rank_bound(seed, d, k):
    f = random_lora_factors("V", d, k, 1.0, seed)
    assert numerical_rank(f.delta, 1e-10) <= k


def test_rank_one_attention_examples():
    t = rank_one_attention([1.0, 0.0])
    assert np.array_equal(t.Q, [[1.0, 0.0], [0.0, 0.0]]) and np.array_equal(t.K, t.Q)
    assert np.array_equal(t.V, np.eye(2))
    v = np.array([1.0, -2.0, 0.5])
    t = rank_one_attention(v)
    nv2 = v @ v
    assert np.allclose(t.A, nv2 * np.outer(v, v), atol=1e-12)
    assert numerical_rank(t.A) == 1
    phi = v / np.sqrt(nv2)
    assert phi @ t.A @ phi == pytest.approx(nv2**2, rel=1e-12)
    with pytest.raises(ZeroVector):
        rank_one_attention([0.0, 0.0])


def test_orthogonal_direction_examples():
    e1 = np.diag([1.0, 0.0])
    v = orthogonal_lora_direction(AttentionTriple(e1, e1, np.eye(2)), seed=0)
    assert abs(v[0]) <= 1e-12 and abs(abs(v[1]) - 1) <= 1e-12
    z = np.zeros((3, 3))
    a = orthogonal_lora_direction(AttentionTriple(z, z, np.eye(3)), seed=5)
    b = orthogonal_lora_direction(AttentionTriple(z, z, np.eye(3)), seed=5)
    assert np.array_equal(a, b) and np.linalg.norm(a) == pytest.approx(1.0, rel=1e-15)
    with pytest.raises(FullRank):
        orthogonal_lora_direction(AttentionTriple.identity(2), seed=0)


def test_orthogonal_direction_rank3_in_r6():
    rng = np.random.default_rng(11)
    b = rng.normal(size=(6, 3))
    q = b @ b.T  # rank 3
    t = AttentionTriple(q, q, np.eye(6))
    assert numerical_rank(t.A) == 3
    v = orthogonal_lora_direction(t, seed=2)
    assert np.linalg.norm(t.A @ v) <= 1e-10 and np.linalg.norm(t.A.T @ v) <= 1e-10
    # column-space basis oracle: v lies in the complement of Im(A) + Im(A^T)
    comp = gram_schmidt_complement(list(t.A.T) + list(t.A), 6)
    assert np.linalg.norm(comp.T @ (comp @ v) - v) <= 1e-10


@settings(max_examples=15, deadline=None)
@given(seeds)
def test_orthogonal_lora_keeps_uniform_attention_off_line(seed):
    rng = np.random.default_rng(seed)
    p = np.diag([1.0, 0.0, 0.0, 0.0])
    # V acts as a scalar on Im(A)^perp, so Im(A)^perp ∩ v^perp is V-invariant
    t = AttentionTriple(p, p, np.diag([1.0] + [rng.uniform(0.1, 2.0)] * 3))
    v = orthogonal_lora_direction(t, seed)
    tt = orthogonal_lora(t, v)
    basis = gram_schmidt_complement([[1.0, 0, 0, 0], v], 4)
    z0 = rng.uniform(-1, 1, (6, basis.shape[0])) @ basis
    traj = integrate(tt, z0, "rescaled", 0.1, 3.0)
    for s, snap in zip(traj.times, traj.snapshots):
        assert np.abs(attention_weights_rescaled(tt, snap, s) - 1 / 6).max() <= 1e-12


def test_init_hypercube():
    z = generate_init(InitSpec("uniform_hypercube", n=20, d=2, seed=0))
    assert z.shape == (20, 2) and np.abs(z).max() <= 5.0
    assert np.array_equal(z, generate_init(InitSpec("uniform_hypercube", n=20, d=2, seed=0)))


def test_init_orth_complement():
    a = np.diag([1.0, 0.0, 0.0])
    z = generate_init(InitSpec("in_orth_complement", n=30, d=3, seed=1, of=a.tolist(), radius=2.0))
    assert np.abs(z[:, 0]).max() <= 1e-12
    assert np.linalg.norm(z, axis=1).max() <= 2.0
    with pytest.raises(PredicateUnsatisfiable):
        generate_init(InitSpec("in_orth_complement", n=3, d=2, seed=1, of=np.eye(2).tolist()))


def test_init_separated_along_scan():
    z = generate_init(InitSpec("separated_along", n=25, d=3, seed=3, v=[1.0, 0.0, 0.0], C=3.0, spread=1.0))
    proj = [float(row[0]) for row in z]
    assert all(abs(p) >= 3.0 for p in proj)
    for side in ([p for p in proj if p > 0], [p for p in proj if p < 0]):
        assert side and max(side) - min(side) <= 1.5
    assert np.abs(z[:, 1:]).max() == 0.0
    with pytest.raises(PredicateUnsatisfiable):
        generate_init(InitSpec("separated_along", n=5, d=2, seed=0, v=[1.0, 0.0], C=1.0, spread=2.0))


def test_init_perturbed_line_shares_on_line_part():
    base = InitSpec("separated_along", n=10, d=3, seed=4, v=[0.0, 1.0, 0.0], C=5.0)
    line = generate_init(base)
    pert = generate_init(InitSpec("perturbed_line", n=10, d=3, seed=4, v=[0.0, 1.0, 0.0], C=5.0, epsilon=0.05))
    assert np.array_equal(pert[:, 1], line[:, 1])
    off = np.linalg.norm(pert[:, [0, 2]], axis=1)
    assert off.max() <= 0.05 and off.max() > 0


def test_check_init_rejects_violations():
    spec = InitSpec("uniform_hypercube", n=2, d=1, seed=0, half_width=1.0)
    with pytest.raises(PredicateUnsatisfiable):
        check_init(spec, [[0.5], [1.5]])
    with pytest.raises(PredicateUnsatisfiable):
        check_init(spec, [[0.5]])


def test_initspec_roundtrip():
    spec = InitSpec("separated_along", n=4, d=2, seed=9, v=[1.0, 1.0], C=2.0)
    back = InitSpec.from_dict(spec.to_dict())
    assert np.array_equal(generate_init(back), generate_init(spec))


def test_rank_one_sign_symmetry():
    # v -> -v leaves Q = K = v v^T unchanged
    v = np.array([0.6, -0.8])
    assert np.array_equal(rank_one_attention(v).Q, rank_one_attention(-v).Q)
