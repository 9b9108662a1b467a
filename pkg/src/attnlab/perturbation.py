"""LoRA updates, special attention triples and token initializations.

Randomness always comes from ``numpy.random.default_rng(seed)`` (PCG64), so
every construction is reproducible from its seed.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .dynamics import AttentionTriple, as_cloud
from .errors import AttnLabError, DimensionMismatch, FullRank, PredicateUnsatisfiable, ZeroVector
from .linalg import as_matrix, image_basis, op_norm, orth_complement_basis

TARGETS = ("Q", "K", "V")


@dataclass(frozen=True, eq=False)
class LoRAFactors:
    """Low-rank update M -> M + a_factor^T b_factor, both factors k x d."""

    target: str
    a_factor: np.ndarray
    b_factor: np.ndarray

    def __post_init__(self):
        if self.target not in TARGETS:
            raise AttnLabError(f"LoRA target must be one of {TARGETS}, got {self.target!r}")
        a, b = as_matrix(self.a_factor), as_matrix(self.b_factor)
        if a.shape != b.shape:
            raise DimensionMismatch(f"factor shapes differ: {a.shape} vs {b.shape}")
        object.__setattr__(self, "a_factor", a)
        object.__setattr__(self, "b_factor", b)

    @property
    def rank_bound(self) -> int:
        return self.a_factor.shape[0]

    @property
    def delta(self) -> np.ndarray:
        return self.a_factor.T @ self.b_factor

    def to_dict(self) -> dict:
        return {"target": self.target, "A": self.a_factor.tolist(), "B": self.b_factor.tolist()}

    @classmethod
    def from_dict(cls, data: dict) -> "LoRAFactors":
        return cls(data["target"], data["A"], data["B"])

    @classmethod
    def from_delta(cls, target: str, delta) -> "LoRAFactors":
        """Exact factorization of an arbitrary d x d update with k = d."""
        m = as_matrix(delta, square=True)
        return cls(target, np.eye(m.shape[0]), m)


def random_lora_factors(target: str, d: int, k: int, norm: float, seed: int) -> LoRAFactors:
    """Factors with uniform[-1, 1] entries, rescaled so |delta|_op == norm."""
    rng = np.random.default_rng(seed)
    a = rng.uniform(-1.0, 1.0, (k, d))
    b = rng.uniform(-1.0, 1.0, (k, d))
    current = op_norm(a.T @ b)
    if current == 0:
        raise AttnLabError("degenerate random factors")
    s = np.sqrt(norm / current)
    return LoRAFactors(target, a * s, b * s)


def apply_lora(triple: AttentionTriple, factors) -> AttentionTriple:
    mats = {"Q": triple.Q.copy(), "K": triple.K.copy(), "V": triple.V.copy()}
    for f in factors:
        if f.a_factor.shape[1] != triple.d:
            raise DimensionMismatch(f"LoRA factors act on dimension {f.a_factor.shape[1]}, triple has {triple.d}")
        mats[f.target] = mats[f.target] + f.delta
    return AttentionTriple(mats["Q"], mats["K"], mats["V"])


def value_perturbation(d: int, eps: float, axis: int = 1) -> LoRAFactors:
    """Rank-one V update -eps e_axis e_axis^T."""
    e = np.zeros((1, d))
    e[0, axis] = 1.0
    return LoRAFactors("V", -eps * e, e)


def rank_one_attention(v) -> AttentionTriple:
    """Q = K = v v^T and V = I."""
    v = np.asarray(v, dtype=float).ravel()
    if not np.any(v):
        raise ZeroVector("v must be non-zero")
    p = np.outer(v, v)
    return AttentionTriple(p, p, np.eye(v.size))


def orthogonal_lora_direction(triple: AttentionTriple, seed: int) -> np.ndarray:
    """Unit v with A v = 0 and A^T v = 0, drawn uniformly from that subspace."""
    a = triple.A
    basis = orth_complement_basis(list(image_basis(a)) + list(image_basis(a.T)), d=triple.d)
    if basis.shape[0] == 0:
        raise FullRank("Im(A) + Im(A^T) spans the whole space")
    rng = np.random.default_rng(seed)
    while True:
        g = rng.standard_normal(basis.shape[0])
        if np.linalg.norm(g) > 1e-12:
            break
    v = g @ basis
    return v / np.linalg.norm(v)


def orthogonal_lora(triple: AttentionTriple, v) -> AttentionTriple:
    """Q + v v^T, K + v v^T (V unchanged)."""
    p = np.outer(v, v)
    return AttentionTriple(triple.Q + p, triple.K + p, triple.V)


INIT_KINDS = ("uniform_hypercube", "constant", "separated_along", "in_orth_complement", "perturbed_line")


@dataclass
class InitSpec:
    """Token initialization recipe; which fields matter depends on ``kind``.

    * uniform_hypercube: ``half_width``
    * constant: ``cloud`` (explicit points; n, d taken from it)
    * separated_along: ``v``, ``C``, ``spread`` -- points on R v with
      |<z, v>| in [C, C + spread], both signs present when n >= 2
    * in_orth_complement: ``of`` (matrix), ``radius`` -- uniform in Im(of)^perp ∩ B(0, radius)
    * perturbed_line: as separated_along plus an offset orthogonal to v of
      norm <= ``epsilon``; the on-line part equals separated_along for the same seed
    """

    kind: str
    n: int
    d: int
    seed: int = 0
    half_width: float = 5.0
    cloud: list | None = None
    v: list | None = None
    C: float = 5.0
    spread: float | None = None
    of: list | None = None
    radius: float = 1.0
    epsilon: float = 0.0

    def __post_init__(self):
        if self.kind not in INIT_KINDS:
            raise AttnLabError(f"unknown init kind {self.kind!r}")
        if self.kind == "constant":
            if self.cloud is None:
                raise AttnLabError("constant init needs a cloud")
            c = as_cloud(self.cloud)
            self.n, self.d = c.shape
        if self.n < 1 or self.d < 1:
            raise AttnLabError("n and d must be positive")

    def to_dict(self) -> dict:
        out = {k: v for k, v in asdict(self).items() if v is not None}
        for k in ("cloud", "v", "of"):
            if k in out:
                out[k] = np.asarray(out[k], dtype=float).tolist()
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "InitSpec":
        return cls(**data)


def _separated_line(spec: InitSpec, rng) -> tuple[np.ndarray, np.ndarray]:
    v = np.asarray(spec.v, dtype=float).ravel()
    if v.size != spec.d or not np.any(v):
        raise PredicateUnsatisfiable("separated init needs a non-zero v of dimension d")
    if spec.C <= 0:
        raise PredicateUnsatisfiable("C must be positive")
    spread = spec.C / 4 if spec.spread is None else spec.spread
    if spread < 0 or spread > spec.C / 2:
        raise PredicateUnsatisfiable(f"spread {spread} must lie in [0, C/2] for C={spec.C}")
    signs = rng.choice([-1.0, 1.0], size=spec.n)
    if spec.n >= 2:
        signs[0], signs[1] = 1.0, -1.0
    proj = signs * (spec.C + spread * rng.uniform(0.0, 1.0, spec.n))
    return np.outer(proj, v / (v @ v)), v


def _uniform_ball(rng, n: int, basis: np.ndarray, radius: float) -> np.ndarray:
    m = basis.shape[0]
    g = rng.standard_normal((n, m))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    r = radius * rng.uniform(0.0, 1.0, n) ** (1.0 / m)
    return (g * r[:, None]) @ basis


def generate_init(spec: InitSpec) -> np.ndarray:
    rng = np.random.default_rng(spec.seed)
    if spec.kind == "uniform_hypercube":
        cloud = rng.uniform(-spec.half_width, spec.half_width, (spec.n, spec.d))
    elif spec.kind == "constant":
        cloud = as_cloud(spec.cloud)
    elif spec.kind == "separated_along":
        cloud, _ = _separated_line(spec, rng)
    elif spec.kind == "in_orth_complement":
        a = as_matrix(spec.of)
        basis = orth_complement_basis(list(image_basis(a)), d=spec.d)
        if basis.shape[0] == 0:
            raise PredicateUnsatisfiable("Im(of) is the whole space")
        cloud = _uniform_ball(rng, spec.n, basis, spec.radius)
    else:  # perturbed_line
        line, v = _separated_line(spec, rng)
        basis = orth_complement_basis([v], d=spec.d)
        if basis.shape[0] == 0:
            raise PredicateUnsatisfiable("no direction orthogonal to v in dimension 1")
        cloud = line + _uniform_ball(rng, spec.n, basis, spec.epsilon)
    check_init(spec, cloud)
    return cloud


def check_init(spec: InitSpec, cloud, tol: float = 1e-9) -> None:
    """Raise PredicateUnsatisfiable unless ``cloud`` satisfies the kind's defining predicate."""
    z = as_cloud(cloud)
    if z.shape != (spec.n, spec.d):
        raise PredicateUnsatisfiable(f"cloud shape {z.shape} != ({spec.n}, {spec.d})")
    if spec.kind == "uniform_hypercube":
        ok = np.all(np.abs(z) <= spec.half_width)
    elif spec.kind == "constant":
        ok = True
    elif spec.kind in ("separated_along", "perturbed_line"):
        v = np.asarray(spec.v, dtype=float).ravel()
        proj = z @ v
        ok = np.all(np.abs(proj) >= spec.C - tol)
        for sel in (proj >= 0, proj <= 0):
            if sel.any():
                ok = ok and (np.ptp(np.abs(proj[sel])) <= spec.C / 2 + tol)
        off = np.linalg.norm(z - np.outer(proj / (v @ v), v), axis=1)
        bound = 0.0 if spec.kind == "separated_along" else spec.epsilon
        ok = ok and np.all(off <= bound + tol * max(1.0, spec.C))
    else:
        a = as_matrix(spec.of)
        scale = max(1.0, float(np.abs(z).max()))
        ok = np.all(np.abs(z @ image_basis(a).T) <= tol * scale)
        ok = ok and np.all(np.linalg.norm(z, axis=1) <= spec.radius + tol)
    if not ok:
        raise PredicateUnsatisfiable(f"generated cloud violates the {spec.kind} predicate")
