"""Closed-form bounds: kernel estimates, the Wasserstein stability bound, and
the characteristic-time bounds for mean-field collapse and bifurcation.

The stability bound contains a double exponential, so it is evaluated in log
space; ``math.inf`` is the saturation sentinel when even its logarithm
overflows.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .dynamics import AttentionTriple, as_cloud
from .errors import AttnLabError, InvalidLog, NonPositiveEigenvalue
from .linalg import eig, image_basis, op_norm, orth_complement_basis

DEFAULT_QUADRATURE_STEP = 1e-3
C1_TAGS = ("zero", "value", "lora")


def _num(x: float):
    """JSON-safe float (infinities become strings)."""
    x = float(x)
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return x


@dataclass
class BoundReport:
    name: str
    inputs: dict
    value: float
    log_value: float | None = None
    dominates: dict | None = None
    notes: list[str] = field(default_factory=list)

    @property
    def saturated(self) -> bool:
        return self.log_value is not None and math.isinf(self.log_value) and self.log_value > 0

    def compare(self, measured: float) -> "BoundReport":
        """Attach a domination verdict: holds iff value >= measured - 1e-9."""
        holds = self.value >= measured - 1e-9
        if self.saturated:
            verdict = "vacuous"
        else:
            verdict = "holds" if holds else "violated"
        self.dominates = {"measured": measured, "holds": bool(holds), "margin": self.value - measured, "verdict": verdict}
        return self

    def to_dict(self) -> dict:
        out = {
            "name": self.name,
            "inputs": {k: _num(v) if isinstance(v, (int, float)) else v for k, v in self.inputs.items()},
            "value": _num(self.value),
        }
        if self.log_value is not None:
            out["log_value"] = _num(self.log_value)
        if self.dominates is not None:
            dom = dict(self.dominates)
            dom["measured"] = _num(dom["measured"])
            dom["margin"] = _num(dom["margin"])
            out["dominates"] = dom
        if self.notes:
            out["notes"] = list(self.notes)
        return out


def radius_envelope(R0: float, V, V_tilde, t: float) -> float:
    """R_t = R0 exp(max(|V|, |V~|) t)."""
    if not R0 > 0 or t < 0:
        raise AttnLabError("need R0 > 0 and t >= 0")
    return R0 * math.exp(max(op_norm(V), op_norm(V_tilde)) * t)


def _log_radius(R0, rate, t):
    return math.log(R0) + rate * t


def lipschitz_in_x_bound(triple: AttentionTriple, R: float) -> float:
    """2 |Q^T K|_op |V|_op R^2 (also the K_t constant when R = R_t)."""
    if not R > 0:
        raise AttnLabError("R must be positive")
    return 2.0 * op_norm(triple.Q.T @ triple.K) * op_norm(triple.V) * R**2


def kernel_sup_bound(triple: AttentionTriple, R: float) -> float:
    """|V|_op R bounds the attention kernel on measures supported in B(0, R)."""
    if R < 0:
        raise AttnLabError("R must be non-negative")
    return op_norm(triple.V) * R


def kernel_field(triple: AttentionTriple, support, x) -> np.ndarray:
    """Attention kernel X[mu](x) for the uniform measure on ``support`` (rows)."""
    y = as_cloud(support, triple.d)
    xs = np.atleast_2d(np.asarray(x, dtype=float))
    logits = (xs @ triple.Q.T) @ (y @ triple.K.T).T
    w = np.exp(logits - logits.max(axis=1, keepdims=True))
    w /= w.sum(axis=1, keepdims=True)
    return w @ (y @ triple.V.T)


def log_c2_bound(triple: AttentionTriple, R: float) -> float:
    a_norm, v_norm = op_norm(triple.A), op_norm(triple.V)
    if R == 0 or a_norm == 0 or v_norm == 0:
        return -math.inf
    return math.log(2.0 * R**2 * v_norm * a_norm) + float(np.logaddexp(0.0, 2.0 * R**2 * a_norm))


def c2_bound(triple: AttentionTriple, R: float) -> float:
    """2 R^2 |V| |A| (1 + exp(2 R^2 |A|)); math.inf once it overflows."""
    if R < 0:
        raise AttnLabError("R must be non-negative")
    lv = log_c2_bound(triple, R)
    return 0.0 if lv == -math.inf else (math.exp(lv) if lv < 709.0 else math.inf)


def perturbation_constant(triple: AttentionTriple, triple_tilde: AttentionTriple, R0: float, t: float) -> float:
    """2 |V - V~|^2 R_t^2 + 4 R_t^3 |V| |A - A~|."""
    r = radius_envelope(R0, triple.V, triple_tilde.V, t)
    return 2.0 * op_norm(triple.V - triple_tilde.V) ** 2 * r**2 + 4.0 * r**3 * op_norm(triple.V) * op_norm(
        triple.A - triple_tilde.A
    )


def log_c1(tag: str, triple: AttentionTriple, triple_tilde: AttentionTriple, R0: float, t: float) -> float:
    """log C_1(R_t) for the supported kernel-difference hypotheses.

    * ``zero``:  C_1 = 0 (identical kernels)
    * ``value``: C_1(R) = |V - V~| R, valid when only V is perturbed
    * ``lora``:  2 C_1^2 = K(A - A~, V - V~, t), for a general LoRA update
    """
    if tag == "zero":
        return -math.inf
    if tag == "value":
        if op_norm(triple.Q - triple_tilde.Q) > 0 or op_norm(triple.K - triple_tilde.K) > 0:
            raise AttnLabError("the 'value' C1 hypothesis needs Q and K unperturbed")
        dv = op_norm(triple.V - triple_tilde.V)
        if dv == 0:
            return -math.inf
        rate = max(op_norm(triple.V), op_norm(triple_tilde.V))
        return math.log(dv) + _log_radius(R0, rate, t)
    if tag == "lora":
        k = perturbation_constant(triple, triple_tilde, R0, t)
        return -math.inf if k == 0 else 0.5 * (math.log(k) - math.log(2.0))
    raise AttnLabError(f"unknown C1 tag {tag!r}; expected one of {C1_TAGS}")


def log_c_integral(triple: AttentionTriple, triple_tilde: AttentionTriple, R0: float, t: float, h: float) -> float:
    """log of int_0^t C_2(R_s)^2 ds by the composite trapezoid rule."""
    if t == 0:
        return -math.inf
    if not h > 0:
        raise AttnLabError("quadrature step must be positive")
    rate = max(op_norm(triple.V), op_norm(triple_tilde.V))
    m = max(1, int(math.ceil(t / h - 1e-9)))
    s = np.linspace(0.0, t, m + 1)
    vals = np.array([2.0 * log_c2_bound(triple, R0 * math.exp(rate * si)) for si in s])
    if np.all(np.isneginf(vals)):
        return -math.inf
    w = np.full(m + 1, t / m)
    w[0] = w[-1] = t / (2 * m)
    return float(logsumexp(vals + np.log(w)))


def stability_w2_log_bound(
    c1: str,
    triple: AttentionTriple,
    triple_tilde: AttentionTriple,
    R0: float,
    t: float,
    quadrature_step: float = DEFAULT_QUADRATURE_STEP,
) -> float:
    """Natural log of sqrt(2 C_1(R_t)^2 exp(2 C_t exp(3 K_t)))."""
    if t < 0:
        raise AttnLabError("t must be non-negative")
    lc1 = log_c1(c1, triple, triple_tilde, R0, t)
    if lc1 == -math.inf:
        return -math.inf
    rate = max(op_norm(triple.V), op_norm(triple_tilde.V))
    k_t = lipschitz_in_x_bound(triple, R0 * math.exp(rate * t))
    lct = log_c_integral(triple, triple_tilde, R0, t, quadrature_step)
    log_exponent = math.log(2.0) + lct + 3.0 * k_t
    exponent = math.exp(log_exponent) if log_exponent < 709.0 else math.inf
    return 0.5 * (math.log(2.0) + 2.0 * lc1 + exponent)


def stability_w2_bound(
    c1: str,
    triple: AttentionTriple,
    triple_tilde: AttentionTriple,
    R0: float,
    t: float,
    quadrature_step: float = DEFAULT_QUADRATURE_STEP,
) -> float:
    """Bound on W_2(mu_t, nu_t); math.inf when it exceeds the float range."""
    lv = stability_w2_log_bound(c1, triple, triple_tilde, R0, t, quadrature_step)
    if lv == -math.inf:
        return 0.0
    return math.exp(lv) if lv < 709.0 else math.inf


def stability_report(c1, triple, triple_tilde, R0, t, quadrature_step=DEFAULT_QUADRATURE_STEP) -> BoundReport:
    lv = stability_w2_log_bound(c1, triple, triple_tilde, R0, t, quadrature_step)
    value = 0.0 if lv == -math.inf else (math.exp(lv) if lv < 709.0 else math.inf)
    return BoundReport(
        name="stability_w2_bound",
        inputs={"c1": c1, "R0": R0, "t": t, "quadrature_step": quadrature_step},
        value=value,
        log_value=lv,
    )


def _restricted_operator(V, basis: np.ndarray) -> tuple[np.ndarray, float]:
    """Matrix of V on span(basis rows) and the invariance defect |(I - P) V B^T|."""
    vb = np.asarray(V, dtype=float) @ basis.T
    restricted = basis @ vb
    defect = float(np.linalg.norm(vb - basis.T @ restricted, 2)) if basis.size else 0.0
    return restricted, defect


def meanfield_rate(triple: AttentionTriple, which: str = "slowest") -> float:
    """Eigenvalue of V restricted to Im(A)^perp used in the mean-field time bounds.

    ``leading`` is lambda_1 of the restriction (largest modulus); ``slowest``
    is its smallest real part, the rate that actually controls e^{-tV}.
    """
    basis = orth_complement_basis(list(image_basis(triple.A)), d=triple.d)
    if basis.shape[0] == 0:
        raise AttnLabError("Im(A)^perp is trivial")
    restricted, defect = _restricted_operator(triple.V, basis)
    if defect > 1e-9 * max(1.0, op_norm(triple.V)):
        raise AttnLabError("Im(A)^perp is not invariant under V")
    lam = eig(restricted).eigenvalues
    if which == "leading":
        val = lam[0]
        if abs(val.imag) > 1e-12 or val.real <= 0:
            raise NonPositiveEigenvalue(f"leading restricted eigenvalue {val} is not a positive real")
        return float(val.real)
    if which == "slowest":
        val = float(lam.real.min())
        if val <= 0:
            raise NonPositiveEigenvalue(f"restricted spectrum has real part {val} <= 0")
        return val
    raise AttnLabError(f"unknown eigenvalue choice {which!r}")


def meanfield_T_delta_bound(cloud0, triple: AttentionTriple, delta: float, which: str = "slowest") -> float:
    """log(max_i |z_i(0) - m(0)| / delta) / lambda, clamped at 0."""
    z = as_cloud(cloud0, triple.d)
    if not delta > 0:
        raise AttnLabError("delta must be positive")
    ib = image_basis(triple.A)
    if ib.size and np.max(np.abs(z @ ib.T)) > 1e-9 * max(1.0, float(np.abs(z).max())):
        raise AttnLabError("tokens are not in Im(A)^perp")
    lam = meanfield_rate(triple, which)
    dev = float(np.max(np.linalg.norm(z - z.mean(axis=0), axis=1)))
    if dev == 0:
        return 0.0
    return max(0.0, math.log(dev / delta) / lam)


def meanfield_T_delta_prob_bound(C: float, d_perp: int, n: int, delta: float, eps: float, lam: float) -> float:
    """log(sqrt(2 C d log(1/eps) n) / delta) / lambda; holds with probability >= 1 - 2 eps."""
    if not 0 < eps < 0.5 or not C > 0 or not lam > 0:
        raise AttnLabError("need eps in (0, 1/2), C > 0 and lambda > 0")
    return math.log(math.sqrt(2.0 * C * d_perp * math.log(1.0 / eps) * n) / delta) / lam


@dataclass(frozen=True)
class TStarBound:
    value: float
    first_branch: float
    second_branch: float
    asymptotic: float  # log(1/delta) / eps_gap, the O(log(delta)/eps) scale

    def to_dict(self) -> dict:
        return {k: _num(getattr(self, k)) for k in ("value", "first_branch", "second_branch", "asymptotic")}


def t_star_upper_bound(
    delta: float,
    eps_gap: float,
    lambda1: float,
    c11: float,
    z_sup: float,
    C0: float,
    N: float,
    d_cluster: float,
) -> TStarBound:
    """max{ log(z_sup / (delta^2 c11)) / eps_gap,
            log(log(delta C0 N / d_cluster) / (c11 delta)) / (2 lambda1) }."""
    if not eps_gap > 0 or not c11 > 0:
        raise AttnLabError("need eps_gap > 0 and c11 > 0")
    if min(delta, lambda1, z_sup, C0, N, d_cluster) <= 0:
        raise InvalidLog("all logarithm arguments must be positive")
    first = math.log(z_sup / (delta**2 * c11)) / eps_gap
    inner = math.log(delta * C0 * N / d_cluster)
    if inner <= 0:
        raise InvalidLog(f"inner logarithm log(delta C0 N / d) = {inner:.3g} is not positive")
    second = math.log(inner / (c11 * delta)) / (2.0 * lambda1)
    return TStarBound(
        value=max(first, second), first_branch=first, second_branch=second,
        asymptotic=math.log(1.0 / delta) / eps_gap,
    )
