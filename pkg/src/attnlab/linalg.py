"""Small dense linear algebra used throughout the package.

Matrices are plain 2-D ``numpy`` float arrays; :func:`as_matrix` is the single
validation gate. Eigen-solves and the Padé matrix exponential are delegated to
LAPACK (through numpy/scipy); this module adds the ordering, tolerances and
caching conventions the rest of the package relies on.
"""
from __future__ import annotations

import functools
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.linalg

from .errors import AttnLabError, NonSquare, NumericalFailure

DEFAULT_RANK_TOL = 1e-8
# eigenvector matrices worse conditioned than this get no dual basis
DUAL_BASIS_MAX_COND = 1e8
REAL_TOL = 1e-8


def as_matrix(m, square: bool = False) -> np.ndarray:
    a = np.array(m, dtype=float)
    if a.ndim == 1:
        a = a.reshape(1, -1)
    if a.ndim != 2 or a.size == 0:
        raise AttnLabError(f"expected a non-empty 2-D matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise AttnLabError("matrix entries must be finite")
    if square and a.shape[0] != a.shape[1]:
        raise NonSquare(f"expected a square matrix, got shape {a.shape}")
    return a


@dataclass(frozen=True, eq=False)
class Spectrum:
    """Eigenvalues sorted by non-increasing modulus.

    ``right_eigenvectors`` holds eigenvectors as columns and ``dual_basis`` the
    matching linear functionals as rows, so ``dual_basis @ right_eigenvectors``
    is the identity. Both are ``None`` unless the matrix has a real,
    well-conditioned eigenbasis.
    """

    eigenvalues: np.ndarray
    right_eigenvectors: np.ndarray | None = None
    dual_basis: np.ndarray | None = None

    @property
    def has_dual_basis(self) -> bool:
        return self.dual_basis is not None

    def coordinates(self, points) -> np.ndarray:
        """Spectral coordinates phi*_k(z) of each row of ``points``."""
        if self.dual_basis is None:
            raise AttnLabError("no dual basis available")
        return np.asarray(points, dtype=float) @ self.dual_basis.T


def _order(eigenvalues: np.ndarray) -> np.ndarray:
    """Indices sorting by modulus, then real part, then imaginary part (all descending)."""

    def tol(a, b):
        return 1e-10 * max(1.0, abs(a), abs(b))

    def cmp(i, j):
        a, b = eigenvalues[i], eigenvalues[j]
        for x, y in ((abs(a), abs(b)), (a.real, b.real), (a.imag, b.imag)):
            if abs(x - y) > tol(x, y):
                return -1 if x > y else 1
        return 0

    return np.array(sorted(range(len(eigenvalues)), key=functools.cmp_to_key(cmp)), dtype=int)


def eig(m) -> Spectrum:
    a = as_matrix(m, square=True)
    try:
        w, vecs = np.linalg.eig(a)
    except np.linalg.LinAlgError as exc:
        raise NumericalFailure(f"eigenvalue iteration did not converge: {exc}") from exc
    w = w.astype(complex)
    idx = _order(w)
    w = w[idx]
    vecs = vecs[:, idx]

    scale = max(1.0, float(np.max(np.abs(w))))
    if np.any(np.abs(w.imag) > REAL_TOL * scale) or np.any(np.abs(np.imag(vecs)) > REAL_TOL):
        return Spectrum(eigenvalues=w)
    phi = np.real(vecs).astype(float)
    # fix each eigenvector's sign: largest-magnitude entry positive
    for k in range(phi.shape[1]):
        j = int(np.argmax(np.abs(phi[:, k])))
        if phi[j, k] < 0:
            phi[:, k] = -phi[:, k]
    w = np.where(np.abs(w.imag) <= REAL_TOL * scale, w.real + 0j, w)
    if not np.isfinite(np.linalg.cond(phi)) or np.linalg.cond(phi) >= DUAL_BASIS_MAX_COND:
        return Spectrum(eigenvalues=w)
    dual = np.linalg.inv(phi)
    if np.max(np.abs(dual @ phi - np.eye(len(w)))) > 1e-8:
        return Spectrum(eigenvalues=w)
    return Spectrum(eigenvalues=w, right_eigenvectors=phi, dual_basis=dual)


def mat_exp(m, t: float = 1.0) -> np.ndarray:
    """Return exp(t * m) (scaling-and-squaring Padé)."""
    a = as_matrix(m, square=True)
    return scipy.linalg.expm(t * a)


def scaled_exp(m, t: float, spectrum: Spectrum | None = None) -> tuple[float, np.ndarray]:
    """Return ``(log_scale, E)`` with exp(t*m) == exp(log_scale) * E.

    ``log_scale = t * max Re(lambda)`` so that ``E`` stays O(1) for t >= 0 even
    when exp(t*m) itself overflows. Uses the cached eigendecomposition when
    ``spectrum`` carries a real eigenbasis.
    """
    a = np.asarray(m, dtype=float)
    d = a.shape[0]
    if t == 0:
        return 0.0, np.eye(d)
    if spectrum is not None and spectrum.right_eigenvectors is not None:
        lam = spectrum.eigenvalues.real
        mu = float(lam.max())
        phi = spectrum.right_eigenvectors
        return t * mu, (phi * np.exp(t * (lam - mu))) @ spectrum.dual_basis
    if spectrum is None:
        spectrum = eig(a)
    mu = float(spectrum.eigenvalues.real.max())
    return t * mu, scipy.linalg.expm(t * (a - mu * np.eye(d)))


def op_norm(m) -> float:
    a = as_matrix(m)
    return float(np.linalg.norm(a, 2))


def singular_values(m) -> np.ndarray:
    return np.linalg.svd(as_matrix(m), compute_uv=False)


def numerical_rank(m, rel_tol: float = DEFAULT_RANK_TOL) -> int:
    if not 0 < rel_tol < 1:
        raise AttnLabError("rel_tol must lie in (0, 1)")
    s = singular_values(m)
    if s[0] == 0:
        return 0
    return int(np.sum(s > rel_tol * s[0]))


@dataclass(frozen=True)
class SpectralGap:
    lambda1: complex
    gap: float
    lambda1_real: bool
    # <A phi_1, phi_1> > 0, only when an attention matrix was supplied
    c11_positive: bool | None = None

    @property
    def phase_transition_hypotheses_hold(self) -> bool:
        return self.lambda1_real and self.gap > 0 and self.c11_positive is not False


def spectral_gap(m, attention=None) -> SpectralGap:
    """lambda_1 - |lambda_2| of ``m``.

    For a 1x1 matrix |lambda_2| is taken as 0. If ``attention`` (A = K^T Q) is
    given and ``m`` has a real eigenbasis, also reports whether
    <A phi_1, phi_1> > 0 with phi_1 the unit leading eigenvector.
    """
    spec = eig(m)
    lam = spec.eigenvalues
    l1 = complex(lam[0])
    second = abs(lam[1]) if len(lam) > 1 else 0.0
    is_real = abs(l1.imag) <= REAL_TOL * max(1.0, abs(l1))
    c11 = None
    if attention is not None and spec.right_eigenvectors is not None:
        phi1 = spec.right_eigenvectors[:, 0]
        phi1 = phi1 / np.linalg.norm(phi1)
        c11 = bool(phi1 @ as_matrix(attention, square=True) @ phi1 > 0)
    return SpectralGap(lambda1=l1, gap=float(l1.real - second), lambda1_real=bool(is_real), c11_positive=c11)


def orth_complement_basis(vectors, d: int | None = None, rel_tol: float = 1e-10) -> np.ndarray:
    """Orthonormal basis (rows) of the orthogonal complement of span(vectors)."""
    vs = [np.asarray(v, dtype=float).ravel() for v in vectors]
    if d is None:
        if not vs:
            raise AttnLabError("dimension needed when no vectors are given")
        d = vs[0].size
    if not vs:
        return np.eye(d)
    stacked = np.vstack(vs)
    if stacked.shape[1] != d or not np.all(np.isfinite(stacked)):
        raise AttnLabError("vectors must be finite and of dimension d")
    _, s, vt = np.linalg.svd(stacked, full_matrices=True)
    rank = int(np.sum(s > rel_tol * s[0])) if s[0] > 0 else 0
    return vt[rank:].copy()


def image_basis(m, rel_tol: float = 1e-10) -> np.ndarray:
    """Orthonormal basis (rows) of the column space of ``m``."""
    a = as_matrix(m)
    u, s, _ = np.linalg.svd(a, full_matrices=False)
    if s[0] == 0:
        return np.zeros((0, a.shape[0]))
    rank = int(np.sum(s > rel_tol * s[0]))
    return u[:, :rank].T.copy()


def read_matrix(path) -> np.ndarray:
    """Comma-separated text, '#' comment lines, one row per line, no header."""
    rows = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        s = line.strip()
        if not s or s.startswith("#"):
            continue
        try:
            rows.append([float(x) for x in s.split(",")])
        except ValueError as exc:
            raise AttnLabError(f"{path}:{lineno}: {exc}") from exc
    if not rows:
        raise AttnLabError(f"{path}: no data rows")
    if len({len(r) for r in rows}) != 1:
        raise AttnLabError(f"{path}: ragged rows")
    return as_matrix(rows)


def write_matrix(path, m, comment: str | None = None) -> None:
    a = as_matrix(m)
    lines = []
    if comment:
        lines += [f"# {c}" for c in comment.splitlines()]
    lines += [",".join(repr(float(x)) for x in row) for row in a]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
