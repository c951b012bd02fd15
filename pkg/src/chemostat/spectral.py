"""Perron-Frobenius tools for essentially non-negative matrices."""

from __future__ import annotations

import dataclasses

import numpy as np

from .errors import DegeneracyError, DomainError, NumericError

__all__ = [
    "PerronPair",
    "spectral_abscissa",
    "perron_pair",
    "mu_hat",
    "collatz_wielandt_bounds",
    "is_essentially_nonnegative",
    "is_irreducible",
]

POSITIVE_THRESHOLD = 1e-13
REAL_TOL = 1e-10
SIMPLE_TOL = 1e-10


def _check_square(A) -> np.ndarray:
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise DomainError(f"expected a square matrix, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise DomainError("matrix has non-finite entries")
    return A


def _scale(A: np.ndarray) -> float:
    return max(1.0, float(np.abs(A).max()))


def is_essentially_nonnegative(A, tol: float = 0.0) -> bool:
    A = np.asarray(A, dtype=float)
    off = A[~np.eye(A.shape[0], dtype=bool)]
    return bool(np.all(off >= -tol))


def is_irreducible(A) -> bool:
    """Strong connectivity of the graph i -> j for A[i, j] > 1e-13 max|A|.

    A 1x1 matrix counts as irreducible only when its entry is nonzero.
    """
    A = np.asarray(A, dtype=float)
    n = A.shape[0]
    if n == 1:
        return bool(A[0, 0] != 0)
    thr = POSITIVE_THRESHOLD * max(float(np.abs(A).max()), np.finfo(float).tiny)
    adj = A > thr
    np.fill_diagonal(adj, False)

    def reaches_all(g: np.ndarray) -> bool:
        seen = np.zeros(n, dtype=bool)
        seen[0] = True
        stack = [0]
        while stack:
            i = stack.pop()
            for j in np.flatnonzero(g[i] & ~seen):
                seen[j] = True
                stack.append(j)
        return bool(seen.all())

    return reaches_all(adj) and reaches_all(adj.T)


def collatz_wielandt_bounds(A) -> tuple[float, float]:
    """(min, max) row sums of A^T, i.e. column sums of A.

    For essentially non-negative A these sandwich lambda(A); row sums of A
    give the same bound through the transpose.
    """
    A = np.asarray(A, dtype=float)
    cols = A.sum(axis=0)
    rows = A.sum(axis=1)
    return max(cols.min(), rows.min()), min(cols.max(), rows.max())


def spectral_abscissa(A) -> float:
    """Largest real part of the eigenvalues of A (dense eigendecomposition)."""
    A = _check_square(A)
    try:
        eig = np.linalg.eigvals(A)
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"eigensolver failed: {exc}") from None
    lam = float(eig.real.max())
    if is_essentially_nonnegative(A):
        lo, hi = collatz_wielandt_bounds(A)
        slack = 1e-10 * _scale(A)
        if not lo - slack <= lam <= hi + slack:
            raise NumericError(f"spectral abscissa {lam} outside Collatz-Wielandt bounds [{lo}, {hi}]")
    return lam


@dataclasses.dataclass(frozen=True, eq=False)
class PerronPair:
    """Dominant eigenvalue with right vector v (|v| = 1) and left vector w (w.v = 1)."""

    lam: float
    v: np.ndarray
    w: np.ndarray

    def residuals(self, A) -> tuple[float, float]:
        A = np.asarray(A, dtype=float)
        return (
            float(np.linalg.norm(A @ self.v - self.lam * self.v)),
            float(np.linalg.norm(self.w @ A - self.lam * self.w)),
        )


def _dominant(A: np.ndarray) -> tuple[float, np.ndarray, np.ndarray]:
    try:
        vals, vecs = np.linalg.eig(A)
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"eigensolver failed: {exc}") from None
    k = int(np.argmax(vals.real))
    return vals, vals[k], vecs[:, k]


def _positive_real(vec: np.ndarray) -> np.ndarray:
    vec = vec.real if np.iscomplexobj(vec) else vec
    # largest-magnitude component fixes the sign
    return vec * np.sign(vec[np.argmax(np.abs(vec))])


def perron_pair(A) -> PerronPair:
    A = _check_square(A)
    if not is_essentially_nonnegative(A):
        raise DomainError("matrix is not essentially non-negative")
    if not is_irreducible(A):
        raise DomainError("matrix is reducible")
    scale = _scale(A)
    vals, lam_c, vec = _dominant(A)
    if abs(lam_c.imag) > REAL_TOL * scale:
        raise NumericError(f"dominant eigenvalue {lam_c} is not real")
    lam = float(lam_c.real)
    rest = np.delete(vals, int(np.argmax(vals.real)))
    if rest.size and np.min(np.abs(rest - lam)) <= SIMPLE_TOL * scale:
        raise DegeneracyError(f"dominant eigenvalue {lam} is not simple")

    v = _positive_real(vec)
    v = v / np.linalg.norm(v)

    tvals, tvecs = np.linalg.eig(A.T)
    k = int(np.argmin(np.abs(tvals - lam)))
    w = _positive_real(tvecs[:, k])
    w = w / (w @ v)
    return PerronPair(lam=lam, v=v, w=w)


def mu_hat(model) -> float:
    """Limit of u_c(eps) as eps -> infinity: w^T D(s_in) v with T(s_in) v = 0,
    w^T T(s_in) = 0, w^T v = 1."""
    pair = perron_pair(model.T(model.s_in))
    return float(pair.w @ (model.mu(model.s_in) * pair.v))
