"""
Dense symmetric linear algebra used by the posterior and the bounds.

Everything is float64. Matrices are small (a few hundred rows at most) so
plain dense factorizations are used throughout.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.linalg import solve_triangular

__all__ = [
    "FactorizationFailure",
    "CholeskyFactor",
    "cholesky",
    "logdet",
    "solve",
    "inv_spectral_norm",
    "jacobi_eigenvalues",
]


class FactorizationFailure(ArithmeticError):
    """K + shift*I is not numerically positive definite."""


@dataclass(frozen=True, eq=False)
class CholeskyFactor:
    L: np.ndarray
    shift: float
    matrix: np.ndarray  # K + shift*I, kept for the spectral norm

    @property
    def n(self):
        return self.L.shape[0]

    @cached_property
    def L_inv(self):
        """Explicit L^-1; many right-hand sides are cheaper as one matrix product."""
        Li = solve_triangular(self.L, np.eye(self.n), lower=True, check_finite=False)
        Li.setflags(write=False)
        return Li


def cholesky(K, shift=0.0) -> CholeskyFactor:
    K = np.asarray(K, dtype=float)
    if K.ndim != 2 or K.shape[0] != K.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {K.shape}")
    if shift < 0:
        raise ValueError("shift must be nonnegative")
    A = K + float(shift) * np.eye(K.shape[0])
    try:
        L = np.linalg.cholesky(A)
    except np.linalg.LinAlgError as exc:
        raise FactorizationFailure(
            f"matrix of size {K.shape[0]} with shift {shift} is not positive definite"
        ) from exc
    d = np.diag(L)
    if not np.all(d > 0) or not np.all(np.isfinite(d)):
        raise FactorizationFailure("non-positive pivot in Cholesky factorization")
    L.setflags(write=False)
    A.setflags(write=False)
    return CholeskyFactor(L, float(shift), A)


def logdet(F: CholeskyFactor) -> float:
    """log det(K + shift*I) from the factor diagonal."""
    return 2.0 * float(np.sum(np.log(np.diag(F.L))))


def solve(F: CholeskyFactor, b) -> np.ndarray:
    """Solve (K + shift*I) x = b; b may be a vector or an N x M block."""
    b = np.asarray(b, dtype=float)
    if b.shape[0] != F.n:
        raise ValueError(f"dimension mismatch: factor is {F.n}, right-hand side has {b.shape[0]} rows")
    z = solve_triangular(F.L, b, lower=True, check_finite=False)
    return solve_triangular(F.L, z, lower=True, trans="T", check_finite=False)


def inv_spectral_norm(F: CholeskyFactor) -> float:
    """Spectral norm of (K + shift*I)^-1, i.e. 1 / smallest eigenvalue."""
    lam_min = np.linalg.eigvalsh(F.matrix)[0]
    return 1.0 / float(lam_min)


def jacobi_eigenvalues(A, tol=1e-12, max_sweeps=100) -> np.ndarray:
    """Eigenvalues of a symmetric matrix by cyclic Jacobi rotations.

    Sweeps over all off-diagonal pairs until the off-diagonal Frobenius mass
    drops below ``tol`` times the Frobenius norm of ``A``. Returns the
    eigenvalues in ascending order.
    """
    A = np.array(A, dtype=float)
    n = A.shape[0]
    if n == 1:
        return A.reshape(1).copy()
    scale = np.linalg.norm(A)
    if scale == 0.0:
        return np.zeros(n)
    for _ in range(max_sweeps):
        off = np.sqrt(2.0 * np.sum(np.triu(A, 1) ** 2))
        if off <= tol * scale:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = A[p, q]
                if abs(apq) < 1e-300:
                    continue
                theta = (A[q, q] - A[p, p]) / (2.0 * apq)
                if theta == 0.0:
                    t = 1.0
                elif abs(theta) > 1e150:
                    t = 0.5 / theta
                else:
                    t = np.sign(theta) / (abs(theta) + np.sqrt(theta * theta + 1.0))
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                rp = A[p, :].copy()
                rq = A[q, :].copy()
                A[p, :] = c * rp - s * rq
                A[q, :] = s * rp + c * rq
                cp = A[:, p].copy()
                cq = A[:, q].copy()
                A[:, p] = c * cp - s * cq
                A[:, q] = s * cp + c * cq
    else:
        raise RuntimeError("Jacobi iteration did not converge")
    return np.sort(np.diag(A))
