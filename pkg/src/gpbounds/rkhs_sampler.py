"""
Random ground-truth functions with a prescribed RKHS norm.

Two generators are available. ``sample_pre_rkhs`` builds finite kernel
expansions f = sum_n alpha_n k(c_n, .) over distinct grid centers, whose
norm is sqrt(alpha^T K alpha). ``sample_onb`` uses the explicit orthonormal
basis of the Gaussian RKHS on the real line,

    e_n(x) = sqrt((2 s)^n / n!) x^n exp(-s x^2),   s = 1 / (2 lengthscale^2),

so the norm is simply the Euclidean norm of the coefficients. The two
generators produce functions of visibly different shape for the same norm,
which matters when judging bounds empirically.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from .kernels import Family, Grid, KernelSpec, gram, cross_matrix

__all__ = [
    "DegenerateDraw",
    "PreRkhs",
    "Onb",
    "RkhsFunction",
    "onb_basis",
    "sample_pre_rkhs",
    "sample_onb",
    "evaluate",
]

_MAX_ATTEMPTS = 100
_DEGENERATE = 1e-14


class DegenerateDraw(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class PreRkhs:
    centers: np.ndarray
    coefficients: np.ndarray
    kernel: KernelSpec

    tag = "pre_rkhs"

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        K = cross_matrix(self.kernel, self.centers, x.reshape(-1))
        return (self.coefficients @ K).reshape(x.shape)

    def norm(self):
        K = gram(self.kernel, self.centers)
        return float(np.sqrt(max(self.coefficients @ K @ self.coefficients, 0.0)))


@dataclass(frozen=True, eq=False)
class Onb:
    basis_indices: np.ndarray
    coefficients: np.ndarray
    kernel: KernelSpec

    tag = "onb"

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        E = onb_basis(self.basis_indices, x.reshape(-1), self.kernel.lengthscale)
        return (self.coefficients @ E).reshape(x.shape)

    def norm(self):
        return float(np.linalg.norm(self.coefficients))


@dataclass(frozen=True, eq=False)
class RkhsFunction:
    representation: PreRkhs | Onb
    declared_norm: float

    def __call__(self, x):
        return self.representation(x)

    @property
    def kernel(self):
        return self.representation.kernel

    def norm(self):
        """RKHS norm recomputed from the representation."""
        return self.representation.norm()

    def to_dict(self):
        r = self.representation
        d = {
            "representation": r.tag,
            "kernel": r.kernel.to_dict(),
            "coefficients": [float(c) for c in r.coefficients],
            "declared_norm": self.declared_norm,
        }
        if isinstance(r, PreRkhs):
            d["centers"] = [float(c) for c in r.centers]
        else:
            d["basis_indices"] = [int(i) for i in r.basis_indices]
        return d

    @classmethod
    def from_dict(cls, d):
        kernel = KernelSpec.from_dict(d["kernel"])
        coef = np.asarray(d["coefficients"], dtype=float)
        if d["representation"] == PreRkhs.tag:
            rep = PreRkhs(np.asarray(d["centers"], dtype=float), coef, kernel)
        elif d["representation"] == Onb.tag:
            rep = Onb(np.asarray(d["basis_indices"], dtype=int), coef, kernel)
        else:
            raise ValueError(f"unknown representation {d['representation']!r}")
        return cls(rep, float(d["declared_norm"]))

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)
            fh.write("\n")

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def evaluate(f: RkhsFunction, x):
    return f(x)


def onb_basis(indices, x, lengthscale) -> np.ndarray:
    """Matrix of e_n(x_j), shape (len(indices), len(x)).

    Weights are formed in log space; the factorials overflow near n = 50
    otherwise.
    """
    n = np.asarray(indices, dtype=int).reshape(-1, 1)
    x = np.asarray(x, dtype=float).reshape(1, -1)
    s = 1.0 / (2.0 * lengthscale ** 2)
    log_w = 0.5 * (n * np.log(2.0 * s) - gammaln(n + 1.0))
    with np.errstate(divide="ignore", invalid="ignore"):
        log_abs = log_w + n * np.log(np.abs(x)) - s * x ** 2
    out = np.exp(log_abs)
    sign = np.where((x < 0) & (n % 2 == 1), -1.0, 1.0)
    out = sign * out
    # x = 0: only the constant basis function survives (0**0 == 1)
    zero = np.broadcast_to(x == 0, out.shape)
    out = np.where(zero, np.where(n == 0, 1.0, 0.0), out)
    return out


def _grid_points(grid):
    return grid.points if isinstance(grid, Grid) else np.asarray(grid, dtype=float).reshape(-1)


def sample_pre_rkhs(kernel: KernelSpec, grid, B, n_min=5, n_max=200, sigma_f=1.0,
                    rng=None) -> RkhsFunction:
    """Kernel expansion over ``N ~ U{n_min..n_max}`` distinct grid centers.

    ``sigma_f`` is the standard deviation of the raw coefficients; the draw
    is then rescaled to RKHS norm ``B``.
    """
    rng = np.random.default_rng(rng)
    pts = _grid_points(grid)
    if not 1 <= n_min <= n_max <= pts.size:
        raise ValueError(f"need 1 <= n_min <= n_max <= {pts.size}")
    if B < 0:
        raise ValueError("B must be nonnegative")
    for _ in range(_MAX_ATTEMPTS):
        n = int(rng.integers(n_min, n_max + 1))
        centers = np.sort(pts[rng.choice(pts.size, size=n, replace=False)])
        raw = rng.normal(0.0, sigma_f, size=n)
        sq = float(raw @ gram(kernel, centers) @ raw)
        if sq > _DEGENERATE:
            alpha = (B / np.sqrt(sq)) * raw
            return RkhsFunction(PreRkhs(centers, alpha, kernel), float(B))
    raise DegenerateDraw(f"no usable coefficient draw in {_MAX_ATTEMPTS} attempts")


def sample_onb(lengthscale, grid=None, B=1.0, max_basis=50, n_min=5, n_max=50,
               rng=None) -> RkhsFunction:
    """Random combination of ``N ~ U{n_min..n_max}`` of the first ``max_basis``
    ONB functions of the unit-variance SE kernel.

    ``grid`` is accepted for symmetry with ``sample_pre_rkhs``; the draw does
    not depend on it.
    """
    rng = np.random.default_rng(rng)
    if not 1 <= n_min <= n_max <= max_basis:
        raise ValueError(f"need 1 <= n_min <= n_max <= {max_basis}")
    if B < 0:
        raise ValueError("B must be nonnegative")
    kernel = KernelSpec(Family.SE, lengthscale, 1.0)
    for _ in range(_MAX_ATTEMPTS):
        n = int(rng.integers(n_min, n_max + 1))
        idx = np.sort(rng.choice(max_basis, size=n, replace=False))
        raw = rng.normal(0.0, 1.0, size=n)
        nrm = float(np.linalg.norm(raw))
        if nrm ** 2 > _DEGENERATE:
            return RkhsFunction(Onb(idx, (B / nrm) * raw, kernel), float(B))
    raise DegenerateDraw(f"no usable coefficient draw in {_MAX_ATTEMPTS} attempts")
