"""
Stationary covariance functions on the real line.

Two families are supported, the squared exponential

    k(x, x') = variance * exp(-(x - x')**2 / (2 * lengthscale**2))

and the Matern kernel with smoothness 3/2

    k(x, x') = variance * (1 + sqrt(3) r / lengthscale) * exp(-sqrt(3) r / lengthscale)

with r = |x - x'|. All evaluation routines broadcast over numpy arrays.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

__all__ = [
    "Family",
    "KernelSpec",
    "Grid",
    "eval",
    "gram",
    "cross_vector",
    "cross_matrix",
    "sup_distance",
]

_SQRT3 = np.sqrt(3.0)


class Family(enum.Enum):
    SE = "se"
    MATERN32 = "matern32"


@dataclass(frozen=True)
class KernelSpec:
    family: Family
    lengthscale: float
    variance: float = 1.0

    def __post_init__(self):
        if isinstance(self.family, str):
            object.__setattr__(self, "family", Family(self.family.lower()))
        if not self.lengthscale > 0:
            raise ValueError(f"lengthscale must be positive, got {self.lengthscale}")
        if not self.variance > 0:
            raise ValueError(f"variance must be positive, got {self.variance}")
        object.__setattr__(self, "lengthscale", float(self.lengthscale))
        object.__setattr__(self, "variance", float(self.variance))

    @classmethod
    def se(cls, lengthscale, variance=1.0):
        return cls(Family.SE, lengthscale, variance)

    @classmethod
    def matern32(cls, lengthscale, variance=1.0):
        return cls(Family.MATERN32, lengthscale, variance)

    def __call__(self, x, x2):
        """Evaluate k(x, x2) with numpy broadcasting."""
        r = np.abs(np.asarray(x, dtype=float) - np.asarray(x2, dtype=float))
        if self.family is Family.SE:
            return self.variance * np.exp(-0.5 * (r / self.lengthscale) ** 2)
        s = _SQRT3 * r / self.lengthscale
        return self.variance * (1.0 + s) * np.exp(-s)

    def to_dict(self):
        return {
            "family": self.family.value,
            "lengthscale": self.lengthscale,
            "variance": self.variance,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(Family(str(d["family"]).lower()), float(d["lengthscale"]),
                   float(d.get("variance", 1.0)))


@dataclass(frozen=True, eq=False)
class Grid:
    """Strictly increasing evaluation points inside a closed interval."""

    points: np.ndarray
    bounds: tuple

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float).reshape(-1)
        lo, hi = float(self.bounds[0]), float(self.bounds[1])
        if pts.size == 0:
            raise ValueError("grid must contain at least one point")
        if pts.size > 1 and not np.all(np.diff(pts) > 0):
            raise ValueError("grid points must be strictly increasing")
        if pts[0] < lo or pts[-1] > hi:
            raise ValueError("grid points must lie within bounds")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "bounds", (lo, hi))

    @classmethod
    def uniform(cls, low, high, n):
        return cls(np.linspace(low, high, int(n)), (low, high))

    def __len__(self):
        return self.points.size

    def to_dict(self):
        return {"low": self.bounds[0], "high": self.bounds[1], "n": len(self)}


def eval(k: KernelSpec, x, x2):
    return k(x, x2)


def gram(k: KernelSpec, X) -> np.ndarray:
    """N x N kernel matrix with entries k(X[i], X[j])."""
    X = np.asarray(X, dtype=float).reshape(-1)
    if X.size == 0:
        raise ValueError("gram needs at least one input")
    return k(X[:, None], X[None, :])


def cross_vector(k: KernelSpec, X, x) -> np.ndarray:
    X = np.asarray(X, dtype=float).reshape(-1)
    if X.size == 0:
        raise ValueError("cross_vector needs at least one input")
    return k(X, float(x))


def cross_matrix(k: KernelSpec, X, Xq) -> np.ndarray:
    """N x M matrix whose column j is cross_vector(k, X, Xq[j])."""
    X = np.asarray(X, dtype=float).reshape(-1)
    Xq = np.asarray(Xq, dtype=float).reshape(-1)
    return k(X[:, None], Xq[None, :])


def sup_distance(k: KernelSpec, k2: KernelSpec, grid) -> float:
    """Largest |k - k2| over all pairs of grid points.

    This is a grid maximum, not the supremum over the whole domain, so the
    returned value is only a valid misspecification bound on that grid.
    """
    pts = grid.points if isinstance(grid, Grid) else np.asarray(grid, dtype=float).reshape(-1)
    if pts.size == 0:
        raise ValueError("grid must be non-empty")
    out = 0.0
    # row blocks keep memory bounded for large grids
    step = max(1, 2_000_000 // pts.size)
    for start in range(0, pts.size, step):
        rows = pts[start:start + step, None]
        diff = np.abs(k(rows, pts[None, :]) - k2(rows, pts[None, :]))
        out = max(out, float(diff.max()))
    return out
