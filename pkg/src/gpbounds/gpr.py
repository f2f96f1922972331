"""
Exact zero-mean Gaussian process regression.

The posterior is stored as a Cholesky factor of K + lam*I together with the
weight vector (K + lam*I)^-1 y. ``lam`` is the nominal noise variance of the
likelihood and is deliberately decoupled from the noise that generated the
data.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from . import numerics
from .kernels import KernelSpec, gram, cross_matrix

__all__ = ["Dataset", "GprPosterior", "Query", "fit"]


@dataclass(frozen=True, eq=False)
class Dataset:
    inputs: np.ndarray
    targets: np.ndarray
    noise_sd: float = 0.0
    seed: int = 0
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        x = np.asarray(self.inputs, dtype=float).reshape(-1)
        y = np.asarray(self.targets, dtype=float).reshape(-1)
        if x.size == 0:
            raise ValueError("dataset must contain at least one observation")
        if x.size != y.size:
            raise ValueError(f"{x.size} inputs but {y.size} targets")
        if self.noise_sd < 0:
            raise ValueError("noise_sd must be nonnegative")
        object.__setattr__(self, "inputs", x)
        object.__setattr__(self, "targets", y)

    def __len__(self):
        return self.inputs.size

    def save(self, path):
        """Write ``path`` as CSV (x,y) and ``path.meta.json`` alongside."""
        path = Path(path)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["x", "y"])
            for xi, yi in zip(self.inputs, self.targets):
                w.writerow([format(xi, ".17g"), format(yi, ".17g")])
        meta = {"noise_sd": self.noise_sd, "seed": int(self.seed), **self.metadata}
        with open(_meta_path(path), "w") as fh:
            json.dump(meta, fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path):
        path = Path(path)
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None or reader.fieldnames[:2] != ["x", "y"]:
                raise ValueError(f"{path}: expected header 'x,y'")
            rows = [(float(r["x"]), float(r["y"])) for r in reader]
        if not rows:
            raise ValueError(f"{path}: no observations")
        meta = {}
        if _meta_path(path).exists():
            with open(_meta_path(path)) as fh:
                meta = json.load(fh)
        noise_sd = float(meta.pop("noise_sd", 0.0))
        seed = int(meta.pop("seed", 0))
        x, y = map(np.array, zip(*rows))
        return cls(x, y, noise_sd=noise_sd, seed=seed, metadata=meta)


def _meta_path(path):
    return path.with_name(path.name + ".meta.json")


class Query:
    """Posterior quantities at a batch of query points, shared by the bounds.

    ``kvec`` is N x M with column j equal to k_N(x_j). ``weights`` (the
    solves (K + lam*I)^-1 k_N(x_j)) is only formed when first accessed.
    """

    def __init__(self, x, kvec, half, factor, alpha, prior):
        self.x = x
        self.kvec = kvec
        self._half = half  # L^-1 kvec
        self._factor = factor
        self.mean = kvec.T @ alpha
        # round-off can push the variance slightly negative
        self.variance = np.maximum(prior - np.einsum("ij,ij->j", half, half), 0.0)

    @property
    def sd(self):
        return np.sqrt(self.variance)

    @cached_property
    def weights(self):
        return self._factor.L_inv.T @ self._half


@dataclass(frozen=True, eq=False)
class GprPosterior:
    kernel: KernelSpec
    lam: float
    train_inputs: np.ndarray
    targets: np.ndarray
    gram: np.ndarray
    factor: numerics.CholeskyFactor
    alpha: np.ndarray

    @property
    def n(self):
        return self.train_inputs.size

    @property
    def targets_norm(self):
        return float(np.linalg.norm(self.targets))

    def query(self, x, kvec=None) -> Query:
        """Evaluate the posterior at ``x``.

        ``kvec`` may carry a precomputed cross-kernel block (N x M); it must
        equal ``cross_matrix(kernel, train_inputs, x)``.
        """
        x = np.atleast_1d(np.asarray(x, dtype=float))
        if kvec is None:
            kvec = cross_matrix(self.kernel, self.train_inputs, x)
        half = self.factor.L_inv @ kvec
        return Query(x, kvec, half, self.factor, self.alpha, self.kernel(x, x))

    def mean(self, x):
        q = self.query(x)
        return q.mean if np.ndim(x) else float(q.mean[0])

    def variance(self, x):
        q = self.query(x)
        return q.variance if np.ndim(x) else float(q.variance[0])

    def cross_weights(self, x) -> np.ndarray:
        """(K + lam*I)^-1 k_N(x) for a single query point."""
        kvec = cross_matrix(self.kernel, self.train_inputs, [float(x)])[:, 0]
        return numerics.solve(self.factor, kvec)


def fit(kernel: KernelSpec, lam: float, data: Dataset, gram_matrix=None) -> GprPosterior:
    """Condition a zero-mean GP with ``kernel`` on ``data``.

    Raises numerics.FactorizationFailure when K + lam*I cannot be factored.
    """
    if not lam > 0:
        raise ValueError(f"nominal noise variance must be positive, got {lam}")
    K = gram(kernel, data.inputs) if gram_matrix is None else np.asarray(gram_matrix, dtype=float)
    F = numerics.cholesky(K, lam)
    alpha = numerics.solve(F, data.targets)
    return GprPosterior(kernel, float(lam), data.inputs, data.targets, K, F, alpha)
