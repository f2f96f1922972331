"""
Frequentist tube half-widths around the GP posterior mean.

Four constructions are provided:

* ``Nominal``: beta_N * sigma_N(x), with beta_N built from
  log det(K_N + max(1, lam) I).
* ``Independent``: B * sigma_N(x) + eta_N(x) for independent subgaussian
  noise; needs no log-determinant.
* ``RobustNominal``: the nominal tube widened for a kernel that differs from
  the ground-truth kernel by at most ``eps_tilde`` in sup norm.
* ``RobustIndependent``: the same widening applied to the independent tube.

Vector norms are Euclidean and matrix norms are spectral throughout.
"""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass

import numpy as np

from . import numerics
from .gpr import GprPosterior, Query

__all__ = [
    "Method",
    "BoundParams",
    "TubeEvaluation",
    "beta_nominal",
    "beta_from_logdet",
    "nominal_halfwidth",
    "eta_independent",
    "independent_halfwidth",
    "robust_C",
    "robust_S2",
    "robust_halfwidth",
    "robust_independent_halfwidth",
    "tube",
    "halfwidth_table",
    "write_tube_csv",
]


class Method(enum.Enum):
    NOMINAL = "nominal"
    INDEPENDENT = "independent"
    ROBUST_NOMINAL = "robust_nominal"
    ROBUST_INDEPENDENT = "robust_independent"


@dataclass(frozen=True)
class BoundParams:
    B: float
    R: float
    lam: float
    delta: float
    eps_tilde: float = 0.0

    def __post_init__(self):
        if not self.B >= 0:
            raise ValueError("B must be nonnegative")
        if not self.R >= 0:
            raise ValueError("R must be nonnegative")
        if not self.lam > 0:
            raise ValueError("lam must be positive")
        if not 0 < self.delta < 1:
            raise ValueError("delta must lie strictly inside (0, 1)")
        if not self.eps_tilde >= 0:
            raise ValueError("eps_tilde must be nonnegative")

    def with_delta(self, delta):
        return BoundParams(self.B, self.R, self.lam, delta, self.eps_tilde)

    def with_eps(self, eps_tilde):
        return BoundParams(self.B, self.R, self.lam, self.delta, eps_tilde)


@dataclass(frozen=True, eq=False)
class TubeEvaluation:
    query: np.ndarray
    mean: np.ndarray
    halfwidth: np.ndarray
    method: Method

    @property
    def lower(self):
        return self.mean - self.halfwidth

    @property
    def upper(self):
        return self.mean + self.halfwidth

    def contains(self, values) -> np.ndarray:
        return np.abs(np.asarray(values, dtype=float) - self.mean) <= self.halfwidth


def _check(post: GprPosterior, p: BoundParams):
    if not math.isclose(post.lam, p.lam, rel_tol=1e-12, abs_tol=0.0):
        raise ValueError(f"posterior was fitted with lam={post.lam}, bound params use lam={p.lam}")


def _query(post, x, q):
    return post.query(x) if q is None else q


def beta_shift(n, lam, eps_tilde=0.0):
    return max(1.0, lam + n * eps_tilde)


def beta_from_logdet(ld, B, R, delta):
    """B + R * sqrt(logdet - 2 log delta); vectorized over ``delta``."""
    return B + R * np.sqrt(ld - 2.0 * np.log(delta))


def shifted_logdet(post: GprPosterior, eps_tilde=0.0) -> float:
    shift = beta_shift(post.n, post.lam, eps_tilde)
    return numerics.logdet(numerics.cholesky(post.gram, shift))


def beta_nominal(post: GprPosterior, p: BoundParams) -> float:
    """Scaling beta_N; with eps_tilde > 0 this is the robust beta for lam + N*eps_tilde."""
    _check(post, p)
    return float(beta_from_logdet(shifted_logdet(post, p.eps_tilde), p.B, p.R, p.delta))


def nominal_halfwidth(post, p, x, q: Query | None = None) -> TubeEvaluation:
    if p.eps_tilde != 0:
        raise ValueError("nominal tube requires eps_tilde == 0; use robust_halfwidth")
    q = _query(post, x, q)
    beta = beta_nominal(post, p)
    return TubeEvaluation(q.x, q.mean, beta * q.sd, Method.NOMINAL)


def _hsu_factor(n, delta):
    # Hsu-Kakade-Zhang quadratic-form tail for ||eps||^2 / R^2
    t = math.log(1.0 / delta)
    return math.sqrt(n + 2.0 * math.sqrt(n) * math.sqrt(t) + 2.0 * t)


def eta_independent(post, p, x, q: Query | None = None):
    if p.eps_tilde != 0:
        raise ValueError("eta_independent requires eps_tilde == 0")
    _check(post, p)
    q = _query(post, x, q)
    wnorm = np.linalg.norm(q.weights, axis=0)
    out = p.R * wnorm * _hsu_factor(post.n, p.delta)
    return out if np.ndim(x) else float(out[0])


def independent_halfwidth(post, p, x, q: Query | None = None) -> TubeEvaluation:
    q = _query(post, x, q)
    eta = np.atleast_1d(eta_independent(post, p, q.x, q))
    return TubeEvaluation(q.x, q.mean, p.B * q.sd + eta, Method.INDEPENDENT)


def _robust_terms(post: GprPosterior, p: BoundParams, q: Query):
    """C_N(x) and S^2_N(x) at every query point."""
    _check(post, p)
    eps = p.eps_tilde
    root_n_eps = math.sqrt(post.n) * eps
    inv_norm = numerics.inv_spectral_norm(post.factor)
    knorm = np.linalg.norm(q.kvec, axis=0)
    wnorm = np.linalg.norm(q.weights, axis=0)
    # both terms enter with a plus sign; dropping the last one would not bound the error
    C = (1.0 / post.lam + inv_norm) * (knorm + root_n_eps) + inv_norm * root_n_eps
    S2 = eps + root_n_eps * wnorm + (root_n_eps + knorm) * C
    return C, S2, wnorm


def robust_C(post, p, x, q: Query | None = None):
    q = _query(post, x, q)
    C, _, _ = _robust_terms(post, p, q)
    return C if np.ndim(x) else float(C[0])


def robust_S2(post, p, x, q: Query | None = None):
    q = _query(post, x, q)
    _, S2, _ = _robust_terms(post, p, q)
    return S2 if np.ndim(x) else float(S2[0])


def robust_halfwidth(post, p, x, q: Query | None = None) -> TubeEvaluation:
    q = _query(post, x, q)
    C, S2, _ = _robust_terms(post, p, q)
    beta = beta_nominal(post, p)
    hw = beta * np.sqrt(q.variance + S2) + C * post.targets_norm
    return TubeEvaluation(q.x, q.mean, hw, Method.ROBUST_NOMINAL)


def robust_independent_halfwidth(post, p, x, q: Query | None = None) -> TubeEvaluation:
    q = _query(post, x, q)
    C, S2, wnorm = _robust_terms(post, p, q)
    eta = p.R * (wnorm + C) * _hsu_factor(post.n, p.delta)
    hw = p.B * np.sqrt(q.variance + S2) + C * post.targets_norm + eta
    return TubeEvaluation(q.x, q.mean, hw, Method.ROBUST_INDEPENDENT)


def halfwidth_table(post, p, deltas, method=Method.NOMINAL, q: Query | None = None, x=None):
    """Half-widths for several confidence levels at once.

    Returns ``(betas, hw)`` where ``hw[i]`` is the tube for ``deltas[i]`` and
    ``betas[i]`` the scaling used (NaN for the independent-noise tubes, which
    have none). ``p.delta`` is ignored.
    """
    method = Method(method)
    q = _query(post, x, q)
    _check(post, p)
    deltas = np.asarray(deltas, dtype=float)
    hw = np.empty((deltas.size, q.x.size))
    betas = np.full(deltas.size, np.nan)
    if method is Method.NOMINAL:
        if p.eps_tilde != 0:
            raise ValueError("nominal tube requires eps_tilde == 0; use robust_halfwidth")
        betas = beta_from_logdet(shifted_logdet(post), p.B, p.R, deltas)
        hw[:] = betas[:, None] * q.sd
    elif method is Method.INDEPENDENT:
        if p.eps_tilde != 0:
            raise ValueError("independent tube requires eps_tilde == 0")
        wnorm = np.linalg.norm(q.weights, axis=0)
        for i, d in enumerate(deltas):
            hw[i] = p.B * q.sd + p.R * wnorm * _hsu_factor(post.n, d)
    else:
        C, S2, wnorm = _robust_terms(post, p, q)
        root = np.sqrt(q.variance + S2)
        offset = C * post.targets_norm
        if method is Method.ROBUST_NOMINAL:
            betas = beta_from_logdet(shifted_logdet(post, p.eps_tilde), p.B, p.R, deltas)
            hw[:] = betas[:, None] * root + offset
        else:
            for i, d in enumerate(deltas):
                hw[i] = p.B * root + offset + p.R * (wnorm + C) * _hsu_factor(post.n, d)
    return betas, hw


_DISPATCH = {
    Method.NOMINAL: nominal_halfwidth,
    Method.INDEPENDENT: independent_halfwidth,
    Method.ROBUST_NOMINAL: robust_halfwidth,
    Method.ROBUST_INDEPENDENT: robust_independent_halfwidth,
}


def tube(post, p, x, method=Method.NOMINAL, q: Query | None = None) -> TubeEvaluation:
    return _DISPATCH[Method(method)](post, p, x, q)


def write_tube_csv(path, tubes):
    """Write one or more TubeEvaluations as rows ``x,mean,halfwidth,method``."""
    if isinstance(tubes, TubeEvaluation):
        tubes = [tubes]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x", "mean", "halfwidth", "method"])
        for t in tubes:
            for xi, mi, hi in zip(t.query, t.mean, t.halfwidth):
                w.writerow([format(xi, ".17g"), format(mi, ".17g"), format(hi, ".17g"), t.method.value])
