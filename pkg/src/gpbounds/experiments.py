"""
Monte-Carlo coverage harness.

An experiment draws ``n_functions`` ground truths of RKHS norm ``B`` and, for
each, repeats ``n_reps`` learning instances: ``n_train`` grid inputs drawn
uniformly with replacement, Gaussian noise of SD ``noise_sd`` added, a GP
fitted with the model kernel and nominal noise variance ``lam``, and the
configured tube evaluated on the whole grid. An instance fails at level delta
when the tube misses the ground truth at any grid point.

Every ground truth and every instance draws from its own generator, seeded
statelessly from ``(master_seed, function_id[, rep_id])``, so results do not
depend on execution order or on the number of worker processes.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Optional

import numpy as np

from . import bounds, gpr, numerics
from .bounds import BoundParams, Method
from .kernels import Grid, KernelSpec, gram, sup_distance
from .rkhs_sampler import RkhsFunction, sample_onb, sample_pre_rkhs

log = logging.getLogger(__name__)

__all__ = [
    "SweepSpec",
    "ExperimentConfig",
    "PRESETS",
    "preset",
    "InstanceRecord",
    "CoverageReport",
    "SweepReport",
    "sample_truth",
    "run_instance",
    "run_experiment",
    "run_sweep",
    "write_report",
    "write_sweep",
    "aggregate",
]

DEFAULT_DELTAS = (0.1, 0.01, 0.001, 0.0001)


@dataclass(frozen=True)
class SweepSpec:
    n_scalings: int = 20
    low: float = 2.0


@dataclass(frozen=True)
class ExperimentConfig:
    tag: str
    truth_kernel: KernelSpec
    model_kernel: KernelSpec
    sampler: str = "pre_rkhs"
    grid_low: float = -1.0
    grid_high: float = 1.0
    grid_n: int = 1000
    n_functions: int = 50
    n_reps: int = 10000
    n_train: int = 50
    noise_sd: float = 0.5
    lam: float = 0.5
    B: float = 2.0
    R: float = 0.5
    deltas: tuple = DEFAULT_DELTAS
    method: Method = Method.NOMINAL
    sweep: Optional[SweepSpec] = None
    master_seed: int = 0
    # pre-RKHS sampler
    n_min: int = 5
    n_max: int = 200
    sigma_f: float = 1.0
    # ONB sampler
    onb_max_basis: int = 50
    onb_n_min: int = 5
    onb_n_max: int = 50

    def __post_init__(self):
        object.__setattr__(self, "method", Method(self.method))
        object.__setattr__(self, "deltas", tuple(float(d) for d in self.deltas))
        if self.sampler not in ("pre_rkhs", "onb"):
            raise ValueError(f"unknown sampler {self.sampler!r}")
        for name in ("n_functions", "n_reps", "n_train"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be at least 1")
        if self.grid_n < self.n_train:
            raise ValueError("grid must have at least n_train points")
        if not self.deltas or not all(0 < d < 1 for d in self.deltas):
            raise ValueError("deltas must be non-empty and inside (0, 1)")
        if self.sampler == "onb" and (self.truth_kernel.family.value != "se"
                                      or self.truth_kernel.variance != 1.0):
            raise ValueError("ONB sampling needs a unit-variance SE truth kernel")
        if self.sweep is not None and self.method is not Method.NOMINAL:
            raise ValueError("the conservatism sweep rescales the nominal tube only")

    @property
    def grid(self):
        return _grid(self.grid_low, self.grid_high, self.grid_n)

    @property
    def robust(self):
        return self.method in (Method.ROBUST_NOMINAL, Method.ROBUST_INDEPENDENT)

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    def to_dict(self):
        d = dataclasses.asdict(self)
        d["truth_kernel"] = self.truth_kernel.to_dict()
        d["model_kernel"] = self.model_kernel.to_dict()
        d["method"] = self.method.value
        d["deltas"] = list(self.deltas)
        d["sweep"] = None if self.sweep is None else dataclasses.asdict(self.sweep)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        unknown = set(d) - {f.name for f in dataclasses.fields(cls)}
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        d["truth_kernel"] = KernelSpec.from_dict(d["truth_kernel"])
        d["model_kernel"] = KernelSpec.from_dict(d["model_kernel"])
        if d.get("sweep") is not None:
            d["sweep"] = SweepSpec(**d["sweep"])
        if "deltas" in d:
            d["deltas"] = tuple(d["deltas"])
        return cls(**d)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


_SE02 = KernelSpec.se(0.2)
_SE05 = KernelSpec.se(0.5)
_M32 = KernelSpec.matern32(0.2)

PRESETS = {
    "exp_1_1_a": ExperimentConfig("exp_1_1_a", _SE02, _SE02, "pre_rkhs"),
    "exp_1_1_b": ExperimentConfig("exp_1_1_b", _M32, _M32, "pre_rkhs"),
    "exp_1_2_a": ExperimentConfig("exp_1_2_a", _SE02, _SE02, "pre_rkhs",
                                  deltas=(0.01,), sweep=SweepSpec()),
    "exp_1_2_b": ExperimentConfig("exp_1_2_b", _M32, _M32, "pre_rkhs",
                                  deltas=(0.01,), sweep=SweepSpec()),
    "exp_1_2_c": ExperimentConfig("exp_1_2_c", _SE02, _SE02, "onb",
                                  deltas=(0.01,), sweep=SweepSpec()),
    "exp_1_3_a": ExperimentConfig("exp_1_3_a", _SE05, _SE02, "onb"),
    "exp_1_4_a": ExperimentConfig("exp_1_4_a", _SE02, _SE05, "pre_rkhs"),
    "exp_1_4_b": ExperimentConfig("exp_1_4_b", _SE02, _SE05, "onb"),
    "robust": ExperimentConfig("robust", _SE02, _SE05, "onb", method=Method.ROBUST_NOMINAL),
}


def preset(tag, **overrides) -> ExperimentConfig:
    try:
        cfg = PRESETS[tag]
    except KeyError:
        raise KeyError(f"unknown preset {tag!r}; known: {', '.join(sorted(PRESETS))}") from None
    return cfg.replace(**overrides) if overrides else cfg


def _rng(master_seed, *keys):
    ss = np.random.SeedSequence(entropy=int(master_seed) % 2 ** 64,
                                spawn_key=tuple(int(k) for k in keys))
    return np.random.default_rng(ss)


# stream tags keep truth draws and instance draws apart
_TRUTH_STREAM = 0
_INSTANCE_STREAM = 1


@lru_cache(maxsize=8)
def _grid(low, high, n):
    return Grid.uniform(low, high, n)


@lru_cache(maxsize=4)
def _grid_gram(kernel: KernelSpec, low, high, n):
    G = gram(kernel, _grid(low, high, n).points)
    G.setflags(write=False)
    return G


@lru_cache(maxsize=16)
def _eps_tilde(k1, k2, low, high, n):
    return sup_distance(k1, k2, _grid(low, high, n))


def eps_tilde(cfg: ExperimentConfig) -> float:
    """Kernel sup-distance on the evaluation grid; 0 for non-robust methods."""
    if not cfg.robust:
        return 0.0
    return _eps_tilde(cfg.model_kernel, cfg.truth_kernel, cfg.grid_low, cfg.grid_high, cfg.grid_n)


def bound_params(cfg: ExperimentConfig) -> BoundParams:
    return BoundParams(cfg.B, cfg.R, cfg.lam, cfg.deltas[0], eps_tilde(cfg))


def sample_truth(cfg: ExperimentConfig, function_id: int) -> RkhsFunction:
    rng = _rng(cfg.master_seed, _TRUTH_STREAM, function_id)
    if cfg.sampler == "onb":
        return sample_onb(cfg.truth_kernel.lengthscale, cfg.grid, cfg.B,
                          max_basis=cfg.onb_max_basis, n_min=cfg.onb_n_min,
                          n_max=cfg.onb_n_max, rng=rng)
    return sample_pre_rkhs(cfg.truth_kernel, cfg.grid, cfg.B, n_min=cfg.n_min,
                           n_max=cfg.n_max, sigma_f=cfg.sigma_f, rng=rng)


@dataclass
class InstanceRecord:
    function_id: int
    rep_id: int
    factorization_failed: bool
    violated: np.ndarray         # per delta
    beta: np.ndarray             # per delta, NaN where the tube has no scaling
    width_mean: np.ndarray       # per delta, mean half-width over the grid
    width_sd: np.ndarray         # per delta, SD of the half-width over the grid
    sweep_violated: Optional[np.ndarray] = None   # per scaling, first delta only
    sweep_scalings: Optional[np.ndarray] = None


def run_instance(truth, cfg: ExperimentConfig, function_id: int, rep_id: int,
                 truth_values=None) -> InstanceRecord:
    """One learning instance for a fixed ground truth.

    ``truth_values`` may carry ``truth`` evaluated on the grid to skip
    re-evaluation.
    """
    grid = cfg.grid
    if truth_values is None:
        truth_values = truth(grid.points)
    rng = _rng(cfg.master_seed, _INSTANCE_STREAM, function_id, rep_id)
    idx = rng.integers(0, len(grid), size=cfg.n_train)
    y = truth_values[idx] + cfg.noise_sd * rng.standard_normal(cfg.n_train)
    G = _grid_gram(cfg.model_kernel, cfg.grid_low, cfg.grid_high, cfg.grid_n)
    nd = len(cfg.deltas)
    try:
        post = gpr.fit(cfg.model_kernel, cfg.lam, gpr.Dataset(grid.points[idx], y),
                       gram_matrix=G[np.ix_(idx, idx)])
        q = post.query(grid.points, kvec=G[idx])
        betas, hw = bounds.halfwidth_table(post, bound_params(cfg), cfg.deltas, cfg.method, q)
    except numerics.FactorizationFailure:
        log.warning("factorization failed: function %d rep %d", function_id, rep_id)
        nan = np.full(nd, np.nan)
        return InstanceRecord(function_id, rep_id, True, np.ones(nd, bool), nan, nan, nan)
    err = np.abs(truth_values - q.mean)
    rec = InstanceRecord(
        function_id, rep_id, False,
        violated=np.any(err[None, :] > hw, axis=1),
        beta=betas,
        width_mean=hw.mean(axis=1),
        width_sd=hw.std(axis=1),
    )
    if cfg.sweep is not None:
        scalings = np.linspace(cfg.sweep.low, betas[0], cfg.sweep.n_scalings)
        rec.sweep_scalings = scalings
        rec.sweep_violated = np.array([np.any(err > s * q.sd) for s in scalings])
    return rec


def _run_function(cfg: ExperimentConfig, function_id: int):
    truth = sample_truth(cfg, function_id)
    values = truth(cfg.grid.points)
    return [run_instance(truth, cfg, function_id, r, truth_values=values)
            for r in range(cfg.n_reps)]


@dataclass
class CoverageReport:
    config: ExperimentConfig
    eps_tilde: float
    records: list = field(repr=False)

    def __post_init__(self):
        self.records.sort(key=lambda r: (r.function_id, r.rep_id))

    @property
    def deltas(self):
        return self.config.deltas

    def _stack(self, name):
        return np.array([getattr(r, name) for r in self.records])

    def function_ids(self):
        return sorted({r.function_id for r in self.records})

    @property
    def factorization_failures(self):
        return sum(r.factorization_failed for r in self.records)

    def per_function(self):
        """Rows keyed by (function_id, delta) with counts and beta/width stats."""
        fids = np.array([r.function_id for r in self.records])
        viol, beta = self._stack("violated"), self._stack("beta")
        wm = self._stack("width_mean")
        rows = []
        for fid in self.function_ids():
            m = fids == fid
            for j, d in enumerate(self.deltas):
                rows.append({
                    "function_id": fid, "delta": d,
                    "failures": int(viol[m, j].sum()), "reps": int(m.sum()),
                    "beta_mean": _nanmean(beta[m, j]), "beta_sd": _nanstd(beta[m, j]),
                    "width_mean": _nanmean(wm[m, j]), "width_sd": _nanstd(wm[m, j]),
                })
        return rows

    def failure_rates(self):
        """Array (n_functions, n_deltas) of violation frequencies."""
        fids = np.array([r.function_id for r in self.records])
        viol = self._stack("violated")
        return np.array([viol[fids == f].mean(axis=0) for f in self.function_ids()])

    def summary(self):
        """Per-delta aggregates over all functions and repetitions."""
        fids = np.array([r.function_id for r in self.records])
        beta, wm, ws = self._stack("beta"), self._stack("width_mean"), self._stack("width_sd")
        rates = self.failure_rates()
        out = []
        for j, d in enumerate(self.deltas):
            per_fn_beta = [_nanmean(beta[fids == f, j]) for f in self.function_ids()]
            reps = self.config.n_reps
            out.append({
                "delta": d,
                "beta_mean": _nanmean(beta[:, j]),
                "beta_sd": _nanstd(beta[:, j]),
                "beta_sd_between_functions": _nanstd(np.array(per_fn_beta)),
                "beta_sd_within_functions": _nanmean(np.array(
                    [_nanstd(beta[fids == f, j]) for f in self.function_ids()])),
                "width_mean": _nanmean(wm[:, j]),
                "width_mean_sd": _nanstd(wm[:, j]),
                "width_sd": _nanmean(ws[:, j]),
                "width_sd_sd": _nanstd(ws[:, j]),
                "failures": int(self._stack("violated")[:, j].sum()),
                "instances": len(self.records),
                "functions_over_delta": int(np.sum(rates[:, j] > d)),
                "functions_over_bound": int(np.sum(rates[:, j] > coverage_bound(d, reps))),
                "max_failure_rate": float(rates[:, j].max()),
            })
        return out


def coverage_bound(delta, reps):
    """delta + 3 binomial standard errors: the tolerated violation frequency."""
    return delta + 3.0 * math.sqrt(delta * (1.0 - delta) / reps)


def _nanmean(a):
    a = np.asarray(a, dtype=float)
    return float(np.mean(a[~np.isnan(a)])) if np.any(~np.isnan(a)) else float("nan")


def _nanstd(a):
    a = np.asarray(a, dtype=float)
    return float(np.std(a[~np.isnan(a)])) if np.any(~np.isnan(a)) else float("nan")


def _map_functions(cfg, jobs):
    fids = range(cfg.n_functions)
    if jobs <= 1 or cfg.n_functions == 1:
        chunks = [_run_function(cfg, f) for f in fids]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            chunks = list(pool.map(_run_function, [cfg] * cfg.n_functions, fids))
    return [rec for chunk in chunks for rec in chunk]


def run_experiment(cfg: ExperimentConfig, jobs: int = 1) -> CoverageReport:
    log.info("running %s: %d functions x %d reps", cfg.tag, cfg.n_functions, cfg.n_reps)
    return CoverageReport(cfg, eps_tilde(cfg), _map_functions(cfg, jobs))


@dataclass
class SweepReport:
    config: ExperimentConfig
    failure_rates: np.ndarray    # (n_scalings, n_functions)
    scaling_means: np.ndarray    # mean scaling value per index
    coverage: CoverageReport = field(repr=False)

    def worst(self):
        """Highest failure frequency over functions, per scaling index."""
        return self.failure_rates.max(axis=1)


def run_sweep(cfg: ExperimentConfig, jobs: int = 1) -> SweepReport:
    """Replace beta_N by equidistant scalings between ``sweep.low`` and beta_N.

    Only the first configured delta is swept.
    """
    if cfg.sweep is None:
        raise ValueError(f"config {cfg.tag!r} has no sweep section")
    rep = run_experiment(cfg, jobs)
    fids = np.array([r.function_id for r in rep.records])
    viol = np.array([r.sweep_violated for r in rep.records])
    scal = np.array([r.sweep_scalings for r in rep.records])
    rates = np.array([viol[fids == f].mean(axis=0) for f in rep.function_ids()]).T
    return SweepReport(cfg, rates, np.nanmean(scal, axis=0), rep)


# --- output -----------------------------------------------------------------

def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, str):
        return v
    return format(float(v), ".17g")


def _write_csv(path, header, rows):
    try:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for row in rows:
                w.writerow([_fmt(v) for v in row])
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc
    return Path(path)


def write_report(report: CoverageReport, out_dir) -> dict:
    """Write betas.csv, coverage.csv, widths.csv and summary.csv; return their paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    deltas = report.deltas
    paths = {}
    paths["betas"] = _write_csv(out / "betas.csv", ["function_id", "rep_id", "delta", "beta"], (
        (r.function_id, r.rep_id, d, r.beta[j])
        for r in report.records for j, d in enumerate(deltas)))
    paths["coverage"] = _write_csv(out / "coverage.csv", ["function_id", "delta", "failures", "reps"], (
        (row["function_id"], row["delta"], row["failures"], row["reps"])
        for row in report.per_function()))
    paths["widths"] = _write_csv(
        out / "widths.csv", ["function_id", "rep_id", "delta", "width_mean", "width_sd"], (
            (r.function_id, r.rep_id, d, r.width_mean[j], r.width_sd[j])
            for r in report.records for j, d in enumerate(deltas)))
    summary = report.summary()
    keys = list(summary[0])
    paths["summary"] = _write_csv(out / "summary.csv", keys, ([s[k] for k in keys] for s in summary))
    return paths


def write_sweep(sweep: SweepReport, out_dir) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    fids = sweep.coverage.function_ids()
    rows = ((sweep.scaling_means[i], i, fid, sweep.failure_rates[i, j])
            for i in range(sweep.failure_rates.shape[0]) for j, fid in enumerate(fids))
    path = _write_csv(out / "sweep.csv", ["scaling", "scaling_index", "function_id", "failure_rate"], rows)
    return {"sweep": path}


def aggregate(reports, path, quantity="beta"):
    """Emit a table with one row per setting and a mean/SD column pair per delta.

    ``reports`` is a sequence of ``(label, CoverageReport)``. ``quantity`` is
    ``beta`` (the scaling), ``width`` (mean half-width over the grid) or
    ``width_sd`` (SD of the half-width over the grid).
    """
    reports = list(reports)
    if not reports:
        raise ValueError("aggregate needs at least one report")
    keys = {"beta": ("beta_mean", "beta_sd"),
            "width": ("width_mean", "width_mean_sd"),
            "width_sd": ("width_sd", "width_sd_sd")}[quantity]
    deltas = reports[0][1].deltas
    header = ["setting", "quantity"]
    for d in deltas:
        header += [f"{float(d)!r}_mean", f"{float(d)!r}_sd"]
    rows = []
    for label, rep in reports:
        if rep.deltas != deltas:
            raise ValueError("all reports in one table must share the same deltas")
        row = [label, quantity]
        for s in rep.summary():
            row += [s[keys[0]], s[keys[1]]]
        rows.append(row)
    return _write_csv(path, header, rows)
