"""
Learned disturbance sets for a mass-spring-damper system with an unknown
nonlinearity r(x2).

A ground truth r is drawn from the RKHS of k(x, x') = 4 exp(-(x - x')^2 / (2 * 0.8^2))
with norm 2, observed at 100 uniformly drawn states in [-10, 10] with noise
SD 0.01, and learned with GP regression using the true kernel. The nominal
tube at delta = 0.001 gives pointwise intervals

    W(x2) = [mu(x2) - beta * sigma(x2), mu(x2) + beta * sigma(x2)]

that a robust MPC scheme can consume for constraint tightening. The MPC
itself is not part of this package.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import bounds, gpr
from .bounds import BoundParams
from .kernels import Grid, KernelSpec
from .rkhs_sampler import RkhsFunction, sample_pre_rkhs

__all__ = [
    "DemoSettings",
    "DisturbanceSet",
    "DemoResult",
    "run_control_demo",
    "load_disturbance_csv",
    "recheck_containment",
]

# a-priori bound on the disturbance: W0 = [-10, 10] x [-7, 7]
PRIOR_BOX = (-7.0, 7.0)
STATE_BOUNDS = (-10.0, 10.0)

# x+ = A x + B u + (0, -r(x2)); exported for downstream constraint tightening
SYSTEM = {
    "A": [[0.995, 0.095], [-0.095, 0.900]],
    "B": [[0.048], [0.95]],
    "state_constraints": [[-10.0, 10.0], [-10.0, 10.0]],
    "input_constraints": [-3.0, 3.0],
    "prior_disturbance_set": [[-10.0, 10.0], [-7.0, 7.0]],
}


@dataclass(frozen=True)
class DemoSettings:
    kernel: KernelSpec = KernelSpec.se(0.8, 4.0)
    B: float = 2.0
    n_train: int = 100
    noise_sd: float = 0.01
    # lam below 1 is not covered by the nominal beta (the noise term of the
    # tube scales with 1/sqrt(lam)); lam = 1e-4 loses coverage in most seeds
    lam: float = 1.0
    R: float = 0.01
    delta: float = 0.001
    grid_n: int = 1000

    def to_dict(self):
        return {
            "kernel": self.kernel.to_dict(), "B": self.B, "n_train": self.n_train,
            "noise_sd": self.noise_sd, "lam": self.lam, "R": self.R,
            "delta": self.delta, "grid_n": self.grid_n,
        }


@dataclass(frozen=True, eq=False)
class DisturbanceSet:
    x2: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    prior_box: tuple = PRIOR_BOX

    def __post_init__(self):
        if np.any(self.lower > self.upper):
            raise ValueError("lower bound exceeds upper bound")

    @property
    def width(self):
        return self.upper - self.lower

    def contains(self, values):
        values = np.asarray(values, dtype=float)
        return (self.lower <= values) & (values <= self.upper)

    def fraction_inside_prior(self):
        lo, hi = self.prior_box
        return float(np.mean((self.lower > lo) & (self.upper < hi)))


@dataclass
class DemoResult:
    seed: int
    settings: DemoSettings
    truth: RkhsFunction
    dataset: gpr.Dataset
    beta: float
    sets: DisturbanceSet
    truth_values: np.ndarray
    contained: bool
    files: dict = field(default_factory=dict)

    def manifest(self):
        return {
            "seed": self.seed,
            **self.settings.to_dict(),
            "beta": self.beta,
            "contained": self.contained,
            "fraction_inside_prior": self.sets.fraction_inside_prior(),
            "prior_box": list(self.sets.prior_box),
            "system": SYSTEM,
        }


def run_control_demo(seed, settings: DemoSettings = DemoSettings(), out_dir=None) -> DemoResult:
    s = settings
    grid = Grid.uniform(*STATE_BOUNDS, s.grid_n)
    ss = np.random.SeedSequence(int(seed) % 2 ** 64)
    truth_ss, data_ss = ss.spawn(2)
    truth = sample_pre_rkhs(s.kernel, grid, s.B, rng=np.random.default_rng(truth_ss))
    rng = np.random.default_rng(data_ss)
    x = rng.uniform(*STATE_BOUNDS, size=s.n_train)
    y = truth(x) + s.noise_sd * rng.standard_normal(s.n_train)
    data = gpr.Dataset(x, y, noise_sd=s.noise_sd, seed=int(seed),
                       metadata={"truth_kernel": s.kernel.to_dict()})

    post = gpr.fit(s.kernel, s.lam, data)
    p = BoundParams(s.B, s.R, s.lam, s.delta)
    tube = bounds.nominal_halfwidth(post, p, grid.points)
    beta = bounds.beta_nominal(post, p)
    sets = DisturbanceSet(grid.points, tube.lower, tube.upper)
    values = truth(grid.points)
    result = DemoResult(int(seed), s, truth, data, beta, sets, values,
                        bool(np.all(sets.contains(values))))
    if out_dir is not None:
        result.files = write_outputs(result, out_dir)
    return result


def write_outputs(result: DemoResult, out_dir) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / "disturbance_sets.csv"
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x2", "lower", "upper", "truth"])
        for row in zip(result.sets.x2, result.sets.lower, result.sets.upper, result.truth_values):
            w.writerow([format(v, ".17g") for v in row])
    manifest_path = out / "manifest.json"
    with open(manifest_path, "w") as fh:
        json.dump(result.manifest(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return {"disturbance_sets": csv_path, "manifest": manifest_path}


def load_disturbance_csv(path):
    """Read disturbance_sets.csv back into arrays keyed by column name."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        cols = {k: [] for k in reader.fieldnames}
        for row in reader:
            for k, v in row.items():
                cols[k].append(float(v))
    return {k: np.array(v) for k, v in cols.items()}


def recheck_containment(path) -> bool:
    """Containment verdict recomputed from an exported CSV alone."""
    c = load_disturbance_csv(path)
    return bool(np.all((c["lower"] <= c["truth"]) & (c["truth"] <= c["upper"])))
