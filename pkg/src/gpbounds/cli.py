"""
Command-line entry point.

    gpbounds experiment exp_1_1_a --reps 100 --out runs/exp_1_1_a
    gpbounds sweep exp_1_2_c --functions 20 --reps 1000 --out runs/sweep
    gpbounds sample-function --kernel se --lengthscale 0.2 --norm 2 --dataset 50 --out fn/
    gpbounds fit-and-bound --data fn/data.csv --kernel se --lengthscale 0.2 --out tube/
    gpbounds control-demo --seed 3 --out demo/

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from importlib.metadata import PackageNotFoundError, version
from pathlib import Path

import numpy as np

from . import bounds, control_demo, experiments, gpr, numerics
from .bounds import BoundParams, Method
from .experiments import ExperimentConfig
from .kernels import Grid, KernelSpec, sup_distance
from .rkhs_sampler import RkhsFunction, sample_onb, sample_pre_rkhs

log = logging.getLogger("gpbounds")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3


class ConfigError(Exception):
    pass


def _version():
    try:
        return version("artifact")
    except PackageNotFoundError:
        return "unknown"


def _parse_deltas(text):
    try:
        deltas = tuple(float(t) for t in text.split(",") if t.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of numbers: {text!r}")
    if not deltas or not all(0 < d < 1 for d in deltas):
        raise argparse.ArgumentTypeError("every delta must lie in (0, 1)")
    return deltas


def _u64(text):
    v = int(text, 0)
    if not 0 <= v < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def _write_manifest(out, payload):
    path = Path(out) / "manifest.json"
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True, default=str)
        fh.write("\n")
    return path


def _load_config(args) -> ExperimentConfig:
    if args.config:
        try:
            cfg = ExperimentConfig.load(args.config)
        except (OSError, ValueError, KeyError, TypeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
    elif args.preset:
        try:
            cfg = experiments.preset(args.preset)
        except KeyError as exc:
            raise ConfigError(exc.args[0]) from exc
    else:
        raise ConfigError("give a preset tag or --config PATH")
    overrides = {}
    if args.seed is not None:
        overrides["master_seed"] = args.seed
    if args.reps is not None:
        overrides["n_reps"] = args.reps
    if args.functions is not None:
        overrides["n_functions"] = args.functions
    if args.delta is not None:
        overrides["deltas"] = args.delta
    try:
        return cfg.replace(**overrides) if overrides else cfg
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def cmd_experiment(args, sweep=False):
    cfg = _load_config(args)
    if sweep and cfg.sweep is None:
        raise ConfigError(f"config {cfg.tag!r} has no sweep section")
    out = Path(args.out or f"runs/{cfg.tag}")
    t0 = time.perf_counter()
    if sweep:
        sw = experiments.run_sweep(cfg, jobs=args.jobs)
        report = sw.coverage
    else:
        report = experiments.run_experiment(cfg, jobs=args.jobs)
    files = experiments.write_report(report, out)
    if sweep:
        files.update(experiments.write_sweep(sw, out))
    warnings = []
    if report.factorization_failures:
        warnings.append(f"{report.factorization_failures} factorization failures")
    manifest = {
        "tool": "gpbounds", "version": _version(), "command": "sweep" if sweep else "experiment",
        "config": cfg.to_dict(), "master_seed": cfg.master_seed, "eps_tilde": report.eps_tilde,
        "outputs": {k: p.name for k, p in sorted(files.items())},
        "summary": report.summary(), "warnings": warnings,
        "wall_clock_seconds": round(time.perf_counter() - t0, 3),
    }
    _write_manifest(out, manifest)
    for s in report.summary():
        print(f"delta={s['delta']:g} beta={s['beta_mean']:.4f}+-{s['beta_sd']:.4f} "
              f"width={s['width_mean']:.4f} failures={s['failures']}/{s['instances']} "
              f"functions>delta={s['functions_over_delta']}")
    return EXIT_NUMERIC if warnings else EXIT_OK


def _kernel_from_args(args, prefix=""):
    try:
        return KernelSpec.from_dict({
            "family": getattr(args, prefix + "kernel"),
            "lengthscale": getattr(args, prefix + "lengthscale"),
            "variance": getattr(args, prefix + "variance"),
        })
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def cmd_sample_function(args):
    kernel = _kernel_from_args(args)
    grid = Grid.uniform(args.low, args.high, args.grid_n)
    rng = np.random.default_rng(np.random.SeedSequence(args.seed or 0))
    try:
        if args.sampler == "onb":
            if kernel.family.value != "se" or kernel.variance != 1.0:
                raise ConfigError("ONB sampling needs a unit-variance SE kernel")
            f = sample_onb(kernel.lengthscale, grid, args.norm, rng=rng)
        else:
            f = sample_pre_rkhs(kernel, grid, args.norm, rng=rng)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    f.save(out / "function.json")
    print(f"norm={f.norm():.12g} declared={f.declared_norm:g}")
    if args.dataset:
        idx = rng.integers(0, len(grid), size=args.dataset)
        x = grid.points[idx]
        y = f(x) + args.noise_sd * rng.standard_normal(args.dataset)
        gpr.Dataset(x, y, noise_sd=args.noise_sd, seed=args.seed or 0,
                    metadata={"truth_kernel": kernel.to_dict()}).save(out / "data.csv")
    return EXIT_OK


def cmd_fit_and_bound(args):
    kernel = _kernel_from_args(args)
    try:
        data = gpr.Dataset.load(args.data)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read dataset {args.data}: {exc}") from exc
    grid = Grid.uniform(args.low, args.high, args.grid_n)
    method = Method(args.method)
    eps = args.eps_tilde
    if method in (Method.ROBUST_NOMINAL, Method.ROBUST_INDEPENDENT) and eps is None:
        if args.truth_kernel is None:
            raise ConfigError("robust methods need --eps-tilde or --truth-kernel")
        eps = sup_distance(kernel, _kernel_from_args(args, "truth_"), grid)
    eps = eps or 0.0
    deltas = args.delta or (0.01,)
    truth = RkhsFunction.load(args.truth) if args.truth else None
    post = gpr.fit(kernel, args.lam, data)
    q = post.query(grid.points)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    results = []
    for d in deltas:
        try:
            p = BoundParams(args.B, args.R, args.lam, d, eps)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        t = bounds.tube(post, p, grid.points, method, q)
        name = f"tube_delta_{d:g}.csv"
        bounds.write_tube_csv(out / name, t)
        entry = {"delta": d, "file": name, "halfwidth_mean": float(t.halfwidth.mean())}
        if method in (Method.NOMINAL, Method.ROBUST_NOMINAL):
            entry["beta"] = bounds.beta_nominal(post, p)
        if truth is not None:
            entry["contained"] = bool(np.all(t.contains(truth(grid.points))))
        results.append(entry)
        print(json.dumps(entry, sort_keys=True))
    _write_manifest(out, {
        "tool": "gpbounds", "version": _version(), "command": "fit-and-bound",
        "kernel": kernel.to_dict(), "lam": args.lam, "B": args.B, "R": args.R,
        "eps_tilde": eps, "method": method.value, "data": str(args.data),
        "grid": grid.to_dict(), "tubes": results,
    })
    return EXIT_OK


def cmd_control_demo(args):
    settings = control_demo.DemoSettings()
    if args.delta:
        settings = control_demo.DemoSettings(delta=args.delta[0])
    t0 = time.perf_counter()
    res = control_demo.run_control_demo(args.seed or 0, settings, out_dir=args.out)
    manifest = res.manifest()
    manifest.update({"tool": "gpbounds", "version": _version(), "command": "control-demo",
                     "outputs": {k: Path(p).name for k, p in sorted(res.files.items())},
                     "wall_clock_seconds": round(time.perf_counter() - t0, 3)})
    _write_manifest(args.out, manifest)
    print(f"beta={res.beta:.6g} contained={res.contained} "
          f"inside_prior={res.sets.fraction_inside_prior():.3f}")
    return EXIT_OK


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=_u64, default=None, help="master seed (unsigned 64-bit)")
    common.add_argument("--out", default=None, help="output directory")
    common.add_argument("--jobs", type=int, default=1, help="worker processes")
    common.add_argument("--delta", type=_parse_deltas, default=None,
                        help="comma-separated confidence levels, e.g. 0.1,0.01")
    common.add_argument("-v", "--verbose", action="store_true")

    exp = argparse.ArgumentParser(add_help=False, parents=[common])
    exp.add_argument("preset", nargs="?", help=f"one of: {', '.join(experiments.PRESETS)}")
    exp.add_argument("--config", help="JSON experiment config")
    exp.add_argument("--reps", type=int, default=None)
    exp.add_argument("--functions", type=int, default=None)

    kern = argparse.ArgumentParser(add_help=False)
    kern.add_argument("--kernel", default="se", choices=["se", "matern32"])
    kern.add_argument("--lengthscale", type=float, default=0.2)
    kern.add_argument("--variance", type=float, default=1.0)
    kern.add_argument("--low", type=float, default=-1.0)
    kern.add_argument("--high", type=float, default=1.0)
    kern.add_argument("--grid-n", type=int, default=1000)

    parser = argparse.ArgumentParser(prog="gpbounds", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("experiment", parents=[exp], help="Monte-Carlo coverage experiment")
    sub.add_parser("sweep", parents=[exp], help="conservatism sweep over beta scalings")

    sp = sub.add_parser("sample-function", parents=[common, kern], help="draw an RKHS ground truth")
    sp.add_argument("--sampler", choices=["pre_rkhs", "onb"], default="pre_rkhs")
    sp.add_argument("--norm", type=float, default=2.0)
    sp.add_argument("--dataset", type=int, default=0, help="also write N noisy samples")
    sp.add_argument("--noise-sd", type=float, default=0.5)

    fb = sub.add_parser("fit-and-bound", parents=[common, kern], help="fit a GP and export tubes")
    fb.add_argument("--data", required=True, help="CSV with header x,y")
    fb.add_argument("--lam", type=float, default=0.5)
    fb.add_argument("--B", type=float, default=2.0)
    fb.add_argument("--R", type=float, default=0.5)
    fb.add_argument("--method", choices=[m.value for m in Method], default="nominal")
    fb.add_argument("--eps-tilde", type=float, default=None)
    fb.add_argument("--truth-kernel", choices=["se", "matern32"], default=None)
    fb.add_argument("--truth-lengthscale", type=float, default=None)
    fb.add_argument("--truth-variance", type=float, default=1.0)
    fb.add_argument("--truth", default=None, help="function.json to check coverage against")

    sub.add_parser("control-demo", parents=[common], help="learned disturbance sets")
    return parser


_COMMANDS = {
    "experiment": cmd_experiment,
    "sweep": lambda a: cmd_experiment(a, sweep=True),
    "sample-function": cmd_sample_function,
    "fit-and-bound": cmd_fit_and_bound,
    "control-demo": cmd_control_demo,
}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.out is None and args.command != "experiment" and args.command != "sweep":
        args.out = "."
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except numerics.FactorizationFailure as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
