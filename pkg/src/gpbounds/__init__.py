"""Frequentist uncertainty tubes for GP regression and Monte-Carlo coverage checks."""

from .bounds import BoundParams, Method, TubeEvaluation, tube
from .gpr import Dataset, GprPosterior, fit
from .kernels import Grid, KernelSpec
from .numerics import FactorizationFailure
from .rkhs_sampler import RkhsFunction, sample_onb, sample_pre_rkhs

__version__ = "0.1.0"

__all__ = [
    "BoundParams", "Method", "TubeEvaluation", "tube",
    "Dataset", "GprPosterior", "fit",
    "Grid", "KernelSpec", "FactorizationFailure",
    "RkhsFunction", "sample_onb", "sample_pre_rkhs",
]
