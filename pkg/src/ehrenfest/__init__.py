"""Generalized N-urn Ehrenfest model: exact simulation, hydrodynamic limit,
CLT variance and large-deviation rate functions."""

from .kernel import DiscreteKernel, GridSpec, RateKernel, discretize, eval_kernel, quadrature
from .simulator import SimConfig, Trajectory, empirical_integral, sample_initial, simulate

__version__ = "0.1.0"

__all__ = [
    "RateKernel",
    "DiscreteKernel",
    "GridSpec",
    "discretize",
    "eval_kernel",
    "quadrature",
    "SimConfig",
    "Trajectory",
    "sample_initial",
    "simulate",
    "empirical_integral",
]
