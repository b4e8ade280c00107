"""Toolkit for regime-switching neutral stochastic functional differential
equations with infinite fading memory: delay kernels, history segments,
switching-chain samplers and couplings, ergodicity certificates, an
Euler-Maruyama integrator for the neutral dynamics, and Wasserstein/decay
experiment machinery.
"""

from . import errors
from .backend import active_backend
from .certificates import DissipativityConstants, finite_space_certificate
from .chain import Generator
from .delay import DelayKernel, horizon_for_tail, moment, quadrature, tail_moment
from .dynamics import ModelSpec, SimConfig, memory_nodes, simulate_coupled, simulate_path
from .metrics import (
    EmpiricalMeasure,
    TransportPlan,
    coupling_upper_bound,
    empirical_snapshot,
    exact_wasserstein_p,
    fit_exponential_decay,
    fit_linear_trend,
)
from .segments import MarkedPoint, Segment, fading_norm, metric_d, shift_append

__all__ = [
    "errors",
    "active_backend",
    "DelayKernel",
    "moment",
    "tail_moment",
    "quadrature",
    "horizon_for_tail",
    "Segment",
    "MarkedPoint",
    "fading_norm",
    "metric_d",
    "shift_append",
    "Generator",
    "DissipativityConstants",
    "finite_space_certificate",
    "ModelSpec",
    "SimConfig",
    "memory_nodes",
    "simulate_path",
    "simulate_coupled",
    "EmpiricalMeasure",
    "TransportPlan",
    "exact_wasserstein_p",
    "empirical_snapshot",
    "coupling_upper_bound",
    "fit_exponential_decay",
    "fit_linear_trend",
]

__version__ = "0.1.0"
