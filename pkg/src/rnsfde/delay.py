"""Delay measure on the past: finite mixtures of Dirac atoms and exponential
densities, with closed-form exponential moments, tail moments, and quadrature
weights for discretized history integrals.

The measure is

    rho(dtheta) = sum_j w_j delta_{theta_j}(dtheta) + sum_i u_i c_i e^{c_i theta} dtheta,
    theta <= 0,  sum w_j + sum u_i = 1.

Everything downstream (contraction constants, drift feedback, truncation
policy, simulation quadrature) consumes rho only through the three operations
in this module.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InfiniteMoment

__all__ = ["DelayKernel", "QuadratureWeights", "moment", "tail_moment", "quadrature", "horizon_for_tail"]

_MASS_TOL = 1e-12


@dataclass(frozen=True)
class DelayKernel:
    """Probability measure on (-inf, 0]: atoms [(theta_j, w_j)] plus
    exponential components [(rate c_i, weight u_i)] with density u_i c_i e^{c_i theta}."""

    atoms: tuple = ()
    exp_components: tuple = ()

    def __post_init__(self):
        atoms = tuple((float(t), float(w)) for t, w in self.atoms)
        exps = tuple((float(c), float(u)) for c, u in self.exp_components)
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "exp_components", exps)
        if not atoms and not exps:
            raise ValueError("kernel needs at least one component")
        for t, w in atoms:
            if not (t <= 0.0) or not math.isfinite(t):
                raise ValueError(f"atom location must be <= 0, got {t}")
            if not (w > 0.0):
                raise ValueError(f"atom weight must be > 0, got {w}")
        for c, u in exps:
            if not (c > 0.0):
                raise ValueError(f"exponential rate must be > 0, got {c}")
            if not (u > 0.0):
                raise ValueError(f"exponential weight must be > 0, got {u}")
        mass = sum(w for _, w in atoms) + sum(u for _, u in exps)
        if abs(mass - 1.0) > _MASS_TOL:
            raise ValueError(f"total mass must be 1 within {_MASS_TOL}, got {mass!r}")

    @property
    def min_rate(self) -> float:
        """Smallest density rate; moments are finite exactly for c below it."""
        if not self.exp_components:
            return math.inf
        return min(c for c, _ in self.exp_components)

    @classmethod
    def dirac(cls, theta: float = 0.0) -> "DelayKernel":
        return cls(atoms=((theta, 1.0),))

    @classmethod
    def exponential(cls, rate: float) -> "DelayKernel":
        return cls(exp_components=((rate, 1.0),))

    @classmethod
    def from_config(cls, block: dict) -> "DelayKernel":
        atoms = tuple((float(t), float(w)) for t, w in block.get("atoms", []))
        exps = tuple((float(c), float(u)) for c, u in block.get("exp", []))
        return cls(atoms=atoms, exp_components=exps)

    def to_config(self) -> dict:
        return {
            "atoms": [[t, w] for t, w in self.atoms],
            "exp": [[c, u] for c, u in self.exp_components],
        }


def moment(kernel: DelayKernel, c: float) -> float:
    """Exponential moment int e^{-c theta} rho(dtheta) over theta <= 0.

    Raises InfiniteMoment when c >= some density rate (the integral diverges);
    callers computing certificates must treat that as a failed certificate.
    """
    total = 0.0
    for t, w in kernel.atoms:
        total += w * math.exp(-c * t)
    for rate, u in kernel.exp_components:
        if c >= rate:
            raise InfiniteMoment(f"moment exponent {c} >= density rate {rate}")
        total += u * rate / (rate - c)
    return total


def tail_moment(kernel: DelayKernel, c: float, T: float) -> float:
    """int over theta < -T of e^{-c theta} rho(dtheta); the part the quadrature
    window [-T, 0] does not see. Monotone nonincreasing in T."""
    if T < 0:
        raise ValueError("horizon T must be >= 0")
    total = 0.0
    for t, w in kernel.atoms:
        if t < -T:
            total += w * math.exp(-c * t)
    for rate, u in kernel.exp_components:
        if c >= rate:
            raise InfiniteMoment(f"moment exponent {c} >= density rate {rate}")
        total += u * rate / (rate - c) * math.exp(-(rate - c) * T)
    return total


@dataclass(frozen=True)
class QuadratureWeights:
    """Weights on the grid {0, -h, ..., -T}; node j sits at theta = -j*h.

    weights[j] carries the rho-mass assigned to node j: exact atom masses
    (snapped to the nearest node) plus the density mass of the half-open cell
    around the node. `snaps` records (atom location, node index, distance) for
    every snapped atom so callers can bound the induced error.
    """

    h: float
    horizon: float
    weights: np.ndarray
    snaps: tuple = field(default=())

    @property
    def n_nodes(self) -> int:
        return self.weights.shape[0]

    def pairs(self):
        """[(grid index, weight)] with nonzero weights; index -j means theta=-j*h."""
        return [(-j, float(w)) for j, w in enumerate(self.weights) if w != 0.0]

    def apply(self, node_values: np.ndarray) -> np.ndarray:
        """Integrate node-sampled values against the weights (first axis = node)."""
        vals = np.asarray(node_values, dtype=float)
        if vals.shape[0] != self.n_nodes:
            raise ValueError(f"expected {self.n_nodes} node values, got {vals.shape[0]}")
        return np.tensordot(self.weights, vals, axes=(0, 0))


def quadrature(kernel: DelayKernel, h: float, T: float) -> QuadratureWeights:
    """Discretize rho restricted to [-T, 0] onto the uniform grid of step h.

    Atom masses are reproduced exactly at the nearest node; each density
    component contributes the analytic mass of the cell
    [max(-T, theta_j - h/2), min(0, theta_j + h/2)] owned by node j (composite
    midpoint rule, second order). Atoms strictly beyond -T belong to the
    analytic tail and are excluded. Sum of weights = 1 - rho((-inf, -T)).
    """
    if h <= 0 or T <= 0:
        raise ValueError("h and T must be > 0")
    n = int(round(T / h))
    if n < 1 or abs(n * h - T) > 1e-9 * max(1.0, T):
        raise ValueError(f"horizon T={T} is not an integer multiple of h={h}")
    w = np.zeros(n + 1)
    snaps = []
    for t, a_w in kernel.atoms:
        if t < -T:
            continue
        j = min(n, int(round(-t / h)))
        w[j] += a_w
        dist = abs(-j * h - t)
        if dist > 0:
            snaps.append((t, j, dist))
    for rate, u in kernel.exp_components:
        j = np.arange(n + 1)
        lo = np.maximum(-T, -j * h - h / 2.0)
        hi = np.minimum(0.0, -j * h + h / 2.0)
        w += u * (np.exp(rate * hi) - np.exp(rate * lo))
    return QuadratureWeights(h=h, horizon=n * h, weights=w, snaps=tuple(snaps))


def horizon_for_tail(kernel: DelayKernel, c: float, tol: float) -> float:
    """Smallest horizon T with tail_moment(kernel, c, T) <= tol (within 1e-9).

    Used by the truncation policy: the simulation keeps an explicit history
    window of this length and treats everything older analytically.
    """
    if tol <= 0:
        raise ValueError("tol must be > 0")
    if moment(kernel, c) <= tol:
        return 0.0
    hi = 1.0
    while tail_moment(kernel, c, hi) > tol:
        hi *= 2.0
        if hi > 1e9:
            raise ValueError("tail tolerance unreachable at any practical horizon")
    lo = 0.0
    while hi - lo > 1e-9 * max(1.0, hi):
        mid = 0.5 * (lo + hi)
        if tail_moment(kernel, c, mid) <= tol:
            hi = mid
        else:
            lo = mid
    return hi
