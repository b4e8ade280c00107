"""Discretized history segments with exponentially fading memory.

A Segment stores node values of a path on the uniform grid
theta = 0, -h, ..., -T_mem plus the limit L = lim e^{r theta} phi(theta); the
represented function is piecewise linear between nodes and exactly
e^{-r theta} L for theta < -T_mem, so the fading limit exists by construction.

The norm sup_{theta<=0} e^{r theta} |phi(theta)| is computed exactly for this
representation class: node values, one interior candidate per grid cell (the
stationary point of e^{r theta} * linear), and |L| for the tail.
"""

from dataclasses import dataclass

import numpy as np

from .delay import quadrature, tail_moment
from .errors import IncompatibleGrids

__all__ = [
    "Segment",
    "MarkedPoint",
    "SegmentQuadrature",
    "fading_norm",
    "metric_d",
    "shift_append",
    "weighted_sup",
]


@dataclass(frozen=True)
class Segment:
    r: float
    h: float
    values: np.ndarray      # (n_nodes, d); row j is the value at theta = -j*h
    tail_limit: np.ndarray  # (d,)

    def __post_init__(self):
        vals = np.atleast_1d(np.asarray(self.values, dtype=float))
        if vals.ndim == 1:
            vals = vals[:, None]
        if vals.ndim != 2 or vals.shape[0] < 1:
            raise ValueError("values must be a (n_nodes, d) array with n_nodes >= 1")
        tail = np.atleast_1d(np.asarray(self.tail_limit, dtype=float))
        if tail.shape != (vals.shape[1],):
            raise ValueError(f"tail_limit must have shape ({vals.shape[1]},), got {tail.shape}")
        if not (self.r > 0 and self.h > 0):
            raise ValueError("r and h must be > 0")
        if not (np.isfinite(vals).all() and np.isfinite(tail).all()):
            raise ValueError("segment values must be finite")
        vals = vals.copy()
        tail = tail.copy()
        vals.setflags(write=False)
        tail.setflags(write=False)
        object.__setattr__(self, "r", float(self.r))
        object.__setattr__(self, "h", float(self.h))
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "tail_limit", tail)

    @property
    def n_nodes(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    @property
    def t_mem(self) -> float:
        return self.h * (self.n_nodes - 1)

    def theta(self) -> np.ndarray:
        return -self.h * np.arange(self.n_nodes)

    def endpoint(self) -> np.ndarray:
        """phi(0)."""
        return self.values[0]

    def with_endpoint(self, x) -> "Segment":
        vals = np.array(self.values)
        vals[0] = np.atleast_1d(np.asarray(x, dtype=float))
        return Segment(self.r, self.h, vals, self.tail_limit)

    @classmethod
    def constant(cls, value, r, h, n_nodes, tail_limit=None, dim=None) -> "Segment":
        """Constant history. With tail_limit=None the tail is made consistent
        with the shift rule (value * e^{-r(T_mem + h)}), so constants are fixed
        points of shift_append."""
        v = np.atleast_1d(np.asarray(value, dtype=float))
        if dim is not None and v.size == 1:
            v = np.full(dim, v[0])
        vals = np.tile(v, (n_nodes, 1))
        if tail_limit is None:
            tail_limit = v * np.exp(-r * (h * (n_nodes - 1) + h))
        return cls(r, h, vals, tail_limit)

    @classmethod
    def weighted_constant(cls, c, r, h, n_nodes, dim=1) -> "Segment":
        """phi(theta) = c * e^{-r theta}: constant in the weighted scale,
        norm |c|, tail_limit c."""
        c = np.atleast_1d(np.asarray(c, dtype=float))
        if c.size == 1 and dim > 1:
            c = np.full(dim, c[0])
        theta = -h * np.arange(n_nodes)
        vals = np.exp(-r * theta)[:, None] * c[None, :]
        return cls(r, h, vals, c)

    @classmethod
    def zero(cls, r, h, n_nodes, dim=1) -> "Segment":
        return cls(r, h, np.zeros((n_nodes, dim)), np.zeros(dim))


@dataclass(frozen=True)
class MarkedPoint:
    """State of the full system: a history segment paired with a regime."""

    segment: Segment
    regime: int

    def __post_init__(self):
        if int(self.regime) != self.regime or self.regime < 0:
            raise ValueError("regime must be a nonnegative integer")
        object.__setattr__(self, "regime", int(self.regime))


def _check_compatible(a: Segment, b: Segment):
    if (a.r != b.r) or (a.h != b.h) or (a.n_nodes != b.n_nodes) or (a.dim != b.dim):
        raise IncompatibleGrids(
            f"segments differ in (r, h, nodes, dim): "
            f"({a.r}, {a.h}, {a.n_nodes}, {a.dim}) vs ({b.r}, {b.h}, {b.n_nodes}, {b.dim})"
        )


def weighted_sup(values: np.ndarray, tails: np.ndarray, r: float, h: float) -> np.ndarray:
    """Batched sup_{theta <= 0} e^{r theta}|phi(theta)| for the representation
    class: values (..., n_nodes, d), tails (..., d) -> (...,).

    Exact within the class: per-cell maxima of e^{r theta} * (linear) are
    refined by the interior stationary points of r|phi|^2 + <phi, phi'> = 0.
    """
    values = np.asarray(values, dtype=float)
    tails = np.asarray(tails, dtype=float)
    n = values.shape[-2]
    theta = -h * np.arange(n)
    node_norms = np.sqrt((values**2).sum(axis=-1))
    best = (np.exp(r * theta) * node_norms).max(axis=-1)
    best = np.maximum(best, np.sqrt((tails**2).sum(axis=-1)))
    if n < 2:
        return best
    # cells: left endpoint a at theta_lo = -(j+1)h, right endpoint b at -j*h
    a = values[..., 1:, :]
    b = values[..., :-1, :]
    v = b - a
    theta_lo = theta[1:]
    aa = (a * a).sum(axis=-1)
    av = (a * v).sum(axis=-1)
    vv = (v * v).sum(axis=-1)
    qa = r * vv
    qb = 2.0 * r * av + vv / h
    qc = r * aa + av / h
    with np.errstate(invalid="ignore", divide="ignore"):
        disc = qb * qb - 4.0 * qa * qc
        sq = np.sqrt(np.maximum(disc, 0.0))
        quad_ok = (qa > 1e-300) & (disc >= 0.0)
        s1 = np.where(quad_ok, (-qb - sq) / (2.0 * qa), np.nan)
        s2 = np.where(quad_ok, (-qb + sq) / (2.0 * qa), np.nan)
        lin_ok = (~quad_ok) & (np.abs(qb) > 1e-300)
        s3 = np.where(lin_ok, -qc / qb, np.nan)
    for s in (s1, s2, s3):
        inside = np.isfinite(s) & (s > 0.0) & (s < 1.0)
        if not inside.any():
            continue
        s_ = np.where(inside, s, 0.0)[..., None]
        phi = a + s_ * v
        cand = np.exp(r * (theta_lo + s_[..., 0] * h)) * np.sqrt((phi * phi).sum(axis=-1))
        cand = np.where(inside, cand, 0.0)
        best = np.maximum(best, cand.max(axis=-1))
    return best


def fading_norm(s: Segment) -> float:
    """sup_{theta<=0} e^{r theta}|phi(theta)| of the represented function."""
    return float(weighted_sup(s.values, s.tail_limit, s.r, s.h))


def metric_d(a: MarkedPoint, b: MarkedPoint) -> float:
    """Product metric ||phi - psi||_r + 1_{regimes differ}."""
    _check_compatible(a.segment, b.segment)
    diff = weighted_sup(
        a.segment.values - b.segment.values,
        a.segment.tail_limit - b.segment.tail_limit,
        a.segment.r,
        a.segment.h,
    )
    return float(diff) + (0.0 if a.regime == b.regime else 1.0)


class SegmentQuadrature:
    """History integrals against the delay kernel on a fixed segment grid.

    Node contributions use the kernel's cell-mass quadrature; the part of the
    kernel beyond the grid window is integrated in closed form against the
    tail model phi(theta) = e^{-r theta} L.
    """

    def __init__(self, kernel, r: float, h: float, n_nodes: int):
        if n_nodes < 1:
            raise ValueError("need at least one node")
        self.kernel = kernel
        self.r = float(r)
        self.h = float(h)
        self.n_nodes = int(n_nodes)
        self.t_grid = self.h * (self.n_nodes - 1)
        if self.n_nodes == 1:
            # degenerate window {0}: only exact-zero atoms live on the grid,
            # everything else is integrated analytically as tail
            w0 = sum(w for t, w in kernel.atoms if t == 0.0)
            self.weights = np.array([w0])
        else:
            self.weights = quadrature(kernel, self.h, self.t_grid).weights
        self._tail_cache = {}

    def tail_mass(self, c: float) -> float:
        """integral of e^{-c theta} over the kernel restricted past the grid."""
        key = float(c)
        if key not in self._tail_cache:
            self._tail_cache[key] = tail_moment(self.kernel, key, self.t_grid)
        return self._tail_cache[key]

    def endpoint_weight(self) -> float:
        """Kernel mass attached to theta = 0 (drives the fixed-point gain)."""
        return float(self.weights[0])

    def integral(self, values: np.ndarray, tail_limit: np.ndarray) -> np.ndarray:
        """integral of phi d(kernel) as a vector in R^d."""
        return self.weights @ values + self.tail_mass(self.r) * tail_limit

    def abs_pow_integral(self, values: np.ndarray, tail_limit: np.ndarray, p: float) -> float:
        """integral of |phi(theta)|^p d(kernel), Euclidean norm across d."""
        node_norms = np.sqrt((np.asarray(values, dtype=float) ** 2).sum(axis=-1))
        tail_norm = float(np.sqrt((np.asarray(tail_limit, dtype=float) ** 2).sum()))
        return float(self.weights @ node_norms**p + tail_norm**p * self.tail_mass(p * self.r))

    def of_segment(self, s: Segment) -> np.ndarray:
        return self.integral(s.values, s.tail_limit)


def shift_append(s: Segment, new_value) -> Segment:
    """Advance the segment one grid step: new endpoint at theta=0, everything
    else shifted into the past; the node dropping off the window at
    theta = -(T_mem+h) replaces the tail limit by L = e^{r theta_drop} x_drop,
    keeping the represented function inside the class exactly."""
    new_value = np.atleast_1d(np.asarray(new_value, dtype=float))
    if new_value.shape != (s.dim,):
        raise ValueError(f"new_value must have shape ({s.dim},)")
    vals = np.empty_like(np.asarray(s.values))
    vals[0] = new_value
    vals[1:] = s.values[:-1]
    dropped = s.values[-1]
    tail = np.exp(-s.r * (s.t_mem + s.h)) * dropped
    return Segment(s.r, s.h, vals, tail)
