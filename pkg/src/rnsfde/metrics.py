"""Wasserstein machinery on the marked-segment state space.

Exact optimal transport between small empirical measures under the product
metric (fading-memory distance plus a unit regime mismatch charge), coupling
Monte-Carlo upper bounds, and exponential decay-rate fitting. Everything here
is exact or classical statistics; no entropic or sliced approximations.
"""

import math
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy import sparse
from scipy.optimize import linear_sum_assignment, linprog
from scipy.stats import t as student_t

from .errors import Error, NonpositiveMean, SizeLimit
from .segments import MarkedPoint, _check_compatible, weighted_sup

# exact LP solves stay cheap up to this many cost entries
_MAX_COST_ENTRIES = 512 * 512
_WEIGHT_TOL = 1e-12
_MARGINAL_TOL = 1e-10


@dataclass(frozen=True)
class EmpiricalMeasure:
    """Finitely supported probability measure on marked segment points."""

    atoms: Tuple[MarkedPoint, ...]
    weights: np.ndarray

    def __post_init__(self):
        atoms = tuple(self.atoms)
        if not atoms:
            raise ValueError("measure needs at least one atom")
        w = np.asarray(self.weights, dtype=float)
        if w.shape != (len(atoms),):
            raise ValueError("one weight per atom required")
        if (w <= 0).any():
            raise ValueError("weights must be > 0")
        if abs(w.sum() - 1.0) > _WEIGHT_TOL:
            raise ValueError(f"weights sum to {w.sum()!r}, expected 1")
        for a in atoms[1:]:
            _check_compatible(atoms[0].segment, a.segment)
        w = w.copy()
        w.setflags(write=False)
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "weights", w)

    @classmethod
    def uniform(cls, atoms: Sequence[MarkedPoint]) -> "EmpiricalMeasure":
        atoms = tuple(atoms)
        return cls(atoms, np.full(len(atoms), 1.0 / max(len(atoms), 1)))

    @property
    def n_atoms(self) -> int:
        return len(self.atoms)

    def is_uniform(self) -> bool:
        return bool(np.allclose(self.weights, 1.0 / self.n_atoms, rtol=0, atol=_WEIGHT_TOL))


def empirical_snapshot(outputs, time: float) -> EmpiricalMeasure:
    """Uniform measure of the time-`time` marked points of simulated paths.

    Every output must have been produced with keep_segments=True and have
    sampled the requested time exactly.
    """
    atoms = []
    for o in outputs:
        idx = np.flatnonzero(np.isclose(o.times, time, rtol=0, atol=1e-9))
        if idx.size != 1:
            raise ValueError(f"time {time} is not a sampled output time")
        atoms.append(o.marked_points()[int(idx[0])])
    return EmpiricalMeasure.uniform(atoms)


@dataclass(frozen=True)
class TransportPlan:
    """Nonnegative coupling matrix between two empirical measures."""

    matrix: np.ndarray
    source_weights: np.ndarray
    target_weights: np.ndarray
    cost: float  # sum(matrix * d^p)

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=float)
        if m.min(initial=0.0) < -1e-12:
            raise ValueError("plan has negative mass")
        row_err = np.abs(m.sum(axis=1) - self.source_weights).max()
        col_err = np.abs(m.sum(axis=0) - self.target_weights).max()
        if max(row_err, col_err) > _MARGINAL_TOL:
            raise ValueError(f"plan marginals off by {max(row_err, col_err):.3e}")
        object.__setattr__(self, "matrix", m)


def _distance_matrix(mu: EmpiricalMeasure, nu: EmpiricalMeasure) -> np.ndarray:
    """Pairwise product-metric distances, row = mu atom, column = nu atom."""
    _check_compatible(mu.atoms[0].segment, nu.atoms[0].segment)
    va = np.stack([a.segment.values for a in mu.atoms])
    ta = np.stack([a.segment.tail_limit for a in mu.atoms])
    vb = np.stack([a.segment.values for a in nu.atoms])
    tb = np.stack([a.segment.tail_limit for a in nu.atoms])
    ra = np.array([a.regime for a in mu.atoms])
    rb = np.array([a.regime for a in nu.atoms])
    r = mu.atoms[0].segment.r
    h = mu.atoms[0].segment.h
    n, m = len(ra), len(rb)
    out = np.empty((n, m))
    # block rows so the (block, m, nodes, dim) temporary stays ~32 MB
    per_row = m * va.shape[1] * va.shape[2]
    block = max(1, int(4.0e6 / max(per_row, 1)))
    for i0 in range(0, n, block):
        i1 = min(i0 + block, n)
        dv = va[i0:i1, None, :, :] - vb[None, :, :, :]
        dt = ta[i0:i1, None, :] - tb[None, :, :]
        out[i0:i1] = weighted_sup(dv, dt, r, h)
    out += (ra[:, None] != rb[None, :]).astype(float)
    return out


def exact_wasserstein_p(mu: EmpiricalMeasure, nu: EmpiricalMeasure, p: float):
    """Exact W_p between two small empirical measures.

    Returns (W_p value, optimal TransportPlan). Uniform equal-size inputs are
    solved as an assignment problem; the general case is the transportation
    linear program solved to 1e-10 feasibility. Inputs beyond ~512x512 cost
    entries are refused (SizeLimit): this is a desk-scale exact solver.
    """
    if p < 1:
        raise ValueError("p must be >= 1")
    n, m = mu.n_atoms, nu.n_atoms
    if n * m > _MAX_COST_ENTRIES:
        raise SizeLimit(f"cost matrix {n}x{m} exceeds the exact-solver limit")
    dp = _distance_matrix(mu, nu) ** p

    if n == m and mu.is_uniform() and nu.is_uniform():
        rows, cols = linear_sum_assignment(dp)
        plan = np.zeros((n, m))
        plan[rows, cols] = 1.0 / n
        cost = float(dp[rows, cols].sum() / n)
    else:
        # transportation LP: marginal constraints on the flattened plan
        row_con = sparse.kron(sparse.eye(n), np.ones((1, m)))
        col_con = sparse.kron(np.ones((1, n)), sparse.eye(m))
        res = linprog(
            dp.ravel(),
            A_eq=sparse.vstack([row_con, col_con]).tocsr(),
            b_eq=np.concatenate([mu.weights, nu.weights]),
            bounds=(0, None),
            method="highs",
            options={
                # 1e-10 is the tightest value HiGHS accepts
                "primal_feasibility_tolerance": 1e-10,
                "dual_feasibility_tolerance": 1e-10,
            },
        )
        if res.status != 0:
            raise Error(f"transport LP failed: {res.message}")
        plan = np.maximum(res.x.reshape(n, m), 0.0)
        cost = float((plan * dp).sum())

    value = max(cost, 0.0) ** (1.0 / p)
    return value, TransportPlan(plan, mu.weights, nu.weights, cost)


def coupling_upper_bound(runs, p: float):
    """Monte-Carlo mean of d^p between the two marked components of coupled
    runs, one (t, mean, stderr) triple per shared output time.

    By the coupling characterization of optimal transport each mean dominates
    W_p^p of the time-t marginal laws.
    """
    runs = list(runs)
    if not runs:
        raise ValueError("need at least one coupled run")
    times = runs[0].times
    vals = np.empty((len(runs), times.size))
    for i, co in enumerate(runs):
        if not np.array_equal(co.times, times):
            raise ValueError("coupled runs are not aligned in time")
        vals[i] = co.metric() ** p
    mean = vals.mean(axis=0)
    if len(runs) > 1:
        se = vals.std(axis=0, ddof=1) / math.sqrt(len(runs))
    else:
        se = np.zeros_like(mean)
    return [(float(t), float(mn), float(s)) for t, mn, s in zip(times, mean, se)]


@dataclass(frozen=True)
class DecayFit:
    """Weighted log-linear fit of a positive decaying curve."""

    t_lo: float
    t_hi: float
    rate: float  # minus the log-scale slope; positive when decaying
    intercept: float  # fitted log-level at t = 0
    rate_ci: Tuple[float, float]  # two-sided 95% interval for rate
    r_squared: float
    n_points: int


@dataclass(frozen=True)
class LinearTrend:
    """Weighted straight-line fit on the raw scale (stability diagnostics)."""

    t_lo: float
    t_hi: float
    slope: float
    intercept: float
    slope_ci: Tuple[float, float]
    n_points: int


def _curve_arrays(curve):
    arr = np.asarray([[c[0], c[1], c[2]] for c in curve], dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise ValueError("curve must be a sequence of (t, mean, stderr)")
    order = np.argsort(arr[:, 0])
    return arr[order, 0], arr[order, 1], arr[order, 2]


def _pick_window(t, window, default):
    lo, hi = default if window is None else (float(window[0]), float(window[1]))
    if not lo < hi:
        raise ValueError("window must satisfy t_lo < t_hi")
    tol = 1e-9 * max(1.0, abs(t[-1]))
    if lo < t[0] - tol or hi > t[-1] + tol:
        raise ValueError(f"window [{lo}, {hi}] leaves the curve range "
                         f"[{t[0]}, {t[-1]}]")
    mask = (t >= lo - tol) & (t <= hi + tol)
    if mask.sum() < 5:
        raise ValueError(f"window holds {int(mask.sum())} points, need >= 5")
    return lo, hi, mask


def _wls_line(t, y, w):
    """Weighted least squares of y = intercept + slope*t.

    Returns slope, intercept, slope standard error, weighted R^2. Weights are
    inverse variances up to a common scale; the residual scale is re-estimated
    from the fit, so only relative weights matter.
    """
    sw = np.sqrt(w)
    X = np.column_stack([np.ones_like(t), t]) * sw[:, None]
    beta, *_ = np.linalg.lstsq(X, y * sw, rcond=None)
    resid = y - (beta[0] + beta[1] * t)
    dof = t.size - 2
    s2 = float(w @ resid**2) / dof if dof > 0 else 0.0
    xtwx_inv = np.linalg.inv(X.T @ X)
    slope_se = math.sqrt(max(s2 * xtwx_inv[1, 1], 0.0))
    ybar = float(w @ y) / float(w.sum())
    ss_tot = float(w @ (y - ybar) ** 2)
    r2 = 1.0 - float(w @ resid**2) / ss_tot if ss_tot > 0 else 1.0
    return float(beta[1]), float(beta[0]), slope_se, r2


def _weights_from_se(mean, se, log_scale):
    if (se <= 0).any():
        return np.ones_like(mean)  # deterministic points: plain least squares
    return (mean / se) ** 2 if log_scale else 1.0 / se**2


def fit_exponential_decay(curve, window=None) -> DecayFit:
    """Fit mean ~ exp(intercept - rate*t) on a time window of the curve.

    Weighted least squares on log(mean) with delta-method weights
    (mean/stderr)^2; the returned CI is the normal-theory two-sided 95%
    interval with n-2 degrees of freedom. The default window [T/6, T/2] skips
    the early transient and the noise-dominated tail. Windows with fewer than
    5 points are refused; a nonpositive mean in the window raises
    NonpositiveMean.
    """
    t, mean, se = _curve_arrays(curve)
    lo, hi, mask = _pick_window(t, window, (t[-1] / 6.0, t[-1] / 2.0))
    tw, mw, sew = t[mask], mean[mask], se[mask]
    if (mw <= 0).any():
        raise NonpositiveMean(
            "window contains a nonpositive mean; shrink the window")
    w = _weights_from_se(mw, sew, log_scale=True)
    slope, intercept, slope_se, r2 = _wls_line(tw, np.log(mw), w)
    tcrit = float(student_t.ppf(0.975, tw.size - 2))
    return DecayFit(
        t_lo=lo, t_hi=hi,
        rate=-slope, intercept=intercept,
        rate_ci=(-slope - tcrit * slope_se, -slope + tcrit * slope_se),
        r_squared=r2, n_points=int(tw.size),
    )


def fit_linear_trend(curve, window=None) -> LinearTrend:
    """Raw-scale straight-line fit; default window is the tail [T/2, T].

    Used to check that a moment curve has no positive trend: stability holds
    when the slope CI reaches down to zero or below.
    """
    t, mean, se = _curve_arrays(curve)
    lo, hi, mask = _pick_window(t, window, (t[-1] / 2.0, t[-1]))
    tw, mw, sew = t[mask], mean[mask], se[mask]
    w = _weights_from_se(mw, sew, log_scale=False)
    slope, intercept, slope_se, _ = _wls_line(tw, mw, w)
    tcrit = float(student_t.ppf(0.975, tw.size - 2))
    return LinearTrend(
        t_lo=lo, t_hi=hi,
        slope=slope, intercept=intercept,
        slope_ci=(slope - tcrit * slope_se, slope + tcrit * slope_se),
        n_points=int(tw.size),
    )
