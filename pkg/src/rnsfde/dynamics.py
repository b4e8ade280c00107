"""Path simulation for the regime-switching neutral equation.

The integrator advances the auxiliary process Y(t) = X(t) - G(X_t, regime)
with Euler steps split exactly at regime jump times, then recovers X(t) from
Y(t) by the neutral fixed point. History segments live on a uniform grid of
spacing h with an analytic exponential tail; the memory depth is chosen so
the truncated part of the delay measure is numerically negligible.

Ensembles are embarrassingly parallel over paths. Every path draws from
streams keyed by (seed, path index, purpose), and reductions run over fixed
256-path chunks combined in index order, so results are bit-identical for any
worker count.
"""

import dataclasses
import math
import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Optional

import numpy as np

from . import backend
from .certificates import DissipativityConstants
from .chain import CoupledSwitchingPath, Generator, SwitchingPath, sample_chain_hold_jump, sample_coupled_chain
from .delay import DelayKernel, horizon_for_tail
from .errors import FixedPointDiverged, IncompatibleGrids, InfiniteMoment, NonFiniteValue
from .rng import stream
from .segments import MarkedPoint, Segment, SegmentQuadrature, fading_norm, shift_append
from ._core_py import _cell_peak

__all__ = [
    "ModelSpec",
    "SimConfig",
    "PathOutput",
    "CoupledOutput",
    "simulate_path",
    "simulate_coupled",
    "simulate_ensemble",
    "coupled_ensemble",
    "ensemble_statistic",
    "coupled_statistic",
    "moment_curve",
    "coupled_moment_curve",
    "memory_nodes",
    "conform_segment",
    "n_workers",
]

CHUNK = 256


def n_workers() -> int:
    """Worker count for ensemble runs; ERGO_THREADS caps/overrides."""
    env = os.environ.get("ERGO_THREADS", "")
    if env:
        n = int(env)
        if n < 1:
            raise ValueError("ERGO_THREADS must be >= 1")
        return n
    return min(32, os.cpu_count() or 1)


def _as_regime_array(value, n_states, shape, name):
    arr = np.asarray(value, dtype=float)
    if arr.ndim == len(shape) - 1 or arr.ndim == 0:
        arr = np.broadcast_to(arr, shape[1:])[None].repeat(n_states, axis=0)
    if arr.shape != shape:
        raise ValueError(f"{name}: expected shape {shape}, got {arr.shape}")
    return np.ascontiguousarray(arr, dtype=float)


def _normalize_builtin(builtin, n_states, dim):
    def mat(name, default=0.0):
        v = builtin.get(name, default)
        v = np.asarray(v, dtype=float)
        if v.ndim == 0:
            v = v * np.eye(dim)
        elif v.ndim == 1 and dim == 1:
            v = v.reshape(-1, 1, 1)
        elif v.ndim == 2 and v.shape == (dim, dim):
            pass
        return _as_regime_array(v, n_states, (n_states, dim, dim), name)

    kg = np.asarray(builtin.get("neutral_coeff", 0.0), dtype=float)
    if kg.ndim == 0:
        kg = np.full(n_states, float(kg))
    if kg.shape != (n_states,):
        raise ValueError(f"neutral_coeff: expected shape ({n_states},), got {kg.shape}")
    cvec = np.asarray(builtin.get("drift_const", 0.0), dtype=float)
    if cvec.ndim == 0:
        cvec = np.full((n_states, dim), float(cvec))
    elif cvec.ndim == 1 and cvec.shape == (dim,):
        cvec = np.repeat(cvec[None], n_states, axis=0)
    elif cvec.ndim == 1 and dim == 1:
        cvec = cvec.reshape(-1, 1)
    if cvec.shape != (n_states, dim):
        raise ValueError(f"drift_const: expected shape ({n_states}, {dim}), got {cvec.shape}")
    return {
        "neutral_coeff": np.ascontiguousarray(kg),
        "drift_state": mat("drift_state"),
        "drift_history": mat("drift_history"),
        "drift_const": np.ascontiguousarray(cvec, dtype=float),
        "noise_const": mat("noise_const"),
        "noise_history": mat("noise_history"),
    }


def _builtin_callables(kernel, r, p):
    """Segment-level G/b/sigma closures matching the compiled family."""
    cache = {}

    def quad_for(seg):
        key = (seg.h, seg.n_nodes)
        q = cache.get(key)
        if q is None:
            q = SegmentQuadrature(kernel, r, seg.h, seg.n_nodes)
            cache[key] = q
        return q

    def g_fn(seg, k):
        return p["neutral_coeff"][k] * quad_for(seg).of_segment(seg)

    def b_fn(seg, k):
        j = quad_for(seg).of_segment(seg)
        return p["drift_state"][k] @ seg.endpoint() + p["drift_history"][k] @ j + p["drift_const"][k]

    def sigma_fn(seg, k):
        j = quad_for(seg).of_segment(seg)
        return p["noise_const"][k] + p["noise_history"][k] * j[None, :]

    return g_fn, b_fn, sigma_fn


def _spectral_abscissa_sym(m):
    return float(np.linalg.eigvalsh(0.5 * (m + m.T)).max())


@dataclasses.dataclass(frozen=True)
class ModelSpec:
    """Coefficients of the equation plus the structural data they share.

    Either supply Segment-level callables G/b/sigma, or the linear family via
    ``builtin`` (then callables are derived automatically and the fast
    compiled stepper is eligible). ``builtin`` keys: neutral_coeff (per-regime
    scalar), drift_state, drift_history, noise_const, noise_history (per-regime
    d x d), drift_const (per-regime d-vector).
    """

    dim: int
    kernel: DelayKernel
    generator: Generator
    constants: DissipativityConstants
    G: Optional[Callable] = None
    b: Optional[Callable] = None
    sigma: Optional[Callable] = None
    builtin: Optional[dict] = None

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("dim must be >= 1")
        if self.constants.n_states != self.generator.n_states:
            raise ValueError("constants and generator disagree on the regime count")
        if self.kernel.to_config() != self.constants.kernel.to_config():
            raise ValueError("model kernel differs from the constants' kernel")
        if self.builtin is not None:
            object.__setattr__(self, "builtin", _normalize_builtin(self.builtin, self.generator.n_states, self.dim))
            if self.G is None:
                g_fn, b_fn, s_fn = _builtin_callables(self.kernel, self.constants.r, self.builtin)
                object.__setattr__(self, "G", g_fn)
                object.__setattr__(self, "b", b_fn)
                object.__setattr__(self, "sigma", s_fn)
        else:
            if self.G is None or self.b is None or self.sigma is None:
                raise ValueError("either builtin parameters or all of G, b, sigma are required")
            probe = Segment.zero(self.constants.r, 0.25, 9, dim=self.dim)
            for k in range(self.generator.n_states):
                g0 = np.asarray(self.G(probe, k), dtype=float)
                if g0.shape != (self.dim,) or np.abs(g0).max() > 1e-9:
                    raise ValueError(f"G must vanish on the zero segment (regime {k})")

    @classmethod
    def builtin_linear(cls, kernel, generator, *, r, p=2.0, p0=0.01,
                       neutral_coeff=0.0, drift_state=0.0, drift_history=0.0,
                       drift_const=0.0, noise_const=0.0, noise_history=0.0,
                       dim=None, constants=None):
        if dim is None:
            ds = np.asarray(drift_state, dtype=float)
            dim = 1 if ds.ndim < 2 else ds.shape[-1]
        params = _normalize_builtin(
            {
                "neutral_coeff": neutral_coeff,
                "drift_state": drift_state,
                "drift_history": drift_history,
                "drift_const": drift_const,
                "noise_const": noise_const,
                "noise_history": noise_history,
            },
            generator.n_states,
            dim,
        )
        if constants is None:
            constants = candidate_constants(kernel, params, r=r, p=p, p0=p0)
        return cls(dim=dim, kernel=kernel, generator=generator, constants=constants, builtin=params)


def candidate_constants(kernel, params, *, r, p=2.0, p0=0.01) -> DissipativityConstants:
    """Dissipativity constants implied by the linear family.

    kappa is the largest |neutral_coeff|. For the one-sided drift bound,
    <z, dA x + dB J> with x = z + kappa_G J gives alpha(k) as the symmetric
    spectral abscissa of drift_state plus half the norm of
    (drift_state kappa_G + drift_history), and beta(k) as that half norm.
    gamma bounds the squared Frobenius norm of noise_history applied to a
    history-integral difference column by column.
    """
    kg = params["neutral_coeff"]
    n_states = kg.shape[0]
    kappa = float(np.abs(kg).max())
    alpha = []
    beta = []
    gamma = 0.0
    for k in range(n_states):
        a_k = params["drift_state"][k]
        cross = a_k * kg[k] + params["drift_history"][k]
        c_k = float(np.linalg.norm(cross, 2))
        alpha.append(_spectral_abscissa_sym(a_k) + 0.5 * c_k)
        beta.append(0.5 * c_k)
        g_k = params["noise_history"][k]
        gamma = max(gamma, float((g_k * g_k).sum(axis=0).max()))
    return DissipativityConstants(
        p=p, p0=p0, r=r, kappa=kappa,
        alpha=tuple(alpha), beta=tuple(beta), gamma=gamma, kernel=kernel,
    )


@dataclasses.dataclass(frozen=True)
class SimConfig:
    h: float
    horizon: float
    n_paths: int = 1
    seed: int = 0
    fixed_point_tol: float = 1e-12
    fixed_point_max_iter: int = 50
    sample_every: int = 1
    tail_tol: float = 1e-8
    t_mem: Optional[float] = None
    keep_segments: bool = False

    def __post_init__(self):
        if self.h <= 0 or self.horizon <= 0:
            raise ValueError("h and horizon must be positive")
        steps = self.horizon / self.h
        if abs(steps - round(steps)) > 1e-9 * max(1.0, steps):
            raise ValueError("horizon must be an integer multiple of h")
        if self.n_paths < 1:
            raise ValueError("n_paths must be >= 1")
        if self.seed < 0:
            raise ValueError("seed must be >= 0")
        if self.sample_every < 1:
            raise ValueError("sample_every must be >= 1")
        if round(steps) % self.sample_every != 0:
            raise ValueError("sample_every must divide horizon/h")
        if self.fixed_point_tol <= 0 or self.fixed_point_max_iter < 1:
            raise ValueError("fixed point controls must be positive")
        if self.tail_tol <= 0:
            raise ValueError("tail_tol must be positive")
        if self.t_mem is not None and self.t_mem < 0:
            raise ValueError("t_mem must be >= 0")

    @property
    def n_steps(self) -> int:
        return int(round(self.horizon / self.h))


@dataclasses.dataclass
class PathOutput:
    times: np.ndarray
    X: np.ndarray
    Y: np.ndarray
    regimes: np.ndarray
    norms: np.ndarray
    switching: SwitchingPath
    fp_iters_max: int
    segments: Optional[list] = None

    def marked_points(self):
        if self.segments is None:
            raise ValueError("run with keep_segments=True to get marked points")
        return [MarkedPoint(s, int(k)) for s, k in zip(self.segments, self.regimes)]


@dataclasses.dataclass
class CoupledOutput:
    first: PathOutput
    second: PathOutput
    tau: float
    dist: np.ndarray

    @property
    def times(self):
        return self.first.times

    def metric(self) -> np.ndarray:
        """Product-space distance: fading-norm gap plus the regime indicator."""
        return self.dist + (self.first.regimes != self.second.regimes)


def memory_nodes(model: ModelSpec, cfg: SimConfig) -> int:
    """History node count: depth where the discarded delay mass is < tail_tol.

    The controlling exponent is the largest one the certificates integrate
    against, p*(r - min(alpha)); if that moment diverges the p*r moment
    (finite by construction) is used instead.
    """
    if cfg.t_mem is not None:
        t_raw = cfg.t_mem
    else:
        c = model.constants
        target = c.p * (c.r - min(c.alpha_min, 0.0))
        try:
            t_raw = horizon_for_tail(model.kernel, target, cfg.tail_tol)
        except InfiniteMoment:
            t_raw = horizon_for_tail(model.kernel, c.p * c.r, cfg.tail_tol)
    # 1e-9 absorbs the absolute tolerance of the tail-horizon bisection
    return max(int(math.ceil((t_raw - 1e-9) / cfg.h)), 0) + 1


def conform_segment(seg: Segment, r: float, h: float, n_hist: int) -> Segment:
    """Re-express initial data on the simulation grid.

    Short histories are padded with their own analytic tail values; long ones
    are truncated with the tail re-anchored at the first dropped node. The
    grid step and fading rate must already match.
    """
    if abs(seg.r - r) > 1e-12 * max(1.0, abs(r)):
        raise IncompatibleGrids(f"initial segment has r={seg.r}, simulation uses r={r}")
    if n_hist > 1 and abs(seg.h - h) > 1e-12 * max(1.0, h):
        raise IncompatibleGrids(f"initial segment has h={seg.h}, simulation uses h={h}")
    n0 = seg.n_nodes
    if n0 == n_hist:
        return seg
    if n0 > n_hist:
        values = seg.values[:n_hist].copy()
        tail = math.exp(-r * n_hist * h) * seg.values[n_hist]
        return Segment(r=r, h=h, values=values, tail_limit=tail)
    pad = np.exp(r * h * np.arange(n0, n_hist))[:, None] * seg.tail_limit[None, :]
    values = np.vstack([seg.values, pad])
    return Segment(r=r, h=h, values=values, tail_limit=seg.tail_limit.copy())


def _merged_grid(cfg: SimConfig, extra_times):
    """Uniform nodes plus jump times, each exactly once, strictly increasing."""
    h = cfg.h
    n_steps = cfg.n_steps
    tol = 1e-12 * max(1.0, cfg.horizon)
    nodes = np.arange(n_steps + 1) * h
    extras = np.unique(np.asarray(sorted(set(extra_times)), dtype=float))
    if extras.size:
        inside = (extras > tol) & (extras < cfg.horizon - tol)
        extras = extras[inside]
        # drop jump times that coincide with a grid node
        off_node = np.abs(extras - np.round(extras / h) * h) > tol
        extras = extras[off_node]
    if extras.size == 0:
        times = nodes
        is_node = np.ones(n_steps + 1, dtype=np.uint8)
        node_pos = np.arange(n_steps + 1, dtype=np.int64)
    else:
        ins = np.searchsorted(nodes, extras)
        times = np.insert(nodes, ins, extras)
        is_node = np.insert(np.ones(n_steps + 1, dtype=np.uint8), ins, 0)
        node_pos = np.arange(n_steps + 1, dtype=np.int64) + np.searchsorted(extras, nodes)
    sample_idx = np.ascontiguousarray(node_pos[:: cfg.sample_every])
    return np.ascontiguousarray(times), np.ascontiguousarray(is_node), sample_idx


def _regimes_at(path: SwitchingPath, times: np.ndarray) -> np.ndarray:
    jumps = np.asarray(path.jump_times, dtype=float)
    states = np.concatenate([[path.start], np.asarray(path.states, dtype=np.int64)])
    idx = np.searchsorted(jumps, times, side="right")
    return np.ascontiguousarray(states[idx], dtype=np.int64)


class _Prepared:
    """Per-(model, cfg) integration context shared by all paths."""

    def __init__(self, model: ModelSpec, cfg: SimConfig):
        c = model.constants
        if c.r * cfg.horizon > 300.0:
            raise ValueError("r*horizon too large: fading weights overflow double range")
        self.model = model
        self.cfg = cfg
        self.n_hist = memory_nodes(model, cfg)
        self.quad = SegmentQuadrature(model.kernel, c.r, cfg.h, self.n_hist)
        self.tail_r = self.quad.tail_mass(c.r)
        self.tail_shift = math.exp(-c.r * self.n_hist * cfg.h)
        self.r = c.r
        if model.builtin is not None:
            p = model.builtin
            self.core_args = (
                p["neutral_coeff"], p["drift_state"], p["drift_history"],
                p["drift_const"], p["noise_const"], p["noise_history"],
                np.ascontiguousarray(self.quad.weights), self.tail_r,
                self.tail_shift, self.r, cfg.h,
            )
        else:
            self.core_args = None

    def conform(self, init: MarkedPoint):
        seg = conform_segment(init.segment, self.r, self.cfg.h, self.n_hist)
        return seg, fading_norm(seg)


def _resolve_rngs(cfg, path_index, rngs, purpose_prefix=""):
    if rngs is None:
        return (
            stream(cfg.seed, path_index, purpose_prefix + "chain"),
            stream(cfg.seed, path_index, purpose_prefix + "noise"),
        )
    if isinstance(rngs, np.random.Generator):
        return rngs, rngs
    return rngs


def _raise_code(code, t, path_index):
    if code == backend.CODE_FIXED_POINT:
        raise FixedPointDiverged(
            f"neutral fixed point did not converge at t={t:.6g} (path {path_index})",
            t=t, path_index=path_index,
        )
    if code == backend.CODE_NONFINITE:
        raise NonFiniteValue(
            f"non-finite state at t={t:.6g} (path {path_index})",
            t=t, path_index=path_index,
        )


def _make_segments(prep, out_seg, out_tail):
    segs = []
    for vals, tail in zip(out_seg, out_tail):
        segs.append(Segment(r=prep.r, h=prep.cfg.h, values=vals.copy(), tail_limit=tail.copy()))
    return segs


def simulate_path(model: ModelSpec, init: MarkedPoint, cfg: SimConfig,
                  path_index: int = 0, rngs=None, _prep=None) -> PathOutput:
    """One path. rngs: None (streams keyed by cfg.seed/path_index), a single
    Generator used for chain then noise, or a (chain_rng, noise_rng) pair."""
    prep = _prep if _prep is not None else _Prepared(model, cfg)
    chain_rng, noise_rng = _resolve_rngs(cfg, path_index, rngs)
    sw = sample_chain_hold_jump(model.generator, init.regime, cfg.horizon, chain_rng)
    times, is_node, sample_idx = _merged_grid(cfg, sw.jump_times)
    reg_pt = _regimes_at(sw, times)
    z = noise_rng.standard_normal((times.shape[0] - 1, model.dim))
    seg0, init_norm = prep.conform(init)
    n_out = sample_idx.shape[0]
    d = model.dim
    out_x = np.empty((n_out, d))
    out_y = np.empty((n_out, d))
    out_norm = np.empty(n_out)
    if cfg.keep_segments:
        out_seg = np.empty((n_out, prep.n_hist, d))
        out_tail = np.empty((n_out, d))
    else:
        out_seg = out_tail = None
    if prep.core_args is not None:
        code, err_t, iters = backend.integrate_single(
            *prep.core_args,
            np.ascontiguousarray(seg0.values), np.ascontiguousarray(seg0.tail_limit),
            init_norm, times, reg_pt, is_node, z, sample_idx,
            cfg.fixed_point_tol, cfg.fixed_point_max_iter,
            out_x, out_y, out_norm, out_seg, out_tail,
        )
        _raise_code(code, err_t, path_index)
    else:
        iters = _generic_single(
            model, prep, seg0, init_norm, times, reg_pt, is_node, z, sample_idx,
            out_x, out_y, out_norm, out_seg, out_tail, path_index,
        )
    segs = _make_segments(prep, out_seg, out_tail) if cfg.keep_segments else None
    return PathOutput(
        times=times[sample_idx], X=out_x, Y=out_y,
        regimes=reg_pt[sample_idx], norms=out_norm,
        switching=sw, fp_iters_max=iters, segments=segs,
    )


def simulate_coupled(model: ModelSpec, init_pair, cfg: SimConfig,
                     path_index: int = 0, rngs=None, _prep=None) -> CoupledOutput:
    """One pair under the basic regime coupling with shared noise after tau."""
    init_a, init_b = init_pair
    prep = _prep if _prep is not None else _Prepared(model, cfg)
    if prep.core_args is None:
        raise ValueError("coupled simulation requires the builtin linear family")
    chain_rng, noise_rng = _resolve_rngs(cfg, path_index, rngs)
    cp = sample_coupled_chain(model.generator, (init_a.regime, init_b.regime), cfg.horizon, chain_rng)
    extras = list(cp.first.jump_times) + list(cp.second.jump_times)
    if math.isfinite(cp.tau) and 0.0 < cp.tau < cfg.horizon:
        extras.append(cp.tau)
    times, is_node, sample_idx = _merged_grid(cfg, extras)
    rega = _regimes_at(cp.first, times)
    regb = _regimes_at(cp.second, times)
    if cp.tau <= 0.0:
        tau_idx = 0
    elif math.isfinite(cp.tau) and cp.tau <= cfg.horizon:
        tau_idx = int(np.searchsorted(times, cp.tau - 1e-12 * max(1.0, cfg.horizon)))
    else:
        tau_idx = times.shape[0]
    d = model.dim
    z = noise_rng.standard_normal((times.shape[0] - 1, 2 * d))
    sega, norm_a = prep.conform(init_a)
    segb, norm_b = prep.conform(init_b)
    diff = Segment(r=prep.r, h=cfg.h, values=sega.values - segb.values,
                   tail_limit=sega.tail_limit - segb.tail_limit)
    diff_norm0 = fading_norm(diff)
    n_out = sample_idx.shape[0]
    out_xa = np.empty((n_out, d)); out_ya = np.empty((n_out, d)); out_na = np.empty(n_out)
    out_xb = np.empty((n_out, d)); out_yb = np.empty((n_out, d)); out_nb = np.empty(n_out)
    out_dist = np.empty(n_out)
    if cfg.keep_segments:
        out_sega = np.empty((n_out, prep.n_hist, d)); out_taila = np.empty((n_out, d))
        out_segb = np.empty((n_out, prep.n_hist, d)); out_tailb = np.empty((n_out, d))
    else:
        out_sega = out_taila = out_segb = out_tailb = None
    code, err_t, iters = backend.integrate_coupled(
        *prep.core_args,
        np.ascontiguousarray(sega.values), np.ascontiguousarray(sega.tail_limit), norm_a,
        np.ascontiguousarray(segb.values), np.ascontiguousarray(segb.tail_limit), norm_b,
        diff_norm0, times, rega, regb, is_node, tau_idx, z, sample_idx,
        cfg.fixed_point_tol, cfg.fixed_point_max_iter,
        out_xa, out_ya, out_na, out_xb, out_yb, out_nb, out_dist,
        out_sega, out_taila, out_segb, out_tailb,
    )
    _raise_code(code, err_t, path_index)
    segs_a = _make_segments(prep, out_sega, out_taila) if cfg.keep_segments else None
    segs_b = _make_segments(prep, out_segb, out_tailb) if cfg.keep_segments else None
    first = PathOutput(times=times[sample_idx], X=out_xa, Y=out_ya,
                       regimes=rega[sample_idx], norms=out_na,
                       switching=cp.first, fp_iters_max=iters, segments=segs_a)
    second = PathOutput(times=times[sample_idx], X=out_xb, Y=out_yb,
                        regimes=regb[sample_idx], norms=out_nb,
                        switching=cp.second, fp_iters_max=iters, segments=segs_b)
    return CoupledOutput(first=first, second=second, tau=cp.tau, dist=out_dist)


def _generic_single(model, prep, seg0, init_norm, times, reg_pt, is_node, z,
                    sample_idx, out_x, out_y, out_norm, out_seg, out_tail, path_index):
    """Reference integrator on Segment objects for callable coefficients."""
    cfg = prep.cfg
    r = prep.r
    d = model.dim
    seg = seg0
    x_cur = seg.endpoint().copy()
    y = x_cur - np.asarray(model.G(seg, int(reg_pt[0])), dtype=float)
    m_run = math.sqrt(float(x_cur @ x_cur))
    max_iters = 0
    sp = 0

    def record(pt, t):
        nonlocal sp
        out_x[sp] = x_cur
        out_y[sp] = y
        out_norm[sp] = math.exp(-r * t) * max(m_run, init_norm)
        if out_seg is not None:
            out_seg[sp] = seg.values
            out_tail[sp] = seg.tail_limit
        sp += 1

    if sample_idx.size and sample_idx[0] == 0:
        record(0, 0.0)
    for i in range(times.shape[0] - 1):
        k = int(reg_pt[i])
        t0 = float(times[i]); t1 = float(times[i + 1]); dt = t1 - t0
        seg_left = seg.with_endpoint(x_cur)
        bv = np.asarray(model.b(seg_left, k), dtype=float)
        sig = np.asarray(model.sigma(seg_left, k), dtype=float)
        y = y + bv * dt + math.sqrt(dt) * (sig @ z[i])
        if not np.isfinite(y).all():
            raise NonFiniteValue(f"non-finite state at t={t1:.6g} (path {path_index})",
                                 t=t1, path_index=path_index)
        if is_node[i + 1]:
            seg = shift_append(seg, np.zeros(d))
        k1 = int(reg_pt[i + 1])
        x = x_cur
        converged = False
        for it in range(cfg.fixed_point_max_iter):
            x_new = y + np.asarray(model.G(seg.with_endpoint(x), k1), dtype=float)
            if np.abs(x_new - x).max() <= cfg.fixed_point_tol * max(1.0, np.abs(x_new).max()):
                x = x_new
                converged = True
                max_iters = max(max_iters, it + 1)
                break
            x = x_new
        if not converged:
            raise FixedPointDiverged(
                f"neutral fixed point did not converge at t={t1:.6g} (path {path_index})",
                t=t1, path_index=path_index)
        if not np.isfinite(x).all():
            raise NonFiniteValue(f"non-finite state at t={t1:.6g} (path {path_index})",
                                 t=t1, path_index=path_index)
        m_run = max(m_run, _cell_peak(r, t0, dt, x_cur, x))
        x_cur = x
        if is_node[i + 1]:
            seg = seg.with_endpoint(x_cur)
        if sp < sample_idx.size and sample_idx[sp] == i + 1:
            record(i + 1, t1)
    return max_iters


def _chunks(n_paths):
    return [(lo, min(lo + CHUNK, n_paths)) for lo in range(0, n_paths, CHUNK)]


def _run_chunked(tasks, workers):
    if workers <= 1 or len(tasks) <= 1:
        return [t() for t in tasks]
    with ThreadPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(lambda t: t(), tasks))


def ensemble_statistic(model, init, cfg, stat, *, coupled=False, init2=None):
    """Mean/stderr of a per-path statistic over cfg.n_paths paths.

    stat maps a PathOutput (or CoupledOutput when coupled=True) to a 1-D
    array. Returns (mean, stderr, n_paths). Accumulation order is fixed, so
    the result is independent of the worker count.
    """
    prep = _Prepared(model, cfg)

    def run_chunk(lo, hi):
        acc = None
        acc2 = None
        for pi in range(lo, hi):
            if coupled:
                out = simulate_coupled(model, (init, init2), cfg, path_index=pi, _prep=prep)
            else:
                out = simulate_path(model, init, cfg, path_index=pi, _prep=prep)
            v = np.asarray(stat(out), dtype=float)
            if acc is None:
                acc = v.copy()
                acc2 = v * v
            else:
                acc += v
                acc2 += v * v
        return acc, acc2

    tasks = [lambda lo=lo, hi=hi: run_chunk(lo, hi) for lo, hi in _chunks(cfg.n_paths)]
    partials = _run_chunked(tasks, n_workers())
    total = partials[0][0].copy()
    total2 = partials[0][1].copy()
    for acc, acc2 in partials[1:]:
        total += acc
        total2 += acc2
    n = cfg.n_paths
    mean = total / n
    if n > 1:
        var = np.maximum(total2 - n * mean * mean, 0.0) / (n - 1)
        se = np.sqrt(var / n)
    else:
        se = np.full_like(mean, np.nan)
    return mean, se, n


def coupled_statistic(model, init_pair, cfg, stat):
    return ensemble_statistic(model, init_pair[0], cfg, stat, coupled=True, init2=init_pair[1])


def moment_curve(model, init, cfg, p_exp):
    """(t, mean of fading norm^p_exp, stderr) at the thinned sample times."""
    prep = _Prepared(model, cfg)
    ref = simulate_path(model, init, cfg, path_index=0, _prep=prep)
    mean, se, _ = ensemble_statistic(model, init, cfg, lambda out: out.norms ** p_exp)
    return list(zip(ref.times.tolist(), mean.tolist(), se.tolist()))


def coupled_moment_curve(model, init_pair, cfg, p_exp):
    """(t, mean of product-metric^p_exp, stderr) for the coupled pair."""
    prep = _Prepared(model, cfg)
    ref = simulate_coupled(model, init_pair, cfg, path_index=0, _prep=prep)
    mean, se, _ = coupled_statistic(model, init_pair, cfg, lambda out: out.metric() ** p_exp)
    return list(zip(ref.times.tolist(), mean.tolist(), se.tolist()))


def simulate_ensemble(model, init, cfg) -> list:
    """All paths as PathOutput objects, in path-index order."""
    prep = _Prepared(model, cfg)

    def run_chunk(lo, hi):
        return [simulate_path(model, init, cfg, path_index=pi, _prep=prep) for pi in range(lo, hi)]

    tasks = [lambda lo=lo, hi=hi: run_chunk(lo, hi) for lo, hi in _chunks(cfg.n_paths)]
    out = []
    for chunk in _run_chunked(tasks, n_workers()):
        out.extend(chunk)
    return out


def coupled_ensemble(model, init_pair, cfg) -> list:
    """All coupled pairs as CoupledOutput objects, in path-index order."""
    prep = _Prepared(model, cfg)

    def run_chunk(lo, hi):
        return [simulate_coupled(model, init_pair, cfg, path_index=pi, _prep=prep) for pi in range(lo, hi)]

    tasks = [lambda lo=lo, hi=hi: run_chunk(lo, hi) for lo, hi in _chunks(cfg.n_paths)]
    out = []
    for chunk in _run_chunked(tasks, n_workers()):
        out.extend(chunk)
    return out
