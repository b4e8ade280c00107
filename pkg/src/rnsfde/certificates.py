"""Ergodicity certificates for the switching neutral delay system.

Given declared per-regime dissipation constants and a delay kernel, this
module computes the contraction numbers of the neutral part, the per-regime
exponential rate function f entering the switched moment bound, the spectral
decay rate of the f-tilted generator, exact and Monte-Carlo exponential
functionals of the chain, the finite-partition reduction with its M-matrix
test, and a randomized falsifier that hunts for violations of the declared
constants on concrete models.
"""

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .chain import Generator
from .delay import DelayKernel, horizon_for_tail, moment
from .errors import (
    EigensolverFailure,
    EmptyGroup,
    InfiniteMoment,
    Kappa2NotContractive,
    SingularSystem,
)
from .segments import Segment, SegmentQuadrature

__all__ = [
    "Check",
    "DissipativityConstants",
    "CertificateReport",
    "PartitionCertificate",
    "FalsifierReport",
    "contraction_constants",
    "f_of",
    "spectral_rate",
    "exp_functional_exact",
    "exp_functional_mc",
    "partition_reduce",
    "m_matrix_certificate",
    "threshold_check",
    "finite_space_certificate",
    "assumption_falsifier",
]

# strict-positivity threshold of the M-matrix test
POSITIVITY_TOL = 1e-12


@dataclass(frozen=True)
class Check:
    """Single verdict: the boolean plus the inequality margin behind it
    (margin > 0 means the inequality holds with that much room)."""

    passed: bool
    margin: float
    value: float

    def to_dict(self):
        return {"passed": bool(self.passed), "margin": float(self.margin), "value": float(self.value)}


@dataclass(frozen=True)
class DissipativityConstants:
    """Declared constants of a concrete model: contraction factor kappa of
    the neutral part, per-regime one-sided drift rates alpha, history drift
    gains beta, diffusion gain gamma, base exponent p, bump p0 and memory
    fading rate r, all tied to one delay kernel."""

    p: float
    p0: float
    r: float
    kappa: float
    alpha: np.ndarray
    beta: np.ndarray
    gamma: float
    kernel: DelayKernel

    def __post_init__(self):
        if not self.p >= 2:
            raise ValueError("p must be >= 2")
        if not self.p0 > 0:
            raise ValueError("p0 must be > 0")
        if not self.r > 0:
            raise ValueError("r must be > 0")
        if not self.kappa >= 0:
            raise ValueError("kappa must be >= 0")
        if not self.gamma >= 0:
            raise ValueError("gamma must be >= 0")
        alpha = np.atleast_1d(np.asarray(self.alpha, dtype=float))
        beta = np.atleast_1d(np.asarray(self.beta, dtype=float))
        if alpha.shape != beta.shape or alpha.ndim != 1 or alpha.size < 1:
            raise ValueError("alpha and beta must be equal-length 1d arrays")
        if not (np.isfinite(alpha).all() and np.isfinite(beta).all()):
            raise ValueError("alpha and beta must be finite")
        if (beta < 0).any():
            raise ValueError("beta entries must be >= 0")
        alpha = alpha.copy()
        beta = beta.copy()
        alpha.setflags(write=False)
        beta.setflags(write=False)
        object.__setattr__(self, "p", float(self.p))
        object.__setattr__(self, "p0", float(self.p0))
        object.__setattr__(self, "r", float(self.r))
        object.__setattr__(self, "kappa", float(self.kappa))
        object.__setattr__(self, "gamma", float(self.gamma))
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "beta", beta)

    @property
    def n_states(self) -> int:
        return self.alpha.size

    @property
    def gamma_p(self) -> float:
        return (self.p - 1.0) / 2.0

    @property
    def alpha_min(self) -> float:
        return float(self.alpha.min())

    @property
    def alpha_max(self) -> float:
        return float(self.alpha.max())

    @property
    def beta_bar(self) -> float:
        return float(self.beta.max())

    @property
    def q_eff(self) -> float:
        """Boosted exponent (p + p0) or 2, whichever is larger."""
        return max(self.p + self.p0, 2.0)


def contraction_constants(c: DissipativityConstants, exponent=None):
    """(kappa1, kappa2) at the given exponent (default p).

    kappa1 scales the neutral part against the fading norm; kappa2 does the
    same against the norm boosted by the worst drift rate. Both must be < 1
    for the downstream machinery."""
    e = c.p if exponent is None else float(exponent)
    k1 = c.kappa * moment(c.kernel, e * c.r) ** (1.0 / e)
    k2 = c.kappa * moment(c.kernel, e * (c.r - c.alpha_min)) ** (1.0 / e)
    return k1, k2


def f_of(c: DissipativityConstants, exponent=None) -> np.ndarray:
    """Per-regime rate f(k): a history-coupling surcharge common to all
    regimes plus e*alpha(k). Negative entries are the dissipative regimes."""
    e = c.p if exponent is None else float(exponent)
    _, k2 = contraction_constants(c, e)
    if k2 >= 1.0:
        raise Kappa2NotContractive(f"kappa2={k2:.6g} >= 1 at exponent {e:g}")
    delta = moment(c.kernel, e * (c.r - c.alpha_min))
    gamma_e = (e - 1.0) / 2.0
    surcharge = (c.beta_bar + gamma_e) * (e - 2.0 + 2.0 * delta / (1.0 - k2) ** e)
    return surcharge + e * c.alpha


def _tilted(q: Generator, f) -> np.ndarray:
    f = np.asarray(f, dtype=float)
    if f.shape != (q.n_states,):
        raise ValueError(f"f must have shape ({q.n_states},)")
    return q.rates + np.diag(f)


def spectral_rate(q: Generator, f) -> float:
    """zeta = -(largest real part) of the spectrum of Q + diag(f); the decay
    rate of the expected exponential functional."""
    qhat = _tilted(q, f)
    try:
        ev = scipy.linalg.eigvals(qhat)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - scipy rarely fails here
        raise EigensolverFailure(str(exc)) from exc
    if not np.isfinite(ev).all():
        raise EigensolverFailure("eigenvalues not finite")
    return float(-ev.real.max())


def exp_functional_exact(q: Generator, f, t: float, start=None):
    """E[exp(integral_0^t f(chain) ds)] started in each state: component i of
    expm(t(Q+diag f)) @ 1. Returns the full vector, or a float when start is
    given."""
    if t < 0:
        raise ValueError("t must be >= 0")
    vec = scipy.linalg.expm(t * _tilted(q, f)) @ np.ones(q.n_states)
    if start is None:
        return vec
    return float(vec[start])


def exp_functional_mc(q: Generator, f, ts, start: int, n_paths: int, rng: np.random.Generator):
    """Monte-Carlo counterpart of exp_functional_exact on a batch of chain
    paths, all driven by the one supplied stream (vectorized rounds, so the
    draw order is fixed and reruns are bit-identical).

    Returns (means, stderrs) aligned with ts."""
    ts = np.atleast_1d(np.asarray(ts, dtype=float))
    if (ts < 0).any():
        raise ValueError("query times must be >= 0")
    f = np.asarray(f, dtype=float)
    n = q.n_states
    t_max = float(ts.max())
    targets = np.array([[m for m in range(n) if m != k] for k in range(n)])
    offrates = np.array([[q.rates[k, m] for m in range(n) if m != k] for k in range(n)])
    cum = np.cumsum(offrates, axis=1)
    exit_rates = q.exit_rates

    state = np.full(n_paths, start, dtype=np.int64)
    t_cur = np.zeros(n_paths)
    acc = np.zeros(n_paths)
    snaps = np.full((ts.size, n_paths), np.nan)
    while (t_cur < t_max).any() or np.isnan(snaps).any():
        waits = rng.exponential(1.0, size=n_paths) / exit_rates[state]
        t_next = t_cur + waits
        for qi, tq in enumerate(ts):
            hit = np.isnan(snaps[qi]) & (t_next >= tq)
            if hit.any():
                snaps[qi, hit] = acc[hit] + f[state[hit]] * (tq - t_cur[hit])
        acc += f[state] * waits
        t_cur = t_next
        u = rng.random(n_paths) * exit_rates[state]
        idx = np.minimum((u[:, None] >= cum[state]).sum(axis=1), n - 2)
        state = targets[state, idx]
    vals = np.exp(snaps)
    means = vals.mean(axis=1)
    ses = vals.std(axis=1, ddof=1) / math.sqrt(n_paths)
    return means, ses


@dataclass
class PartitionCertificate:
    """Reduced description of the regime space: states grouped by drift-rate
    bins, worst-case constants per group, and the group-level generator built
    from pessimistic row sums. The matrix test fields are filled in by
    m_matrix_certificate and threshold_check."""

    thresholds: tuple
    ordering: str
    groups: tuple
    alpha_F: np.ndarray
    beta_F: np.ndarray
    Q_F: np.ndarray
    H: np.ndarray = None
    A: np.ndarray = None
    u_F: np.ndarray = None
    v_F: np.ndarray = None
    checks: dict = field(default_factory=dict)

    @property
    def m(self) -> int:
        return len(self.groups)

    @property
    def passed(self) -> bool:
        return bool(self.checks) and all(c.passed for c in self.checks.values())

    def to_dict(self):
        def arr(a):
            return None if a is None else np.asarray(a).tolist()

        return {
            "thresholds": list(self.thresholds),
            "ordering": self.ordering,
            "groups": [list(g) for g in self.groups],
            "alpha_F": arr(self.alpha_F),
            "beta_F": arr(self.beta_F),
            "Q_F": arr(self.Q_F),
            "A": arr(self.A),
            "u_F": arr(self.u_F),
            "v_F": arr(self.v_F),
            "checks": {k: v.to_dict() for k, v in self.checks.items()},
            "passed": self.passed if self.checks else None,
        }


def partition_reduce(c: DissipativityConstants, q: Generator, thresholds, ordering="decreasing") -> PartitionCertificate:
    """Group states into drift-rate bins (t_{n-1}, t_n] cut at the given
    interior thresholds and build the group-level constants.

    Group rates toward later groups take the worst (smallest) row sum over
    the group, toward earlier groups the worst (largest); the diagonal closes
    each row to zero. `ordering` picks whether group 1 holds the largest
    ("decreasing", default) or smallest ("increasing") drift rates."""
    if q.n_states != c.n_states:
        raise ValueError("generator and constants disagree on the state count")
    thr = [float(t) for t in thresholds]
    if any(b <= a for a, b in zip(thr, thr[1:])):
        raise ValueError("thresholds must be strictly increasing")
    if ordering not in ("decreasing", "increasing"):
        raise ValueError("ordering must be 'decreasing' or 'increasing'")
    m = len(thr) + 1
    bins = [[] for _ in range(m)]
    for k, a in enumerate(c.alpha):
        bins[int(np.searchsorted(thr, a, side="left"))].append(k)
    for n, b in enumerate(bins):
        if not b:
            raise EmptyGroup(f"group {n + 1} of {m}: no state has its drift rate in the bin")
    groups = bins[::-1] if ordering == "decreasing" else bins
    alpha_f = np.array([max(c.alpha[g] for g in grp) for grp in groups])
    beta_f = np.array([max(c.beta[g] for g in grp) for grp in groups])
    qf = np.zeros((m, m))
    for k in range(m):
        for l in range(m):
            if l == k:
                continue
            row_sums = [q.rates[j, groups[l]].sum() for j in groups[k]]
            qf[k, l] = min(row_sums) if l > k else max(row_sums)
        qf[k, k] = -qf[k].sum()
    return PartitionCertificate(
        thresholds=tuple(thr),
        ordering=ordering,
        groups=tuple(tuple(g) for g in groups),
        alpha_F=alpha_f,
        beta_F=beta_f,
        Q_F=qf,
    )


def _solve_or_raise(mat: np.ndarray, rhs: np.ndarray, what: str) -> np.ndarray:
    try:
        x = np.linalg.solve(mat, rhs)
    except np.linalg.LinAlgError as exc:
        raise SingularSystem(f"{what}: {exc}") from exc
    resid = np.abs(mat @ x - rhs).max()
    if not np.isfinite(x).all() or resid > 1e-8 * max(1.0, np.abs(rhs).max()):
        raise SingularSystem(f"{what}: solve residual {resid:g}")
    return x


def m_matrix_certificate(pc: PartitionCertificate, p: float) -> PartitionCertificate:
    """Fill in the matrix test: with D = p diag(alpha_F) + Q_F and H the unit
    upper-triangular ones matrix, A = -D H must be a nonsingular M-matrix
    (Z-pattern plus A^{-1} 1 strictly positive). Also solves D v = -1 directly
    and checks v > 0 and strictly decreasing, the form the moment bound
    actually consumes."""
    m = pc.m
    ones = np.ones(m)
    h = np.triu(np.ones((m, m)))
    d = p * np.diag(pc.alpha_F) + pc.Q_F
    a = -d @ h
    off = a[~np.eye(m, dtype=bool)]
    worst_off = float(off.max()) if off.size else -math.inf
    pc.H = h
    pc.A = a
    pc.checks["z_pattern"] = Check(worst_off <= POSITIVITY_TOL, -worst_off, worst_off)

    u = _solve_or_raise(a, ones, "A u = 1")
    v = h @ u
    pc.u_F = u
    pc.v_F = v
    umin = float(u.min())
    pc.checks["u_positive"] = Check(umin > POSITIVITY_TOL, umin, umin)
    pc.checks["m_matrix"] = Check(
        pc.checks["z_pattern"].passed and pc.checks["u_positive"].passed,
        min(pc.checks["z_pattern"].margin, pc.checks["u_positive"].margin),
        umin,
    )
    vstep = float(np.diff(v).max()) if m > 1 else -math.inf
    pc.checks["v_decreasing"] = Check(vstep < 0, -vstep, vstep)

    v2 = _solve_or_raise(d, -ones, "D v = -1")
    resid = float(np.abs(d @ v + ones).max())
    pc.checks["residual"] = Check(resid <= 1e-10, 1e-10 - resid, resid)
    v2min = float(v2.min())
    pc.checks["direct_v_positive"] = Check(v2min > POSITIVITY_TOL, v2min, v2min)
    v2step = float(np.diff(v2).max()) if m > 1 else -math.inf
    pc.checks["direct_v_decreasing"] = Check(v2step < 0, -v2step, v2step)
    return pc


def threshold_check(pc: PartitionCertificate, c: DissipativityConstants):
    """Per-group smallness test: (beta_F(n) + (p-1)/2) v_F(n) must stay below
    the contraction budget (1-kappa1)^p / (2 + (p-2)(1-kappa1)^p)."""
    if pc.v_F is None:
        raise ValueError("run m_matrix_certificate first")
    k1, _ = contraction_constants(c)
    p = c.p
    if k1 < 1.0:
        rhs = (1.0 - k1) ** p / (2.0 + (p - 2.0) * (1.0 - k1) ** p)
    else:
        rhs = -math.inf
    lhs = (pc.beta_F + c.gamma_p) * pc.v_F
    verdicts = []
    for n in range(pc.m):
        ck = Check(lhs[n] < rhs, rhs - float(lhs[n]), float(lhs[n]))
        pc.checks[f"threshold_group_{n + 1}"] = ck
        verdicts.append(ck)
    pc.checks["threshold"] = Check(
        all(v.passed for v in verdicts),
        min(v.margin for v in verdicts),
        float(lhs.max()),
    )
    return verdicts


@dataclass
class CertificateReport:
    """Headline numbers at the base exponent p, the same quantities at the
    boosted exponent, every verdict with its margin, and diagnostics."""

    kappa1: float
    kappa2: float
    f: np.ndarray
    zeta: float
    q_eff: float
    q_level: dict
    checks: dict
    diagnostics: dict = field(default_factory=dict)
    partition: PartitionCertificate = None

    @property
    def passed(self) -> bool:
        ok = all(c.passed for c in self.checks.values())
        if self.partition is not None and self.partition.checks:
            ok = ok and self.partition.passed
        return ok

    def to_dict(self):
        return {
            "kappa1": _none_or_float(self.kappa1),
            "kappa2": _none_or_float(self.kappa2),
            "f": None if self.f is None else np.asarray(self.f).tolist(),
            "zeta": _none_or_float(self.zeta),
            "q_eff": float(self.q_eff),
            "q_level": {
                k: (np.asarray(v).tolist() if isinstance(v, np.ndarray) else _none_or_float(v))
                for k, v in self.q_level.items()
            },
            "verdicts": {k: v.to_dict() for k, v in self.checks.items()},
            "diagnostics": self.diagnostics,
            "partition": None if self.partition is None else self.partition.to_dict(),
            "passed": self.passed,
        }


def _none_or_float(x):
    return None if x is None else float(x)


def _level_values(c: DissipativityConstants, q: Generator, e: float):
    """(kappa1, kappa2, f, zeta, checks) at one exponent; infinite moments and
    a non-contractive kappa2 become failed verdicts instead of exceptions."""
    checks = {}
    try:
        k1, k2 = contraction_constants(c, e)
    except InfiniteMoment:
        checks["kappa1"] = Check(False, -math.inf, math.inf)
        checks["kappa2"] = Check(False, -math.inf, math.inf)
        checks["zeta"] = Check(False, -math.inf, math.nan)
        return math.inf, math.inf, None, None, checks
    checks["kappa1"] = Check(k1 < 1.0, 1.0 - k1, k1)
    checks["kappa2"] = Check(k2 < 1.0, 1.0 - k2, k2)
    try:
        f = f_of(c, e)
        zeta = spectral_rate(q, f)
    except Kappa2NotContractive:
        checks["zeta"] = Check(False, -math.inf, math.nan)
        return k1, k2, None, None, checks
    checks["zeta"] = Check(zeta > 0.0, zeta, zeta)
    return k1, k2, f, zeta, checks


def finite_space_certificate(c: DissipativityConstants, q: Generator) -> CertificateReport:
    """Full certificate for a finite regime space: contraction, rate function
    and spectral decay evaluated at the base exponent p and at the boosted
    exponent (p+p0) or 2; pass requires every verdict at both levels plus a
    strictly negative best drift rate."""
    if q.n_states != c.n_states:
        raise ValueError("generator and constants disagree on the state count")
    k1, k2, f, zeta, checks_p = _level_values(c, q, c.p)
    k1q, k2q, fq, zetaq, checks_q = _level_values(c, q, c.q_eff)
    checks = dict(checks_p)
    for name, ck in checks_q.items():
        checks[name + "_q"] = ck
    checks["alpha_min_negative"] = Check(c.alpha_min < 0.0, -c.alpha_min, c.alpha_min)

    diagnostics = {}
    if zeta is not None:
        # empirical sandwich constants: value(t) e^{zeta t} over a time window
        t_hi = min(10.0, 600.0 / max(abs(zeta), 0.1))
        ts = np.linspace(max(t_hi / 8.0, 1e-3), t_hi, 8)
        ratios = [exp_functional_exact(q, f, t) * math.exp(zeta * t) for t in ts]
        ratios = np.array(ratios)
        diagnostics["sandwich"] = {
            "t_window": [float(ts[0]), float(ts[-1])],
            "c1": float(ratios.min()),
            "c2": float(ratios.max()),
        }

    return CertificateReport(
        kappa1=k1,
        kappa2=k2,
        f=f,
        zeta=zeta,
        q_eff=c.q_eff,
        q_level={"kappa1": k1q, "kappa2": k2q, "f": fq, "zeta": zetaq},
        checks=checks,
        diagnostics=diagnostics,
    )


# ---------------------------------------------------------------------------
# randomized falsifier


@dataclass
class FalsifierReport:
    n_samples: int
    results: dict

    @property
    def violated(self) -> bool:
        return any(r["violations"] > 0 for r in self.results.values())

    def worst(self, name: str) -> float:
        return self.results[name]["worst_margin"]

    def to_dict(self):
        return {"n_samples": self.n_samples, "results": self.results, "violated": self.violated}


def _norm(x) -> float:
    return float(np.sqrt(np.sum(np.asarray(x, dtype=float) ** 2)))


def _lyapunov_terms(z, drift, noise, p, vk):
    """<V_x, drift> + 0.5 tr(noise^T V_xx noise) for V(x) = vk |x|^p at x=z."""
    nz = _norm(z)
    if nz > 0.0:
        t1 = nz ** (p - 2.0)
        sz = np.asarray(noise, dtype=float).T @ np.asarray(z, dtype=float)
        t2 = (p - 2.0) * nz ** (p - 4.0) * float(sz @ sz) if p != 2.0 else 0.0
    else:
        t1 = 1.0 if p == 2.0 else 0.0
        t2 = 0.0
    fro2 = float(np.sum(np.asarray(noise, dtype=float) ** 2))
    grad = p * vk * t1 * float(np.dot(np.asarray(z, dtype=float), np.asarray(drift, dtype=float)))
    hess = 0.5 * p * vk * (t1 * fro2 + t2)
    return grad + hess


def _sample_segments(kernel, r, h, n_nodes, dim, n_samples, rng, amplitude):
    """Mixed corpus of segment pairs: constants (worst case for kernel-mass
    inequalities), smooth oscillations, and node-wise noise."""
    t_grid = h * (n_nodes - 1)
    theta = -h * np.arange(n_nodes)
    pairs = []
    kinds = (["const"] * (n_samples // 4) + ["smooth"] * (n_samples // 4))
    kinds += ["iid"] * (n_samples - len(kinds))
    for kind in kinds:
        if kind == "const":
            two = [
                Segment.constant(rng.uniform(-amplitude, amplitude, size=dim), r, h, n_nodes)
                for _ in range(2)
            ]
        elif kind == "smooth":
            two = []
            for _ in range(2):
                om = rng.uniform(0.3, 3.0)
                a = rng.uniform(-amplitude, amplitude, size=dim)
                b = rng.uniform(-amplitude, amplitude, size=dim)
                vals = np.cos(om * theta)[:, None] * a + np.sin(om * theta)[:, None] * b
                tail = math.exp(-r * t_grid) * vals[-1]
                two.append(Segment(r, h, vals, tail))
        else:
            two = []
            for _ in range(2):
                vals = rng.uniform(-amplitude, amplitude, size=(n_nodes, dim))
                tail = math.exp(-r * t_grid) * vals[-1]
                two.append(Segment(r, h, vals, tail))
        pairs.append(tuple(two))
    return pairs


def assumption_falsifier(
    model,
    c: DissipativityConstants,
    n_samples: int,
    rng: np.random.Generator,
    generator: Generator = None,
    weights=None,
    lambdas=None,
    amplitude: float = 3.0,
    n_nodes: int = 65,
) -> FalsifierReport:
    """Search for counterexamples to the declared constants on random segment
    pairs and regimes.

    Always tested: the kernel-mass contraction of the neutral part, the
    one-sided drift bound, and the diffusion growth bound. When `generator`,
    per-state `weights` v(k) and `lambdas` (l0, l1, l2) are supplied, the
    decay inequalities for the value function v(k)|x|^p are tested too (on
    single segments and on pairs; the pair form ignores l0).

    A negative worst margin with a witness disproves the constants; a clean
    report is evidence only.
    """
    dim = model.dim
    kernel = model.kernel
    try:
        t_grid = horizon_for_tail(kernel, c.p * c.r, 1e-8)
    except InfiniteMoment:
        t_grid = 1.0
    t_grid = max(t_grid, 1e-3)
    h = t_grid / (n_nodes - 1)
    sq = SegmentQuadrature(kernel, c.r, h, n_nodes)
    pairs = _sample_segments(kernel, c.r, h, n_nodes, dim, n_samples, rng, amplitude)
    regimes = rng.integers(0, c.n_states, size=n_samples)

    do_lyap = generator is not None and weights is not None and lambdas is not None
    if do_lyap:
        weights = np.asarray(weights, dtype=float)
        l0, l1, l2 = (float(x) for x in lambdas)

    names = ["neutral_contraction", "drift_one_sided", "diffusion_lipschitz"]
    if do_lyap:
        names += ["lyapunov_single", "lyapunov_pair"]
    results = {
        n: {"worst_margin": math.inf, "violations": 0, "witness": None} for n in names
    }

    def record(name, margin, idx, k, lhs, rhs):
        entry = results[name]
        if margin < entry["worst_margin"]:
            entry["worst_margin"] = margin
        scale = max(1.0, abs(lhs), abs(rhs))
        if margin < -1e-9 * scale:
            entry["violations"] += 1
            if entry["witness"] is None or margin < entry["witness"]["margin"]:
                entry["witness"] = {
                    "sample": idx,
                    "regime": int(k),
                    "lhs": lhs,
                    "rhs": rhs,
                    "margin": margin,
                }

    for idx, ((phi, psi), k) in enumerate(zip(pairs, regimes)):
        k = int(k)
        dvals = phi.values - psi.values
        dtail = phi.tail_limit - psi.tail_limit
        int_p = sq.abs_pow_integral(dvals, dtail, c.p)
        int_2 = sq.abs_pow_integral(dvals, dtail, 2.0)

        g_phi = np.asarray(model.G(phi, k), dtype=float)
        g_psi = np.asarray(model.G(psi, k), dtype=float)
        lhs = _norm(g_phi - g_psi) ** c.p
        rhs = c.kappa**c.p * int_p
        record("neutral_contraction", rhs - lhs, idx, k, lhs, rhs)

        z = phi.endpoint() - psi.endpoint() + g_psi - g_phi
        db = np.asarray(model.b(phi, k), dtype=float) - np.asarray(model.b(psi, k), dtype=float)
        lhs = float(np.dot(z, db))
        rhs = float(c.alpha[k]) * _norm(z) ** 2 + float(c.beta[k]) * int_2
        record("drift_one_sided", rhs - lhs, idx, k, lhs, rhs)

        dsig = np.asarray(model.sigma(phi, k), dtype=float) - np.asarray(model.sigma(psi, k), dtype=float)
        lhs = float(np.sum(dsig**2))
        rhs = c.gamma * int_2
        record("diffusion_lipschitz", rhs - lhs, idx, k, lhs, rhs)

        if do_lyap:
            vk = float(weights[k])
            qrow = generator.rates[k]
            # single-segment decay of v(k)|x|^p at x = phi(0) - G(phi, k)
            zg = phi.endpoint() - g_phi
            nzg = _norm(zg)
            lv = _lyapunov_terms(zg, model.b(phi, k), model.sigma(phi, k), c.p, vk)
            lv += float(qrow @ weights) * nzg**c.p
            rhs = l0 - l1 * nzg**c.p + l2 * sq.abs_pow_integral(phi.values, phi.tail_limit, c.p)
            record("lyapunov_single", rhs - lv, idx, k, lv, rhs)
            # pair form at x = phi(0)-psi(0)+G(psi,k)-G(phi,k)
            nz = _norm(z)
            lu = _lyapunov_terms(z, db, dsig, c.p, vk)
            lu += float(qrow @ weights) * nz**c.p
            rhs = -l1 * nz**c.p + l2 * int_p
            record("lyapunov_pair", rhs - lu, idx, k, lu, rhs)

    return FalsifierReport(n_samples=n_samples, results=results)
