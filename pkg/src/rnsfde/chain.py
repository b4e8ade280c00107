"""Continuous-time switching chain: generator validation, exact samplers
(hold-and-jump and the Poisson/mark-interval representation), the basic
coupling of two copies, and coupled sampling with the meeting time tau.
"""

import bisect
import math
from dataclasses import dataclass

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

__all__ = [
    "Generator",
    "SkorokhodTable",
    "SwitchingPath",
    "CoupledSwitchingPath",
    "build_skorokhod",
    "sample_chain_hold_jump",
    "sample_chain_poisson",
    "basic_coupling_generator",
    "apply_coupled_generator",
    "sample_coupled_chain",
]

_ROWSUM_TOL = 1e-12


class Generator:
    """Conservative irreducible rate matrix with a declared uniform exit-rate
    bound M (max_k q_k <= M)."""

    def __init__(self, rates, bound_M=None):
        q = np.array(rates, dtype=float)
        if q.ndim != 2 or q.shape[0] != q.shape[1]:
            raise ValueError("rates must be a square matrix")
        n = q.shape[0]
        if n < 2:
            raise ValueError("need at least 2 states")
        off = q.copy()
        np.fill_diagonal(off, 0.0)
        if (off < 0).any():
            raise ValueError("off-diagonal rates must be >= 0")
        row_sums = q.sum(axis=1)
        if np.abs(row_sums).max() > _ROWSUM_TOL:
            raise ValueError(f"rows must sum to 0 within {_ROWSUM_TOL}, worst {np.abs(row_sums).max():g}")
        n_comp, _ = connected_components(csr_matrix(off > 0), directed=True, connection="strong")
        if n_comp != 1:
            raise ValueError("rate graph must be strongly connected (irreducible chain)")
        exit_rates = -np.diag(q)
        if bound_M is None:
            bound_M = float(exit_rates.max())
        elif exit_rates.max() > bound_M + 1e-12:
            raise ValueError(f"declared bound M={bound_M} < max exit rate {exit_rates.max():g}")
        self.rates = q
        self.rates.setflags(write=False)
        self.n_states = n
        self.bound_M = float(bound_M)
        self.exit_rates = exit_rates
        self.exit_rates.setflags(write=False)

    def embedded_probs(self) -> np.ndarray:
        """Jump-chain transition matrix q_{kl}/q_k with zero diagonal."""
        p = np.array(self.rates)
        np.fill_diagonal(p, 0.0)
        return p / self.exit_rates[:, None]

    def stationary(self) -> np.ndarray:
        """Unique probability vector with pi Q = 0."""
        a = np.vstack([self.rates.T, np.ones(self.n_states)])
        b = np.zeros(self.n_states + 1)
        b[-1] = 1.0
        pi, *_ = np.linalg.lstsq(a, b, rcond=None)
        return pi

    def to_config(self):
        return {"rates": self.rates.tolist(), "bound_M": self.bound_M}


@dataclass(frozen=True)
class SkorokhodTable:
    """Per-state mark intervals: state k jumps to target l when the uniform
    mark falls in [lo, hi), hi - lo = q_{kl}. Interval layout follows the
    jump-SDE construction: state 0 enumerates targets 1, 2, ...; state k > 0
    enumerates 0, ..., k-1, k+1, ...; zero-rate targets are omitted."""

    intervals: tuple          # per state: tuple of (target, lo, hi)
    active_lengths: np.ndarray  # q_k per state
    bound_M: float

    def mark_to_target(self, k: int, u: float):
        """Target state for mark u, or None when u lands in no interval
        (marks in [q_k, M] leave the chain in place)."""
        for target, lo, hi in self.intervals[k]:
            if lo <= u < hi:
                return target
        return None


def build_skorokhod(q: Generator) -> SkorokhodTable:
    rows = []
    for k in range(q.n_states):
        order = list(range(1, q.n_states)) if k == 0 else [m for m in range(q.n_states) if m != k]
        acc = 0.0
        row = []
        for target in order:
            rate = q.rates[k, target]
            if rate == 0.0:
                continue
            row.append((target, acc, acc + rate))
            acc += rate
        if abs(acc - q.exit_rates[k]) > 1e-9:
            raise AssertionError("interval lengths must add up to the exit rate")
        rows.append(tuple(row))
    return SkorokhodTable(intervals=tuple(rows), active_lengths=q.exit_rates, bound_M=q.bound_M)


@dataclass(frozen=True)
class SwitchingPath:
    """Piecewise-constant right-continuous regime path on [0, T]."""

    start: int
    jump_times: np.ndarray
    states: np.ndarray  # state after each jump
    horizon: float

    def __post_init__(self):
        jt = np.asarray(self.jump_times, dtype=float)
        st = np.asarray(self.states, dtype=np.int64)
        if jt.shape != st.shape:
            raise ValueError("jump_times and states must align")
        if jt.size:
            if not (np.diff(jt) > 0).all() or jt[0] <= 0 or jt[-1] > self.horizon:
                raise ValueError("jump times must be strictly increasing in (0, T]")
            seq = np.concatenate(([self.start], st))
            if (np.diff(seq) == 0).any():
                raise ValueError("consecutive states must differ")
        jt = jt.copy()
        st = st.copy()
        jt.setflags(write=False)
        st.setflags(write=False)
        object.__setattr__(self, "jump_times", jt)
        object.__setattr__(self, "states", st)

    @property
    def n_jumps(self) -> int:
        return self.jump_times.size

    def state_at(self, t: float) -> int:
        """Lambda(t), right-continuous."""
        if t < 0 or t > self.horizon:
            raise ValueError("t outside [0, T]")
        i = bisect.bisect_right(self.jump_times.tolist(), t)
        return self.start if i == 0 else int(self.states[i - 1])

    def occupation(self, n_states=None) -> np.ndarray:
        """Time spent in each state over [0, T]."""
        n = n_states or int(max(self.start, self.states.max() if self.states.size else 0)) + 1
        occ = np.zeros(n)
        ts = np.concatenate(([0.0], self.jump_times, [self.horizon]))
        ss = np.concatenate(([self.start], self.states))
        for s, t0, t1 in zip(ss, ts[:-1], ts[1:]):
            occ[int(s)] += t1 - t0
        return occ


@dataclass(frozen=True)
class CoupledSwitchingPath:
    first: SwitchingPath
    second: SwitchingPath
    tau: float  # meeting time; inf if not within horizon
    horizon: float

    def __post_init__(self):
        if self.tau > self.horizon:
            return  # never merged inside the window, nothing to check
        ts = np.unique(np.concatenate(
            ([0.0], self.first.jump_times, self.second.jump_times, [self.horizon])
        ))
        for t in ts[ts >= self.tau]:
            if self.first.state_at(t) != self.second.state_at(t):
                raise ValueError("components must agree from tau onward")


def sample_chain_hold_jump(q: Generator, start: int, T: float, rng: np.random.Generator) -> SwitchingPath:
    """Exact simulation: hold Exp(q_k), then jump to l w.p. q_{kl}/q_k."""
    if not (0 <= start < q.n_states):
        raise ValueError("start state out of range")
    times, states = [], []
    t, k = 0.0, start
    ex = q.exit_rates
    rates = q.rates
    while True:
        t += rng.exponential(1.0 / ex[k])
        if t > T:
            break
        u = rng.random() * ex[k]
        acc = 0.0
        nxt = -1
        for m in range(q.n_states):
            if m == k:
                continue
            acc += rates[k, m]
            if u < acc:
                nxt = m
                break
        if nxt < 0:  # numerical edge: u == q_k
            nxt = m
        times.append(t)
        states.append(nxt)
        k = nxt
    return SwitchingPath(start, np.array(times), np.array(states, dtype=np.int64), T)


def sample_chain_poisson(table: SkorokhodTable, start: int, T: float, rng: np.random.Generator) -> SwitchingPath:
    """Jump-SDE form: wait Exp(q_k), then draw a uniform mark on the active
    interval set and jump to the target containing it. Only the active part
    [0, q_k) of the mark space is simulated; marks in [q_k, M] would cause no
    jump and are equivalent in law to a thinned wait."""
    if not (0 <= start < len(table.intervals)):
        raise ValueError("start state out of range")
    times, states = [], []
    t, k = 0.0, start
    while True:
        t += rng.exponential(1.0 / table.active_lengths[k])
        if t > T:
            break
        u = rng.random() * table.active_lengths[k]
        nxt = table.mark_to_target(k, u)
        if nxt is None:  # u == q_k edge
            nxt = table.intervals[k][-1][0]
        times.append(t)
        states.append(nxt)
        k = nxt
    return SwitchingPath(start, np.array(times), np.array(states, dtype=np.int64), T)


def basic_coupling_generator(q: Generator):
    """Transition table of the basic coupling: dict (k,l) -> tuple of
    ((k',l'), rate). Off the diagonal the two copies move together at rate
    q_{km} ^ q_{lm} and alone at the excess rates; on the diagonal they move
    as one chain. Marginals are preserved exactly."""
    n = q.n_states
    rates = q.rates
    table = {}
    for k in range(n):
        for l in range(n):
            moves = {}
            if k == l:
                for m in range(n):
                    if m != k and rates[k, m] > 0:
                        moves[(m, m)] = moves.get((m, m), 0.0) + rates[k, m]
            else:
                for m in range(n):
                    qkm = rates[k, m] if m != k else 0.0
                    qlm = rates[l, m] if m != l else 0.0
                    first_alone = max(qkm - qlm, 0.0)
                    second_alone = max(qlm - qkm, 0.0)
                    together = min(qkm, qlm)
                    if first_alone > 0:
                        moves[(m, l)] = moves.get((m, l), 0.0) + first_alone
                    if second_alone > 0:
                        moves[(k, m)] = moves.get((k, m), 0.0) + second_alone
                    if together > 0:
                        moves[(m, m)] = moves.get((m, m), 0.0) + together
            table[(k, l)] = tuple(sorted(moves.items()))
    return table


def apply_coupled_generator(table, g) -> np.ndarray:
    """Matrix of (coupled generator applied to g)(k,l) for g: S x S -> R."""
    pairs = list(table.keys())
    n = max(k for k, _ in pairs) + 1
    out = np.zeros((n, n))
    for (k, l), moves in table.items():
        val = 0.0
        for (k2, l2), rate in moves:
            val += rate * (g(k2, l2) - g(k, l))
        out[k, l] = val
    return out


def sample_coupled_chain(q: Generator, start, T: float, rng: np.random.Generator) -> CoupledSwitchingPath:
    """Exact simulation of the basic-coupling pair chain; tau is the first
    diagonal hit (0 when started there); afterwards both components are one."""
    k, l = start
    if not (0 <= k < q.n_states and 0 <= l < q.n_states):
        raise ValueError("start states out of range")
    table = basic_coupling_generator(q)
    t = 0.0
    tau = 0.0 if k == l else math.inf
    t1, s1, t2, s2 = [], [], [], []
    while True:
        moves = table[(k, l)]
        total = sum(rate for _, rate in moves)
        t += rng.exponential(1.0 / total)
        if t > T:
            break
        u = rng.random() * total
        acc = 0.0
        for (k2, l2), rate in moves:
            acc += rate
            if u < acc:
                break
        if k2 != k:
            t1.append(t)
            s1.append(k2)
        if l2 != l:
            t2.append(t)
            s2.append(l2)
        k, l = k2, l2
        if k == l and not math.isfinite(tau):
            tau = t
    first = SwitchingPath(start[0], np.array(t1), np.array(s1, dtype=np.int64), T)
    second = SwitchingPath(start[1], np.array(t2), np.array(s2, dtype=np.int64), T)
    return CoupledSwitchingPath(first=first, second=second, tau=tau, horizon=T)
