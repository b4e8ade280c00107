"""Pure-Python reference implementation of the integrator hot loops.

Mirrors the compiled extension step for step: the backend module picks
whichever is available. All inputs are plain arrays prepared by the driver
(merged time grid, per-point regimes, pregenerated standard normals), so both
backends consume identical bits and differ only in float summation order.

State layout per path: a ring buffer of history node values at spacing h
anchored at the latest uniform grid node, the tail coefficient L of the
analytic continuation e^{-r theta} L, and the running maximum of
e^{r u}|X(u)| used to report exact fading norms of the piecewise-linear path.
"""

import math

import numpy as np

CODE_OK = 0
CODE_FIXED_POINT = 1
CODE_NONFINITE = 2


def _cell_peak(r: float, t0: float, dt: float, a: np.ndarray, b: np.ndarray) -> float:
    """max of e^{r u}|x(u)| over u in [t0, t0+dt] for x linear from a to b."""
    na = math.sqrt(float(a @ a))
    nb = math.sqrt(float(b @ b))
    peak = max(math.exp(r * t0) * na, math.exp(r * (t0 + dt)) * nb)
    v = b - a
    aa = float(a @ a)
    av = float(a @ v)
    vv = float(v @ v)
    qa = r * dt * vv
    qb = 2.0 * r * dt * av + vv
    qc = r * dt * aa + av
    roots = []
    if qa > 1e-300:
        disc = qb * qb - 4.0 * qa * qc
        if disc >= 0.0:
            sq = math.sqrt(disc)
            roots.append((-qb - sq) / (2.0 * qa))
            roots.append((-qb + sq) / (2.0 * qa))
    elif abs(qb) > 1e-300:
        roots.append(-qc / qb)
    for s in roots:
        if 0.0 < s < 1.0:
            phi = a + s * v
            cand = math.exp(r * (t0 + s * dt)) * math.sqrt(float(phi @ phi))
            if cand > peak:
                peak = cand
    return peak


class _PathState:
    """One component's rolling state: ring buffer, tail, Y, running peak."""

    __slots__ = ("ring", "head", "tail", "x", "y", "m_run", "jr")

    def __init__(self, ring0, tail0):
        self.ring = np.array(ring0, dtype=float)
        self.head = 0
        self.tail = np.array(tail0, dtype=float)
        self.x = self.ring[0].copy()
        self.y = None
        self.m_run = math.sqrt(float(self.x @ self.x))
        self.jr = None

    def rest_integral(self, qw, tail_r):
        n = self.ring.shape[0]
        if n > 1:
            idx = (self.head + np.arange(1, n)) % n
            return qw[1:] @ self.ring[idx] + tail_r * self.tail
        return tail_r * self.tail

    def shift(self, tail_shift, qw, tail_r):
        """Advance the anchor one grid node; slot for the new endpoint is
        left stale until the fixed point fills it."""
        n = self.ring.shape[0]
        drop = (self.head - 1) % n
        self.tail = tail_shift * self.ring[drop].copy()
        self.head = drop
        self.jr = self.rest_integral(qw, tail_r)

    def snapshot(self):
        n = self.ring.shape[0]
        idx = (self.head + np.arange(n)) % n
        return self.ring[idx].copy(), self.tail.copy()


def _recover(state, kg1, qw0, fp_tol, fp_max_iter):
    """Fixed point x = Y + kg1 (qw0 x + J_rest); returns (x, iters) or None."""
    add = state.y + kg1 * state.jr
    coef = kg1 * qw0
    x = state.x
    for it in range(fp_max_iter):
        x_new = add + coef * x
        if np.abs(x_new - x).max() <= fp_tol * max(1.0, np.abs(x_new).max()):
            return x_new, it + 1
        x = x_new
    return None, fp_max_iter


def _step_coeffs(model, k, x, j):
    kg, A, B, cvec, s, gmat = model
    bv = A[k] @ x + B[k] @ j + cvec[k]
    sig = s[k] + gmat[k] * j[None, :]
    return bv, sig


def integrate_single(
    kg, A, B, cvec, s, gmat,
    qw, tail_r, tail_shift, r, h,
    ring0, tail0, init_norm,
    times, reg_pt, is_node, Z, sample_idx,
    fp_tol, fp_max_iter,
    out_X, out_Y, out_norm, out_seg, out_tail,
):
    model = (kg, A, B, cvec, s, gmat)
    qw0 = float(qw[0])
    st = _PathState(ring0, tail0)
    st.jr = st.rest_integral(qw, tail_r)
    k0 = int(reg_pt[0])
    st.y = st.x - kg[k0] * (qw0 * st.x + st.jr)
    max_iters = 0
    sp = 0
    if sample_idx.size and sample_idx[0] == 0:
        out_X[0] = st.x
        out_Y[0] = st.y
        out_norm[0] = max(st.m_run, init_norm)
        if out_seg is not None:
            out_seg[0], out_tail[0] = st.snapshot()
        sp = 1
    n_pts = times.shape[0]
    for i in range(n_pts - 1):
        k = int(reg_pt[i])
        t0 = float(times[i])
        t1 = float(times[i + 1])
        dt = t1 - t0
        j = qw0 * st.x + st.jr
        bv, sig = _step_coeffs(model, k, st.x, j)
        st.y = st.y + bv * dt + math.sqrt(dt) * (sig @ Z[i])
        if not np.isfinite(st.y).all():
            return CODE_NONFINITE, t1, max_iters
        if is_node[i + 1]:
            st.shift(tail_shift, qw, tail_r)
        k1 = int(reg_pt[i + 1])
        x_new, iters = _recover(st, float(kg[k1]), qw0, fp_tol, fp_max_iter)
        if x_new is None:
            return CODE_FIXED_POINT, t1, max_iters
        if iters > max_iters:
            max_iters = iters
        if not np.isfinite(x_new).all():
            return CODE_NONFINITE, t1, max_iters
        peak = _cell_peak(r, t0, dt, st.x, x_new)
        if peak > st.m_run:
            st.m_run = peak
        st.x = x_new
        if is_node[i + 1]:
            st.ring[st.head] = st.x
        if sp < sample_idx.size and sample_idx[sp] == i + 1:
            out_X[sp] = st.x
            out_Y[sp] = st.y
            out_norm[sp] = math.exp(-r * t1) * max(st.m_run, init_norm)
            if out_seg is not None:
                out_seg[sp], out_tail[sp] = st.snapshot()
            sp += 1
    return CODE_OK, float(times[-1]), max_iters


def integrate_coupled(
    kg, A, B, cvec, s, gmat,
    qw, tail_r, tail_shift, r, h,
    ring0a, tail0a, norm0a, ring0b, tail0b, norm0b, diff_norm0,
    times, rega_pt, regb_pt, is_node, tau_idx, Z, sample_idx,
    fp_tol, fp_max_iter,
    out_Xa, out_Ya, out_norm_a, out_Xb, out_Yb, out_norm_b, out_dist,
    out_sega, out_taila, out_segb, out_tailb,
):
    model = (kg, A, B, cvec, s, gmat)
    d = ring0a.shape[1]
    qw0 = float(qw[0])
    sa = _PathState(ring0a, tail0a)
    sb = _PathState(ring0b, tail0b)
    sa.jr = sa.rest_integral(qw, tail_r)
    sb.jr = sb.rest_integral(qw, tail_r)
    sa.y = sa.x - kg[int(rega_pt[0])] * (qw0 * sa.x + sa.jr)
    sb.y = sb.x - kg[int(regb_pt[0])] * (qw0 * sb.x + sb.jr)
    diff = sa.x - sb.x
    m_diff = math.sqrt(float(diff @ diff))
    max_iters = 0
    sp = 0
    if sample_idx.size and sample_idx[0] == 0:
        out_Xa[0], out_Ya[0] = sa.x, sa.y
        out_Xb[0], out_Yb[0] = sb.x, sb.y
        out_norm_a[0] = max(sa.m_run, norm0a)
        out_norm_b[0] = max(sb.m_run, norm0b)
        out_dist[0] = max(m_diff, diff_norm0)
        if out_sega is not None:
            out_sega[0], out_taila[0] = sa.snapshot()
            out_segb[0], out_tailb[0] = sb.snapshot()
        sp = 1
    n_pts = times.shape[0]
    for i in range(n_pts - 1):
        t0 = float(times[i])
        t1 = float(times[i + 1])
        dt = t1 - t0
        sq = math.sqrt(dt)
        za = Z[i, :d]
        zb = za if i >= tau_idx else Z[i, d:]
        ja = qw0 * sa.x + sa.jr
        jb = qw0 * sb.x + sb.jr
        bva, siga = _step_coeffs(model, int(rega_pt[i]), sa.x, ja)
        bvb, sigb = _step_coeffs(model, int(regb_pt[i]), sb.x, jb)
        sa.y = sa.y + bva * dt + sq * (siga @ za)
        sb.y = sb.y + bvb * dt + sq * (sigb @ zb)
        if not (np.isfinite(sa.y).all() and np.isfinite(sb.y).all()):
            return CODE_NONFINITE, t1, max_iters
        if is_node[i + 1]:
            sa.shift(tail_shift, qw, tail_r)
            sb.shift(tail_shift, qw, tail_r)
        xa, ia = _recover(sa, float(kg[int(rega_pt[i + 1])]), qw0, fp_tol, fp_max_iter)
        if xa is None:
            return CODE_FIXED_POINT, t1, max_iters
        xb, ib = _recover(sb, float(kg[int(regb_pt[i + 1])]), qw0, fp_tol, fp_max_iter)
        if xb is None:
            return CODE_FIXED_POINT, t1, max_iters
        max_iters = max(max_iters, ia, ib)
        if not (np.isfinite(xa).all() and np.isfinite(xb).all()):
            return CODE_NONFINITE, t1, max_iters
        pa = _cell_peak(r, t0, dt, sa.x, xa)
        pb = _cell_peak(r, t0, dt, sb.x, xb)
        pd = _cell_peak(r, t0, dt, sa.x - sb.x, xa - xb)
        sa.m_run = max(sa.m_run, pa)
        sb.m_run = max(sb.m_run, pb)
        m_diff = max(m_diff, pd)
        sa.x, sb.x = xa, xb
        if is_node[i + 1]:
            sa.ring[sa.head] = sa.x
            sb.ring[sb.head] = sb.x
        if sp < sample_idx.size and sample_idx[sp] == i + 1:
            out_Xa[sp], out_Ya[sp] = sa.x, sa.y
            out_Xb[sp], out_Yb[sp] = sb.x, sb.y
            out_norm_a[sp] = math.exp(-r * t1) * max(sa.m_run, norm0a)
            out_norm_b[sp] = math.exp(-r * t1) * max(sb.m_run, norm0b)
            out_dist[sp] = math.exp(-r * t1) * max(m_diff, diff_norm0)
            if out_sega is not None:
                out_sega[sp], out_taila[sp] = sa.snapshot()
                out_segb[sp], out_tailb[sp] = sb.snapshot()
            sp += 1
    return CODE_OK, float(times[-1]), max_iters
