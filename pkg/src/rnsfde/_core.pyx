# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled integrator core.

Mirrors rnsfde._core_py operation for operation; only float summation order
differs (plain C accumulation instead of numpy reductions), so the backends
agree to roundoff. The hot loops run without the GIL, which is what makes
thread-pool ensembles scale.
"""

import numpy as np

from libc.math cimport exp, fabs, sqrt

CODE_OK = 0
CODE_FIXED_POINT = 1
CODE_NONFINITE = 2

cdef int _OK = 0
cdef int _FIXED_POINT = 1
cdef int _NONFINITE = 2


cdef inline bint _bad(double v) noexcept nogil:
    # true for NaN and +-inf
    return not (v - v == 0.0)


cdef inline double _try_root(double peak, double r, double t0, double dt,
                             double* a, double* b, int d, double s) noexcept nogil:
    cdef double nn = 0.0, phi, cand
    cdef int i
    if s <= 0.0 or s >= 1.0:
        return peak
    for i in range(d):
        phi = a[i] + s * (b[i] - a[i])
        nn += phi * phi
    cand = exp(r * (t0 + s * dt)) * sqrt(nn)
    if cand > peak:
        return cand
    return peak


cdef double _cell_peak(double r, double t0, double dt, double* a, double* b, int d) noexcept nogil:
    cdef double aa = 0.0, av = 0.0, vv = 0.0, nb = 0.0, v
    cdef double peak, cand, qa, qb, qc, disc, sq
    cdef int i
    for i in range(d):
        v = b[i] - a[i]
        aa += a[i] * a[i]
        av += a[i] * v
        vv += v * v
        nb += b[i] * b[i]
    peak = exp(r * t0) * sqrt(aa)
    cand = exp(r * (t0 + dt)) * sqrt(nb)
    if cand > peak:
        peak = cand
    qa = r * dt * vv
    qb = 2.0 * r * dt * av + vv
    qc = r * dt * aa + av
    if qa > 1e-300:
        disc = qb * qb - 4.0 * qa * qc
        if disc >= 0.0:
            sq = sqrt(disc)
            peak = _try_root(peak, r, t0, dt, a, b, d, (-qb - sq) / (2.0 * qa))
            peak = _try_root(peak, r, t0, dt, a, b, d, (-qb + sq) / (2.0 * qa))
    elif fabs(qb) > 1e-300:
        peak = _try_root(peak, r, t0, dt, a, b, d, -qc / qb)
    return peak


cdef inline void _rest_integral(const double[:, ::1] ring, int head, const double[::1] qw,
                                double tail_r, const double[::1] tail, double[::1] jr,
                                int n_hist, int d) noexcept nogil:
    cdef int j, a, row
    cdef double w
    for a in range(d):
        jr[a] = tail_r * tail[a]
    for j in range(1, n_hist):
        row = head + j
        if row >= n_hist:
            row -= n_hist
        w = qw[j]
        for a in range(d):
            jr[a] += w * ring[row, a]


cdef inline int _recover(const double[::1] add, double coef, double[::1] x,
                         double[::1] xnew, double fp_tol, int fp_max_iter, int d) noexcept nogil:
    """x holds the warm start; on success holds the fixed point. Returns the
    iteration count, or -1 on divergence."""
    cdef int it, a
    cdef double diffmax, xnmax, scale, v, dv
    for it in range(fp_max_iter):
        diffmax = 0.0
        xnmax = 0.0
        for a in range(d):
            v = add[a] + coef * x[a]
            xnew[a] = v
            dv = fabs(v - x[a])
            if dv > diffmax:
                diffmax = dv
            dv = fabs(v)
            if dv > xnmax:
                xnmax = dv
        for a in range(d):
            x[a] = xnew[a]
        scale = 1.0 if xnmax < 1.0 else xnmax
        if diffmax <= fp_tol * scale:
            return it + 1
    return -1


cdef inline void _advance_y(const double[:, :, ::1] A, const double[:, :, ::1] B,
                            const double[:, ::1] cvec, const double[:, :, ::1] s,
                            const double[:, :, ::1] gmat, int k,
                            const double[::1] x, const double[::1] jvec, double[::1] y,
                            const double[:, ::1] Z, int zrow, int zoff,
                            double dt, double sqdt, int d) noexcept nogil:
    cdef int a, b
    cdef double accb, accs
    for a in range(d):
        accb = cvec[k, a]
        accs = 0.0
        for b in range(d):
            accb += A[k, a, b] * x[b] + B[k, a, b] * jvec[b]
            accs += (s[k, a, b] + gmat[k, a, b] * jvec[b]) * Z[zrow, zoff + b]
        y[a] = y[a] + accb * dt + sqdt * accs


def integrate_single(
    const double[::1] kg, const double[:, :, ::1] A, const double[:, :, ::1] B,
    const double[:, ::1] cvec, const double[:, :, ::1] s, const double[:, :, ::1] gmat,
    const double[::1] qw, double tail_r, double tail_shift, double r, double h,
    const double[:, ::1] ring0, const double[::1] tail0, double init_norm,
    const double[::1] times, const long long[::1] reg_pt, const unsigned char[::1] is_node,
    const double[:, ::1] Z, const long long[::1] sample_idx,
    double fp_tol, int fp_max_iter,
    double[:, ::1] out_X, double[:, ::1] out_Y, double[::1] out_norm,
    out_seg, out_tail,
):
    cdef int n_hist = ring0.shape[0]
    cdef int d = ring0.shape[1]
    cdef int n_pts = times.shape[0]
    cdef int n_out = sample_idx.shape[0]
    cdef bint has_seg = out_seg is not None
    cdef double[:, :, ::1] seg_mv
    cdef double[:, ::1] tail_mv
    if has_seg:
        seg_mv = out_seg
        tail_mv = out_tail
    else:
        seg_mv = np.empty((1, 1, 1))
        tail_mv = np.empty((1, 1))

    work = np.empty((7, d))
    cdef double[:, ::1] w = work
    cdef double[::1] x = w[0]
    cdef double[::1] y = w[1]
    cdef double[::1] jr = w[2]
    cdef double[::1] jvec = w[3]
    cdef double[::1] add = w[4]
    cdef double[::1] xnew = w[5]
    cdef double[::1] xold = w[6]
    ring_arr = np.array(ring0, dtype=np.float64, copy=True)
    tail_arr = np.array(tail0, dtype=np.float64, copy=True)
    cdef double[:, ::1] ring = ring_arr
    cdef double[::1] tail = tail_arr

    cdef int head = 0, sp = 0, i, a, j, row, k, k1, iters, max_iters = 0, code = CODE_OK
    cdef double qw0 = qw[0], m_run = 0.0, t0, t1, dt, sqdt, kg1, peak, err_t = times[n_pts - 1]

    with nogil:
        for a in range(d):
            x[a] = ring[0, a]
            m_run += x[a] * x[a]
        m_run = sqrt(m_run)
        _rest_integral(ring, head, qw, tail_r, tail, jr, n_hist, d)
        k = <int> reg_pt[0]
        for a in range(d):
            y[a] = x[a] - kg[k] * (qw0 * x[a] + jr[a])
        if n_out > 0 and sample_idx[0] == 0:
            for a in range(d):
                out_X[0, a] = x[a]
                out_Y[0, a] = y[a]
            out_norm[0] = m_run if m_run > init_norm else init_norm
            if has_seg:
                for j in range(n_hist):
                    row = (head + j) % n_hist
                    for a in range(d):
                        seg_mv[0, j, a] = ring[row, a]
                for a in range(d):
                    tail_mv[0, a] = tail[a]
            sp = 1
        for i in range(n_pts - 1):
            k = <int> reg_pt[i]
            t0 = times[i]
            t1 = times[i + 1]
            dt = t1 - t0
            sqdt = sqrt(dt)
            for a in range(d):
                jvec[a] = qw0 * x[a] + jr[a]
            _advance_y(A, B, cvec, s, gmat, k, x, jvec, y, Z, i, 0, dt, sqdt, d)
            for a in range(d):
                if _bad(y[a]):
                    code = _NONFINITE
                    err_t = t1
                    break
            if code != _OK:
                break
            if is_node[i + 1]:
                row = head - 1
                if row < 0:
                    row += n_hist
                for a in range(d):
                    tail[a] = tail_shift * ring[row, a]
                head = row
                _rest_integral(ring, head, qw, tail_r, tail, jr, n_hist, d)
            k1 = <int> reg_pt[i + 1]
            kg1 = kg[k1]
            for a in range(d):
                add[a] = y[a] + kg1 * jr[a]
                xold[a] = x[a]
            iters = _recover(add, kg1 * qw0, x, xnew, fp_tol, fp_max_iter, d)
            if iters < 0:
                code = _FIXED_POINT
                err_t = t1
                break
            if iters > max_iters:
                max_iters = iters
            for a in range(d):
                if _bad(x[a]):
                    code = _NONFINITE
                    err_t = t1
                    break
            if code != _OK:
                break
            peak = _cell_peak(r, t0, dt, &xold[0], &x[0], d)
            if peak > m_run:
                m_run = peak
            if is_node[i + 1]:
                for a in range(d):
                    ring[head, a] = x[a]
            if sp < n_out and sample_idx[sp] == i + 1:
                for a in range(d):
                    out_X[sp, a] = x[a]
                    out_Y[sp, a] = y[a]
                peak = m_run if m_run > init_norm else init_norm
                out_norm[sp] = exp(-r * t1) * peak
                if has_seg:
                    for j in range(n_hist):
                        row = (head + j) % n_hist
                        for a in range(d):
                            seg_mv[sp, j, a] = ring[row, a]
                    for a in range(d):
                        tail_mv[sp, a] = tail[a]
                sp += 1
    return code, err_t, max_iters


def integrate_coupled(
    const double[::1] kg, const double[:, :, ::1] A, const double[:, :, ::1] B,
    const double[:, ::1] cvec, const double[:, :, ::1] s, const double[:, :, ::1] gmat,
    const double[::1] qw, double tail_r, double tail_shift, double r, double h,
    const double[:, ::1] ring0a, const double[::1] tail0a, double norm0a,
    const double[:, ::1] ring0b, const double[::1] tail0b, double norm0b, double diff_norm0,
    const double[::1] times, const long long[::1] rega_pt, const long long[::1] regb_pt,
    const unsigned char[::1] is_node, long long tau_idx,
    const double[:, ::1] Z, const long long[::1] sample_idx,
    double fp_tol, int fp_max_iter,
    double[:, ::1] out_Xa, double[:, ::1] out_Ya, double[::1] out_norm_a,
    double[:, ::1] out_Xb, double[:, ::1] out_Yb, double[::1] out_norm_b,
    double[::1] out_dist,
    out_sega, out_taila, out_segb, out_tailb,
):
    cdef int n_hist = ring0a.shape[0]
    cdef int d = ring0a.shape[1]
    cdef int n_pts = times.shape[0]
    cdef int n_out = sample_idx.shape[0]
    cdef bint has_seg = out_sega is not None
    cdef double[:, :, ::1] sega_mv, segb_mv
    cdef double[:, ::1] taila_mv, tailb_mv
    if has_seg:
        sega_mv = out_sega
        taila_mv = out_taila
        segb_mv = out_segb
        tailb_mv = out_tailb
    else:
        sega_mv = np.empty((1, 1, 1))
        taila_mv = np.empty((1, 1))
        segb_mv = np.empty((1, 1, 1))
        tailb_mv = np.empty((1, 1))

    work = np.empty((16, d))
    cdef double[:, ::1] w = work
    cdef double[::1] xa = w[0]
    cdef double[::1] ya = w[1]
    cdef double[::1] jra = w[2]
    cdef double[::1] jveca = w[3]
    cdef double[::1] adda = w[4]
    cdef double[::1] xolda = w[5]
    cdef double[::1] xb = w[6]
    cdef double[::1] yb = w[7]
    cdef double[::1] jrb = w[8]
    cdef double[::1] jvecb = w[9]
    cdef double[::1] addb = w[10]
    cdef double[::1] xoldb = w[11]
    cdef double[::1] xnew = w[12]
    cdef double[::1] dold = w[13]
    cdef double[::1] dnew = w[14]
    ringa_arr = np.array(ring0a, dtype=np.float64, copy=True)
    taila_arr = np.array(tail0a, dtype=np.float64, copy=True)
    ringb_arr = np.array(ring0b, dtype=np.float64, copy=True)
    tailb_arr = np.array(tail0b, dtype=np.float64, copy=True)
    cdef double[:, ::1] ringa = ringa_arr
    cdef double[::1] taila = taila_arr
    cdef double[:, ::1] ringb = ringb_arr
    cdef double[::1] tailb = tailb_arr

    cdef int heada = 0, headb = 0, sp = 0, i, a, j, row, ka, kb, iters, max_iters = 0
    cdef int code = _OK, zoff
    cdef double qw0 = qw[0], m_a = 0.0, m_b = 0.0, m_d = 0.0
    cdef double t0, t1, dt, sqdt, kg1, peak, err_t = times[n_pts - 1]

    with nogil:
        for a in range(d):
            xa[a] = ringa[0, a]
            xb[a] = ringb[0, a]
            m_a += xa[a] * xa[a]
            m_b += xb[a] * xb[a]
            m_d += (xa[a] - xb[a]) * (xa[a] - xb[a])
        m_a = sqrt(m_a)
        m_b = sqrt(m_b)
        m_d = sqrt(m_d)
        _rest_integral(ringa, heada, qw, tail_r, taila, jra, n_hist, d)
        _rest_integral(ringb, headb, qw, tail_r, tailb, jrb, n_hist, d)
        ka = <int> rega_pt[0]
        kb = <int> regb_pt[0]
        for a in range(d):
            ya[a] = xa[a] - kg[ka] * (qw0 * xa[a] + jra[a])
            yb[a] = xb[a] - kg[kb] * (qw0 * xb[a] + jrb[a])
        if n_out > 0 and sample_idx[0] == 0:
            for a in range(d):
                out_Xa[0, a] = xa[a]
                out_Ya[0, a] = ya[a]
                out_Xb[0, a] = xb[a]
                out_Yb[0, a] = yb[a]
            out_norm_a[0] = m_a if m_a > norm0a else norm0a
            out_norm_b[0] = m_b if m_b > norm0b else norm0b
            out_dist[0] = m_d if m_d > diff_norm0 else diff_norm0
            if has_seg:
                for j in range(n_hist):
                    row = (heada + j) % n_hist
                    for a in range(d):
                        sega_mv[0, j, a] = ringa[row, a]
                        segb_mv[0, j, a] = ringb[row, a]
                for a in range(d):
                    taila_mv[0, a] = taila[a]
                    tailb_mv[0, a] = tailb[a]
            sp = 1
        for i in range(n_pts - 1):
            ka = <int> rega_pt[i]
            kb = <int> regb_pt[i]
            t0 = times[i]
            t1 = times[i + 1]
            dt = t1 - t0
            sqdt = sqrt(dt)
            zoff = 0 if i >= tau_idx else d
            for a in range(d):
                jveca[a] = qw0 * xa[a] + jra[a]
                jvecb[a] = qw0 * xb[a] + jrb[a]
            _advance_y(A, B, cvec, s, gmat, ka, xa, jveca, ya, Z, i, 0, dt, sqdt, d)
            _advance_y(A, B, cvec, s, gmat, kb, xb, jvecb, yb, Z, i, zoff, dt, sqdt, d)
            for a in range(d):
                if _bad(ya[a]) or _bad(yb[a]):
                    code = _NONFINITE
                    err_t = t1
                    break
            if code != _OK:
                break
            if is_node[i + 1]:
                row = heada - 1
                if row < 0:
                    row += n_hist
                for a in range(d):
                    taila[a] = tail_shift * ringa[row, a]
                    tailb[a] = tail_shift * ringb[row, a]
                heada = row
                headb = row
                _rest_integral(ringa, heada, qw, tail_r, taila, jra, n_hist, d)
                _rest_integral(ringb, headb, qw, tail_r, tailb, jrb, n_hist, d)
            ka = <int> rega_pt[i + 1]
            kb = <int> regb_pt[i + 1]
            kg1 = kg[ka]
            for a in range(d):
                adda[a] = ya[a] + kg1 * jra[a]
                xolda[a] = xa[a]
            iters = _recover(adda, kg1 * qw0, xa, xnew, fp_tol, fp_max_iter, d)
            if iters < 0:
                code = _FIXED_POINT
                err_t = t1
                break
            if iters > max_iters:
                max_iters = iters
            kg1 = kg[kb]
            for a in range(d):
                addb[a] = yb[a] + kg1 * jrb[a]
                xoldb[a] = xb[a]
            iters = _recover(addb, kg1 * qw0, xb, xnew, fp_tol, fp_max_iter, d)
            if iters < 0:
                code = _FIXED_POINT
                err_t = t1
                break
            if iters > max_iters:
                max_iters = iters
            for a in range(d):
                if _bad(xa[a]) or _bad(xb[a]):
                    code = _NONFINITE
                    err_t = t1
                    break
            if code != _OK:
                break
            peak = _cell_peak(r, t0, dt, &xolda[0], &xa[0], d)
            if peak > m_a:
                m_a = peak
            peak = _cell_peak(r, t0, dt, &xoldb[0], &xb[0], d)
            if peak > m_b:
                m_b = peak
            for a in range(d):
                dold[a] = xolda[a] - xoldb[a]
                dnew[a] = xa[a] - xb[a]
            peak = _cell_peak(r, t0, dt, &dold[0], &dnew[0], d)
            if peak > m_d:
                m_d = peak
            if is_node[i + 1]:
                for a in range(d):
                    ringa[heada, a] = xa[a]
                    ringb[headb, a] = xb[a]
            if sp < n_out and sample_idx[sp] == i + 1:
                for a in range(d):
                    out_Xa[sp, a] = xa[a]
                    out_Ya[sp, a] = ya[a]
                    out_Xb[sp, a] = xb[a]
                    out_Yb[sp, a] = yb[a]
                peak = m_a if m_a > norm0a else norm0a
                out_norm_a[sp] = exp(-r * t1) * peak
                peak = m_b if m_b > norm0b else norm0b
                out_norm_b[sp] = exp(-r * t1) * peak
                peak = m_d if m_d > diff_norm0 else diff_norm0
                out_dist[sp] = exp(-r * t1) * peak
                if has_seg:
                    for j in range(n_hist):
                        row = (heada + j) % n_hist
                        for a in range(d):
                            sega_mv[sp, j, a] = ringa[row, a]
                            segb_mv[sp, j, a] = ringb[row, a]
                    for a in range(d):
                        taila_mv[sp, a] = taila[a]
                        tailb_mv[sp, a] = tailb[a]
                sp += 1
    return code, err_t, max_iters
