# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled dual simplex pivots; same contract as ``_simplex_py.dual_pivots``."""

from libc.math cimport fabs

cdef int OPTIMAL = 0
cdef int INFEASIBLE = 1
cdef int BUDGET = 2
cdef int NUMERICAL = 3
cdef signed char BASIC = 0
cdef signed char AT_LOWER = 1
cdef signed char AT_UPPER = 2
cdef long DEGENERATE_LIMIT = 50


def dual_pivots(object At, const long[::1] Ap, const int[::1] Ai, const double[::1] Ax,
                const double[::1] lo, const double[::1] hi, long[::1] head,
                signed char[::1] stat, double[::1] x, double[::1] d, double[:, ::1] Binv,
                long n, long max_pivots, double tol_p, double tol_d, double tol_piv,
                long[::1] state):
    cdef Py_ssize_t m = head.shape[0]
    cdef Py_ssize_t N = x.shape[0]
    cdef Py_ssize_t i, j, k, r, q, p, piv
    cdef double inf_r, v, below, above, best_inf, dj, aj, ratio, bound, best_a, rmin
    cdef double arq, target, delta, t, ci, prj
    cdef bint to_lower, ok
    cdef double[::1] alpha
    cdef double[::1] col
    import numpy as np
    alpha = np.empty(N)
    col = np.empty(m)

    for piv in range(max_pivots):
        # leaving row
        r = -1
        best_inf = tol_p
        to_lower = False
        for i in range(m):
            p = head[i]
            below = lo[p] - x[p]
            above = x[p] - hi[p]
            inf_r = below if below > above else above
            if inf_r > tol_p:
                if state[0]:
                    if r < 0 or p < head[r]:
                        r = i
                elif inf_r > best_inf:
                    best_inf = inf_r
                    r = i
        if r < 0:
            return OPTIMAL, piv
        state[2] = r
        p = head[r]
        to_lower = (lo[p] - x[p]) > (x[p] - hi[p])

        # pivot row
        for j in range(n):
            v = 0.0
            for k in range(Ap[j], Ap[j + 1]):
                v += Binv[r, Ai[k]] * Ax[k]
            alpha[j] = v
        for i in range(m):
            alpha[n + i] = Binv[r, i]

        # ratio test, pass 1
        q = -1
        bound = 0.0
        rmin = 0.0
        for j in range(N):
            if stat[j] == BASIC or not (lo[j] < hi[j]):
                continue
            v = alpha[j]
            if to_lower:
                ok = (stat[j] == AT_LOWER and v < -tol_piv) or (stat[j] == AT_UPPER and v > tol_piv)
            else:
                ok = (stat[j] == AT_LOWER and v > tol_piv) or (stat[j] == AT_UPPER and v < -tol_piv)
            if not ok:
                continue
            dj = d[j] if stat[j] == AT_LOWER else -d[j]
            if dj < 0.0:
                dj = 0.0
            aj = fabs(v)
            if state[0]:
                ratio = dj / aj
                if q < 0 or ratio < rmin:
                    rmin = ratio
                    q = j
            else:
                ratio = (dj + tol_d) / aj
                if q < 0 or ratio < bound:
                    bound = ratio
                    q = j
        if q < 0:
            return INFEASIBLE, piv
        if not state[0]:
            # pass 2: largest pivot among ratios within the Harris bound
            q = -1
            best_a = 0.0
            for j in range(N):
                if stat[j] == BASIC or not (lo[j] < hi[j]):
                    continue
                v = alpha[j]
                if to_lower:
                    ok = (stat[j] == AT_LOWER and v < -tol_piv) or (stat[j] == AT_UPPER and v > tol_piv)
                else:
                    ok = (stat[j] == AT_LOWER and v > tol_piv) or (stat[j] == AT_UPPER and v < -tol_piv)
                if not ok:
                    continue
                dj = d[j] if stat[j] == AT_LOWER else -d[j]
                if dj < 0.0:
                    dj = 0.0
                aj = fabs(v)
                if dj / aj <= bound and aj > best_a:
                    best_a = aj
                    q = j

        # entering column
        if q < n:
            for i in range(m):
                col[i] = 0.0
            for k in range(Ap[q], Ap[q + 1]):
                j = Ai[k]
                v = Ax[k]
                for i in range(m):
                    col[i] += Binv[i, j] * v
        else:
            for i in range(m):
                col[i] = Binv[i, q - n]
        arq = col[r]
        if fabs(arq - alpha[q]) > 1e-7 * (1.0 + fabs(arq)) or fabs(arq) <= tol_piv:
            return NUMERICAL, piv

        # primal update
        target = lo[p] if to_lower else hi[p]
        delta = (x[p] - target) / arq
        for i in range(m):
            x[head[i]] -= delta * col[i]
        x[q] += delta
        x[p] = target

        # dual update
        t = d[q] / arq
        for j in range(N):
            d[j] -= t * alpha[j]
        d[q] = 0.0
        if fabs(t) <= 1e-12:
            state[1] += 1
            if state[1] > DEGENERATE_LIMIT:
                state[0] = 1
        else:
            state[1] = 0

        head[r] = q
        stat[q] = BASIC
        stat[p] = AT_LOWER if to_lower else AT_UPPER
        for i in range(m):
            d[head[i]] = 0.0

        # basis inverse update
        for j in range(m):
            Binv[r, j] /= arq
        for i in range(m):
            if i == r:
                continue
            ci = col[i]
            if ci == 0.0:
                continue
            for j in range(m):
                Binv[i, j] -= ci * Binv[r, j]
    return BUDGET, max_pivots
