"""Pure numpy dual simplex pivots (fallback for the compiled kernel).

Both kernels take the same arrays and follow the same rules:

* leaving row: largest primal bound violation (ties: lowest row); in Bland
  mode the violated basic variable with the lowest index;
* entering column: Harris two-pass ratio test preferring the largest pivot
  magnitude (ties: lowest index); in Bland mode the lowest index among the
  exact minimum ratios;
* explicit basis inverse updated in product form.

Status codes are shared with the compiled kernel.
"""

from __future__ import annotations

import numpy as np

OPTIMAL = 0
INFEASIBLE = 1
BUDGET = 2
NUMERICAL = 3

BASIC = 0
AT_LOWER = 1
AT_UPPER = 2

DEGENERATE_LIMIT = 50


def dual_pivots(At, Ap, Ai, Ax, lo, hi, head, stat, x, d, Binv, n, max_pivots,
                tol_p, tol_d, tol_piv, state):
    """Run at most ``max_pivots`` dual simplex pivots in place.

    ``At`` is the structural matrix transposed, as a scipy CSR matrix (used
    for row products); ``Ap, Ai, Ax`` its CSC form (used for columns). ``state`` is an
    int64 array ``[bland, degenerate_run, leaving_row]`` updated in place.
    Returns ``(code, pivots)``.
    """
    m = head.shape[0]
    N = x.shape[0]
    movable = lo < hi
    alpha = np.empty(N)
    for piv in range(max_pivots):
        xb = x[head]
        below = lo[head] - xb
        above = xb - hi[head]
        infeas = np.maximum(below, above)
        if state[0]:
            cand = np.flatnonzero(infeas > tol_p)
            if cand.size == 0:
                return OPTIMAL, piv
            r = int(cand[np.argmin(head[cand])])
        else:
            r = int(np.argmax(infeas))
            if infeas[r] <= tol_p:
                return OPTIMAL, piv
        state[2] = r
        p = head[r]
        to_lower = below[r] > above[r]

        rho = Binv[r]
        alpha[:n] = At @ rho
        alpha[n:] = rho
        eligible = (stat != BASIC) & movable
        if to_lower:
            ok = ((stat == AT_LOWER) & (alpha < -tol_piv)) | ((stat == AT_UPPER) & (alpha > tol_piv))
        else:
            ok = ((stat == AT_LOWER) & (alpha > tol_piv)) | ((stat == AT_UPPER) & (alpha < -tol_piv))
        cand = np.flatnonzero(eligible & ok)
        if cand.size == 0:
            return INFEASIBLE, piv
        dj = np.where(stat[cand] == AT_LOWER, d[cand], -d[cand])
        dj = np.maximum(dj, 0.0)
        aj = np.abs(alpha[cand])
        ratio = dj / aj
        if state[0]:
            rmin = ratio.min()
            q = int(cand[np.flatnonzero(ratio <= rmin)[0]])
        else:
            bound = ((dj + tol_d) / aj).min()
            sel = np.flatnonzero(ratio <= bound)
            best = sel[np.argmax(aj[sel])]
            q = int(cand[best])

        if q < n:
            lo_k, hi_k = Ap[q], Ap[q + 1]
            col = Binv[:, Ai[lo_k:hi_k]] @ Ax[lo_k:hi_k]
        else:
            col = Binv[:, q - n].copy()
        arq = col[r]
        if abs(arq - alpha[q]) > 1e-7 * (1.0 + abs(arq)) or abs(arq) <= tol_piv:
            return NUMERICAL, piv

        target = lo[p] if to_lower else hi[p]
        delta = (x[p] - target) / arq
        x[head] -= delta * col
        x[q] += delta
        x[p] = target

        t = d[q] / arq
        d -= t * alpha
        d[q] = 0.0
        if abs(t) <= 1e-12:
            state[1] += 1
            if state[1] > DEGENERATE_LIMIT:
                state[0] = 1
        else:
            state[1] = 0

        head[r] = q
        stat[q] = BASIC
        stat[p] = AT_LOWER if to_lower else AT_UPPER
        d[head] = 0.0

        prow = Binv[r] / arq
        Binv -= np.outer(col, prow)
        Binv[r] = prow
    return BUDGET, max_pivots
