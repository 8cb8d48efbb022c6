"""Bounded-variable dual simplex over ``A x (<=,>=,==) b, lb <= x <= ub``.

Every row gets a slack column so the system reads ``[A I] z = b``. Slack
bounds encode the row sense and are intersected with the row activity range
implied by the (finite) structural bounds, so every column is boxed. A boxed
problem always has a dual feasible starting basis (all slacks basic, each
structural at whichever bound its cost prefers), which is why the solver is
dual simplex only.

The pivot loop lives in a compiled kernel when available; set
``UBREACH_PURE_PYTHON=1`` to force the numpy fallback.
"""

from __future__ import annotations

import os
from collections import OrderedDict

import numpy as np
from scipy import sparse

from . import _simplex_py
from ._simplex_py import AT_LOWER, AT_UPPER, BASIC, BUDGET, INFEASIBLE, NUMERICAL, OPTIMAL

_kernel = _simplex_py.dual_pivots
BACKEND = "python"
if not os.environ.get("UBREACH_PURE_PYTHON"):
    try:
        from . import _simplex_ext

        _kernel = _simplex_ext.dual_pivots
        BACKEND = "cython"
    except ImportError:  # extension not built
        pass


def set_backend(name: str) -> None:
    """Switch kernels at runtime ("python" or "cython"); used by tests and benchmarks."""
    global _kernel, BACKEND
    if name == "python":
        _kernel = _simplex_py.dual_pivots
    elif name == "cython":
        from . import _simplex_ext

        _kernel = _simplex_ext.dual_pivots
    else:
        raise ValueError(f"unknown backend {name!r}")
    BACKEND = name


def available_backends() -> list[str]:
    out = ["python"]
    try:
        from . import _simplex_ext  # noqa: F401

        out.append("cython")
    except ImportError:
        pass
    return out


class NumericalError(RuntimeError):
    """The basis matrix became singular or the factorization lost accuracy."""


REFACTOR_EVERY = 100
# basis inverses kept for recent snapshots (siblings in branch and bound share one)
INVERSE_CACHE = 8
INVERSE_CACHE_BYTES = 64 << 20


class DualSimplex:
    """Mutable LP state: bounds, basis, inverse and primal/dual values."""

    def __init__(self, A: sparse.csc_matrix, sense: np.ndarray, rhs: np.ndarray,
                 lb: np.ndarray, ub: np.ndarray, c: np.ndarray,
                 feas_tol: float = 1e-7, dual_tol: float = 1e-9, pivot_tol: float = 1e-7):
        A = sparse.csc_matrix(A, dtype=float)
        A.sort_indices()
        m, n = A.shape
        self.m, self.n = m, n
        self.A = A
        self.At = A.T.tocsr()
        self.Ap = A.indptr.astype(np.int64)
        self.Ai = A.indices.astype(np.int32)
        self.Ax = A.data.astype(float)
        self.b = np.asarray(rhs, dtype=float).copy()
        self.c = np.concatenate([np.asarray(c, dtype=float), np.zeros(m)])
        self.sense = np.asarray(sense, dtype=np.int8)
        self.feas_tol, self.dual_tol, self.pivot_tol = feas_tol, dual_tol, pivot_tol
        self.lo = np.empty(n + m)
        self.hi = np.empty(n + m)
        self.lo[:n] = lb
        self.hi[:n] = ub
        if not (np.all(np.isfinite(self.lo[:n])) and np.all(np.isfinite(self.hi[:n]))):
            raise ValueError("all structural variables need finite bounds")
        self._slack_bounds()
        self.head = np.arange(n, n + m, dtype=np.int64)
        self.stat = np.full(n + m, AT_LOWER, dtype=np.int8)
        self.stat[self.head] = BASIC
        self.x = np.zeros(n + m)
        self.d = self.c.copy()
        self.Binv = np.eye(m)
        self.state = np.zeros(3, dtype=np.int64)
        # deterministic cost perturbation against dual degeneracy
        self._xi = 1e-7 * (1.0 + np.random.default_rng(12345).random(n + m))
        self.iterations = 0
        self.repairs = 0
        self._flip_tol = dual_tol
        self._since_refactor = 0
        self._fresh = True
        self._snap_seq = 0
        self._inverses: OrderedDict = OrderedDict()
        self._cold_nonbasic()
        self._recompute_primal()

    # -- bounds ---------------------------------------------------------------
    def _slack_bounds(self) -> None:
        """Slack s = b - A x; bounds from the row sense and the activity range."""
        n, m = self.n, self.m
        Apos = self.A.maximum(0)
        Aneg = self.A.minimum(0)
        lo_x, hi_x = self.lo[:n], self.hi[:n]
        act_min = Apos @ lo_x + Aneg @ hi_x
        act_max = Apos @ hi_x + Aneg @ lo_x
        s_lo = self.b - act_max
        s_hi = self.b - act_min
        sl = self.lo[n:]
        sh = self.hi[n:]
        sl[:] = s_lo
        sh[:] = s_hi
        le = self.sense < 0
        ge = self.sense > 0
        eq = self.sense == 0
        sl[le] = np.maximum(s_lo[le], 0.0)
        sh[ge] = np.minimum(s_hi[ge], 0.0)
        sl[eq] = 0.0
        sh[eq] = 0.0
        # a row that cannot be satisfied anywhere on the box
        gap = sl - sh
        self.box_infeasible = bool(np.any(gap > self.feas_tol))
        bad = gap > 0.0
        sh[bad] = sl[bad]

    def set_structural_bounds(self, lb: np.ndarray, ub: np.ndarray) -> None:
        self.lo[: self.n] = lb
        self.hi[: self.n] = ub
        self._slack_bounds()
        self._place_nonbasic()
        self._recompute_primal()

    def _cold_nonbasic(self) -> None:
        n = self.n
        self.stat[:n] = np.where(self.c[:n] >= 0.0, AT_LOWER, AT_UPPER)

    def _place_nonbasic(self) -> None:
        """Put nonbasic columns on the bound that keeps their reduced cost dual feasible."""
        nb = self.stat != BASIC
        want_upper = nb & (self.d < -self._flip_tol)
        want_lower = nb & (self.d > self._flip_tol)
        self.stat[want_upper] = AT_UPPER
        self.stat[want_lower] = AT_LOWER
        fixed = nb & (self.lo == self.hi)
        self.stat[fixed] = AT_LOWER

    def _recompute_primal(self) -> None:
        nb = self.stat != BASIC
        x = self.x
        x[nb] = np.where(self.stat[nb] == AT_UPPER, self.hi[nb], self.lo[nb])
        xs = x.copy()
        xs[self.head] = 0.0
        resid = self.b - self.A @ xs[: self.n] - xs[self.n:]
        x[self.head] = self.Binv @ resid

    def _recompute_dual(self) -> None:
        y = self.c[self.head] @ self.Binv
        self.d[: self.n] = self.c[: self.n] - self.At @ y
        self.d[self.n:] = self.c[self.n:] - y
        self.d[self.head] = 0.0

    def _basis_matrix(self) -> np.ndarray:
        m, n = self.m, self.n
        B = np.zeros((m, m))
        for r, j in enumerate(self.head):
            if j < n:
                lo_k, hi_k = self.Ap[j], self.Ap[j + 1]
                B[self.Ai[lo_k:hi_k], r] = self.Ax[lo_k:hi_k]
            else:
                B[j - n, r] = 1.0
        return B

    def refactor(self, repair: bool = True) -> None:
        """Recompute the basis inverse from scratch.

        Basic slacks are unit columns, so only the block of structural basic
        columns on the rows no basic slack covers needs a dense inverse; the
        slack rows of the inverse follow from one product.

        A singular or badly conditioned basis is replaced by the all-slack
        basis when ``repair`` is set (dual feasibility is restored by bound
        flips); otherwise :class:`NumericalError` is raised.
        """
        m, n = self.m, self.n
        pos = np.arange(m)
        is_x = self.head < n
        px, ps = pos[is_x], pos[~is_x]
        cols = self.head[px]
        srows = self.head[ps] - n
        free = np.ones(m, dtype=bool)
        free[srows] = False
        rx = np.flatnonzero(free)
        Ax = self.A[:, cols].toarray() if px.size else np.zeros((m, 0))
        B11 = Ax[rx]
        problem = None
        try:
            inv11 = np.linalg.inv(B11) if px.size else np.zeros((0, 0))
            probe = np.ones(px.size)
            err = np.abs(B11 @ (inv11 @ probe) - probe).max() if px.size else 0.0
            if not np.isfinite(err) or err > 1e-6:
                problem = f"ill-conditioned basis (|B B^-1 1 - 1| = {err:.3g})"
        except np.linalg.LinAlgError:
            problem = "singular basis"
        if problem is not None:
            if not repair or self.repairs >= 50:
                raise NumericalError(f"{problem} at iteration {self.iterations} (m={m}, basic "
                                     f"columns {self.head[:8].tolist()}...)")
            self._slack_basis()
            return
        Binv = np.zeros((m, m))
        Binv[np.ix_(px, rx)] = inv11
        Binv[ps, srows] = 1.0
        Binv[np.ix_(ps, rx)] = -(Ax[srows] @ inv11)
        self.Binv = Binv
        self._recompute_dual()
        self._place_nonbasic()
        self._recompute_primal()
        self._since_refactor = 0
        self._fresh = True

    def _slack_basis(self) -> None:
        self.repairs += 1
        self.head[:] = np.arange(self.n, self.n + self.m)
        self.stat[self.n:] = AT_LOWER
        self.stat[self.head] = BASIC
        self.state[:] = 0
        self.Binv = np.eye(self.m)
        self._recompute_dual()
        self._place_nonbasic()
        self._recompute_primal()
        self._since_refactor = 0
        self._fresh = True

    def inverse_error(self) -> float:
        """``max |B (B^-1 1) - 1|`` for the maintained inverse."""
        z = np.zeros(self.n + self.m)
        z[self.head] = self.Binv @ np.ones(self.m)
        return float(np.abs(self.A @ z[: self.n] + z[self.n:] - 1.0).max(initial=0.0))

    # -- basis snapshots -------------------------------------------------------
    def snapshot(self):
        """Basis to come back to; the inverse of the last few is kept as well."""
        self._snap_seq += 1
        key = self._snap_seq
        self._inverses[key] = (self.Binv.copy(), self._since_refactor)
        cap = max(1, min(INVERSE_CACHE, INVERSE_CACHE_BYTES // max(1, 8 * self.m * self.m)))
        while len(self._inverses) > cap:
            self._inverses.popitem(last=False)
        return self.head.copy(), self.stat.copy(), key

    def restore(self, snap) -> None:
        head, stat, key = snap
        self.head[:] = head
        self.stat[:] = stat
        kept = self._inverses.get(key)
        if kept is None:
            self.refactor()
            return
        self._inverses.move_to_end(key)
        self.Binv = kept[0].copy()
        self._since_refactor = kept[1]
        self._reset_values()
        self._fresh = True

    # -- solve -------------------------------------------------------------------
    def primal_infeasibility(self) -> float:
        xb = self.x[self.head]
        return float(max(0.0, np.max(self.lo[self.head] - xb, initial=0.0),
                         np.max(xb - self.hi[self.head], initial=0.0)))

    def solve(self, max_iter: int = 100000) -> int:
        """Reoptimize from the current basis; returns OPTIMAL, INFEASIBLE or BUDGET.

        Costs are perturbed first so that dual degenerate pivots make progress,
        then restored; the restored problem is finished from the perturbed
        optimal basis after bound flips repair dual feasibility.
        """
        if self.box_infeasible:
            return INFEASIBLE
        start = self.iterations
        c_orig = self.c
        sign = np.where(self.stat == AT_UPPER, -1.0, 1.0)
        self.c = c_orig + sign * self._xi * (1.0 + np.abs(c_orig))
        self._reset_values()
        try:
            code = self._run(max_iter)
        finally:
            self.c = c_orig
            self._reset_values()
        if code != OPTIMAL:
            # primal infeasibility does not depend on the costs
            return code
        return self._run(max_iter - (self.iterations - start))

    def _reset_values(self) -> None:
        self._recompute_dual()
        self._place_nonbasic()
        self._recompute_primal()

    def _infeasibility_certified(self, r: int) -> bool:
        """Check directly that basic row ``r`` cannot reach its bounds over the nonbasic box."""
        rho = self.Binv[r]
        alpha = np.concatenate([self.At @ rho, rho])
        nb = self.stat != BASIC
        lo, hi, x = self.lo[nb], self.hi[nb], self.x[nb]
        a = alpha[nb]
        up = np.where(a > 0, a * (x - lo), -a * (hi - x)).sum()
        down = np.where(a > 0, a * (hi - x), -a * (x - lo)).sum()
        p = self.head[r]
        slack = self.feas_tol + 1e-9 * float(np.abs(a) @ (hi - lo))
        if self.x[p] < self.lo[p]:
            return self.x[p] + up < self.lo[p] - slack
        if self.x[p] > self.hi[p]:
            return self.x[p] - down > self.hi[p] + slack
        return False

    def _run(self, max_iter: int) -> int:
        self.state[:] = 0
        self._flip_tol = self.dual_tol
        confirmations = 0
        tol_piv = self.pivot_tol
        start = self.iterations
        while True:
            budget = min(REFACTOR_EVERY - self._since_refactor, max_iter - (self.iterations - start))
            if budget <= 0:
                if self.iterations - start >= max_iter:
                    return BUDGET
                self.refactor()
                continue
            code, k = _kernel(self.At, self.Ap, self.Ai, self.Ax, self.lo, self.hi, self.head,
                              self.stat, self.x, self.d, self.Binv, self.n, budget,
                              self.feas_tol, self.dual_tol, tol_piv, self.state)
            self.iterations += k
            self._since_refactor += k
            if k > 0:
                self._fresh = False
            if code == BUDGET:
                continue
            if code == NUMERICAL:
                if self._since_refactor == 0:
                    # the fresh factorization disagrees with itself: start over from slacks
                    if self.repairs >= 50:
                        raise NumericalError(f"pivot mismatch right after refactorization "
                                             f"(row {int(self.state[2])}, iteration "
                                             f"{self.iterations})")
                    self._slack_basis()
                    continue
                self.refactor()
                continue
            # OPTIMAL or INFEASIBLE: confirm with values recomputed from a checked inverse
            if k > 0 or not self._fresh:
                confirmations += 1
                if confirmations > 20:
                    raise NumericalError("simplex failed to settle after repeated refactorization")
                if confirmations > 2:
                    # tiny reduced costs of the wrong sign keep flipping bounds back and
                    # forth; leave them alone (objective_bound() pays for them)
                    self._flip_tol = min(self._flip_tol * 10.0, 1e-5)
                if self._since_refactor > 0 and self.inverse_error() <= 1e-9:
                    self._reset_values()
                else:
                    self.refactor()
                self._fresh = True
                continue
            if code == INFEASIBLE and not self._infeasibility_certified(int(self.state[2])):
                # only tiny pivots could fix the row: accept smaller ones
                tol_piv *= 1e-2
                if tol_piv < 1e-13:
                    raise NumericalError(f"cannot decide feasibility of row {int(self.state[2])}")
                continue
            return code

    def objective(self) -> float:
        return float(self.c @ self.x)

    def objective_bound(self) -> float:
        """Lower bound on the LP optimum that stays valid with residual dual infeasibility."""
        nb = self.stat != BASIC
        d = self.d[nb]
        wrong = np.where(self.stat[nb] == AT_LOWER, np.maximum(-d, 0.0), np.maximum(d, 0.0))
        return self.objective() - float(wrong @ (self.hi[nb] - self.lo[nb]))

    def structural(self) -> np.ndarray:
        return self.x[: self.n].copy()
