"""Conic solver backends for :class:`SdpProblem`.

:class:`ClarabelBackend` assembles the conic form directly; :class:`CvxpyBackend`
goes through cvxpy and serves as an independent cross-check path.
"""

from __future__ import annotations

import math
import os
import time

import numpy as np
import scipy.sparse as sp

from .sdp import SdpProblem, SdpSolution

_SQRT2 = math.sqrt(2.0)


def default_tol() -> float:
    try:
        return float(os.environ.get("TPV_SOLVER_TOL", "1e-8"))
    except ValueError:
        return 1e-8


def _svec_pos(i: int, j: int) -> int:
    # upper triangle, column-major
    return j * (j + 1) // 2 + i


class ClarabelBackend:
    name = "clarabel"
    capabilities = {"psd": True, "free_vars": True, "linear_objective": True}

    def __init__(self, tol: float | None = None, max_iter: int = 400, verbose: bool = False):
        self.tol = default_tol() if tol is None else tol
        self.max_iter = max_iter
        self.verbose = verbose

    def assemble(self, prob: SdpProblem):
        import clarabel

        rows, cols, vals, b = [], [], [], []
        cones = []
        r = 0
        for e in prob.eqs:
            for v, c in e.items():
                if v == 0:
                    continue
                rows.append(r)
                cols.append(v - 1)
                vals.append(c)
            b.append(-e.get(0, 0.0))
            r += 1
        if prob.eqs:
            cones.append(clarabel.ZeroConeT(len(prob.eqs)))
        scalars = [blk for blk in prob.blocks if blk.size == 1]
        mats = [blk for blk in prob.blocks if blk.size > 1]
        for blk in scalars:
            e = blk.entries.get((0, 0), {})
            for v, c in e.items():
                if v:
                    rows.append(r)
                    cols.append(v - 1)
                    vals.append(-c)
            b.append(e.get(0, 0.0))
            r += 1
        if scalars:
            cones.append(clarabel.NonnegativeConeT(len(scalars)))
        for blk in mats:
            n = blk.size
            nt = n * (n + 1) // 2
            bb = np.zeros(nt)
            for (i, j), e in blk.entries.items():
                pos = r + _svec_pos(i, j)
                s = 1.0 if i == j else _SQRT2
                for v, c in e.items():
                    if v == 0:
                        bb[pos - r] += s * c
                    else:
                        rows.append(pos)
                        cols.append(v - 1)
                        vals.append(-s * c)
            b.extend(bb.tolist())
            cones.append(clarabel.PSDTriangleConeT(n))
            r += nt
        A = sp.csc_matrix((vals, (rows, cols)), shape=(r, prob.nvars))
        q = np.zeros(prob.nvars)
        for v, c in prob.objective.items():
            if v:
                q[v - 1] += c
        P = sp.csc_matrix((prob.nvars, prob.nvars))
        return P, q, A, np.asarray(b, dtype=float), cones

    def solve(self, prob: SdpProblem) -> SdpSolution:
        import clarabel

        if prob.nvars == 0:
            x = np.zeros(0)
            ok = prob.eq_residual(x) <= 1e-12 and prob.min_block_eig(x) >= -1e-12
            return SdpSolution("optimal" if ok else "infeasible", x, 0.0)
        P, q, A, b, cones = self.assemble(prob)
        st = clarabel.DefaultSettings()
        st.verbose = self.verbose
        st.max_iter = self.max_iter
        st.tol_feas = self.tol
        st.tol_gap_abs = self.tol
        st.tol_gap_rel = self.tol
        st.tol_infeas_abs = self.tol
        st.tol_infeas_rel = self.tol
        t0 = time.perf_counter()
        sol = clarabel.DefaultSolver(P, q, A, b, cones, st).solve()
        dt = time.perf_counter() - t0
        raw = str(sol.status)
        if raw in ("Solved", "AlmostSolved"):
            status = "optimal"
        elif raw in ("PrimalInfeasible", "AlmostPrimalInfeasible"):
            status = "infeasible"
        else:
            status = "numerical-failure"
        x = np.asarray(sol.x, dtype=float)
        obj = float(q @ x) + prob.objective.get(0, 0.0)
        return SdpSolution(status, x, obj, dt, raw, {"iterations": sol.iterations})


class CvxpyBackend:
    """Reference path through cvxpy (dense symmetric matrix expressions)."""

    name = "cvxpy"
    capabilities = {"psd": True, "free_vars": True, "linear_objective": True}

    def __init__(self, solver: str | None = None, tol: float | None = None):
        self.solver = solver
        self.tol = default_tol() if tol is None else tol

    def solve(self, prob: SdpProblem) -> SdpSolution:
        import cvxpy as cp

        x = cp.Variable(max(prob.nvars, 1))

        def lin(e):
            coeffs = np.zeros(max(prob.nvars, 1))
            for v, c in e.items():
                if v:
                    coeffs[v - 1] += c
            return coeffs @ x + e.get(0, 0.0)

        cons = [lin(e) == 0 for e in prob.eqs]
        for blk in prob.blocks:
            if blk.size == 1:
                cons.append(lin(blk.entries.get((0, 0), {})) >= 0)
                continue
            n = blk.size
            coefs = {}
            const = np.zeros((n, n))
            for (i, j), e in blk.entries.items():
                for v, c in e.items():
                    if v == 0:
                        const[i, j] += c
                        if i != j:
                            const[j, i] += c
                    else:
                        M = coefs.setdefault(v, np.zeros((n, n)))
                        M[i, j] += c
                        if i != j:
                            M[j, i] += c
            expr = const
            for v, M in coefs.items():
                expr = expr + x[v - 1] * M
            S = cp.Variable((n, n), symmetric=True)
            cons += [S == expr, S >> 0]
        obj = cp.Minimize(lin(prob.objective)) if prob.objective else cp.Minimize(0)
        pr = cp.Problem(obj, cons)
        t0 = time.perf_counter()
        try:
            pr.solve(solver=self.solver or cp.CLARABEL)
        except cp.error.SolverError as exc:
            return SdpSolution("numerical-failure", None, raw_status=str(exc))
        dt = time.perf_counter() - t0
        if pr.status in ("optimal", "optimal_inaccurate"):
            xv = np.asarray(x.value, dtype=float)[: prob.nvars]
            return SdpSolution("optimal", xv, float(pr.value), dt, pr.status)
        if pr.status in ("infeasible", "infeasible_inaccurate"):
            return SdpSolution("infeasible", None, solve_time=dt, raw_status=pr.status)
        return SdpSolution("numerical-failure", None, solve_time=dt, raw_status=pr.status)


def get_backend(name: str | None = None, **kw):
    name = (name or "clarabel").lower()
    if name == "clarabel":
        return ClarabelBackend(**kw)
    if name == "cvxpy":
        return CvxpyBackend(**kw)
    raise ValueError(f"unknown backend {name!r}")
