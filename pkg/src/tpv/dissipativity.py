"""Dissipativity and L2-gain certificates from polynomial envelopes.

The SOS matrix ``Psi(x, u)`` is a quadratic form in the lifted vector
``sigma = [xdot; w_1; ...; w_G; 1]``, where each ``w_g = A phi_g(x, u)`` is the
unknown Taylor part of one sector group.  Each envelope contributes a sector
term ``tau_sec (||xdot_g - o_g - w_g||^2 - Rpoly_g)`` and an ellipsoid term
``tau_sm (||w_g - A_c phi_g||^2 - phi_g^T P^{-1} phi_g)``; the operation set
enters through ``sum_i t_i p_i``.  For a known model (singleton ellipsoid)
the lift is substituted and the ellipsoid term disappears.

Gains are found by bisection on gamma with ``gamma^2`` kept as a placeholder
parameter, so each program is lowered once.
"""

from __future__ import annotations

import hashlib
import json
import logging
import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .polyalg import PolyMatrix, Polynomial, enumerate_multi_indices
from .setmem import Envelope
from .sos import (
    PARAM,
    AffPoly,
    AffPolyMatrix,
    ClarabelBackend,
    GramCertificate,
    SosProgram,
    verify_certificate,
)

log = logging.getLogger(__name__)


class CertificationError(RuntimeError):
    """Raised with the failing stage of the verification pipeline."""

    def __init__(self, stage: str, msg: str):
        super().__init__(f"[{stage}] {msg}")
        self.stage = stage


# ---------------------------------------------------------------------------
# problem data
# ---------------------------------------------------------------------------


@dataclass
class OperationSet:
    """``{(x, u) : p_i(x, u) <= 0}`` over ``nx + nu`` variables."""

    nx: int
    nu: int
    ineqs: list[Polynomial]
    witness: np.ndarray | None = None

    def __post_init__(self):
        n = self.nx + self.nu
        for p in self.ineqs:
            if p.nvars != n:
                raise ValueError("inequalities must be polynomials in (x, u)")
        if self.witness is not None:
            w = np.asarray(self.witness, dtype=float)
            if any(p(w) > 1e-12 for p in self.ineqs):
                raise ValueError("witness point violates the operation set")

    @property
    def n(self) -> int:
        return self.nx + self.nu

    @classmethod
    def box(cls, lo: Sequence[float], hi: Sequence[float], nx: int) -> "OperationSet":
        """``(v - lo)(v - hi) <= 0`` per coordinate."""
        n = len(lo)
        ps = []
        for j in range(n):
            v = Polynomial.variable(n, j)
            ps.append((v - lo[j]) * (v - hi[j]))
        return cls(nx, n - nx, ps, witness=0.5 * (np.asarray(lo) + np.asarray(hi)))

    def contains(self, P) -> np.ndarray:
        P = np.atleast_2d(P)
        return np.all(np.stack([np.atleast_1d(p(P)) for p in self.ineqs], axis=1) <= 0, axis=1)

    def to_dict(self) -> dict:
        return {"nx": self.nx, "nu": self.nu, "ineqs": [poly_to_list(p) for p in self.ineqs]}


def poly_to_list(p: Polynomial) -> list:
    return [[list(a), c] for a, c in p.terms.items()]


def poly_from_list(nvars: int, data) -> Polynomial:
    return Polynomial(nvars, {tuple(a): c for a, c in data})


@dataclass
class SupplyRate:
    """``s = base + gamma^2 * gain_part`` (``gain_part`` may be zero)."""

    base: Polynomial
    gain_part: Polynomial | None = None
    label: str = "polynomial"

    @classmethod
    def l2_gain(cls, nx: int, nu: int) -> "SupplyRate":
        n = nx + nu
        xs = sum((Polynomial.variable(n, j) ** 2 for j in range(nx)), Polynomial.zero(n))
        us = sum((Polynomial.variable(n, nx + j) ** 2 for j in range(nu)), Polynomial.zero(n))
        return cls(-xs, us, "l2-gain")

    @classmethod
    def quadratic(cls, Q, S, R, nx: int, nu: int) -> "SupplyRate":
        Q, S, R = (np.atleast_2d(np.asarray(M, dtype=float)) for M in (Q, S, R))
        if not np.allclose(Q, Q.T) or not np.allclose(R, R.T):
            raise ValueError("Q and R must be symmetric")
        n = nx + nu
        W = np.block([[Q, S], [S.T, R]])
        v = [Polynomial.variable(n, j) for j in range(n)]
        s = Polynomial.zero(n)
        for i in range(n):
            for j in range(n):
                if W[i, j]:
                    s = s + (v[i] * v[j]).scale(W[i, j])
        return cls(s, None, "quadratic")

    @classmethod
    def polynomial(cls, p: Polynomial) -> "SupplyRate":
        return cls(p, None)

    def affpoly(self) -> AffPoly:
        s = AffPoly.from_poly(self.base)
        if self.gain_part is not None:
            s.iadd(AffPoly.from_poly(self.gain_part, PARAM))
        return s

    @property
    def degree(self) -> int:
        d = self.base.degree
        if self.gain_part is not None:
            d = max(d, self.gain_part.degree)
        return d

    def value(self, P, gamma: float | None = None) -> np.ndarray:
        v = np.atleast_1d(self.base(np.atleast_2d(P)))
        if self.gain_part is not None:
            v = v + (gamma**2) * np.atleast_1d(self.gain_part(np.atleast_2d(P)))
        return v


@dataclass
class StorageTemplate:
    """``lambda(x) = m(x)^T X m(x)`` with ``m`` monomials in the state only."""

    monomials: list[Polynomial]

    @classmethod
    def default(cls, nx: int, nu: int, dmin: int = 1, dmax: int = 2) -> "StorageTemplate":
        n = nx + nu
        mons = []
        for a in enumerate_multi_indices(nx, dmin, dmax):
            mons.append(Polynomial.monomial(tuple(a) + (0,) * nu))
        return cls(mons)

    @property
    def degree(self) -> int:
        return max(m.degree for m in self.monomials)

    def storage(self, X: np.ndarray) -> Polynomial:
        n = self.monomials[0].nvars
        out = Polynomial.zero(n)
        for i, mi in enumerate(self.monomials):
            for j, mj in enumerate(self.monomials):
                if X[i, j]:
                    out = out + (mi * mj).scale(X[i, j])
        return out


@dataclass
class MultiplierDegrees:
    """Overrides for multiplier degrees; ``None`` picks the common-target default."""

    t: int | None = None
    tau_sec: int | None = None
    tau_sm: int | None = None
    tau_pos: int | None = None
    s_cont: int | None = None
    target: int | None = None


def _even_up(d: int) -> int:
    return d + (d % 2)


def _even_down(d: int) -> int:
    return max(d - (d % 2), 0)


def _active_vars(polys) -> list[int]:
    act = set()
    for p in polys:
        for a in p.terms:
            act.update(j for j, e in enumerate(a) if e)
    return sorted(act)


# ---------------------------------------------------------------------------
# Psi assembly
# ---------------------------------------------------------------------------


@dataclass
class PsiProgram:
    """An SOS program with the gain placeholder, plus bookkeeping for reporting."""

    prog: SosProgram
    storage_labels: list[str]
    storage: StorageTemplate | None
    info: dict = field(default_factory=dict)

    def storage_matrices(self, x: np.ndarray) -> list[np.ndarray]:
        return [self.prog.value_of(lab, x) for lab in self.storage_labels]


def _lambda_affpoly(prog: SosProgram, storage: StorageTemplate, Xidx: np.ndarray) -> AffPoly:
    lam = AffPoly.zero(prog.nvars)
    m = storage.monomials
    for i in range(len(m)):
        for j in range(i, len(m)):
            lam.iadd(AffPoly.from_poly(m[i] * m[j], int(Xidx[i, j]), 1.0 if i == j else 2.0))
    return lam


def _lift_layout(envs: Sequence[Envelope], nx: int):
    """Offsets of the lifted ``w`` blocks; returns (entries, total width)."""
    entries, off = [], nx
    for e, env in enumerate(envs):
        for g, grp in enumerate(env.model.groups):
            if env.ellipsoid.singleton:
                entries.append((e, g, None))
            else:
                entries.append((e, g, off))
                off += len(grp.outputs)
    return entries, off


def _fixed_degree(envs, op_ineqs, supply: SupplyRate, storage_deg: int, nx: int) -> int:
    d = supply.degree
    d = max(d, 2 * max(storage_deg * 2 - 1, 0))
    for env in envs:
        for g, grp in enumerate(env.model.groups):
            dphi = max(p.degree for p in grp.regressor)
            doff = max((o.degree for o in grp.offset), default=0)
            d = max(d, grp.rpoly.degree, 2 * doff, 2 * dphi)
    return _even_up(d)


def envelope_terms(
    prog: SosProgram,
    Psi: AffPolyMatrix,
    envs: Sequence[Envelope],
    entries,
    y_index: Callable[[int], int],
    one: int,
    deg: "dict",
    vars_,
    label: str,
) -> None:
    """Add sector and ellipsoid S-procedure terms for all envelope groups."""
    n = prog.nvars
    K = Psi.rows
    for e, g, off in entries:
        env = envs[e]
        grp = env.model.groups[g]
        ell = env.ellipsoid
        nw = len(grp.outputs)
        phi = grp.regressor
        # sector residual rows: y_g - o_g - w_g  (or - A* phi for known models)
        L = PolyMatrix.zeros(nw, K, n)
        for r, out in enumerate(grp.outputs):
            L.entries[r][y_index(out)] = Polynomial.constant(n, 1.0)
            col = -grp.offset[r]
            if off is None:
                for c, p in zip(ell.center[r], phi):
                    if c:
                        col = col - p.scale(c)
            else:
                L.entries[r][off + r] = Polynomial.constant(n, -1.0)
            L.entries[r][one] = col
        Csec = L.T() @ L
        Csec.entries[one][one] = Csec.entries[one][one] - grp.rpoly
        tau = prog.sos_poly(vars_, deg["tau_sec"], label=f"{label}tau_sec[{e},{g}]")
        Psi.add_scaled_polymatrix(tau, Csec)
        if off is None:
            continue
        # ellipsoid rows: w_g - A_c phi
        L2 = PolyMatrix.zeros(nw, K, n)
        for r in range(nw):
            L2.entries[r][off + r] = Polynomial.constant(n, 1.0)
            col = Polynomial.zero(n)
            for c, p in zip(ell.center[r], phi):
                if c:
                    col = col - p.scale(c)
            L2.entries[r][one] = col
        Csm = L2.T() @ L2
        quad = Polynomial.zero(n)
        Pi = ell.P_inv
        for a in range(len(phi)):
            for b in range(len(phi)):
                if Pi[a, b]:
                    quad = quad + (phi[a] * phi[b]).scale(Pi[a, b])
        Csm.entries[one][one] = Csm.entries[one][one] - quad
        tsm = prog.sos_poly(vars_, deg["tau_sm"], label=f"{label}tau_sm[{e},{g}]")
        Psi.add_scaled_polymatrix(tsm, Csm)


def _degrees(envs, ineqs, supply, storage_deg, nx, md: MultiplierDegrees):
    D = md.target if md.target is not None else _fixed_degree(envs, ineqs, supply, storage_deg, nx)
    dphi = max(max(p.degree for p in grp.regressor) for env in envs for grp in env.model.groups)
    drp = max(grp.rpoly.degree for env in envs for grp in env.model.groups)
    dp = max((p.degree for p in ineqs), default=2)
    return {
        "target": D,
        "t": md.t if md.t is not None else _even_down(D - dp),
        "tau_sec": md.tau_sec if md.tau_sec is not None else _even_down(D - drp),
        "tau_sm": md.tau_sm if md.tau_sm is not None else _even_down(D - 2 * dphi),
        "tau_pos": md.tau_pos,
        "s_cont": md.s_cont,
    }


def _build_psi(
    prog: SosProgram,
    envs: Sequence[Envelope],
    ineqs: Sequence[Polynomial],
    supply: SupplyRate,
    lam: AffPoly,
    nx: int,
    deg: dict,
    vars_,
    label: str,
) -> AffPolyMatrix:
    n = prog.nvars
    entries, width = _lift_layout(envs, nx)
    K = width + 1
    one = width
    Psi = AffPolyMatrix.zeros(K, K, n)
    Psi.entries[one][one].iadd(supply.affpoly())
    for i, p in enumerate(ineqs):
        t = prog.sos_poly(vars_, deg["t"], label=f"{label}t[{i}]")
        Psi.entries[one][one].iadd(t.mul_poly(p))
    for j in range(nx):
        Psi.add_entry(j, one, lam.partial(j).scale(-0.5))
    envelope_terms(prog, Psi, envs, entries, lambda out: out, one, deg, vars_, label)
    return Psi


def assemble_psi(
    envs: Envelope | Sequence[Envelope],
    op: OperationSet,
    supply: SupplyRate,
    storage: StorageTemplate | None = None,
    degrees: MultiplierDegrees | None = None,
    prune: bool = True,
    storage_margin: float = 0.0,
) -> PsiProgram:
    """One SOS matrix ``Psi`` on the whole operation set plus ``X >= margin I``.

    A positive ``storage_margin`` rules out the trivial storage ``lambda = 0``,
    which otherwise certifies any supply that is non-negative everywhere.
    """
    envs = [envs] if isinstance(envs, Envelope) else list(envs)
    nx = op.nx
    storage = storage or StorageTemplate.default(nx, op.nu)
    md = degrees or MultiplierDegrees()
    deg = _degrees(envs, op.ineqs, supply, storage.degree, nx, md)
    prog = SosProgram(op.n, prune=prune)
    Xidx = prog.sym_matrix(len(storage.monomials), psd=True, shift=storage_margin, label="X")
    lam = _lambda_affpoly(prog, storage, Xidx)
    vars_ = list(range(op.n))
    Psi = _build_psi(prog, envs, op.ineqs, supply, lam, nx, deg, vars_, "")
    prog.add_sos(Psi, "Psi")
    return PsiProgram(prog, ["X"], storage, {"degrees": deg, "psi_size": Psi.rows, "n_envelopes": len(envs)})


@dataclass
class Cell:
    """Region ``{x : c_i(x) <= 0}`` and the envelopes used inside it."""

    ineqs: list[Polynomial]
    envelopes: list[int]


@dataclass
class Boundary:
    """Shared boundary ``h0 = 0`` between cells ``j`` and ``l``."""

    j: int
    l: int
    h0: Polynomial
    hm: list[Polynomial] = field(default_factory=list)


@dataclass
class Partition:
    cells: list[Cell]
    boundaries: list[Boundary] = field(default_factory=list)

    @classmethod
    def intervals(cls, n: int, coord: int, breaks: Sequence[float], lo: float, hi: float, envelopes=None):
        """Slabs ``[b_k, b_{k+1}]`` along one coordinate."""
        edges = [lo] + list(breaks) + [hi]
        v = Polynomial.variable(n, coord)
        cells = []
        for k in range(len(edges) - 1):
            envs = envelopes[k] if envelopes is not None else [k]
            cells.append(Cell([(v - edges[k]) * (v - edges[k + 1])], list(envs)))
        bnds = [Boundary(k, k + 1, v - edges[k + 1]) for k in range(len(edges) - 2)]
        return cls(cells, bnds)

    def check_cover(self, P: np.ndarray) -> dict:
        """Fraction of points covered, and of points in more than one interior."""
        P = np.atleast_2d(P)
        inside = np.stack(
            [np.all(np.stack([np.atleast_1d(c(P)) for c in cell.ineqs], 1) <= 0, axis=1) for cell in self.cells], 1
        )
        interior = np.stack(
            [np.all(np.stack([np.atleast_1d(c(P)) for c in cell.ineqs], 1) < 0, axis=1) for cell in self.cells], 1
        )
        return {"covered": float(inside.any(1).mean()), "overlap": float((interior.sum(1) > 1).mean())}


def assemble_psi_partitioned(
    envs: Sequence[Envelope],
    partition: Partition,
    input_ineqs: Sequence[Polynomial],
    supply: SupplyRate,
    nx: int,
    nu: int,
    storage: StorageTemplate | None = None,
    degrees: MultiplierDegrees | None = None,
    shared_storage: bool = True,
    prune: bool = True,
) -> PsiProgram:
    """Piecewise storage over a state partition.

    With ``shared_storage`` a single ``X >= 0`` is used on every cell.
    Otherwise each cell has its own ``X_j`` with an SOS positivity condition
    on the cell and exact continuity equalities on declared boundaries.
    """
    n = nx + nu
    storage = storage or StorageTemplate.default(nx, nu)
    md = degrees or MultiplierDegrees()
    prog = SosProgram(n, prune=prune)
    vars_ = list(range(n))
    labels = []
    lams = []
    if shared_storage:
        Xidx = prog.sym_matrix(len(storage.monomials), psd=True, label="X")
        labels.append("X")
        lams = [_lambda_affpoly(prog, storage, Xidx)] * len(partition.cells)
    else:
        for j in range(len(partition.cells)):
            Xidx = prog.sym_matrix(len(storage.monomials), label=f"X{j}")
            labels.append(f"X{j}")
            lams.append(_lambda_affpoly(prog, storage, Xidx))
    degs = []
    xvars = list(range(nx))
    for j, cell in enumerate(partition.cells):
        cenvs = [envs[i] for i in cell.envelopes]
        ineqs = list(cell.ineqs) + list(input_ineqs)
        deg = _degrees(cenvs, ineqs, supply, storage.degree, nx, md)
        degs.append(deg)
        Psi = _build_psi(prog, cenvs, ineqs, supply, lams[j], nx, deg, vars_, f"cell{j}:")
        prog.add_sos(Psi, f"Psi{j}")
        if not shared_storage:
            pos = lams[j].copy()
            dpos = md.tau_pos if md.tau_pos is not None else _even_down(2 * storage.degree - 2)
            for i, c in enumerate(cell.ineqs):
                tp = prog.sos_poly(xvars, dpos, label=f"cell{j}:tau_pos[{i}]")
                pos.iadd(tp.mul_poly(c))
            prog.add_sos(pos, f"Pos{j}")
    if not shared_storage:
        for b in partition.boundaries:
            if b.h0.is_zero():
                raise ValueError("continuity constraint on an empty boundary")
            ds = md.s_cont if md.s_cont is not None else max(2 * storage.degree - b.h0.degree, 0)
            s = prog.free_poly(xvars, ds, label=f"s_cont[{b.j},{b.l}]")
            expr = lams[b.j] - lams[b.l]
            expr.iadd(s.mul_poly(b.h0))
            prog.add_zero(expr, f"Cont[{b.j},{b.l}]")
    return PsiProgram(prog, labels, storage, {"degrees": degs, "cells": len(partition.cells), "shared": shared_storage})


# ---------------------------------------------------------------------------
# bisection and orchestration
# ---------------------------------------------------------------------------


@dataclass
class GainResult:
    certified: bool
    gamma: float | None
    certificate: GramCertificate | None
    report: object | None
    history: list = field(default_factory=list)
    program: PsiProgram | None = None
    solution_x: np.ndarray | None = None
    runtime: float = 0.0

    def storage_matrices(self) -> list[np.ndarray]:
        if self.program is None or self.solution_x is None:
            return []
        return self.program.storage_matrices(self.solution_x)


def _probe(pp: PsiProgram, gamma: float, backend):
    sol = pp.prog.solve(backend, param=gamma**2)
    if not sol.ok:
        return False, sol, None, None
    cert = pp.prog.certificate(sol, param=gamma**2, meta={"gamma": gamma})
    rep = verify_certificate(cert)
    return bool(rep.passed), sol, cert, rep


def l2_gain_bisect(
    assembler: PsiProgram | Callable[[float], PsiProgram],
    gamma_range: tuple[float, float] = (0.0, 100.0),
    tol: float = 1e-2,
    backend=None,
) -> GainResult:
    """Smallest gamma (within ``tol``) whose certificate re-verifies.

    A probe whose solver reports success but whose certificate fails the
    independent check counts as infeasible.  An upper end that fails for
    any reason other than proven infeasibility is halved (down to ``lo``).
    """
    t0 = time.perf_counter()
    backend = backend or ClarabelBackend()
    lo, hi = map(float, gamma_range)
    if lo > hi:
        raise ValueError("empty gamma range")
    get = assembler if callable(assembler) and not isinstance(assembler, PsiProgram) else (lambda g: assembler)
    hist = []

    ok, sol, cert, rep = _probe(get(hi), hi, backend)
    hist.append((hi, ok, sol.status))
    # a large upper end scales the Gram entries by gamma^2 and can fail the
    # absolute eigenvalue check; halve it unless the solver proved infeasibility
    while not ok and sol.status != "infeasible" and 0.5 * hi > lo:
        hi *= 0.5
        ok, sol, cert, rep = _probe(get(hi), hi, backend)
        hist.append((hi, ok, sol.status))
    if not ok:
        return GainResult(False, None, None, rep, hist, get(hi), None, time.perf_counter() - t0)
    best = (hi, sol, cert, rep)
    if lo < hi and lo > 0:
        ok, sol, cert, rep = _probe(get(lo), lo, backend)
        hist.append((lo, ok, sol.status))
        if ok:
            best = (lo, sol, cert, rep)
            hi = lo
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        ok, sol, cert, rep = _probe(get(mid), mid, backend)
        hist.append((mid, ok, sol.status))
        if ok:
            hi = mid
            best = (mid, sol, cert, rep)
        else:
            lo = mid
    g, sol, cert, rep = best
    return GainResult(True, g, cert, rep, hist, get(g), sol.x, time.perf_counter() - t0)


def check_supply(pp: PsiProgram, backend=None, gamma: float | None = None) -> GainResult:
    """Single feasibility check (supply rate without gain placeholder)."""
    t0 = time.perf_counter()
    backend = backend or ClarabelBackend()
    param = None if gamma is None else gamma**2
    sol = pp.prog.solve(backend, param=param)
    if not sol.ok:
        return GainResult(False, None, None, None, [(gamma, False, sol.status)], pp, None, time.perf_counter() - t0)
    cert = pp.prog.certificate(sol, param=param, meta={"gamma": gamma})
    rep = verify_certificate(cert)
    return GainResult(bool(rep.passed), gamma, cert, rep, [(gamma, rep.passed, sol.status)], pp, sol.x,
                      time.perf_counter() - t0)


def storage_gradient_check(
    result: GainResult, f: Callable, supply: SupplyRate, P: np.ndarray, nx: int, tol: float = 1e-6
) -> float:
    """``max(dlambda/dx f - s)`` over points ``P``; should be ``<= tol`` for sound certificates."""
    storage = result.program.storage
    X = result.storage_matrices()[0]
    lam = storage.storage(X)
    grads = [lam.partial(j) for j in range(nx)]
    P = np.atleast_2d(P)
    F = np.atleast_2d(f(P))
    lamdot = sum(np.atleast_1d(g(P)) * F[:, j] for j, g in enumerate(grads))
    return float(np.max(lamdot - supply.value(P, result.gamma)))


def certificate_bundle(result: GainResult, extra: dict | None = None) -> dict:
    """JSON-ready record: gamma, storage, Gram blocks, tolerances, verification."""
    x = result.solution_x
    out = {
        "certified": result.certified,
        "gamma": result.gamma,
        "history": [[g, bool(ok), st] for g, ok, st in result.history],
        "runtime_s": result.runtime,
        "tolerances": {"eig": 1e-6, "residual": 1e-6},
    }
    if result.certified and result.certificate is not None:
        out["storage"] = {
            lab: M.tolist() for lab, M in zip(result.program.storage_labels, result.storage_matrices())
        }
        if result.program.storage is not None:
            out["storage_monomials"] = [list(next(iter(m.terms))) for m in result.program.storage.monomials]
        out["verification"] = {
            "passed": result.report.passed,
            "min_eig": result.report.min_eig,
            "max_residual": result.report.max_residual,
        }
        out["certificate"] = result.certificate.to_dict()
    if extra:
        out.update(extra)
    return out


def data_hash(*arrays) -> str:
    h = hashlib.sha256()
    for a in arrays:
        h.update(np.ascontiguousarray(np.asarray(a, dtype=float)).tobytes())
    return h.hexdigest()[:16]


def verify_dissipativity(
    model_builder: Callable,
    samples,
    op: OperationSet,
    supply: SupplyRate,
    storage: StorageTemplate | None = None,
    degrees: MultiplierDegrees | None = None,
    gamma_range: tuple[float, float] | None = None,
    tol: float = 1e-2,
    backend=None,
) -> GainResult:
    """Rank check, ellipsoid, Psi assembly, solve and re-verification.

    ``model_builder`` returns the :class:`SectorModel`; errors carry the stage.
    """
    from .setmem import EllipsoidError, fit_envelope, rank_check

    model = model_builder() if callable(model_builder) else model_builder
    rc = rank_check(samples, model)
    if not rc:
        raise CertificationError("rank-check", f"regressor not full row rank (sigma_min={rc.sigma_min:.3g})")
    try:
        env = fit_envelope(model, samples)
    except EllipsoidError as exc:
        raise CertificationError("ellipsoid", str(exc)) from exc
    try:
        pp = assemble_psi(env, op, supply, storage, degrees)
    except ValueError as exc:
        raise CertificationError("assemble", str(exc)) from exc
    if supply.gain_part is not None:
        res = l2_gain_bisect(pp, gamma_range or (1e-3, 100.0), tol, backend)
    else:
        res = check_supply(pp, backend)
    res.program.info["envelope"] = env
    return res
