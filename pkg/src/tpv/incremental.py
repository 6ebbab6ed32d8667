"""Incremental L2-gain via differential dissipativity.

The SOS matrix acts on ``sigma = [v0; Y; w0; W; dxi]`` with

* ``v0 = J(xi) dxi`` (true Jacobian times direction),
* ``Y[a, c] = f_a(xi) dx_c`` (only needed for a state-dependent metric),
* ``w0``, ``W`` the matching Taylor parts ``A (dphi/dxi) dxi`` and ``dx_c A phi``,
* ``dxi = (dx, du)``.

Envelopes enter through the Jacobian-direction sector bound, the scaled sector
bound for ``dx_c f`` and the ellipsoid, each with its own SOS multiplier.
For a known model the lifts ``w0`` and ``W`` are substituted.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .dissipativity import (
    Cell,
    GainResult,
    MultiplierDegrees,
    OperationSet,
    Partition,
    PsiProgram,
    _even_down,
    _even_up,
    l2_gain_bisect,
)
from .polyalg import PolyMatrix, Polynomial
from .setmem import Envelope
from .sos import PARAM, AffPoly, AffPolyMatrix, SosProgram

MU = 1e-6


@dataclass
class DifferentialSupply:
    """``[dx; du]^T [Q S; S^T R] [dx; du]``; ``R`` may carry the gain placeholder."""

    Q: np.ndarray
    S: np.ndarray
    R: np.ndarray
    gain_form: bool = False

    def __post_init__(self):
        self.Q = np.atleast_2d(np.asarray(self.Q, dtype=float))
        self.S = np.atleast_2d(np.asarray(self.S, dtype=float))
        self.R = np.atleast_2d(np.asarray(self.R, dtype=float))
        if not np.allclose(self.Q, self.Q.T):
            raise ValueError("Q must be symmetric")
        if not np.allclose(self.R, self.R.T):
            raise ValueError("R must be symmetric")
        if np.linalg.eigvalsh(self.Q)[-1] > 1e-12:
            raise ValueError("Q must be negative semidefinite")

    @classmethod
    def gain(cls, nx: int, nu: int) -> "DifferentialSupply":
        """``Q = -I``, ``S = 0``, ``R = gamma^2 I`` with gamma left open."""
        return cls(-np.eye(nx), np.zeros((nx, nu)), np.eye(nu), gain_form=True)

    def block(self) -> np.ndarray:
        return np.block([[self.Q, self.S], [self.S.T, self.R]])

    def to_dict(self, gamma: float | None = None) -> dict:
        R = self.R * (gamma**2 if (self.gain_form and gamma is not None) else 1.0)
        return {"Q": self.Q.tolist(), "S": self.S.tolist(), "R": R.tolist(), "gain_form": self.gain_form}


@dataclass
class MetricTemplate:
    """Constant metric (``degree=0``) or polynomial SOS-matrix metric in the state."""

    degree: int = 0
    mu: float = MU

    @property
    def constant(self) -> bool:
        return self.degree == 0


def _psd_affmatrix(prog: SosProgram, nx: int, nvars: int, metric: MetricTemplate, xvars):
    """Metric entries as AffPolys; constraint ``M - mu I`` SOS (or PSD)."""
    if metric.constant:
        idx = prog.sym_matrix(nx, psd=True, shift=metric.mu, label="M")
        return [[AffPoly.from_var(nvars, int(idx[i, j])) for j in range(nx)] for i in range(nx)]
    if metric.degree % 2:
        raise ValueError("metric degree must be even")
    ent = [[None] * nx for _ in range(nx)]
    for i in range(nx):
        for j in range(i, nx):
            p = prog.free_poly(xvars, metric.degree, label=f"M[{i},{j}]")
            ent[i][j] = ent[j][i] = p
    Mshift = AffPolyMatrix([[ent[i][j].copy() for j in range(nx)] for i in range(nx)])
    for i in range(nx):
        Mshift.entries[i][i].iadd(AffPoly.from_const(nvars, -metric.mu))
    prog.add_sos(Mshift, "metric")
    return ent


def _layout(envs: Sequence[Envelope], nx: int, n: int, constant: bool):
    """Column offsets of the lifted blocks."""
    off = 0
    lay = {"v0": off}
    off += nx
    if not constant:
        lay["Y"] = off  # index off + a*nx + c  ->  f_a dx_c
        off += nx * nx
    w0, W = {}, {}
    for e, env in enumerate(envs):
        if env.ellipsoid.singleton:
            continue
        for g, grp in enumerate(env.model.groups):
            w0[(e, g)] = off
            off += len(grp.outputs)
            if not constant:
                for c in range(nx):
                    W[(e, g, c)] = off
                    off += len(grp.outputs)
    lay["w0"], lay["W"] = w0, W
    lay["dxi"] = off
    off += n
    lay["K"] = off
    return lay


def _lin_comb(coefs, polys, n):
    acc = Polynomial.zero(n)
    for c, p in zip(coefs, polys):
        if c:
            acc = acc + p.scale(c)
    return acc


def _quad_form(Pinv, a, b, n):
    acc = Polynomial.zero(n)
    for i in range(len(a)):
        for j in range(len(b)):
            if Pinv[i, j]:
                acc = acc + (a[i] * b[j]).scale(Pinv[i, j])
    return acc


def _fixed_degree_inc(envs, constant: bool) -> int:
    d = 2
    for env in envs:
        for grp in env.model.groups:
            dphi = max(p.degree for p in grp.regressor)
            if grp.rjac is not None:
                d = max(d, max(r.degree for r in grp.rjac))
            d = max(d, 2 * max(dphi - 1, 0))
            if not constant:
                d = max(d, 2 * dphi, grp.rpoly.degree)
    return _even_up(d)


def _inc_degrees(envs, ineqs, constant, md: MultiplierDegrees):
    D = md.target if md.target is not None else _fixed_degree_inc(envs, constant)
    dp = max((p.degree for p in ineqs), default=2)
    drj = max(max((r.degree for r in (grp.rjac or [])), default=0) for env in envs for grp in env.model.groups)
    dphi = max(max(p.degree for p in grp.regressor) for env in envs for grp in env.model.groups)
    return {
        "target": D,
        "t": md.t if md.t is not None else _even_down(D - dp),
        "tau_sec": md.tau_sec if md.tau_sec is not None else _even_down(D - drj),
        "tau_sm": md.tau_sm if md.tau_sm is not None else _even_down(D - 2 * max(dphi - 1, 0)),
    }


def _build_psi_tilde(
    prog: SosProgram,
    envs: Sequence[Envelope],
    ineqs: Sequence[Polynomial],
    supply: DifferentialSupply,
    Ment,
    nx: int,
    nu: int,
    deg: dict,
    vars_,
    constant: bool,
    label: str,
    full_T: bool = False,
) -> AffPolyMatrix:
    n = nx + nu
    lay = _layout(envs, nx, n, constant)
    K = lay["K"]
    dxi = lay["dxi"]
    v0 = lay["v0"]
    Psi = AffPolyMatrix.zeros(K, K, n)
    one = Polynomial.constant(n, 1.0)

    # supply
    W = supply.block()
    for i in range(n):
        for j in range(i, n):
            if i >= nx and j >= nx and supply.gain_form:
                if supply.R[i - nx, j - nx]:
                    Psi.add_entry(dxi + i, dxi + j, AffPoly.from_var(n, PARAM, supply.R[i - nx, j - nx]))
            elif W[i, j]:
                Psi.add_entry(dxi + i, dxi + j, AffPoly.from_const(n, W[i, j]))
    # -2 dx^T M v0
    for b in range(nx):
        for c in range(nx):
            Psi.add_entry(dxi + b, v0 + c, Ment[b][c].scale(-1.0))
    # -sum_a dx^T dM/dx_a (f_a dx)
    if not constant:
        Y = lay["Y"]
        for a in range(nx):
            for b in range(nx):
                for c in range(nx):
                    d = Ment[b][c].partial(a)
                    if not d.is_zero():
                        Psi.add_entry(dxi + b, Y + a * nx + c, d.scale(-0.5))
    # operation set: sum_i T_i p_i on dxi
    for i, p in enumerate(ineqs):
        if full_T:
            Tm = AffPolyMatrix.zeros(n, n, n)
            for r in range(n):
                for s in range(r, n):
                    Tm.entries[r][s] = prog.free_poly(vars_, deg["t"], label=f"{label}T{i}[{r},{s}]")
                    Tm.entries[s][r] = Tm.entries[r][s]
            prog.add_sos(Tm, f"{label}T{i}")
            for r in range(n):
                for s in range(r, n):
                    Psi.add_entry(dxi + r, dxi + s, Tm.entries[r][s].mul_poly(p))
        else:
            for r in range(n):
                t = prog.sos_poly(vars_, deg["t"], label=f"{label}T{i}[{r}]")
                Psi.entries[dxi + r][dxi + r].iadd(t.mul_poly(p))

    for e, env in enumerate(envs):
        ell = env.ellipsoid
        for g, grp in enumerate(env.model.groups):
            nw = len(grp.outputs)
            phi = grp.regressor
            dphi = grp.regressor_jacobian()  # [j][r]
            doff = [[o.partial(j) for j in range(n)] for o in grp.offset]
            # Jacobian-direction sector: ||(J dxi)_g - dO dxi - w0||^2 - dxi^T Rt dxi
            L = PolyMatrix.zeros(nw, K, n)
            for r, out in enumerate(grp.outputs):
                L.entries[r][v0 + out] = one
                for j in range(n):
                    col = -doff[r][j]
                    if ell.singleton:
                        col = col - _lin_comb(ell.center[r], dphi[j], n)
                    L.entries[r][dxi + j] = col
                if not ell.singleton:
                    L.entries[r][lay["w0"][(e, g)] + r] = -one
            C = L.T() @ L
            if grp.rjac is None:
                raise ValueError("Jacobian envelope needs k >= 1")
            for j in range(n):
                C.entries[dxi + j][dxi + j] = C.entries[dxi + j][dxi + j] - grp.rjac[j]
            tau = prog.sos_poly(vars_, deg["tau_sec"], label=f"{label}tau_sec0[{e},{g}]")
            Psi.add_scaled_polymatrix(tau, C)
            if not ell.singleton:
                o = lay["w0"][(e, g)]
                L2 = PolyMatrix.zeros(nw, K, n)
                for r in range(nw):
                    L2.entries[r][o + r] = one
                    for j in range(n):
                        L2.entries[r][dxi + j] = -_lin_comb(ell.center[r], dphi[j], n)
                C2 = L2.T() @ L2
                for i in range(n):
                    for j in range(i, n):
                        qf = _quad_form(ell.P_inv, dphi[i], dphi[j], n)
                        if not qf.is_zero():
                            C2.entries[dxi + i][dxi + j] = C2.entries[dxi + i][dxi + j] - qf
                            if i != j:
                                C2.entries[dxi + j][dxi + i] = C2.entries[dxi + j][dxi + i] - qf
                tsm = prog.sos_poly(vars_, deg["tau_sm"], label=f"{label}tau_sm0[{e},{g}]")
                Psi.add_scaled_polymatrix(tsm, C2)
            if constant:
                continue
            # scaled sector for dx_c f, and its ellipsoid
            Y = lay["Y"]
            phT_P_ph = _quad_form(ell.P_inv, phi, phi, n)
            for c in range(nx):
                L = PolyMatrix.zeros(nw, K, n)
                for r, out in enumerate(grp.outputs):
                    L.entries[r][Y + out * nx + c] = one
                    col = -grp.offset[r]
                    if ell.singleton:
                        col = col - _lin_comb(ell.center[r], phi, n)
                    else:
                        L.entries[r][lay["W"][(e, g, c)] + r] = -one
                    L.entries[r][dxi + c] = col
                C = L.T() @ L
                C.entries[dxi + c][dxi + c] = C.entries[dxi + c][dxi + c] - grp.rpoly
                tau = prog.sos_poly(vars_, deg["tau_sec"], label=f"{label}tau_sec{c + 1}[{e},{g}]")
                Psi.add_scaled_polymatrix(tau, C)
                if ell.singleton:
                    continue
                o = lay["W"][(e, g, c)]
                L2 = PolyMatrix.zeros(nw, K, n)
                for r in range(nw):
                    L2.entries[r][o + r] = one
                    L2.entries[r][dxi + c] = -_lin_comb(ell.center[r], phi, n)
                C2 = L2.T() @ L2
                C2.entries[dxi + c][dxi + c] = C2.entries[dxi + c][dxi + c] - phT_P_ph
                tsm = prog.sos_poly(vars_, deg["tau_sm"], label=f"{label}tau_sm{c + 1}[{e},{g}]")
                Psi.add_scaled_polymatrix(tsm, C2)
    return Psi


def _used_vars(envs, ineqs, n: int, nx: int, constant: bool) -> list[int]:
    """Variables that actually occur in the fixed data of the program."""
    act = set()

    def scan(p):
        for a, c in p.terms.items():
            act.update(j for j, e in enumerate(a) if e)

    for p in ineqs:
        scan(p)
    for env in envs:
        ell = env.ellipsoid
        for g, grp in enumerate(env.model.groups):
            for r in grp.rjac or []:
                scan(r)
            for o in grp.offset:
                scan(o)
            used = np.any(ell.center != 0, axis=0) | np.any(ell.P_inv != 0, axis=0)
            jac = grp.regressor_jacobian()
            for k, p in enumerate(grp.regressor):
                if not used[k]:
                    continue
                for j in range(n):
                    scan(jac[j][k])
                if not constant:
                    scan(p)
            if not constant:
                scan(grp.rpoly)
    if not constant:
        act.update(range(nx))
    return sorted(act) or [0]


def assemble_psi_incremental(
    envs: Envelope | Sequence[Envelope],
    op: OperationSet,
    supply: DifferentialSupply | None = None,
    metric: MetricTemplate | None = None,
    degrees: MultiplierDegrees | None = None,
    prune: bool = True,
    full_T: bool = False,
) -> PsiProgram:
    envs = [envs] if isinstance(envs, Envelope) else list(envs)
    for env in envs:
        if env.model.basis is not None and env.model.basis.k < 1:
            raise ValueError("incremental analysis needs Taylor order k >= 1")
    nx, nu = op.nx, op.nu
    n = nx + nu
    supply = supply or DifferentialSupply.gain(nx, nu)
    metric = metric or MetricTemplate()
    md = degrees or MultiplierDegrees()
    deg = _inc_degrees(envs, op.ineqs, metric.constant, md)
    prog = SosProgram(n, prune=prune)
    vars_ = _used_vars(envs, op.ineqs, n, nx, metric.constant)
    Ment = _psd_affmatrix(prog, nx, n, metric, list(range(nx)))
    Psi = _build_psi_tilde(prog, envs, op.ineqs, supply, Ment, nx, nu, deg, vars_, metric.constant, "", full_T)
    prog.add_sos(Psi, "PsiTilde")
    return PsiProgram(prog, ["M"] if metric.constant else [], None,
                      {"degrees": deg, "psi_size": Psi.rows, "vars": vars_, "metric_degree": metric.degree})


def assemble_psi_incremental_partitioned(
    envs: Sequence[Envelope],
    partition: Partition,
    input_ineqs: Sequence[Polynomial],
    nx: int,
    nu: int,
    supply: DifferentialSupply | None = None,
    metric: MetricTemplate | None = None,
    degrees: MultiplierDegrees | None = None,
    prune: bool = True,
) -> PsiProgram:
    """Common metric, one ``Psi~`` per cell using that cell's envelopes."""
    n = nx + nu
    supply = supply or DifferentialSupply.gain(nx, nu)
    metric = metric or MetricTemplate()
    md = degrees or MultiplierDegrees()
    prog = SosProgram(n, prune=prune)
    Ment = _psd_affmatrix(prog, nx, n, metric, list(range(nx)))
    degs = []
    for j, cell in enumerate(partition.cells):
        cenvs = [envs[i] for i in cell.envelopes]
        ineqs = list(cell.ineqs) + list(input_ineqs)
        deg = _inc_degrees(cenvs, ineqs, metric.constant, md)
        degs.append(deg)
        vars_ = _used_vars(cenvs, ineqs, n, nx, metric.constant)
        Psi = _build_psi_tilde(prog, cenvs, ineqs, supply, Ment, nx, nu, deg, vars_, metric.constant, f"cell{j}:")
        prog.add_sos(Psi, f"PsiTilde{j}")
    return PsiProgram(prog, ["M"] if metric.constant else [], None, {"degrees": degs, "cells": len(partition.cells)})


def incremental_l2_gain_bisect(assembler, gamma_range=(0.0, 100.0), tol: float = 1e-2, backend=None) -> GainResult:
    return l2_gain_bisect(assembler, gamma_range, tol, backend)


@dataclass
class IncrementalClaim:
    """Incremental dissipativity inferred from a differential certificate."""

    Q: np.ndarray
    S: np.ndarray
    R: np.ndarray
    gamma: float | None
    certificate: object
    statement: str = field(
        default="differential dissipativity with Q <= 0 on the operation set implies incremental dissipativity"
    )

    def to_dict(self) -> dict:
        return {
            "Q": self.Q.tolist(), "S": self.S.tolist(), "R": self.R.tolist(),
            "gamma": self.gamma, "statement": self.statement,
        }


def incremental_from_differential(result: GainResult, supply: DifferentialSupply) -> IncrementalClaim:
    if np.linalg.eigvalsh(supply.Q)[-1] > 1e-12:
        raise ValueError("Q must be negative semidefinite")
    if not result.certified:
        raise ValueError("no differential certificate to wrap")
    R = supply.R * (result.gamma**2 if supply.gain_form else 1.0)
    return IncrementalClaim(supply.Q, supply.S, R, result.gamma if supply.gain_form else None, result.certificate)


def metric_value(result: GainResult) -> np.ndarray:
    """Constant metric matrix ``M`` of a certificate (includes the ``mu`` shift back)."""
    idx = result.program.prog.named["M"]
    return result.solution_x[idx - 1]
