"""Data-consistent Taylor-coefficient sets and their ellipsoidal outer bound.

Every sample ``(x, y, eps)`` constrains the coefficient matrix through
``||A z(x) - y||^2 <= q`` where ``q`` collects remainder and noise.  The
intersection of these slabs is outer-approximated by one matrix ellipsoid

    {A : (A - A_c)^T (A - A_c) <= P^{-1}}

obtained from an LMI (S-procedure) and a dualization step.  The LMI is solved
in normalised coordinates (least-squares shift, output scaling, regressor
scaling) and mapped back.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .sos.backends import ClarabelBackend
from .sos.sdp import SdpProblem
from .taylor import SectorBound, SectorModel, TaylorBasis, joint_model

log = logging.getLogger(__name__)

Q_FLOOR = 1e-12
RANK_TOL = 1e-8
MEMBER_TOL = 1e-8
COND_MAX = 1e12
LMI_MARGIN = 1e-7


class EllipsoidError(RuntimeError):
    """Outer-ellipsoid LMI failed (infeasible, numerical trouble or near-singular)."""


@dataclass
class Sample:
    x_tilde: np.ndarray
    y_tilde: np.ndarray
    eps: float | np.ndarray

    def __post_init__(self):
        self.x_tilde = np.atleast_1d(np.asarray(self.x_tilde, dtype=float))
        self.y_tilde = np.atleast_1d(np.asarray(self.y_tilde, dtype=float))
        e = np.asarray(self.eps, dtype=float)
        if np.any(e < 0):
            raise ValueError("noise bound must be non-negative")
        self.eps = float(e) if e.ndim == 0 else e


def samples_from_arrays(X, Y, eps) -> list[Sample]:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Y = np.asarray(Y, dtype=float).reshape(X.shape[0], -1)
    eps = np.broadcast_to(np.asarray(eps, dtype=float), (X.shape[0],) if np.ndim(eps) <= 1 else np.shape(eps))
    return [Sample(X[i], Y[i], eps[i]) for i in range(X.shape[0])]


def _stack(samples: Sequence[Sample]):
    X = np.array([s.x_tilde for s in samples])
    Y = np.array([s.y_tilde for s in samples])
    return X, Y


def _group_eps(samples: Sequence[Sample], outputs: Sequence[int]) -> np.ndarray:
    out = np.empty(len(samples))
    for i, s in enumerate(samples):
        e = s.eps
        out[i] = e if np.ndim(e) == 0 else float(np.linalg.norm(np.asarray(e)[list(outputs)]))
    return out


def compute_q(sample: Sample, sector: SectorBound) -> float:
    """``(sqrt(sum_j Rabs_j(x)) + eps)^2``, floored at ``1e-12``."""
    rabs = float(np.atleast_1d(sector.rabs_sum(sample.x_tilde[None, :]))[0])
    eps = sample.eps if np.ndim(sample.eps) == 0 else float(np.linalg.norm(sample.eps))
    return max((np.sqrt(rabs) + eps) ** 2, Q_FLOOR)


@dataclass
class RankResult:
    ok: bool
    sigma_min: float
    sigma_max: float
    singular_values: np.ndarray

    def __bool__(self):
        return self.ok


def rank_check_matrix(Z: np.ndarray, rtol: float = RANK_TOL) -> RankResult:
    """Full row rank test for a regressor matrix ``Z`` (``nz x S``)."""
    nz, S = Z.shape
    if S == 0:
        return RankResult(False, 0.0, 0.0, np.zeros(0))
    sv = np.linalg.svd(Z, compute_uv=False)
    smax = float(sv[0]) if sv.size else 0.0
    smin = float(sv[-1]) if S >= nz else 0.0
    ok = S >= nz and smax > 0 and smin > rtol * smax
    return RankResult(bool(ok), smin, smax, sv)


def rank_check(samples: Sequence[Sample], basis: TaylorBasis | SectorModel) -> RankResult:
    if not samples:
        return RankResult(False, 0.0, 0.0, np.zeros(0))
    X, _ = _stack(samples)
    if isinstance(basis, TaylorBasis):
        Z = basis.eval(X).T
    else:
        Z = np.vstack([basis.regressor_values(g, X) for g in range(len(basis.groups))]).T
    return rank_check_matrix(Z)


@dataclass
class DeltaBlock:
    """``[z z^T, -z y^T; -y z^T, y y^T - q I]`` kept in factored form."""

    z: np.ndarray
    y: np.ndarray
    q: float

    @property
    def matrix(self) -> np.ndarray:
        z, y = self.z[:, None], self.y[:, None]
        return np.block([[z @ z.T, -z @ y.T], [-y @ z.T, y @ y.T - self.q * np.eye(len(self.y))]])


def slab_data(model: SectorModel, samples: Sequence[Sample]):
    """Per sample and group: regressor, target, ``sqrt(Rabs)`` and noise bound.

    ``q = (a + e)^2``; returned as stacked arrays ``(Z, T, a, e)`` with one
    row per (group, sample).
    """
    X, Y = _stack(samples)
    Zs, Ts, As, Es = [], [], [], []
    for g, grp in enumerate(model.groups):
        Zs.append(model.regressor_values(g, X))
        T = Y[:, grp.outputs]
        if any(not o.is_zero() for o in grp.offset):
            T = T - grp.eval_offset(X)
        Ts.append(T)
        As.append(np.sqrt(np.maximum(np.atleast_1d(grp.rabs(X)), 0.0)) * np.ones(len(samples)))
        Es.append(_group_eps(samples, grp.outputs))
    return np.vstack(Zs), np.vstack(Ts), np.concatenate(As), np.concatenate(Es)


def model_blocks(model: SectorModel, samples: Sequence[Sample]) -> list[DeltaBlock]:
    """One block per sample and sector group (targets have known offsets removed)."""
    if not samples:
        return []
    Z, T, a, e = slab_data(model, samples)
    q = np.maximum((a + e) ** 2, Q_FLOOR)
    return [DeltaBlock(Z[i], T[i], float(q[i])) for i in range(len(q))]


def min_noise_scale(model: SectorModel, samples: Sequence[Sample], tol: float = 1e-9):
    """Smallest ``t >= 0`` such that some ``A`` satisfies every slab with noise ``t * eps``.

    Solves ``min t s.t. ||A z_i - y_i|| <= a_i + t e_i`` (an SOCP).  Returns
    ``(t, A)``; ``t = inf`` and ``A = None`` when no scale works (possible
    only if some ``e_i = 0``).  The data-consistent set is non-empty iff
    ``t <= 1``.
    """
    import clarabel
    import scipy.sparse as sp

    Z, T, a, e = slab_data(model, samples)
    m, nth = Z.shape
    nw = T.shape[1]
    nv = nw * nth + 1
    it = nv - 1
    # row scaling keeps the SOCP well conditioned
    s = np.maximum(np.maximum(np.linalg.norm(T, axis=1), a + e), 1e-12)
    rows, cols, vals, b, cones = [], [], [], [], []
    r = 0
    rows.append(r); cols.append(it); vals.append(-1.0); b.append(0.0); r += 1
    cones.append(clarabel.NonnegativeConeT(1))
    for i in range(m):
        rows.append(r); cols.append(it); vals.append(-e[i] / s[i]); b.append(a[i] / s[i])
        r += 1
        for k in range(nw):
            for c in range(nth):
                if Z[i, c] != 0.0:
                    rows.append(r); cols.append(k * nth + c); vals.append(Z[i, c] / s[i])
            b.append(T[i, k] / s[i])
            r += 1
        cones.append(clarabel.SecondOrderConeT(nw + 1))
    G = sp.csc_matrix((vals, (rows, cols)), shape=(r, nv))
    q = np.zeros(nv)
    q[it] = 1.0
    st = clarabel.DefaultSettings()
    st.verbose = False
    st.tol_feas = st.tol_gap_abs = st.tol_gap_rel = tol
    sol = clarabel.DefaultSolver(sp.csc_matrix((nv, nv)), q, G, np.asarray(b), cones, st).solve()
    if str(sol.status) not in ("Solved", "AlmostSolved"):
        return float("inf"), None
    x = np.asarray(sol.x)
    return max(float(x[it]), 0.0), x[: nw * nth].reshape(nw, nth)


def slab_violation(model: SectorModel, samples: Sequence[Sample], A) -> np.ndarray:
    """``||A z_i - y_i|| - sqrt(q_i)`` per (group, sample); ``<= 0`` for members."""
    Z, T, a, e = slab_data(model, samples)
    return np.linalg.norm(Z @ np.asarray(A).T - T, axis=1) - (a + e)


def build_delta_blocks(samples: Sequence[Sample], basis: TaylorBasis, sector: SectorBound) -> list[DeltaBlock]:
    return model_blocks(joint_model(sector), samples)


@dataclass
class DualQuadratic:
    """``[A^T; I]^T Delta_i [A^T; I] <= 0``, i.e. ``||A z - y||^2 <= q``."""

    block: DeltaBlock

    def value(self, A) -> np.ndarray:
        A = np.atleast_2d(A)
        r = A @ self.block.z - self.block.y
        return np.outer(r, r) - self.block.q * np.eye(len(r))

    def satisfied(self, A, tol: float = 0.0) -> bool:
        A = np.atleast_2d(A)
        r = A @ self.block.z - self.block.y
        return float(r @ r) - self.block.q <= tol


def dual_quadratic_constraints(blocks: Sequence[DeltaBlock]) -> list[DualQuadratic]:
    for b in blocks:
        if b.q <= 0:
            raise ValueError("dualization needs q > 0")
    return [DualQuadratic(b) for b in blocks]


def dualize(M: np.ndarray, n1: int) -> np.ndarray:
    """``-J M^{-1} J`` with ``J = diag(I_n1, -I)``; an involution on invertible ``M``."""
    n = M.shape[0]
    J = np.diag(np.r_[np.ones(n1), -np.ones(n - n1)])
    return -J @ np.linalg.inv(M) @ J


@dataclass
class CoefficientEllipsoid:
    """``{A : (A - center)^T (A - center) <= P^{-1}}`` with ``P = delta1p``.

    ``singleton`` ellipsoids (``P^{-1} = 0``) represent a known model.
    """

    center: np.ndarray
    P_inv: np.ndarray
    delta1p: np.ndarray | None
    delta2p: np.ndarray | None
    eta: np.ndarray = field(default_factory=lambda: np.zeros(0))
    gamma: float = float("nan")
    singleton: bool = False
    diagnostics: dict = field(default_factory=dict)

    @property
    def nz(self) -> int:
        return self.center.shape[1]

    @property
    def ny(self) -> int:
        return self.center.shape[0]

    @classmethod
    def point(cls, A) -> "CoefficientEllipsoid":
        A = np.atleast_2d(np.asarray(A, dtype=float))
        return cls(A, np.zeros((A.shape[1], A.shape[1])), None, None, singleton=True)

    @property
    def delta_star(self) -> np.ndarray:
        Ac = self.center
        return np.block([[Ac.T @ Ac - self.P_inv, -Ac.T], [-Ac, np.eye(self.ny)]])

    @property
    def delta_p(self) -> np.ndarray:
        if self.singleton:
            raise ValueError("singleton ellipsoid has no finite Delta_p")
        P, D2 = self.delta1p, self.delta2p
        return np.block([[P, D2], [D2.T, D2.T @ np.linalg.solve(P, D2) - np.eye(self.ny)]])

    def congruence(self, A) -> np.ndarray:
        E = np.atleast_2d(np.asarray(A, dtype=float)) - self.center
        return E.T @ E - self.P_inv

    def membership(self, A, tol: float = MEMBER_TOL) -> bool:
        C = self.congruence(A)
        return float(np.linalg.eigvalsh(0.5 * (C + C.T))[-1]) <= tol

    def radius(self, Phi) -> np.ndarray:
        """``sqrt(phi^T P^{-1} phi)`` row-wise: radius of ``{A phi}`` around ``center phi``."""
        Phi = np.atleast_2d(Phi)
        return np.sqrt(np.maximum(np.einsum("ij,jk,ik->i", Phi, self.P_inv, Phi), 0.0))

    def boundary_member(self, direction_out: np.ndarray, direction_in: np.ndarray) -> np.ndarray:
        """``center + u v^T P^{-1/2}`` with unit ``u, v``: a member on the boundary."""
        u = direction_out / np.linalg.norm(direction_out)
        v = direction_in / np.linalg.norm(direction_in)
        w, V = np.linalg.eigh(self.P_inv)
        half = V @ np.diag(np.sqrt(np.maximum(w, 0))) @ V.T
        return self.center + np.outer(u, v) @ half

    def sample_members(self, n: int, rng: np.random.Generator) -> np.ndarray:
        w, V = np.linalg.eigh(self.P_inv)
        half = V @ np.diag(np.sqrt(np.maximum(w, 0))) @ V.T
        out = []
        for _ in range(n):
            K = rng.standard_normal((self.ny, self.nz))
            K /= max(np.linalg.norm(K, 2), 1e-300)
            K *= rng.uniform() ** (1.0 / (self.ny * self.nz))
            out.append(self.center + K @ half)
        return np.array(out)

    def to_dict(self) -> dict:
        return {
            "center": self.center.tolist(),
            "P_inv": self.P_inv.tolist(),
            "delta1p": None if self.delta1p is None else self.delta1p.tolist(),
            "delta2p": None if self.delta2p is None else self.delta2p.tolist(),
            "gamma": self.gamma,
            "singleton": self.singleton,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CoefficientEllipsoid":
        arr = lambda v: None if v is None else np.array(v, dtype=float)
        return cls(
            np.atleast_2d(arr(d["center"])), arr(d["P_inv"]), arr(d.get("delta1p")), arr(d.get("delta2p")),
            gamma=d.get("gamma", float("nan")), singleton=d.get("singleton", False),
        )


def membership(ell: CoefficientEllipsoid, A) -> bool:
    return ell.membership(A)


def _normalise(blocks: Sequence[DeltaBlock]):
    Z = np.array([b.z for b in blocks])
    Y = np.array([b.y for b in blocks])
    q = np.array([b.q for b in blocks])
    A_ls = np.linalg.lstsq(Z, Y, rcond=None)[0].T
    d = np.sqrt(np.mean(Z**2, axis=0))
    d[d == 0] = 1.0
    s_y = float(np.sqrt(np.mean(q)))
    Zn = Z / d
    Rn = (Y - Z @ A_ls.T) / s_y
    qn = q / s_y**2
    return A_ls, d, s_y, Zn, Rn, qn


def solve_outer_ellipsoid(
    blocks: Sequence[DeltaBlock],
    gamma_objective: bool = True,
    backend=None,
    margin: float = LMI_MARGIN,
) -> CoefficientEllipsoid:
    """LMI outer bound of the intersection of all sample constraints."""
    if not blocks:
        raise ValueError("no data blocks")
    nz, ny = len(blocks[0].z), len(blocks[0].y)
    Zt = np.array([b.z for b in blocks]).T
    if not rank_check_matrix(Zt):
        raise EllipsoidError("regressor matrix is not full row rank")
    A_ls, d, s_y, Zn, Rn, qn = _normalise(blocks)
    S = len(blocks)

    prob = SdpProblem()
    Pidx = np.zeros((nz, nz), dtype=int)
    for j in range(nz):
        for i in range(j + 1):
            Pidx[i, j] = Pidx[j, i] = prob.new_vars(1)[0]
    D2 = prob.new_vars(nz * ny).reshape(nz, ny)
    eta = prob.new_vars(S)
    gam = int(prob.new_vars(1)[0])
    for v in eta:
        prob.add_nonneg({int(v): 1.0})

    N = 2 * nz + ny
    ent: dict = {}

    def add(i, j, v, c):
        if i > j:
            i, j = j, i
        e = ent.setdefault((i, j), {})
        e[v] = e.get(v, 0.0) + c

    # F = -(LMI) - margin*I >= 0
    for j in range(nz):
        for i in range(j + 1):
            add(i, j, int(Pidx[i, j]), -1.0)
            add(nz + ny + i, nz + ny + j, int(Pidx[i, j]), 1.0)
    for i in range(nz):
        for k in range(ny):
            add(i, nz + k, int(D2[i, k]), -1.0)
            add(nz + k, nz + ny + i, int(D2[i, k]), -1.0)
    for k in range(ny):
        add(nz + k, nz + k, 0, 1.0)
    for s, v in enumerate(eta):
        v = int(v)
        z, r, qv = Zn[s], Rn[s], qn[s]
        for j in range(nz):
            for i in range(j + 1):
                if z[i] * z[j] != 0.0:
                    add(i, j, v, z[i] * z[j])
        for i in range(nz):
            for k in range(ny):
                if z[i] * r[k] != 0.0:
                    add(i, nz + k, v, -z[i] * r[k])
        for k in range(ny):
            for l in range(k + 1):
                c = r[l] * r[k] - (qv if k == l else 0.0)
                if c != 0.0:
                    add(nz + l, nz + k, v, c)
    for i in range(N):
        add(i, i, 0, -margin)
    prob.add_psd(N, ent, "lmi")

    lo = 1e-9
    gent = {}
    for j in range(nz):
        for i in range(j + 1):
            e = {int(Pidx[i, j]): 1.0}
            if i == j:
                e[gam] = -1.0
            gent[(i, j)] = e
    prob.add_psd(nz, gent, "gamma")
    if gamma_objective:
        prob.add_nonneg({gam: -1.0, 0: 1e6})
        prob.set_objective({gam: -1.0})
    else:
        prob.add_eq({gam: 1.0, 0: -lo})

    sol = (backend or ClarabelBackend()).solve(prob)
    if not sol.ok:
        raise EllipsoidError(f"outer-ellipsoid LMI {sol.status} ({sol.raw_status})")
    x = sol.x
    Pn = x[Pidx - 1]
    D2n = x[D2 - 1]
    Pn = 0.5 * (Pn + Pn.T)
    if np.linalg.eigvalsh(Pn)[0] <= 0:
        raise EllipsoidError("Delta_1p not positive definite")
    Dp = np.block([[Pn, D2n], [D2n.T, D2n.T @ np.linalg.solve(Pn, D2n) - np.eye(ny)]])
    cond = float(np.linalg.cond(Dp))
    if not np.isfinite(cond) or cond > COND_MAX:
        raise EllipsoidError(f"Delta_p near singular (condition number {cond:.3g})")
    Acn = -np.linalg.solve(Pn, D2n).T
    Pinv_n = np.linalg.inv(Pn)
    Pinv_n = 0.5 * (Pinv_n + Pinv_n.T)

    Dinv = 1.0 / d
    center = A_ls + s_y * Acn * Dinv[None, :]
    P_inv = s_y**2 * (Dinv[:, None] * Pinv_n * Dinv[None, :])
    P = (d[:, None] * Pn * d[None, :]) / s_y**2
    delta2p = -P @ center.T
    return CoefficientEllipsoid(
        center, P_inv, P, delta2p, eta=x[eta - 1], gamma=float(x[gam - 1]),
        diagnostics={"cond_normalised": cond, "solve_time": sol.solve_time, "S": S, "s_y": s_y},
    )


# ---------------------------------------------------------------------------
# envelopes
# ---------------------------------------------------------------------------


@dataclass
class Envelope:
    """Polynomial sector model together with its coefficient ellipsoid."""

    model: SectorModel
    ellipsoid: CoefficientEllipsoid

    @property
    def omega(self) -> np.ndarray:
        return self.model.omega

    def _parts(self, X):
        X = np.atleast_2d(X)
        out = []
        for g, grp in enumerate(self.model.groups):
            Phi = self.model.regressor_values(g, X)
            c = Phi @ self.ellipsoid.center.T
            if any(not o.is_zero() for o in grp.offset):
                c = c + grp.eval_offset(X)
            rA = self.ellipsoid.radius(Phi)
            rR = np.sqrt(np.maximum(np.atleast_1d(grp.rpoly(X)), 0.0))
            out.append((grp, c, rA, rR))
        return out

    def min_sector(self, X, Y) -> np.ndarray:
        """``min_A p_sec`` per point and group, shape ``(N, G)``."""
        X = np.atleast_2d(X)
        Y = np.asarray(Y, dtype=float).reshape(X.shape[0], -1)
        cols = []
        for grp, c, rA, rR in self._parts(X):
            dist = np.linalg.norm(Y[:, grp.outputs] - c, axis=1)
            cols.append(np.maximum(dist - rA, 0.0) ** 2 - rR**2)
        return np.stack(cols, axis=1)

    def contains(self, X, Y, tol: float = 1e-8) -> np.ndarray:
        return np.all(self.min_sector(X, Y) <= tol, axis=1)

    def ball_violation(self, X, Y, eps) -> np.ndarray:
        """1 where some point of the ``eps``-ball around ``Y`` leaves the envelope."""
        X = np.atleast_2d(X)
        Y = np.asarray(Y, dtype=float).reshape(X.shape[0], -1)
        eps = np.broadcast_to(np.asarray(eps, dtype=float), (X.shape[0],))
        bad = np.zeros(X.shape[0], dtype=bool)
        for grp, c, rA, rR in self._parts(X):
            dist = np.linalg.norm(Y[:, grp.outputs] - c, axis=1)
            bad |= dist + eps > rA + rR
        return bad.astype(int)

    def output_bounds(self, X) -> list:
        """Per group: centre of the output ball and its radius."""
        return [(c, rA + rR) for _, c, rA, rR in self._parts(X)]


@dataclass
class EnvelopeSet:
    """Intersection of envelopes from several expansion points."""

    envelopes: list[Envelope]

    def min_sector(self, X, Y) -> np.ndarray:
        return np.concatenate([e.min_sector(X, Y) for e in self.envelopes], axis=1)

    def contains(self, X, Y, tol: float = 1e-8) -> np.ndarray:
        return np.all(self.min_sector(X, Y) <= tol, axis=1)

    def ball_violation(self, X, Y, eps) -> np.ndarray:
        v = np.zeros(np.atleast_2d(X).shape[0], dtype=int)
        for e in self.envelopes:
            v |= e.ball_violation(X, Y, eps)
        return v


def fit_envelope(model: SectorModel, samples: Sequence[Sample], gamma_objective: bool = True, backend=None) -> Envelope:
    rc = rank_check(samples, model)
    if not rc:
        raise EllipsoidError(f"rank check failed (sigma_min={rc.sigma_min:.3g}, sigma_max={rc.sigma_max:.3g})")
    ell = solve_outer_ellipsoid(model_blocks(model, samples), gamma_objective, backend)
    return Envelope(model, ell)


def min_sector_over_ellipsoid(ell: CoefficientEllipsoid, basis: TaylorBasis, sector: SectorBound, x, y) -> float:
    """Exact minimum of the sector polynomial over all ellipsoid members."""
    if ell.center.shape != (sector.ny, basis.nz):
        raise ValueError("ellipsoid does not match the basis")
    env = Envelope(joint_model(sector, k_jacobian=False), ell)
    return float(env.min_sector(np.atleast_2d(x), np.atleast_2d(y))[0, 0])
