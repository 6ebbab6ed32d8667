"""Taylor bases, Lagrange-remainder bounds and polynomial sector bounds.

The sector bound of order ``k`` around ``omega`` reads

    ||f(x) - A z(x)||^2 <= sum_i Rpoly_i(x),

where ``z`` collects ``(x - omega)^alpha / alpha!`` for ``|alpha| <= k`` and
``Rpoly_i`` is an even polynomial built from bounds ``M[i, alpha]`` on the
``(k+1)``-st derivatives of ``f_i``.

:class:`SectorModel` generalises the single joint bound to several *groups*
sharing one coefficient vector, which is how structural prior knowledge
(known offsets, unknown scalars, nonlinearities shared between outputs) is
encoded.  The unstructured case is a single group.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .polyalg import (
    MultiIndex,
    PolyMatrix,
    Polynomial,
    enumerate_multi_indices,
    mi_add,
    mi_factorial,
    shifted_monomial,
    unit_index,
)


class TaylorBasis:
    """Polynomials ``(x - omega)^alpha / alpha!`` for ``min_order <= |alpha| <= k``.

    ``min_order=1`` drops the constant term, which encodes ``f(omega) = 0``.
    """

    def __init__(self, omega: Sequence[float], k: int, min_order: int = 0):
        if k < 0:
            raise ValueError("order k must be >= 0")
        self.omega = np.asarray(omega, dtype=float).ravel()
        self.k = int(k)
        self.min_order = int(min_order)
        self.n = len(self.omega)
        self.indices: list[MultiIndex] = enumerate_multi_indices(self.n, self.min_order, self.k)
        self._fact = np.array([mi_factorial(a) for a in self.indices], dtype=float)
        self._E = np.array(self.indices, dtype=int).reshape(len(self.indices), self.n)
        self.z = [shifted_monomial(self.omega, a).scale(1.0 / f) for a, f in zip(self.indices, self._fact)]
        self._dz = None

    @property
    def nz(self) -> int:
        return len(self.indices)

    def __repr__(self):
        return f"TaylorBasis(omega={self.omega.tolist()}, k={self.k}, nz={self.nz})"

    def eval(self, X) -> np.ndarray:
        """``z`` at one point (``(nz,)``) or at a batch of points (``(N, nz)``)."""
        X = np.asarray(X, dtype=float)
        single = X.ndim == 1
        X = np.atleast_2d(X)
        D = X - self.omega
        Z = np.prod(D[:, None, :] ** self._E[None, :, :], axis=2) / self._fact
        return Z[0] if single else Z

    def jacobian_polys(self) -> list[list[Polynomial]]:
        """``dz[j][r] = d z_r / d x_j``."""
        if self._dz is None:
            self._dz = [[p.partial(j) for p in self.z] for j in range(self.n)]
        return self._dz

    def eval_jacobian(self, X) -> np.ndarray:
        """``dz/dx`` with shape ``(N, nz, n)``."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        D = X - self.omega
        out = np.zeros((X.shape[0], self.nz, self.n))
        for j in range(self.n):
            E = self._E.copy()
            coef = E[:, j].astype(float)
            E[:, j] = np.maximum(E[:, j] - 1, 0)
            out[:, :, j] = coef * np.prod(D[:, None, :] ** E[None, :, :], axis=2) / self._fact
        return out

    def taylor_coefficients(self, derivative: Callable[[int, MultiIndex], float], ny: int) -> np.ndarray:
        """Coefficient matrix ``A`` from a callable ``derivative(i, alpha)`` at omega."""
        return np.array([[derivative(i, a) for a in self.indices] for i in range(ny)], dtype=float)


def build_basis(omega: Sequence[float], k: int, min_order: int = 0) -> TaylorBasis:
    return TaylorBasis(omega, k, min_order)


@dataclass
class DerivativeBounds:
    """Bounds ``M[i, alpha] >= 0`` on ``(k+1)``-st order partial derivatives."""

    ny: int
    n: int
    order: int
    values: dict = field(default_factory=dict)

    def __post_init__(self):
        for (i, a), v in self.values.items():
            if v < 0:
                raise ValueError(f"negative bound M[{i},{a}]={v}")
            if sum(a) != self.order or len(a) != self.n or not 0 <= i < self.ny:
                raise ValueError(f"bound key {(i, a)} inconsistent with order {self.order}")
        self.values = {(int(i), tuple(a)): float(v) for (i, a), v in self.values.items()}

    @classmethod
    def uniform(cls, ny: int, n: int, k: int, value: float) -> "DerivativeBounds":
        vals = {(i, a): value for i in range(ny) for a in enumerate_multi_indices(n, k + 1, k + 1)}
        return cls(ny, n, k + 1, vals)

    @classmethod
    def on_support(cls, ny: int, n: int, k: int, support, value: float) -> "DerivativeBounds":
        """Common value on an explicit support ``[(i, alpha), ...]``."""
        return cls(ny, n, k + 1, {(i, tuple(a)): value for i, a in support})

    @classmethod
    def zero(cls, ny: int, n: int, k: int) -> "DerivativeBounds":
        return cls(ny, n, k + 1, {})

    def get(self, i: int, alpha) -> float:
        return self.values.get((i, tuple(alpha)), 0.0)

    def kappa(self, i: int) -> int:
        return sum(1 for (j, _), v in self.values.items() if j == i and v != 0.0)

    def support(self) -> list:
        return [key for key, v in self.values.items() if v != 0.0]

    def with_value(self, value: float) -> "DerivativeBounds":
        return DerivativeBounds(self.ny, self.n, self.order, {key: value for key in self.values})

    def scaled(self, beta: float) -> "DerivativeBounds":
        return DerivativeBounds(self.ny, self.n, self.order, {k: beta * v for k, v in self.values.items()})


def _check_pair(bounds: DerivativeBounds, basis: TaylorBasis) -> None:
    if bounds.order != basis.k + 1 or bounds.n != basis.n:
        raise ValueError("bounds do not match the basis order / dimension")


def remainder_abs(bounds: DerivativeBounds, basis: TaylorBasis, i: int, x) -> np.ndarray | float:
    """``(sum_{|a|=k+1} M[i,a]/a! |x - omega|^a)^2``; scalar or batch."""
    _check_pair(bounds, basis)
    X = np.asarray(x, dtype=float)
    single = X.ndim == 1
    X = np.atleast_2d(X)
    D = np.abs(X - basis.omega)
    acc = np.zeros(X.shape[0])
    for (j, a), m in bounds.values.items():
        if j != i or m == 0.0:
            continue
        acc += m / mi_factorial(a) * np.prod(D ** np.array(a), axis=1)
    out = acc**2
    return float(out[0]) if single else out


def remainder_poly(bounds: DerivativeBounds, basis: TaylorBasis, i: int) -> Polynomial:
    """``sum_{|a|=k+1} kappa_i M[i,a]^2/a!^2 (x - omega)^(2a)``."""
    _check_pair(bounds, basis)
    kappa = bounds.kappa(i)
    out = Polynomial.zero(basis.n)
    for (j, a), m in bounds.values.items():
        if j != i or m == 0.0:
            continue
        two_a = tuple(2 * e for e in a)
        out = out + shifted_monomial(basis.omega, two_a).scale(kappa * m**2 / mi_factorial(a) ** 2)
    return out


def jacobian_remainder_poly(bounds: DerivativeBounds, basis: TaylorBasis, i: int, j: int) -> Polynomial:
    """Squared bound on the order-``k-1`` remainder of ``d f_i / d x_j``.

    ``sum_{|a|=k} kappa M[i,a+e_j]^2 (x-omega)^(2a) / a!^2`` with ``kappa`` the
    number of non-zero ``M[i, a+e_j]``.
    """
    _check_pair(bounds, basis)
    if basis.k < 1:
        raise ValueError("Jacobian envelope needs k >= 1")
    ej = unit_index(basis.n, j)
    terms = []
    for a in enumerate_multi_indices(basis.n, basis.k, basis.k):
        m = bounds.get(i, mi_add(a, ej))
        if m != 0.0:
            terms.append((a, m))
    kappa = len(terms)
    out = Polynomial.zero(basis.n)
    for a, m in terms:
        two_a = tuple(2 * e for e in a)
        out = out + shifted_monomial(basis.omega, two_a).scale(kappa * m**2 / mi_factorial(a) ** 2)
    return out


def jacobian_remainder_matrix(bounds: DerivativeBounds, basis: TaylorBasis) -> list[Polynomial]:
    """Diagonal of ``sum_i pi_i diag_j(Rpoly[d f_i / d x_j])``."""
    diag = [Polynomial.zero(basis.n) for _ in range(basis.n)]
    for i in range(bounds.ny):
        per_j = [jacobian_remainder_poly(bounds, basis, i, j) for j in range(basis.n)]
        pi = sum(1 for p in per_j if not p.is_zero())
        for j in range(basis.n):
            diag[j] = diag[j] + per_j[j].scale(pi)
    return diag


@dataclass
class SectorBound:
    basis: TaylorBasis
    bounds: DerivativeBounds
    phi: PolyMatrix
    rpoly_sum: Polynomial

    @property
    def ny(self) -> int:
        return self.bounds.ny

    def rabs_sum(self, X) -> np.ndarray:
        return sum(np.atleast_1d(remainder_abs(self.bounds, self.basis, i, X)) for i in range(self.ny))


def sector_bound(basis: TaylorBasis, bounds: DerivativeBounds) -> SectorBound:
    _check_pair(bounds, basis)
    rsum = Polynomial.zero(basis.n)
    for i in range(bounds.ny):
        rsum = rsum + remainder_poly(bounds, basis, i)
    n = basis.n
    eye = PolyMatrix.from_array(np.eye(bounds.ny), n)
    phi = PolyMatrix.block_diag([eye, PolyMatrix([[-rsum]])])
    return SectorBound(basis, bounds, phi, rsum)


def _affine_image(A: np.ndarray, polys: Sequence[Polynomial]) -> list[Polynomial]:
    out = []
    for row in np.atleast_2d(A):
        acc = Polynomial.zero(polys[0].nvars)
        for c, p in zip(row, polys):
            if c != 0.0:
                acc = acc + p.scale(c)
        out.append(acc)
    return out


def sector_polynomial(sector: SectorBound, A) -> Polynomial:
    """``||y - A z(x)||^2 - sum_i Rpoly_i(x)`` in the joint variables ``(x, y)``."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    n, ny = sector.basis.n, sector.ny
    if A.shape != (ny, sector.basis.nz):
        raise ValueError(f"A must have shape {(ny, sector.basis.nz)}, got {A.shape}")
    nv = n + ny
    embed = list(range(n))
    Az = [p.embed(nv, embed) for p in _affine_image(A, sector.basis.z)]
    out = -sector.rpoly_sum.embed(nv, embed)
    for i in range(ny):
        r = Polynomial.variable(nv, n + i) - Az[i]
        out = out + r * r
    return out


def scaled_sector(sector: SectorBound, A) -> Polynomial:
    """``t^2 p_sec(x, y/t, A)`` expanded division-free, variables ``(x, t, y)``."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    n, ny = sector.basis.n, sector.ny
    nv = n + 1 + ny
    embed = list(range(n))
    t = Polynomial.variable(nv, n)
    Az = [p.embed(nv, embed) for p in _affine_image(A, sector.basis.z)]
    out = -(t * t) * sector.rpoly_sum.embed(nv, embed)
    for i in range(ny):
        r = Polynomial.variable(nv, n + 1 + i) - t * Az[i]
        out = out + r * r
    return out


@dataclass
class JacobianSector:
    """Sector bound for ``(df/dx) dx`` around the Taylor Jacobian ``A dz/dx dx``."""

    sector: SectorBound
    rtilde: list[Polynomial]
    phitilde: PolyMatrix

    def polynomial(self, A) -> Polynomial:
        """``||y - A (dz/dx) dx||^2 - dx^T Rtilde dx``; variables ``(x, dx, y)``."""
        A = np.atleast_2d(np.asarray(A, dtype=float))
        basis = self.sector.basis
        n, ny = basis.n, self.sector.ny
        nv = 2 * n + ny
        embed = list(range(n))
        dz = basis.jacobian_polys()
        out = Polynomial.zero(nv)
        for j in range(n):
            dj = Polynomial.variable(nv, n + j)
            out = out - dj * dj * self.rtilde[j].embed(nv, embed)
        for i in range(ny):
            r = Polynomial.variable(nv, 2 * n + i)
            for j in range(n):
                g = _affine_image(A[i : i + 1], dz[j])[0].embed(nv, embed)
                r = r - g * Polynomial.variable(nv, n + j)
            out = out + r * r
        return out


def jacobian_sector(sector: SectorBound) -> JacobianSector:
    basis = sector.basis
    if basis.k < 1:
        raise ValueError("Jacobian envelope needs k >= 1")
    rt = jacobian_remainder_matrix(sector.bounds, basis)
    n = basis.n
    diag_r = PolyMatrix.zeros(n, n, n)
    for j in range(n):
        diag_r.entries[j][j] = -rt[j]
    phit = PolyMatrix.block_diag([PolyMatrix.from_array(np.eye(sector.ny), n), diag_r])
    return JacobianSector(sector, rt, phit)


# ---------------------------------------------------------------------------
# grouped sector models (joint and structured)
# ---------------------------------------------------------------------------


@dataclass
class SectorGroup:
    """One sector inequality ``||y[outputs] - offset - A regressor||^2 <= rpoly``.

    ``rabs(X)`` is the tighter non-polynomial bound used to form the
    data-consistency radius, ``rjac`` the diagonal Jacobian remainder bound
    (``None`` when ``k = 0``).
    """

    outputs: list[int]
    offset: list[Polynomial]
    regressor: list[Polynomial]
    rpoly: Polynomial
    rabs: Callable[[np.ndarray], np.ndarray]
    rjac: list[Polynomial] | None = None

    def eval_regressor(self, X) -> np.ndarray:
        X = np.atleast_2d(X)
        return np.stack([np.atleast_1d(p(X)) for p in self.regressor], axis=1)

    def eval_offset(self, X) -> np.ndarray:
        X = np.atleast_2d(X)
        return np.stack([np.atleast_1d(p(X)) for p in self.offset], axis=1)

    def regressor_jacobian(self) -> list[list[Polynomial]]:
        """``[j][r] = d regressor_r / d x_j``."""
        n = self.regressor[0].nvars
        return [[p.partial(j) for p in self.regressor] for j in range(n)]


@dataclass
class SectorModel:
    """Grouped sector bounds sharing one parameter matrix ``A`` (``nw x ntheta``).

    ``layout`` names the parameter columns.
    """

    nvars: int
    ny: int
    groups: list[SectorGroup]
    layout: list[str]
    basis: TaylorBasis | None = None
    fast_regressor: Callable[[np.ndarray], np.ndarray] | None = None

    @property
    def nw(self) -> int:
        return len(self.groups[0].outputs)

    @property
    def ntheta(self) -> int:
        return len(self.layout)

    def regressor_values(self, g: int, X) -> np.ndarray:
        if g == 0 and self.fast_regressor is not None and len(self.groups) == 1:
            return self.fast_regressor(np.atleast_2d(X))
        return self.groups[g].eval_regressor(X)

    @property
    def omega(self) -> np.ndarray:
        return self.basis.omega if self.basis is not None else np.zeros(self.nvars)


def joint_model(sector: SectorBound, k_jacobian: bool = True) -> SectorModel:
    """Unstructured model: one group, ``A`` is the ``ny x nz`` Taylor matrix."""
    basis = sector.basis
    n = basis.n
    rjac = jacobian_remainder_matrix(sector.bounds, basis) if (k_jacobian and basis.k >= 1) else None
    group = SectorGroup(
        outputs=list(range(sector.ny)),
        offset=[Polynomial.zero(n) for _ in range(sector.ny)],
        regressor=list(basis.z),
        rpoly=sector.rpoly_sum,
        rabs=sector.rabs_sum,
        rjac=rjac,
    )
    layout = ["z" + "".join(map(str, a)) for a in basis.indices]
    return SectorModel(n, sector.ny, [group], layout, basis=basis, fast_regressor=basis.eval)


@dataclass
class OutputStructure:
    """Known structure of one output ``f_i``.

    ``f_i = offset + sum_p mult_p * param_p + sum_s coef_s * g_s(x[vars_s])``.
    ``params`` lists ``(name, Polynomial)``; ``shared`` lists
    ``(nonlinearity_id, coef, variable_subset)``.
    """

    offset: Polynomial
    params: list[tuple[str, Polynomial]] = field(default_factory=list)
    shared: list[tuple[str, float, tuple[int, ...]]] = field(default_factory=list)


@dataclass
class StructureSpec:
    nvars: int
    outputs: list[OutputStructure]


@dataclass
class SharedTaylor:
    """Taylor basis and derivative bounds for one shared nonlinearity on its variable subset."""

    basis: TaylorBasis
    bounds: DerivativeBounds


def structured_sector(spec: StructureSpec, sub: Mapping[str, SharedTaylor]) -> SectorModel:
    """Per-output sector groups with a single stacked parameter vector.

    Parameter layout: unknown scalars in order of first appearance, then the
    Taylor coefficients of each shared nonlinearity (ordered by id).
    """
    n = spec.nvars
    subsets: dict[str, tuple[int, ...]] = {}
    scalars: list[str] = []
    for out in spec.outputs:
        for name, _ in out.params:
            if name not in scalars:
                scalars.append(name)
        for sid, _, vars_ in out.shared:
            vars_ = tuple(vars_)
            if sid in subsets and subsets[sid] != vars_:
                raise ValueError(f"nonlinearity {sid!r} used with inconsistent variable subsets")
            subsets[sid] = vars_
            if sid not in sub:
                raise ValueError(f"no Taylor basis supplied for nonlinearity {sid!r}")
    sids = sorted(subsets)
    layout = list(scalars)
    offsets = {}
    for sid in sids:
        st = sub[sid]
        if st.basis.n != len(subsets[sid]):
            raise ValueError(f"basis for {sid!r} has wrong dimension")
        offsets[sid] = len(layout)
        layout += [f"{sid}[{''.join(map(str, a))}]" for a in st.basis.indices]

    # embedded pieces per nonlinearity
    emb_z = {sid: [p.embed(n, subsets[sid]) for p in sub[sid].basis.z] for sid in sids}
    emb_r = {sid: remainder_poly(sub[sid].bounds, sub[sid].basis, 0).embed(n, subsets[sid]) for sid in sids}
    emb_rjac = {}
    for sid in sids:
        st = sub[sid]
        per = [Polynomial.zero(n) for _ in range(n)]
        if st.basis.k >= 1:
            for jl, jg in enumerate(subsets[sid]):
                per[jg] = jacobian_remainder_poly(st.bounds, st.basis, 0, jl).embed(n, subsets[sid])
        emb_rjac[sid] = per

    groups = []
    for i, out in enumerate(spec.outputs):
        reg = [Polynomial.zero(n) for _ in layout]
        for name, mult in out.params:
            reg[layout.index(name)] = reg[layout.index(name)] + mult
        coefs = {}
        for sid, c, _ in out.shared:
            coefs[sid] = coefs.get(sid, 0.0) + float(c)
            for r, p in enumerate(emb_z[sid]):
                reg[offsets[sid] + r] = reg[offsets[sid] + r] + p.scale(c)
        active = [(sid, c) for sid, c in coefs.items() if c != 0.0 and not emb_r[sid].is_zero()]
        nterm = len(active)
        rpoly = Polynomial.zero(n)
        for sid, c in active:
            rpoly = rpoly + emb_r[sid].scale(nterm * c * c)

        def rabs(X, _active=tuple(active), _subsets=dict(subsets)):
            X = np.atleast_2d(X)
            acc = np.zeros(X.shape[0])
            for sid, c in _active:
                st = sub[sid]
                acc += abs(c) * np.sqrt(
                    np.atleast_1d(remainder_abs(st.bounds, st.basis, 0, X[:, list(_subsets[sid])]))
                )
            return acc**2

        # Jacobian bound: (sum_{s,j} c_s dxi_j r_sj)^2 <= pi * sum c_s^2 dxi_j^2 Rpoly_sj
        pairs = [(sid, c, j) for sid, c in coefs.items() for j in range(n) if c != 0.0 and not emb_rjac[sid][j].is_zero()]
        pi = len(pairs)
        rjac = [Polynomial.zero(n) for _ in range(n)]
        for sid, c, j in pairs:
            rjac[j] = rjac[j] + emb_rjac[sid][j].scale(pi * c * c)
        groups.append(SectorGroup([i], [out.offset], reg, rpoly, rabs, rjac))
    return SectorModel(n, len(spec.outputs), groups, layout)
