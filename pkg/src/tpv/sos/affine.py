"""Polynomials whose coefficients are affine in SDP decision variables.

Coefficient expressions map a decision-variable index to a weight; index 0 is
the constant and index ``PARAM`` (-1) a scalar parameter fixed only at solve
time (used for gamma^2 in gain bisection).
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from ..polyalg import MultiIndex, PolyMatrix, Polynomial

PARAM = -1


class AffPoly:
    __slots__ = ("nvars", "terms")

    def __init__(self, nvars: int, terms: dict | None = None):
        self.nvars = nvars
        self.terms: dict[MultiIndex, dict[int, float]] = terms if terms is not None else {}

    @classmethod
    def zero(cls, nvars: int) -> "AffPoly":
        return cls(nvars)

    @classmethod
    def from_poly(cls, p: Polynomial, var: int = 0, scale: float = 1.0) -> "AffPoly":
        """``scale * x_var * p`` (``var=0`` gives the plain polynomial)."""
        return cls(p.nvars, {a: {var: scale * c} for a, c in p.terms.items()})

    @classmethod
    def from_const(cls, nvars: int, c: float) -> "AffPoly":
        return cls(nvars, {(0,) * nvars: {0: float(c)}} if c != 0 else {})

    @classmethod
    def from_var(cls, nvars: int, var: int, c: float = 1.0) -> "AffPoly":
        return cls(nvars, {(0,) * nvars: {var: c}})

    def copy(self) -> "AffPoly":
        return AffPoly(self.nvars, {a: dict(e) for a, e in self.terms.items()})

    def iadd(self, other: "AffPoly", s: float = 1.0) -> "AffPoly":
        """In-place ``self += s * other``."""
        if other.nvars != self.nvars:
            raise ValueError("nvars mismatch")
        T = self.terms
        for a, e in other.terms.items():
            d = T.get(a)
            if d is None:
                T[a] = {v: s * c for v, c in e.items()}
            else:
                for v, c in e.items():
                    d[v] = d.get(v, 0.0) + s * c
        return self

    def __add__(self, other):
        if isinstance(other, Polynomial):
            other = AffPoly.from_poly(other)
        return self.copy().iadd(other)

    def __sub__(self, other):
        if isinstance(other, Polynomial):
            other = AffPoly.from_poly(other)
        return self.copy().iadd(other, -1.0)

    def __neg__(self):
        return self.scale(-1.0)

    def scale(self, s: float) -> "AffPoly":
        return AffPoly(self.nvars, {a: {v: s * c for v, c in e.items()} for a, e in self.terms.items()})

    def mul_poly(self, p: Polynomial) -> "AffPoly":
        if p.nvars != self.nvars:
            raise ValueError("nvars mismatch")
        out: dict = {}
        for b, cb in p.terms.items():
            for a, e in self.terms.items():
                key = tuple(x + y for x, y in zip(a, b))
                d = out.get(key)
                if d is None:
                    out[key] = {v: cb * c for v, c in e.items()}
                else:
                    for v, c in e.items():
                        d[v] = d.get(v, 0.0) + cb * c
        return AffPoly(self.nvars, out)

    def partial(self, j: int) -> "AffPoly":
        out = {}
        for a, e in self.terms.items():
            if a[j] == 0:
                continue
            b = list(a)
            b[j] -= 1
            out[tuple(b)] = {v: a[j] * c for v, c in e.items()}
        return AffPoly(self.nvars, out)

    def support(self) -> list[MultiIndex]:
        return [a for a, e in self.terms.items() if any(c != 0.0 for c in e.values())]

    @property
    def degree(self) -> int:
        return max((sum(a) for a in self.support()), default=0)

    def is_zero(self) -> bool:
        return not self.support()

    def value(self, x: np.ndarray, param: float | None = None) -> Polynomial:
        """Numeric polynomial after substituting decision values ``x`` (1-based)."""
        terms = {}
        for a, e in self.terms.items():
            s = 0.0
            for v, c in e.items():
                if v == 0:
                    s += c
                elif v == PARAM:
                    if param is None:
                        raise ValueError("parameter value required")
                    s += c * param
                else:
                    s += c * x[v - 1]
            terms[a] = s
        return Polynomial(self.nvars, terms)


def _zero_grid(r, c, nvars):
    return [[AffPoly.zero(nvars) for _ in range(c)] for _ in range(r)]


class AffPolyMatrix:
    def __init__(self, entries: Sequence[Sequence[AffPoly]]):
        self.entries = [list(r) for r in entries]
        self.rows = len(self.entries)
        self.cols = len(self.entries[0])
        self.nvars = self.entries[0][0].nvars

    @classmethod
    def zeros(cls, r: int, c: int, nvars: int) -> "AffPolyMatrix":
        return cls(_zero_grid(r, c, nvars))

    @classmethod
    def from_polymatrix(cls, P: PolyMatrix) -> "AffPolyMatrix":
        return cls([[AffPoly.from_poly(p) for p in row] for row in P.entries])

    @property
    def shape(self):
        return self.rows, self.cols

    def __getitem__(self, idx):
        i, j = idx
        return self.entries[i][j]

    def add_scaled_polymatrix(self, tau: AffPoly, P: PolyMatrix, sym: bool = True) -> "AffPolyMatrix":
        """In-place ``self += tau * P`` (upper triangle mirrored when ``sym``)."""
        for i in range(P.rows):
            for j in range(i if sym else 0, P.cols):
                p = P.entries[i][j]
                if p.is_zero():
                    continue
                term = tau.mul_poly(p)
                self.entries[i][j].iadd(term)
                if sym and i != j:
                    self.entries[j][i].iadd(term)
        return self

    def add_entry(self, i: int, j: int, a: AffPoly, sym: bool = True) -> None:
        """``self[i,j] += a`` and, if symmetric and off-diagonal, ``self[j,i] += a``."""
        self.entries[i][j].iadd(a)
        if sym and i != j:
            self.entries[j][i].iadd(a)

    def value(self, x: np.ndarray, param: float | None = None) -> PolyMatrix:
        return PolyMatrix([[e.value(x, param) for e in row] for row in self.entries])

    @property
    def degree(self) -> int:
        return max(e.degree for row in self.entries for e in row)


def congruence(L: PolyMatrix, C: np.ndarray | PolyMatrix) -> PolyMatrix:
    """``L^T C L`` for a numeric or polynomial middle matrix."""
    if not isinstance(C, PolyMatrix):
        C = PolyMatrix.from_array(np.asarray(C, dtype=float), L.nvars)
    return L.T() @ C @ L
