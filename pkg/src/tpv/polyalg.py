"""Exact multivariate polynomial arithmetic on dense-exponent term maps.

Multi-indices are plain tuples of non-negative ints.  All bases in the package
are enumerated in graded lexicographic order so that coefficient indices are
stable across modules.
"""

from __future__ import annotations

import math
from itertools import product
from typing import Iterable, Mapping, Sequence

import numpy as np

MultiIndex = tuple


def mi_abs(alpha: Sequence[int]) -> int:
    return int(sum(alpha))


def mi_factorial(alpha: Sequence[int]) -> int:
    if sum(alpha) > 170:
        raise OverflowError("multi-index order too large for float factorials")
    out = 1
    for a in alpha:
        out *= math.factorial(a)
    return out


def mi_add(a: Sequence[int], b: Sequence[int]) -> MultiIndex:
    return tuple(x + y for x, y in zip(a, b))


def unit_index(n: int, j: int) -> MultiIndex:
    return tuple(1 if i == j else 0 for i in range(n))


def _compositions(d: int, n: int):
    """All alpha with |alpha| = d in lex-descending order."""
    if n == 1:
        yield (d,)
        return
    for first in range(d, -1, -1):
        for rest in _compositions(d - first, n - 1):
            yield (first,) + rest


def enumerate_multi_indices(n: int, dmin: int, dmax: int) -> list[MultiIndex]:
    """Multi-indices with ``dmin <= |alpha| <= dmax`` in graded-lex order.

    >>> enumerate_multi_indices(2, 0, 2)
    [(0, 0), (1, 0), (0, 1), (2, 0), (1, 1), (0, 2)]
    """
    if dmin > dmax:
        raise ValueError("dmin must not exceed dmax")
    if n == 0:
        return [()] if dmin == 0 else []
    out: list[MultiIndex] = []
    for d in range(dmin, dmax + 1):
        out.extend(_compositions(d, n))
    return out


def count_multi_indices(n: int, dmin: int, dmax: int) -> int:
    return sum(math.comb(n + d - 1, d) for d in range(dmin, dmax + 1))


class Polynomial:
    """Real polynomial in ``nvars`` variables stored as ``{alpha: coeff}``.

    Zero coefficients are never stored.  Instances are treated as immutable.
    """

    __slots__ = ("nvars", "terms")

    def __init__(self, nvars: int, terms: Mapping[MultiIndex, float] | None = None):
        self.nvars = int(nvars)
        clean = {}
        if terms:
            for alpha, c in terms.items():
                alpha = tuple(int(a) for a in alpha)
                if len(alpha) != self.nvars:
                    raise ValueError(f"exponent {alpha} does not match nvars={nvars}")
                c = float(c)
                if c != 0.0:
                    clean[alpha] = clean.get(alpha, 0.0) + c
            clean = {a: c for a, c in clean.items() if c != 0.0}
        self.terms: dict[MultiIndex, float] = clean

    # construction helpers
    @classmethod
    def zero(cls, nvars: int) -> "Polynomial":
        return cls(nvars)

    @classmethod
    def constant(cls, nvars: int, c: float) -> "Polynomial":
        return cls(nvars, {(0,) * nvars: c})

    @classmethod
    def variable(cls, nvars: int, j: int) -> "Polynomial":
        return cls(nvars, {unit_index(nvars, j): 1.0})

    @classmethod
    def monomial(cls, alpha: Sequence[int], c: float = 1.0) -> "Polynomial":
        return cls(len(alpha), {tuple(alpha): c})

    # basic queries
    @property
    def degree(self) -> int:
        return max((sum(a) for a in self.terms), default=0)

    def is_zero(self) -> bool:
        return not self.terms

    def coeff(self, alpha: Sequence[int]) -> float:
        return self.terms.get(tuple(alpha), 0.0)

    def max_var_degrees(self) -> tuple[int, ...]:
        out = [0] * self.nvars
        for a in self.terms:
            for j, e in enumerate(a):
                if e > out[j]:
                    out[j] = e
        return tuple(out)

    def _check(self, other: "Polynomial") -> None:
        if other.nvars != self.nvars:
            raise ValueError(f"nvars mismatch: {self.nvars} vs {other.nvars}")

    # arithmetic
    def __add__(self, other):
        if not isinstance(other, Polynomial):
            other = Polynomial.constant(self.nvars, other)
        self._check(other)
        terms = dict(self.terms)
        for a, c in other.terms.items():
            terms[a] = terms.get(a, 0.0) + c
        return Polynomial(self.nvars, terms)

    __radd__ = __add__

    def __neg__(self):
        return Polynomial(self.nvars, {a: -c for a, c in self.terms.items()})

    def __sub__(self, other):
        if not isinstance(other, Polynomial):
            other = Polynomial.constant(self.nvars, other)
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if not isinstance(other, Polynomial):
            return self.scale(other)
        self._check(other)
        terms: dict[MultiIndex, float] = {}
        for a, ca in self.terms.items():
            for b, cb in other.terms.items():
                key = tuple(x + y for x, y in zip(a, b))
                terms[key] = terms.get(key, 0.0) + ca * cb
        return Polynomial(self.nvars, terms)

    def __rmul__(self, other):
        return self.scale(other)

    def __pow__(self, k: int):
        out = Polynomial.constant(self.nvars, 1.0)
        for _ in range(int(k)):
            out = out * self
        return out

    def scale(self, s: float) -> "Polynomial":
        s = float(s)
        return Polynomial(self.nvars, {a: s * c for a, c in self.terms.items()})

    def __eq__(self, other):
        if not isinstance(other, Polynomial):
            return NotImplemented
        return self.nvars == other.nvars and self.terms == other.terms

    def __hash__(self):
        return hash((self.nvars, frozenset(self.terms.items())))

    def allclose(self, other: "Polynomial", tol: float = 1e-12) -> bool:
        self._check(other)
        keys = set(self.terms) | set(other.terms)
        return all(abs(self.coeff(a) - other.coeff(a)) <= tol for a in keys)

    def __repr__(self):
        if not self.terms:
            return f"Polynomial({self.nvars}, 0)"
        parts = []
        for a in sorted(self.terms, key=lambda t: (sum(t), [-e for e in t])):
            mono = "*".join(f"x{j + 1}^{e}" if e > 1 else f"x{j + 1}" for j, e in enumerate(a) if e)
            parts.append(f"{self.terms[a]:+.6g}" + (f"*{mono}" if mono else ""))
        return f"Polynomial({self.nvars}, {' '.join(parts)})"

    # calculus and evaluation
    def partial(self, j: int) -> "Polynomial":
        return poly_partial(self, j)

    def __call__(self, x):
        return poly_eval(self, x)

    def embed(self, nvars: int, positions: Sequence[int]) -> "Polynomial":
        """Re-express in a larger variable set; variable ``i`` goes to ``positions[i]``."""
        if len(positions) != self.nvars:
            raise ValueError("positions must list one slot per variable")
        terms = {}
        for a, c in self.terms.items():
            b = [0] * nvars
            for i, e in enumerate(a):
                b[positions[i]] += e
            terms[tuple(b)] = terms.get(tuple(b), 0.0) + c
        return Polynomial(nvars, terms)

    def substitute(self, subs: Sequence["Polynomial"]) -> "Polynomial":
        """Compose: replace variable ``i`` with the polynomial ``subs[i]``."""
        if len(subs) != self.nvars:
            raise ValueError("need one substitute per variable")
        nv = subs[0].nvars
        cache: dict[tuple[int, int], Polynomial] = {}

        def power(i, e):
            if (i, e) not in cache:
                cache[(i, e)] = subs[i] ** e
            return cache[(i, e)]

        out = Polynomial.zero(nv)
        for a, c in self.terms.items():
            term = Polynomial.constant(nv, c)
            for i, e in enumerate(a):
                if e:
                    term = term * power(i, e)
            out = out + term
        return out

    def exponent_matrix(self) -> tuple[np.ndarray, np.ndarray]:
        if not self.terms:
            return np.zeros((0, self.nvars), dtype=int), np.zeros(0)
        alphas = list(self.terms)
        return np.array(alphas, dtype=int).reshape(len(alphas), self.nvars), np.array(
            [self.terms[a] for a in alphas]
        )


def poly_eval(p: Polynomial, x) -> float | np.ndarray:
    """Evaluate at one point (shape ``(n,)``) or a batch (shape ``(N, n)``)."""
    x = np.asarray(x, dtype=float)
    batch = x.ndim == 2
    X = x if batch else x[None, :]
    if X.shape[1] != p.nvars:
        raise ValueError(f"point dimension {X.shape[1]} != nvars {p.nvars}")
    E, c = p.exponent_matrix()
    if len(c) == 0:
        vals = np.zeros(X.shape[0])
    else:
        vals = np.prod(X[:, None, :] ** E[None, :, :], axis=2) @ c
    return vals if batch else float(vals[0])


def poly_add(p: Polynomial, q: Polynomial) -> Polynomial:
    return p + q


def poly_mul(p: Polynomial, q: Polynomial) -> Polynomial:
    return p * q


def poly_scale(p: Polynomial, s: float) -> Polynomial:
    return p.scale(s)


def poly_partial(p: Polynomial, j: int) -> Polynomial:
    """Partial derivative with respect to variable ``j`` (0-based)."""
    if not 0 <= j < p.nvars:
        raise IndexError(f"variable index {j} out of range for nvars={p.nvars}")
    terms = {}
    for a, c in p.terms.items():
        if a[j] == 0:
            continue
        b = list(a)
        b[j] -= 1
        terms[tuple(b)] = c * a[j]
    return Polynomial(p.nvars, terms)


def shifted_monomial(omega: Sequence[float], alpha: Sequence[int]) -> Polynomial:
    """Expand ``(x - omega)^alpha`` into monomial form."""
    n = len(alpha)
    out = Polynomial.constant(n, 1.0)
    for j, e in enumerate(alpha):
        if e:
            lin = Polynomial(n, {unit_index(n, j): 1.0, (0,) * n: -float(omega[j])})
            out = out * (lin ** e)
    return out


class PolyMatrix:
    """Dense ``rows x cols`` grid of polynomials sharing ``nvars``."""

    def __init__(self, entries: Sequence[Sequence[Polynomial]]):
        self.entries = [list(r) for r in entries]
        if not self.entries or not self.entries[0]:
            raise ValueError("PolyMatrix needs at least one entry")
        self.rows = len(self.entries)
        self.cols = len(self.entries[0])
        self.nvars = self.entries[0][0].nvars
        for r in self.entries:
            if len(r) != self.cols:
                raise ValueError("ragged PolyMatrix")
            for p in r:
                if p.nvars != self.nvars:
                    raise ValueError("all entries must share nvars")

    @classmethod
    def zeros(cls, rows: int, cols: int, nvars: int) -> "PolyMatrix":
        return cls([[Polynomial.zero(nvars) for _ in range(cols)] for _ in range(rows)])

    @classmethod
    def from_array(cls, a, nvars: int) -> "PolyMatrix":
        a = np.atleast_2d(np.asarray(a, dtype=float))
        return cls([[Polynomial.constant(nvars, v) for v in row] for row in a])

    @classmethod
    def column(cls, polys: Sequence[Polynomial]) -> "PolyMatrix":
        return cls([[p] for p in polys])

    @classmethod
    def block_diag(cls, blocks: Sequence["PolyMatrix"]) -> "PolyMatrix":
        nv = blocks[0].nvars
        rows = sum(b.rows for b in blocks)
        cols = sum(b.cols for b in blocks)
        out = cls.zeros(rows, cols, nv)
        r0 = c0 = 0
        for b in blocks:
            for i in range(b.rows):
                for j in range(b.cols):
                    out.entries[r0 + i][c0 + j] = b.entries[i][j]
            r0 += b.rows
            c0 += b.cols
        return out

    @property
    def shape(self) -> tuple[int, int]:
        return self.rows, self.cols

    def __getitem__(self, idx):
        i, j = idx
        return self.entries[i][j]

    def T(self) -> "PolyMatrix":
        return PolyMatrix([[self.entries[i][j] for i in range(self.rows)] for j in range(self.cols)])

    def __add__(self, other: "PolyMatrix") -> "PolyMatrix":
        if other.shape != self.shape:
            raise ValueError("shape mismatch")
        return PolyMatrix(
            [[self.entries[i][j] + other.entries[i][j] for j in range(self.cols)] for i in range(self.rows)]
        )

    def __matmul__(self, other: "PolyMatrix") -> "PolyMatrix":
        if self.cols != other.rows:
            raise ValueError("inner dimension mismatch")
        out = []
        for i in range(self.rows):
            row = []
            for j in range(other.cols):
                acc = Polynomial.zero(self.nvars)
                for k in range(self.cols):
                    a, b = self.entries[i][k], other.entries[k][j]
                    if a.terms and b.terms:
                        acc = acc + a * b
                row.append(acc)
            out.append(row)
        return PolyMatrix(out)

    def scale(self, s: float) -> "PolyMatrix":
        return PolyMatrix([[p.scale(s) for p in r] for r in self.entries])

    def degree(self) -> int:
        return max(p.degree for r in self.entries for p in r)

    def is_symmetric(self, tol: float = 0.0) -> bool:
        if self.rows != self.cols:
            return False
        return all(
            self.entries[i][j].allclose(self.entries[j][i], tol)
            for i in range(self.rows)
            for j in range(i + 1, self.cols)
        )

    def evaluate(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.array([[poly_eval(p, x) for p in r] for r in self.entries])


def kron_regressor(z: Sequence[Polynomial], ny: int) -> PolyMatrix:
    """``K(x) = I_ny (x) z(x)^T`` so that ``A z(x) = K(x) vec(A^T)``."""
    if ny < 1:
        raise ValueError("ny must be >= 1")
    nz = len(z)
    nv = z[0].nvars
    out = PolyMatrix.zeros(ny, ny * nz, nv)
    for i in range(ny):
        for j, p in enumerate(z):
            out.entries[i][i * nz + j] = p
    return out


def monomial_vector(nvars: int, indices: Iterable[Sequence[int]]) -> list[Polynomial]:
    return [Polynomial.monomial(tuple(a)) for a in indices]


def grid_exponents(max_degrees: Sequence[int]) -> list[MultiIndex]:
    """All exponents componentwise bounded by ``max_degrees``."""
    return [tuple(a) for a in product(*(range(d + 1) for d in max_degrees))]
