"""SOS program builder: Gram encodings of SOS matrices and multiplier templates."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..polyalg import MultiIndex, PolyMatrix, Polynomial, enumerate_multi_indices
from .affine import PARAM, AffPoly, AffPolyMatrix
from .sdp import SdpProblem, SdpSolution, instantiate


class DegreeError(ValueError):
    pass


@dataclass
class MultiplierTemplate:
    kind: str  # "sos" | "free"
    degree: int
    variables: tuple[int, ...]
    min_degree: int = 0

    def __post_init__(self):
        if self.degree < 0:
            raise ValueError("degree must be >= 0")
        if self.kind == "sos" and (self.degree % 2 or self.min_degree % 2):
            raise ValueError("SOS multiplier needs an even degree")
        if self.kind not in ("sos", "free"):
            raise ValueError(f"unknown multiplier kind {self.kind!r}")


def sos_multiplier(variables: Sequence[int], degree: int, min_degree: int = 0) -> MultiplierTemplate:
    return MultiplierTemplate("sos", int(degree), tuple(variables), int(min_degree))


def free_poly(variables: Sequence[int], degree: int, min_degree: int = 0) -> MultiplierTemplate:
    return MultiplierTemplate("free", int(degree), tuple(variables), int(min_degree))


def monomials_in(nvars: int, variables: Sequence[int], dmin: int, dmax: int) -> list[MultiIndex]:
    variables = list(variables)
    out = []
    for a in enumerate_multi_indices(len(variables), dmin, dmax):
        b = [0] * nvars
        for v, e in zip(variables, a):
            b[v] = e
        out.append(tuple(b))
    return out


@dataclass
class SosRecord:
    label: str
    target: AffPolyMatrix
    bases: list[list[MultiIndex]]
    gram_idx: np.ndarray  # variable index per Gram entry
    block: int


@dataclass
class PsdRecord:
    label: str
    idx: np.ndarray
    shift: float
    block: int


def _row_basis(p: AffPoly, prune: bool) -> list[MultiIndex]:
    supp = p.support()
    if not supp:
        return []
    n = p.nvars
    dmax = max(sum(a) for a in supp) // 2
    if not prune:
        return enumerate_multi_indices(n, 0, dmax)
    dmin = -(-min(sum(a) for a in supp) // 2)
    hi = [max(a[j] for a in supp) // 2 for j in range(n)]
    lo = [-(-min(a[j] for a in supp) // 2) for j in range(n)]
    return [
        b
        for b in enumerate_multi_indices(n, dmin, dmax)
        if all(lo[j] <= b[j] <= hi[j] for j in range(n))
    ]


class SosProgram:
    """Collects SOS-matrix constraints over polynomials in ``nvars`` variables.

    Constraints are lowered immediately into the underlying :class:`SdpProblem`.
    ``prune`` restricts each Gram row basis to the half-degree box of the
    corresponding diagonal entry.
    """

    def __init__(self, nvars: int, prune: bool = True):
        self.nvars = nvars
        self.prune = prune
        self.sdp = SdpProblem()
        self.sos: list[SosRecord] = []
        self.psd: list[PsdRecord] = []
        self.named: dict[str, object] = {}

    # decision objects -------------------------------------------------
    def new_var(self) -> int:
        return int(self.sdp.new_vars(1)[0])

    def scalar(self, label: str = "") -> AffPoly:
        v = self.new_var()
        if label:
            self.named[label] = v
        return AffPoly.from_var(self.nvars, v)

    def sym_matrix(self, n: int, psd: bool = False, shift: float = 0.0, label: str = "") -> np.ndarray:
        """Symmetric decision matrix; returns the grid of variable indices."""
        idx = np.zeros((n, n), dtype=int)
        for j in range(n):
            for i in range(j + 1):
                idx[i, j] = idx[j, i] = self.new_var()
        if psd:
            ents = {}
            for j in range(n):
                for i in range(j + 1):
                    e = {int(idx[i, j]): 1.0}
                    if i == j and shift:
                        e[0] = -shift
                    ents[(i, j)] = e
            blk = self.sdp.add_psd(n, ents, label)
            self.psd.append(PsdRecord(label, idx, shift, blk))
        if label:
            self.named[label] = idx
        return idx

    def multiplier(self, tmpl: MultiplierTemplate, label: str = "") -> AffPoly:
        if tmpl.kind == "sos":
            return self.sos_poly(tmpl.variables, tmpl.degree, tmpl.min_degree, label)
        return self.free_poly(tmpl.variables, tmpl.degree, tmpl.min_degree, label)

    def free_poly(self, variables: Sequence[int], degree: int, min_degree: int = 0, label: str = "") -> AffPoly:
        out = AffPoly.zero(self.nvars)
        for a in monomials_in(self.nvars, variables, min_degree, degree):
            out.terms[a] = {self.new_var(): 1.0}
        if label:
            self.named[label] = out
        return out

    def sos_poly(self, variables: Sequence[int], degree: int, min_degree: int = 0, label: str = "") -> AffPoly:
        """``b^T G b`` with ``G >= 0`` and ``b`` all monomials of half degree."""
        if degree % 2 or min_degree % 2:
            raise ValueError("SOS multiplier needs an even degree")
        basis = monomials_in(self.nvars, variables, min_degree // 2, degree // 2)
        G, blk = self.sdp.new_psd_matrix(len(basis), label)
        p = AffPoly.zero(self.nvars)
        for i, bi in enumerate(basis):
            for j in range(i, len(basis)):
                key = tuple(x + y for x, y in zip(bi, basis[j]))
                d = p.terms.setdefault(key, {})
                v = int(G[i, j])
                d[v] = d.get(v, 0.0) + (1.0 if i == j else 2.0)
        target = AffPolyMatrix([[p]])
        self.sos.append(SosRecord(label or f"mult{len(self.sos)}", target, [basis], G, blk))
        if label:
            self.named[label] = p
        return p

    # constraints ------------------------------------------------------
    def add_zero(self, p: AffPoly, label: str = "") -> None:
        """Coefficient-wise ``p == 0``."""
        for a, e in p.terms.items():
            self.sdp.add_eq(dict(e))

    def add_linear_eq(self, e: dict) -> None:
        self.sdp.add_eq(e)

    def add_sos(self, P: AffPolyMatrix | AffPoly, label: str = "") -> SosRecord:
        if isinstance(P, AffPoly):
            P = AffPolyMatrix([[P]])
        r = P.rows
        if P.cols != r:
            raise ValueError("SOS target must be square")
        bases = []
        for i in range(r):
            diag = P.entries[i][i]
            if diag.support() and max(sum(a) for a in diag.support()) % 2:
                raise DegreeError(f"{label}: diagonal entry {i} has odd degree {diag.degree}")
            bases.append(_row_basis(diag, self.prune))
        sizes = [len(b) for b in bases]
        N = sum(sizes)
        offs = np.concatenate([[0], np.cumsum(sizes)]).astype(int)
        if N:
            G, blk = self.sdp.new_psd_matrix(N, label)
        else:
            G, blk = np.zeros((0, 0), dtype=int), -1
        for i in range(r):
            for j in range(i, r):
                eqs: dict[MultiIndex, dict] = {a: dict(e) for a, e in P.entries[i][j].terms.items()}
                bi, bj = bases[i], bases[j]
                for a_pos, a in enumerate(bi):
                    start = a_pos if i == j else 0
                    for b_pos in range(start, len(bj)):
                        b = bj[b_pos]
                        key = tuple(x + y for x, y in zip(a, b))
                        v = int(G[offs[i] + a_pos, offs[j] + b_pos])
                        f = 2.0 if (i == j and a_pos != b_pos) else 1.0
                        d = eqs.setdefault(key, {})
                        d[v] = d.get(v, 0.0) - f
                reach = None
                for key, e in eqs.items():
                    e = {v: c for v, c in e.items() if c != 0.0}
                    if not e:
                        continue
                    if all(v in (0, PARAM) for v in e):
                        if reach is None:
                            reach = {tuple(x + y for x, y in zip(a, b)) for a in bi for b in bj}
                        if key not in reach:
                            raise DegreeError(
                                f"{label}: monomial {key} of entry ({i},{j}) lies outside the Gram basis span"
                            )
                    self.sdp.add_eq(e)
        rec = SosRecord(label or f"sos{len(self.sos)}", P, bases, G, blk)
        self.sos.append(rec)
        return rec

    def set_objective(self, e: dict) -> None:
        self.sdp.set_objective(e)

    # solving ----------------------------------------------------------
    @property
    def has_param(self) -> bool:
        if any(PARAM in e for e in self.sdp.eqs):
            return True
        return any(PARAM in e for b in self.sdp.blocks for e in b.entries.values())

    def compiled(self, param: float | None = None) -> SdpProblem:
        if param is None:
            return self.sdp
        return instantiate(self.sdp, param, PARAM)

    def solve(self, backend=None, param: float | None = None) -> SdpSolution:
        from .backends import ClarabelBackend

        backend = backend or ClarabelBackend()
        return backend.solve(self.compiled(param))

    def certificate(self, sol: SdpSolution, param: float | None = None, meta: dict | None = None):
        from .certificate import GramCertificate, SosItem

        x = sol.x
        items = []
        for rec in self.sos:
            gram = x[rec.gram_idx - 1] if rec.gram_idx.size else np.zeros((0, 0))
            items.append(SosItem(rec.label, rec.bases, np.asarray(gram), rec.target.value(x, param)))
        psd = []
        for rec in self.psd:
            M = x[rec.idx - 1] - rec.shift * np.eye(rec.idx.shape[0])
            psd.append((rec.label, M))
        return GramCertificate(items, psd, x, param, dict(meta or {}))

    def value_of(self, label: str, x: np.ndarray, param: float | None = None):
        obj = self.named[label]
        if isinstance(obj, AffPoly):
            return obj.value(x, param)
        if isinstance(obj, np.ndarray):
            return x[obj - 1]
        return x[obj - 1]


@dataclass
class SosConstraint:
    """A fixed polynomial matrix that must be certified SOS."""

    target: PolyMatrix
    label: str = ""

    def __post_init__(self):
        if not self.target.is_symmetric(1e-12):
            raise ValueError("SOS target must be symmetric")


def compile_sos(constraints: Sequence[SosConstraint], prune: bool = True) -> SosProgram:
    """Lower fixed SOS constraints into one program (its ``.sdp`` is the SDP)."""
    if not constraints:
        raise ValueError("no constraints")
    prog = SosProgram(constraints[0].target.nvars, prune=prune)
    for k, c in enumerate(constraints):
        prog.add_sos(AffPolyMatrix.from_polymatrix(c.target), c.label or f"c{k}")
    return prog
