"""Low-level SDP container shared by the ellipsoid LMI and the SOS compiler.

Decision variables are indexed ``1..nvars``; index ``0`` denotes the constant
term of an affine expression, which is stored as ``{var: coeff}``.
Blocks describe ``F(x) = F_0 + sum_v x_v F_v  >= 0`` through upper-triangular
entries ``(i, j) -> expr`` with ``i <= j``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

Expr = dict  # {var_index: coefficient}, var 0 = constant


def expr_add(a: Expr, b: Expr, s: float = 1.0) -> Expr:
    out = dict(a)
    for v, c in b.items():
        out[v] = out.get(v, 0.0) + s * c
    return out


def expr_eval(e: Expr, x: np.ndarray) -> float:
    return sum(c * (1.0 if v == 0 else x[v - 1]) for v, c in e.items())


@dataclass
class PsdBlock:
    size: int
    entries: dict = field(default_factory=dict)  # (i, j), i <= j -> Expr
    label: str = ""

    def value(self, x: np.ndarray) -> np.ndarray:
        F = np.zeros((self.size, self.size))
        for (i, j), e in self.entries.items():
            F[i, j] = F[j, i] = expr_eval(e, x)
        return F


class SdpProblem:
    """``min c^T x`` s.t. affine equalities and PSD blocks."""

    def __init__(self):
        self.nvars = 0
        self.objective: Expr = {}
        self.eqs: list[Expr] = []
        self.blocks: list[PsdBlock] = []

    def new_vars(self, k: int) -> np.ndarray:
        idx = np.arange(self.nvars + 1, self.nvars + k + 1)
        self.nvars += k
        return idx

    def add_eq(self, e: Expr) -> None:
        e = {v: c for v, c in e.items() if c != 0.0}
        if not e:
            return
        self.eqs.append(e)

    def add_psd(self, size: int, entries: dict, label: str = "") -> int:
        for (i, j) in entries:
            if i > j:
                raise ValueError("PSD entries must be upper triangular (i <= j)")
        self.blocks.append(PsdBlock(size, dict(entries), label))
        return len(self.blocks) - 1

    def add_nonneg(self, e: Expr, label: str = "") -> int:
        return self.add_psd(1, {(0, 0): e}, label)

    def new_psd_matrix(self, size: int, label: str = "") -> tuple[np.ndarray, int]:
        """Fresh symmetric matrix variable constrained PSD; returns index grid and block id."""
        idx = np.zeros((size, size), dtype=int)
        ents = {}
        for j in range(size):
            for i in range(j + 1):
                v = self.new_vars(1)[0]
                idx[i, j] = idx[j, i] = v
                ents[(i, j)] = {int(v): 1.0}
        return idx, self.add_psd(size, ents, label)

    def set_objective(self, e: Expr) -> None:
        self.objective = dict(e)

    def block_values(self, x: np.ndarray) -> list[np.ndarray]:
        return [b.value(x) for b in self.blocks]

    def eq_residual(self, x: np.ndarray) -> float:
        return max((abs(expr_eval(e, x)) for e in self.eqs), default=0.0)

    def min_block_eig(self, x: np.ndarray) -> float:
        return min((float(np.linalg.eigvalsh(F)[0]) for F in self.block_values(x)), default=np.inf)

    def summary(self) -> dict:
        return {
            "nvars": self.nvars,
            "n_eq": len(self.eqs),
            "block_sizes": [b.size for b in self.blocks],
        }


@dataclass
class SdpSolution:
    status: str  # "optimal" | "infeasible" | "numerical-failure"
    x: np.ndarray | None
    objective: float = float("nan")
    solve_time: float = 0.0
    raw_status: str = ""
    info: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.status == "optimal"


def instantiate(prob: SdpProblem, param_value: float, param_key: int = -1) -> SdpProblem:
    """Copy of ``prob`` with the placeholder ``param_key`` replaced by a number."""

    def sub(e: Expr) -> Expr:
        if param_key not in e:
            return e
        out = {v: c for v, c in e.items() if v != param_key}
        out[0] = out.get(0, 0.0) + e[param_key] * param_value
        return out

    new = SdpProblem()
    new.nvars = prob.nvars
    new.objective = sub(prob.objective)
    new.eqs = [sub(e) for e in prob.eqs]
    new.blocks = [PsdBlock(b.size, {k: sub(e) for k, e in b.entries.items()}, b.label) for b in prob.blocks]
    return new
