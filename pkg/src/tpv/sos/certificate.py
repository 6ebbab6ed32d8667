"""Gram certificates and their solver-independent re-verification."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from ..polyalg import MultiIndex, PolyMatrix, Polynomial

EIG_TOL = 1e-6
RES_TOL = 1e-6


@dataclass
class SosItem:
    label: str
    bases: list[list[MultiIndex]]
    gram: np.ndarray
    target: PolyMatrix


@dataclass
class GramCertificate:
    items: list[SosItem]
    psd: list[tuple[str, np.ndarray]]
    x: np.ndarray
    param: float | None = None
    meta: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        def poly(p: Polynomial):
            return [[list(a), c] for a, c in p.terms.items()]

        return {
            "param": self.param,
            "meta": self.meta,
            "sos": [
                {
                    "label": it.label,
                    "bases": [[list(m) for m in b] for b in it.bases],
                    "gram": np.asarray(it.gram).tolist(),
                    "target": [[poly(p) for p in row] for row in it.target.entries],
                    "nvars": it.target.nvars,
                }
                for it in self.items
            ],
            "psd": [{"label": lab, "matrix": np.asarray(M).tolist()} for lab, M in self.psd],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GramCertificate":
        items = []
        for it in d["sos"]:
            nv = it["nvars"]
            target = PolyMatrix(
                [[Polynomial(nv, {tuple(a): c for a, c in p}) for p in row] for row in it["target"]]
            )
            bases = [[tuple(m) for m in b] for b in it["bases"]]
            items.append(SosItem(it["label"], bases, np.array(it["gram"], dtype=float).reshape(
                sum(len(b) for b in bases), sum(len(b) for b in bases)), target))
        psd = [(p["label"], np.array(p["matrix"], dtype=float)) for p in d.get("psd", [])]
        return cls(items, psd, np.zeros(0), d.get("param"), d.get("meta", {}))

    def dumps(self) -> str:
        return json.dumps(self.to_dict())


@dataclass
class VerificationReport:
    passed: bool
    min_eig: float
    max_residual: float
    details: list[dict]

    def __bool__(self):
        return self.passed


def gram_reconstruction(bases: list[list[MultiIndex]], gram: np.ndarray, nvars: int) -> PolyMatrix:
    """Polynomial matrix ``(I (x) b)^T G (I (x) b)`` with per-row bases."""
    r = len(bases)
    offs = np.concatenate([[0], np.cumsum([len(b) for b in bases])]).astype(int)
    out = PolyMatrix.zeros(r, r, nvars)
    for i in range(r):
        for j in range(r):
            terms: dict = {}
            for a_pos, a in enumerate(bases[i]):
                for b_pos, b in enumerate(bases[j]):
                    g = gram[offs[i] + a_pos, offs[j] + b_pos]
                    if g == 0.0:
                        continue
                    key = tuple(x + y for x, y in zip(a, b))
                    terms[key] = terms.get(key, 0.0) + g
            out.entries[i][j] = Polynomial(nvars, terms)
    return out


def verify_certificate(cert: GramCertificate, eig_tol: float = EIG_TOL, res_tol: float = RES_TOL) -> VerificationReport:
    """Dense eigen-check of every Gram / PSD block plus coefficient residuals."""
    details = []
    min_eig = np.inf
    max_res = 0.0
    for it in cert.items:
        G = np.asarray(it.gram, dtype=float)
        if G.size:
            Gs = 0.5 * (G + G.T)
            e = float(np.linalg.eigvalsh(Gs)[0])
        else:
            Gs, e = G, np.inf
        rec = gram_reconstruction(it.bases, Gs, it.target.nvars) if G.size else PolyMatrix.zeros(
            it.target.rows, it.target.cols, it.target.nvars
        )
        res = 0.0
        for i in range(it.target.rows):
            for j in range(it.target.cols):
                d = it.target.entries[i][j] - rec.entries[i][j]
                if d.terms:
                    res = max(res, max(abs(c) for c in d.terms.values()))
        min_eig = min(min_eig, e)
        max_res = max(max_res, res)
        details.append({"label": it.label, "min_eig": e, "residual": res, "size": int(G.shape[0]) if G.size else 0})
    for lab, M in cert.psd:
        e = float(np.linalg.eigvalsh(0.5 * (M + M.T))[0])
        min_eig = min(min_eig, e)
        details.append({"label": lab, "min_eig": e, "residual": 0.0, "size": int(M.shape[0])})
    passed = bool(min_eig >= -eig_tol and max_res <= res_tol)
    return VerificationReport(passed, float(min_eig), float(max_res), details)
