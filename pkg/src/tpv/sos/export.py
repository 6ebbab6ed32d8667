"""Sparse text export of an :class:`SdpProblem`.

Format::

    nblocks nvars
    block i j var coeff      (one line per nonzero, 1-based block/row/col)

Block ``k`` (1-based) is ``F_0 + sum_v x_v F_v >= 0`` with the constant under
``var 0``; only upper-triangular entries are listed.  Linear equalities are
written under block ``0`` with ``i`` the equality number and ``j = 1``.
The final ``block`` line group ``-1 1 1 var c`` holds the objective.
"""

from __future__ import annotations

from typing import TextIO

from .sdp import PsdBlock, SdpProblem


def export_sdp(prob: SdpProblem, fh: TextIO) -> None:
    if any(v < 0 for e in prob.eqs for v in e) or any(v < 0 for b in prob.blocks for e in b.entries.values() for v in e):
        raise ValueError("instantiate the parameter before export")
    fh.write(f"{len(prob.blocks)} {prob.nvars}\n")
    for k, e in enumerate(prob.eqs, start=1):
        for v, c in sorted(e.items()):
            fh.write(f"0 {k} 1 {v} {c!r}\n")
    for b, blk in enumerate(prob.blocks, start=1):
        for (i, j), e in sorted(blk.entries.items()):
            for v, c in sorted(e.items()):
                if c != 0.0:
                    fh.write(f"{b} {i + 1} {j + 1} {v} {c!r}\n")
    for v, c in sorted(prob.objective.items()):
        fh.write(f"-1 1 1 {v} {c!r}\n")


def import_sdp(fh: TextIO) -> SdpProblem:
    lines = [ln.split() for ln in fh if ln.strip()]
    nblocks, nvars = int(lines[0][0]), int(lines[0][1])
    prob = SdpProblem()
    prob.nvars = nvars
    eqs: dict[int, dict] = {}
    blocks: dict[int, dict] = {b: {} for b in range(1, nblocks + 1)}
    obj: dict = {}
    for parts in lines[1:]:
        b, i, j, v = (int(p) for p in parts[:4])
        c = float(parts[4])
        if b == 0:
            eqs.setdefault(i, {})[v] = c
        elif b == -1:
            obj[v] = c
        else:
            blocks[b].setdefault((i - 1, j - 1), {})[v] = c
    prob.eqs = [eqs[k] for k in sorted(eqs)]
    for b in range(1, nblocks + 1):
        ents = blocks[b]
        size = max((max(i, j) + 1 for i, j in ents), default=1)
        prob.blocks.append(PsdBlock(size, ents))
    prob.objective = obj
    return prob
