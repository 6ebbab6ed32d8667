"""Set-membership validation: choosing derivative bounds from data.

The fit data produce an envelope for a candidate bound ``M``; a separate
validation set measures how often the envelope is violated.  Hoeffding's
inequality turns the empirical violation frequency into a risk bound that
holds with confidence ``1 - c`` when the validation samples are iid.

``svp_bisect`` is the scalar bisection on a common ``M``.  ``svp_multidim``
refines per-output bounds by coordinate bisection, ``svp_k_iteration`` raises
the Taylor order until a small bound suffices, and ``eps_bisect`` is the
variant that fixes ``M`` and searches for the smallest noise level instead.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .setmem import (
    EllipsoidError,
    Envelope,
    EnvelopeSet,
    Sample,
    fit_envelope,
    min_noise_scale,
)
from .taylor import SectorModel

log = logging.getLogger(__name__)

# bounds on M_{k+1} used for the two-tank study, keyed by (k, number of envelopes)
TABLE_M_BOUNDS = {(1, 1): 1.0, (2, 1): 15.0, (2, 2): 140.0, (3, 1): 1000.0}

CONSISTENCY_TOL = 1e-7


class SearchError(RuntimeError):
    """Step-0 search for an admissible upper bound failed."""


def hoeffding_margin(c: float, V: int) -> float:
    """``sqrt(ln(2/c) / (2V))``."""
    if not 0 < c < 1:
        raise ValueError("confidence parameter must lie in (0, 1)")
    if V < 1:
        raise ValueError("need at least one validation sample")
    return math.sqrt(math.log(2.0 / c) / (2.0 * V))


@dataclass
class SvpConfig:
    eps_stop: float = 1e-2
    c: float = 0.05
    mu_bar: float = 0.05
    m_init: float = 1.0
    m_cap: float = 2.0**30
    iid: bool = True

    def __post_init__(self):
        if not self.eps_stop > 0:
            raise ValueError("eps_stop must be positive")
        if not 0 < self.c < 1:
            raise ValueError("c must lie in (0, 1)")
        if not 0 < self.mu_bar < 1:
            raise ValueError("mu_bar must lie in (0, 1)")
        if not 0 < self.m_init <= self.m_cap:
            raise ValueError("need 0 < m_init <= m_cap")


@dataclass
class RiskReport:
    mu_tilde: float
    eps_c: float | None
    V: int
    violations: np.ndarray

    @property
    def bound(self) -> float | None:
        """``mu_tilde + eps_c``; ``None`` when the data are not iid."""
        return None if self.eps_c is None else self.mu_tilde + self.eps_c

    def within(self, mu_bar: float) -> bool:
        b = self.mu_tilde if self.eps_c is None else self.bound
        return b <= mu_bar

    def to_dict(self) -> dict:
        return {
            "mu_tilde": self.mu_tilde,
            "eps_c": self.eps_c,
            "bound": self.bound,
            "V": self.V,
            "violations": [int(i) for i in self.violations],
        }


def _arrays(samples: Sequence[Sample]):
    X = np.array([s.x_tilde for s in samples])
    Y = np.array([s.y_tilde for s in samples])
    E = np.array([float(s.eps) if np.ndim(s.eps) == 0 else float(np.linalg.norm(s.eps)) for s in samples])
    return X, Y, E


def violation_indicator(env: Envelope | EnvelopeSet, sample: Sample) -> int:
    """1 iff some point of the noise ball around ``y_tilde`` lies outside the envelope."""
    X, Y, E = _arrays([sample])
    return int(env.ball_violation(X, Y, E)[0])


def empirical_risk(env: Envelope | EnvelopeSet, samples: Sequence[Sample], c: float = 0.05, iid: bool = True) -> RiskReport:
    if len(samples) < 1:
        raise ValueError("empty validation set")
    X, Y, E = _arrays(samples)
    ind = np.asarray(env.ball_violation(X, Y, E), dtype=int)
    V = len(samples)
    return RiskReport(float(ind.mean()), hoeffding_margin(c, V) if iid else None, V, np.flatnonzero(ind))


# ---------------------------------------------------------------------------
# plumbing shared by the search modes
# ---------------------------------------------------------------------------


Builder = Callable[..., "SectorModel | Sequence[SectorModel]"]


@dataclass
class Probe:
    """One trial value with its outcome."""

    value: float | tuple
    nonempty: bool
    risk: RiskReport | None
    accepted: bool
    note: str = ""

    def row(self) -> dict:
        r = self.risk
        v = self.value if np.ndim(self.value) == 0 else ";".join(f"{t:.6g}" for t in self.value)
        return {
            "value": v,
            "nonempty": int(self.nonempty),
            "mu_tilde": "" if r is None else r.mu_tilde,
            "eps_c": "" if r is None or r.eps_c is None else r.eps_c,
            "bound": "" if r is None or r.bound is None else r.bound,
            "accepted": int(self.accepted),
            "note": self.note,
        }


def build_envelope(models, fit: Sequence[Sample], gamma_objective: bool = True, check_consistency: bool = True):
    """Fit one envelope per model; ``None`` if the coefficient set is empty.

    The LMI on its own is feasible for any full-rank data, including data no
    coefficient matrix can explain.  Emptiness is therefore decided on the
    slab intersection itself (an SOCP) before the LMI is attempted.
    """
    single = isinstance(models, SectorModel)
    models = [models] if single else list(models)
    envs = []
    for m in models:
        if check_consistency:
            t, _ = min_noise_scale(m, fit)
            if not t <= 1.0 + CONSISTENCY_TOL:
                return None, f"data inconsistent (noise scale {t:.3g} needed)"
        try:
            envs.append(fit_envelope(m, fit, gamma_objective=gamma_objective))
        except EllipsoidError as exc:
            return None, str(exc)
    return (envs[0] if single else EnvelopeSet(envs)), ""


def _probe(builder, value, fit, val, cfg: SvpConfig, gamma_objective: bool) -> Probe:
    env, note = build_envelope(builder(value), fit, gamma_objective)
    if env is None:
        return Probe(value, False, None, False, note)
    risk = empirical_risk(env, val, cfg.c, cfg.iid)
    return Probe(value, True, risk, risk.within(cfg.mu_bar))


@dataclass
class SvpResult:
    M: float | np.ndarray
    lower: float | np.ndarray
    risk: RiskReport | None
    trail: list[Probe] = field(default_factory=list)
    iterations: int = 0
    M0: float | None = None
    envelope: Envelope | EnvelopeSet | None = None

    def trail_rows(self) -> list[dict]:
        return [p.row() for p in self.trail]


def _finish(builder, value, fit, gamma_objective):
    # the returned envelope uses the minimum-diameter ellipsoid
    env, _ = build_envelope(builder(value), fit, gamma_objective=True)
    return env


# ---------------------------------------------------------------------------
# Algorithm: scalar bisection on a common M
# ---------------------------------------------------------------------------


def svp_bisect(
    fit: Sequence[Sample],
    val: Sequence[Sample],
    cfg: SvpConfig,
    builder: Builder,
    gamma_objective: bool = True,
    final_envelope: bool = True,
) -> SvpResult:
    """Bisection for the smallest admissible common derivative bound.

    ``builder(M)`` returns the sector model(s) for bound ``M``.  A value is
    accepted when the coefficient set is non-empty and the validation risk is
    within ``cfg.mu_bar``.  Step 0 doubles ``M`` from ``cfg.m_init`` until a
    value is accepted.  The loop runs at least once and stops when the
    bracket is narrower than ``cfg.eps_stop``.
    """
    trail = []
    M = cfg.m_init
    while True:
        p = _probe(builder, M, fit, val, cfg, gamma_objective)
        p.note = ("step0 " + p.note).strip()
        trail.append(p)
        if p.accepted:
            break
        M *= 2.0
        if M > cfg.m_cap:
            raise SearchError(f"no admissible bound up to {cfg.m_cap:g}; noise model or data inconsistent")
    hi, lo = M, 0.0
    risk = p.risk
    it = 0
    while True:
        mid = 0.5 * (hi + lo)
        p = _probe(builder, mid, fit, val, cfg, gamma_objective)
        trail.append(p)
        it += 1
        if p.accepted:
            hi, risk = mid, p.risk
        else:
            lo = mid
        if hi - lo < cfg.eps_stop:
            break
    env = _finish(builder, hi, fit, gamma_objective) if final_envelope else None
    if env is not None:
        risk = empirical_risk(env, val, cfg.c, cfg.iid)
    return SvpResult(hi, lo, risk, trail, it, M0=M, envelope=env)


def expected_iterations(M0: float, eps_stop: float) -> int:
    """Loop count of :func:`svp_bisect` for initial bracket ``[0, M0]``."""
    n = 1
    w = M0 / 2.0
    while w >= eps_stop:
        w /= 2.0
        n += 1
    return n


# ---------------------------------------------------------------------------
# extensions: per-output bounds and order iteration
# ---------------------------------------------------------------------------


def svp_multidim(
    fit: Sequence[Sample],
    val: Sequence[Sample],
    cfg: SvpConfig,
    builder: Builder,
    ny: int,
    sweeps: int = 1,
    gamma_objective: bool = True,
) -> SvpResult:
    """Coordinate bisection on a per-output bound vector.

    ``builder(Mvec)`` takes a length-``ny`` array.  Starts from the common
    bound found by :func:`svp_bisect` and then lowers one coordinate at a
    time with the others fixed.  With ``ny = 1`` this is the scalar search.
    """
    vec = lambda v: builder(np.asarray(v, dtype=float))  # noqa: E731
    base = svp_bisect(fit, val, cfg, lambda m: builder(np.full(ny, m)), gamma_objective, final_envelope=False)
    Mv = np.full(ny, base.M)
    lower = np.full(ny, base.lower)
    trail = list(base.trail)
    risk = base.risk
    it = base.iterations
    if ny > 1:
        for _ in range(sweeps):
            for i in range(ny):
                hi, lo = Mv[i], 0.0
                while hi - lo >= cfg.eps_stop:
                    trial = Mv.copy()
                    trial[i] = 0.5 * (hi + lo)
                    p = _probe(vec, tuple(trial), fit, val, cfg, gamma_objective)
                    p.note = f"coord {i}"
                    trail.append(p)
                    it += 1
                    if p.accepted:
                        hi, risk = trial[i], p.risk
                    else:
                        lo = trial[i]
                Mv[i], lower[i] = hi, lo
    env = _finish(vec, tuple(Mv), fit, gamma_objective)
    if env is not None:
        risk = empirical_risk(env, val, cfg.c, cfg.iid)
    return SvpResult(Mv, lower, risk, trail, it, M0=base.M0, envelope=env)


@dataclass
class KIterationResult:
    k: int
    result: SvpResult
    tried: list[int]


def svp_k_iteration(
    fit: Sequence[Sample],
    val: Sequence[Sample],
    cfg: SvpConfig,
    builder_k: Callable[[int, float], "SectorModel | Sequence[SectorModel]"],
    k_max: int = 5,
    k_min: int = 1,
    gamma_objective: bool = True,
) -> KIterationResult:
    """Raise the Taylor order until the bound search succeeds below ``cfg.m_cap``.

    For each ``k`` the scalar search runs with ``builder_k(k, M)``; the first
    order whose step 0 finds an admissible ``M <= cfg.m_cap`` is returned.
    A small cap therefore asks for the lowest order that explains the data
    with a small derivative bound.
    """
    tried = []
    for k in range(k_min, k_max + 1):
        tried.append(k)
        try:
            res = svp_bisect(fit, val, cfg, lambda m, _k=k: builder_k(_k, m), gamma_objective)
        except SearchError as exc:
            log.info("order %d rejected: %s", k, exc)
            continue
        return KIterationResult(k, res, tried)
    raise SearchError(f"no order up to {k_max} admits a bound below {cfg.m_cap:g}")


# ---------------------------------------------------------------------------
# fixed M, search over the noise level
# ---------------------------------------------------------------------------


def _with_eps(samples: Sequence[Sample], scale: float) -> list[Sample]:
    return [Sample(s.x_tilde, s.y_tilde, scale * np.asarray(s.eps)) for s in samples]


def eps_bisect(
    fit: Sequence[Sample],
    val: Sequence[Sample],
    cfg: SvpConfig,
    models,
    t_max: float | None = None,
    rel_tol: float = 1e-2,
    abs_tol: float = 1e-9,
    gamma_objective: bool = True,
    scale_validation: bool = False,
) -> SvpResult:
    """Smallest noise scale ``t`` for which fixed-``M`` envelopes are admissible.

    The fit samples' ``eps`` act as a noise profile; trial noise is ``t *
    eps``.  Acceptance is the same as in :func:`svp_bisect`.  The lower end
    of the bracket is the exact smallest scale with a non-empty coefficient
    set (an SOCP), the upper end doubles until accepted.  Bisection stops at
    relative width ``rel_tol`` (or absolute width ``abs_tol``).  Validation samples keep their own ``eps``
    unless ``scale_validation`` is set.
    """
    single = isinstance(models, SectorModel)
    mlist = [models] if single else list(models)
    t0 = max(min_noise_scale(m, fit)[0] for m in mlist)
    if not np.isfinite(t0):
        raise SearchError("no noise scale makes the data consistent (zero noise profile?)")

    def probe(t):
        f = _with_eps(fit, t)
        v = _with_eps(val, t) if scale_validation else val
        env, note = build_envelope(models, f, gamma_objective, check_consistency=False)
        if env is None:
            return Probe(t, False, None, False, note), None
        r = empirical_risk(env, v, cfg.c, cfg.iid)
        return Probe(t, True, r, r.within(cfg.mu_bar)), env

    trail = []
    hi = max(t0 * 1.05, 1e-12) if t_max is None else t_max
    while True:
        p, _ = probe(hi)
        p.note = "step0"
        trail.append(p)
        if p.accepted:
            break
        hi *= 2.0
        if hi > (t_max or np.inf) or hi > cfg.m_cap:
            raise SearchError("no admissible noise scale found")
    lo = t0
    risk = p.risk
    it = 0
    while hi - lo >= max(rel_tol * hi, abs_tol):
        mid = 0.5 * (hi + lo)
        p, _ = probe(mid)
        trail.append(p)
        it += 1
        if p.accepted:
            hi, risk = mid, p.risk
        else:
            lo = mid
    env, _ = build_envelope(models, _with_eps(fit, hi), gamma_objective=True, check_consistency=False)
    if env is not None:
        risk = empirical_risk(env, _with_eps(val, hi) if scale_validation else val, cfg.c, cfg.iid)
    return SvpResult(hi, lo, risk, trail, it, M0=t0, envelope=env)


def write_trail_csv(path, result: SvpResult) -> None:
    import csv

    rows = result.trail_rows()
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]) if rows else ["value"])
        w.writeheader()
        w.writerows(rows)
