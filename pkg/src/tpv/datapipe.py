"""Trajectories, velocity estimation, snapshots and a few synthetic systems.

Velocities are not measured directly.  States are smoothed with a triangular
moving average and differentiated by the 7-point central stencil (sixth-order
accurate); boundary points without a full stencil are dropped.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .polyalg import Polynomial
from .setmem import Sample

JITTER = 1e-9
D6 = np.array([-1 / 60, 3 / 20, -3 / 4, 0.0, 3 / 4, -3 / 20, 1 / 60])


@dataclass
class Trajectory:
    t: np.ndarray
    x: np.ndarray  # (N, nx)
    u: np.ndarray  # (N, nu)
    xdot_true: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float).ravel()
        N = self.t.size
        self.x = np.asarray(self.x, dtype=float).reshape(N, -1)
        self.u = np.asarray(self.u, dtype=float).reshape(N, -1) if np.size(self.u) else np.zeros((N, 0))
        if N >= 2:
            dt = np.diff(self.t)
            h = dt.mean()
            if h <= 0 or np.max(np.abs(dt - h)) > JITTER * max(h, abs(self.t[-1]) * 1e-7):
                raise ValueError("timestamps must be uniformly spaced")
        if not (np.all(np.isfinite(self.x)) and np.all(np.isfinite(self.u))):
            raise ValueError("non-finite values in trajectory")

    @property
    def h(self) -> float:
        return float((self.t[-1] - self.t[0]) / (self.t.size - 1))

    @property
    def nx(self) -> int:
        return self.x.shape[1]

    @property
    def nu(self) -> int:
        return self.u.shape[1]

    def __len__(self):
        return self.t.size

    def slice(self, idx) -> "Trajectory":
        xt = None if self.xdot_true is None else self.xdot_true[idx]
        return Trajectory(self.t[idx], self.x[idx], self.u[idx], xt, dict(self.meta))


# ---------------------------------------------------------------------------
# smoothing and differentiation
# ---------------------------------------------------------------------------


@dataclass
class SmoothingConfig:
    W: int = 40
    inputs: bool = False

    def __post_init__(self):
        if int(self.W) != self.W or self.W < 1:
            raise ValueError("window half-width must be a positive integer")


def triangular_weights(W: int) -> np.ndarray:
    """Weights ``1 - |j|/(W+1)`` for ``j = -W..W``, normalised to sum one."""
    j = np.arange(-W, W + 1)
    w = 1.0 - np.abs(j) / (W + 1.0)
    return w / w.sum()


def smooth_signal(s: np.ndarray, W: int) -> np.ndarray:
    s = np.asarray(s, dtype=float)
    one_d = s.ndim == 1
    S = s[:, None] if one_d else s
    N = S.shape[0]
    if 2 * W + 1 > N:
        raise ValueError(f"window 2W+1={2 * W + 1} exceeds signal length {N}")
    j = np.arange(-W, W + 1)
    w = 1.0 - np.abs(j) / (W + 1.0)
    # truncated windows near the edges are renormalised
    num = np.stack([np.convolve(S[:, c], w, mode="same") for c in range(S.shape[1])], axis=1)
    den = np.convolve(np.ones(N), w, mode="same")
    out = num / den[:, None]
    return out[:, 0] if one_d else out


def smooth(traj: Trajectory, cfg: SmoothingConfig) -> Trajectory:
    x = smooth_signal(traj.x, cfg.W)
    u = smooth_signal(traj.u, cfg.W) if (cfg.inputs and traj.nu) else traj.u.copy()
    meta = dict(traj.meta, smoothing=cfg.W)
    return Trajectory(traj.t.copy(), x, u, traj.xdot_true, meta)


@dataclass
class Velocities:
    """Central-difference estimates at interior indices ``idx`` of a trajectory."""

    idx: np.ndarray
    t: np.ndarray
    x: np.ndarray
    u: np.ndarray
    xdot: np.ndarray
    xdot_true: np.ndarray | None = None


def diff6(s: np.ndarray, h: float) -> np.ndarray:
    """Stencil applied at rows ``3..N-4``; returns ``N - 6`` rows."""
    s = np.asarray(s, dtype=float)
    N = s.shape[0]
    if N < 7:
        raise ValueError("need at least 7 samples for the 7-point stencil")
    out = np.zeros((N - 6,) + s.shape[1:])
    for k, c in enumerate(D6):
        if c != 0.0:
            out += c * s[k : N - 6 + k]
    return out / h


def central_diff6(traj: Trajectory) -> Velocities:
    N = len(traj)
    if N < 7:
        raise ValueError("trajectory too short for sixth-order differences")
    idx = np.arange(3, N - 3)
    xt = None if traj.xdot_true is None else traj.xdot_true[idx]
    return Velocities(idx, traj.t[idx], traj.x[idx], traj.u[idx], diff6(traj.x, traj.h), xt)


# ---------------------------------------------------------------------------
# noise model and snapshots
# ---------------------------------------------------------------------------


@dataclass
class NoiseModel:
    """Bound on the velocity noise ``d``.

    ``amplitude``: ``||d|| <= level``.  ``relative``: ``|d_i| <= level |xdot_i|``
    per component when ``per_component`` is set, else ``||d|| <= level
    ||xdot||``.  Bounds attached to samples must be computable from the
    measurement, so the relative bound is mapped to ``level/(1-level)`` times
    the measured magnitude.
    """

    kind: str = "amplitude"
    level: float = 0.0
    per_component: bool = False

    def __post_init__(self):
        if self.kind not in ("amplitude", "relative"):
            raise ValueError(f"unknown noise model {self.kind!r}")
        if self.level < 0 or (self.kind == "relative" and self.level >= 1):
            raise ValueError("noise level out of range")

    def bound_true(self, xdot: np.ndarray) -> np.ndarray:
        """Bound given the noise-free velocity (scalar per row or per component)."""
        xdot = np.atleast_2d(xdot)
        if self.kind == "amplitude":
            if self.per_component:
                return np.full(xdot.shape, self.level)
            return np.full(xdot.shape[0], self.level)
        if self.per_component:
            return self.level * np.abs(xdot)
        return self.level * np.linalg.norm(xdot, axis=1)

    def bound_measured(self, y: np.ndarray) -> np.ndarray:
        y = np.atleast_2d(y)
        if self.kind == "amplitude":
            return self.bound_true(y)
        r = self.level / (1.0 - self.level)
        return r * (np.abs(y) if self.per_component else np.linalg.norm(y, axis=1))

    def draw(self, xdot: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        """Noise inside the ball (or box, per component); uniform in the set."""
        xdot = np.atleast_2d(xdot)
        N, n = xdot.shape
        b = self.bound_true(xdot)
        if self.per_component:
            return rng.uniform(-1.0, 1.0, (N, n)) * b
        d = rng.standard_normal((N, n))
        d /= np.maximum(np.linalg.norm(d, axis=1, keepdims=True), 1e-300)
        r = rng.uniform(0.0, 1.0, N) ** (1.0 / n)
        d *= (r * b)[:, None]
        # guard against round-off beyond the ball
        nrm = np.linalg.norm(d, axis=1)
        over = nrm > b
        d[over] *= (b[over] / nrm[over])[:, None]
        return d


def snapshot_indices(n: int, count: int) -> np.ndarray:
    if count < 1 or count > n:
        raise ValueError(f"cannot take {count} snapshots from {n} points")
    if count == 1:
        return np.array([0])
    return np.round(np.linspace(0, n - 1, count)).astype(int)


def snapshots(vel: Velocities, count: int, eps: float | np.ndarray | NoiseModel | None = None) -> list[Sample]:
    """Equally spaced input-state-velocity samples ``(x~=[x,u], y~=xdot, eps)``.

    Indices come from ``linspace(0, n-1, count)`` so the first and last
    interior points are always included.
    """
    n = vel.idx.size
    sel = snapshot_indices(n, count)
    P = np.hstack([vel.x, vel.u])[sel]
    Y = vel.xdot[sel]
    if eps is None:
        E = np.zeros(sel.size)
    elif isinstance(eps, NoiseModel):
        E = eps.bound_measured(Y)
    else:
        # scalar: one bound per sample; 1-D: per-output bounds shared by all samples
        e = np.asarray(eps, dtype=float)
        E = np.broadcast_to(e, (sel.size,) + e.shape)
    return [Sample(P[i], Y[i], E[i]) for i in range(sel.size)]


# ---------------------------------------------------------------------------
# lower bound on the L2 gain
# ---------------------------------------------------------------------------


def l2_lower_bound(traj: Trajectory, Tmin: int = 4, Tmax: int | None = None) -> float:
    """``max over T in [Tmin, Tmax], i`` of ``||x[i:i+T]|| / ||u[i:i+T]||`` (windows of T+1 samples)."""
    N = len(traj)
    Tmax = N - 1 if Tmax is None else Tmax
    if Tmax > N - 1 or Tmin < 0 or Tmin > Tmax:
        raise ValueError("window range does not fit the trajectory")
    ex = np.concatenate([[0.0], np.cumsum(np.sum(traj.x**2, axis=1))])
    eu = np.concatenate([[0.0], np.cumsum(np.sum(traj.u**2, axis=1))])
    best = -np.inf
    for T in range(Tmin, Tmax + 1):
        i = np.arange(0, N - T)
        sx = ex[i + T + 1] - ex[i]
        su = eu[i + T + 1] - eu[i]
        ok = su > 0
        if np.any(ok):
            best = max(best, float(np.sqrt(np.max(sx[ok] / su[ok]))))
    if not np.isfinite(best):
        raise ValueError("all windows have zero input energy")
    return best


# ---------------------------------------------------------------------------
# synthetic systems and RK4 simulation
# ---------------------------------------------------------------------------


@dataclass
class SyntheticSystem:
    name: str
    rhs: Callable[[np.ndarray, np.ndarray], np.ndarray]
    nx: int
    nu: int
    box_lo: np.ndarray | None = None
    box_hi: np.ndarray | None = None
    params: dict = field(default_factory=dict)

    def f(self, X, U) -> np.ndarray:
        """Batch right-hand side, rows are points."""
        return np.atleast_2d(self.rhs(np.atleast_2d(X), np.atleast_2d(U)))

    def in_box(self, x) -> bool:
        if self.box_lo is None:
            return True
        return bool(np.all(x >= self.box_lo) and np.all(x <= self.box_hi))


def coupled_oscillators(c1=-1.0, c2=-0.5, cu=1.0, a=0.3, box=0.7) -> SyntheticSystem:
    def rhs(X, U):
        c = a * np.sin(X[:, 1] - X[:, 0])
        return np.stack([c1 * X[:, 0] + c, c2 * X[:, 1] - c + cu * U[:, 0]], axis=1)

    return SyntheticSystem(
        "coupled-oscillators", rhs, 2, 1, np.full(2, -box), np.full(2, box),
        dict(c1=c1, c2=c2, cu=cu, a=a),
    )


def two_tank(c1=0.05, c2=0.055, cu=0.0235, lo=0.05, hi=0.25) -> SyntheticSystem:
    """``h1' = -c1 sqrt(h1) + cu u``, ``h2' = c1 sqrt(h1) - c2 sqrt(h2)``."""

    def rhs(X, U):
        q1 = c1 * np.sqrt(np.maximum(X[:, 0], 0.0))
        q2 = c2 * np.sqrt(np.maximum(X[:, 1], 0.0))
        return np.stack([-q1 + cu * U[:, 0], q1 - q2], axis=1)

    return SyntheticSystem("two-tank-surrogate", rhs, 2, 1, np.full(2, lo), np.full(2, hi), dict(c1=c1, c2=c2, cu=cu))


def two_tank_equilibrium(sys: SyntheticSystem, u: float) -> np.ndarray:
    p = sys.params
    h1 = (p["cu"] * u / p["c1"]) ** 2
    h2 = (p["c1"] / p["c2"]) ** 2 * h1
    return np.array([h1, h2])


def polynomial_system(polys: Sequence[Polynomial], nx: int, nu: int, box_lo=None, box_hi=None) -> SyntheticSystem:
    """``xdot_i = polys[i](x, u)``."""

    def rhs(X, U):
        P = np.hstack([X, U])
        return np.stack([np.atleast_1d(p(P)) for p in polys], axis=1)

    lo = None if box_lo is None else np.asarray(box_lo, float)
    hi = None if box_hi is None else np.asarray(box_hi, float)
    return SyntheticSystem("polynomial", rhs, nx, nu, lo, hi, {"degree": max(p.degree() for p in polys)})


def lti_system(A, B) -> SyntheticSystem:
    A = np.asarray(A, float)
    B = np.asarray(B, float).reshape(A.shape[0], -1)
    return SyntheticSystem("lti", lambda X, U: X @ A.T + U @ B.T, A.shape[0], B.shape[1], params={"A": A.tolist(), "B": B.tolist()})


SYSTEMS = {"coupled-oscillators": coupled_oscillators, "two-tank-surrogate": two_tank}


def chirp_input(amp=0.8, a=0.03, b=0.2, offset=0.0) -> Callable[[float], np.ndarray]:
    return lambda t: np.array([offset + amp * np.sin(a * t * t + b * t)])


def rk4_step(sys: SyntheticSystem, x, u_fn, t, h):
    f = lambda xx, tt: sys.f(xx[None, :], u_fn(tt)[None, :])[0]  # noqa: E731
    k1 = f(x, t)
    k2 = f(x + 0.5 * h * k1, t + 0.5 * h)
    k3 = f(x + 0.5 * h * k2, t + 0.5 * h)
    k4 = f(x + h * k3, t + h)
    return x + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)


def simulate(
    sys: SyntheticSystem,
    x0,
    u_fn: Callable[[float], np.ndarray],
    duration: float,
    h: float,
    noise: NoiseModel | None = None,
    state_noise: float = 0.0,
    rng: np.random.Generator | None = None,
    substeps: int = 1,
) -> tuple[Trajectory, np.ndarray | None]:
    """Classic RK4; returns the trajectory and the noisy velocity measurements.

    ``traj.xdot_true`` holds the noise-free right-hand side at each sample.
    If the state leaves the declared box the trajectory is truncated and
    ``meta['truncated']`` records the time.  ``state_noise`` adds uniform
    measurement noise of that amplitude to the exported states.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    n = int(round(duration / h))
    x = np.asarray(x0, dtype=float).copy()
    T, Xs, Us = [], [], []
    meta = {"system": sys.name, "h": h}
    hs = h / substeps
    for k in range(n + 1):
        t = k * h
        if not sys.in_box(x):
            meta["truncated"] = t
            break
        T.append(t)
        Xs.append(x.copy())
        Us.append(np.atleast_1d(u_fn(t)))
        for s in range(substeps):
            x = rk4_step(sys, x, u_fn, t + s * hs, hs)
    T = np.array(T)
    X = np.array(Xs)
    U = np.array(Us).reshape(len(T), -1)
    F = sys.f(X, U)
    Yn = None
    if noise is not None:
        Yn = F + noise.draw(F, rng)
    if state_noise > 0:
        X = X + rng.uniform(-state_noise, state_noise, X.shape)
    return Trajectory(T, X, U, F, meta), Yn


# ---------------------------------------------------------------------------
# CSV
# ---------------------------------------------------------------------------


def write_trajectory_csv(path, traj: Trajectory, units: str = "SI") -> None:
    with open(path, "w", newline="") as fh:
        fh.write(f"# units: {units}; h={traj.h:.12g}\n")
        w = csv.writer(fh)
        w.writerow(["t"] + [f"x{i + 1}" for i in range(traj.nx)] + [f"u{i + 1}" for i in range(traj.nu)])
        for i in range(len(traj)):
            w.writerow([repr(float(traj.t[i]))] + [repr(float(v)) for v in traj.x[i]] + [repr(float(v)) for v in traj.u[i]])


def read_trajectory_csv(path) -> Trajectory:
    with open(path) as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    rows = list(csv.reader(lines))
    head = rows[0]
    data = np.array([[float(v) for v in r] for r in rows[1:] if r], dtype=float)
    xi = [i for i, h in enumerate(head) if h.strip().startswith("x")]
    ui = [i for i, h in enumerate(head) if h.strip().startswith("u")]
    return Trajectory(data[:, 0], data[:, xi], data[:, ui] if ui else np.zeros((len(data), 0)))


def write_samples_csv(path, samples: Sequence[Sample], nx: int, units: str = "SI") -> None:
    n = samples[0].x_tilde.size
    ny = samples[0].y_tilde.size
    vec_eps = np.ndim(samples[0].eps) > 0
    with open(path, "w", newline="") as fh:
        fh.write(f"# units: {units}\n")
        w = csv.writer(fh)
        head = [f"x{i + 1}" for i in range(nx)] + [f"u{i + 1}" for i in range(n - nx)] + [f"xdot{i + 1}" for i in range(ny)]
        head += [f"eps{i + 1}" for i in range(ny)] if vec_eps else ["eps"]
        w.writerow(head)
        for s in samples:
            w.writerow([repr(float(v)) for v in np.concatenate([s.x_tilde, s.y_tilde, np.atleast_1d(s.eps)])])


def read_samples_csv(path) -> tuple[list[Sample], int]:
    with open(path) as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    rows = list(csv.reader(lines))
    head = [h.strip() for h in rows[0]]
    data = np.array([[float(v) for v in r] for r in rows[1:] if r], dtype=float).reshape(-1, len(head))
    xi = [i for i, h in enumerate(head) if h.startswith("x") and not h.startswith("xdot")]
    ui = [i for i, h in enumerate(head) if h.startswith("u")]
    yi = [i for i, h in enumerate(head) if h.startswith("xdot")]
    ei = [i for i, h in enumerate(head) if h.startswith("eps")]
    out = []
    for r in data:
        e = r[ei]
        out.append(Sample(r[xi + ui], r[yi], float(e[0]) if len(ei) == 1 else e))
    return out, len(xi)
