import numpy as np
import pytest

from tpv.polyalg import Polynomial, enumerate_multi_indices
from tpv.setmem import CoefficientEllipsoid, Envelope
from tpv.taylor import DerivativeBounds, TaylorBasis, joint_model, sector_bound


def oscillator_known_envelope(k=5, a=0.3, c=(-1.0, -0.5, 1.0), omega=(0.0, 0.0, 0.0)):
    """Singleton envelope of the coupled oscillators expanded at ``omega``.

    x1' = c1 x1 + a sin(x2 - x1), x2' = c2 x2 - a sin(x2 - x1) + cu u.
    """
    c1, c2, cu = c
    w = np.asarray(omega, dtype=float)
    basis = TaylorBasis(w, k)
    lin = np.array([[c1, 0.0, 0.0], [0.0, c2, cu]])

    def deriv(i, alpha):
        a1, a2, a3 = alpha
        m = a1 + a2
        s = 0.0
        if a3 == 0:
            # d^a1/dx1 d^a2/dx2 sin(x2 - x1) = (-1)^a1 sin(x2 - x1 + m pi/2)
            v = a * (-1) ** a1 * np.sin(w[1] - w[0] + m * np.pi / 2)
            s += v if i == 0 else -v
        if m + a3 == 0:
            return s + lin[i] @ w
        if m + a3 == 1:
            return s + lin[i][list(alpha).index(1)]
        return s

    A = basis.taylor_coefficients(deriv, 2)
    sup = [(i, al) for i in range(2) for al in enumerate_multi_indices(3, k + 1, k + 1) if al[2] == 0]
    M = DerivativeBounds.on_support(2, 3, k, sup, a)
    model = joint_model(sector_bound(basis, M))
    return Envelope(model, CoefficientEllipsoid.point(A)), A


def oscillator_box_ineqs(box=0.7):
    return [Polynomial.variable(3, 0) ** 2 - box**2, Polynomial.variable(3, 1) ** 2 - box**2]


def hinf_norm(A, B, C=None, D=None, wmax=1e3, n=20001):
    """Frequency sweep of sigma_max(C (jw - A)^-1 B + D), refined by a local search."""
    A = np.atleast_2d(A)
    B = np.atleast_2d(B)
    C = np.eye(A.shape[0]) if C is None else np.atleast_2d(C)
    D = np.zeros((C.shape[0], B.shape[1])) if D is None else np.atleast_2d(D)
    I = np.eye(A.shape[0])

    def sig(w):
        G = C @ np.linalg.solve(1j * w * I - A, B) + D
        return np.linalg.svd(G, compute_uv=False)[0]

    ws = np.concatenate([[0.0], np.logspace(-4, np.log10(wmax), n)])
    vals = np.array([sig(w) for w in ws])
    j = int(np.argmax(vals))
    lo, hi = ws[max(j - 1, 0)], ws[min(j + 1, len(ws) - 1)]
    for _ in range(80):
        m1, m2 = lo + (hi - lo) / 3, hi - (hi - lo) / 3
        if sig(m1) < sig(m2):
            lo = m1
        else:
            hi = m2
    return max(vals.max(), sig(0.5 * (lo + hi)))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# scalar catalog: (f, omega, k, sup |f^(k+1)| on the box, box)
FUNCTION_CATALOG = {
    "sin": (np.sin, 0.3, 3, 1.0, (-2.0, 2.0)),
    "tanh": (np.tanh, 0.0, 1, 4.0 / (3.0 * np.sqrt(3.0)), (-2.0, 2.0)),
    "exp": (np.exp, 0.0, 2, np.e, (-1.0, 1.0)),
}


def oscillator_rhs(X, a=0.3, c=(-1.0, -0.5, 1.0)):
    X = np.atleast_2d(X)
    cpl = a * np.sin(X[:, 1] - X[:, 0])
    return np.stack([c[0] * X[:, 0] + cpl, c[1] * X[:, 1] - cpl + c[2] * X[:, 2]], axis=1)


def catalog_sector(name):
    f, w, k, M, box = FUNCTION_CATALOG[name]
    basis = TaylorBasis([w], k)
    return f, basis, sector_bound(basis, DerivativeBounds.uniform(1, 1, k, M)), box


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
