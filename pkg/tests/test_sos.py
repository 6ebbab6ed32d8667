import io

import numpy as np
import pytest

from tpv.polyalg import PolyMatrix, Polynomial
from tpv.sos import (
    AffPoly,
    ClarabelBackend,
    DegreeError,
    GramCertificate,
    SosConstraint,
    SosProgram,
    compile_sos,
    export_sdp,
    free_poly,
    import_sdp,
    sos_multiplier,
    verify_certificate,
)
from tpv.sos.certificate import SosItem

x = Polynomial.variable(1, 0)
X2 = [Polynomial.variable(2, i) for i in range(2)]


def solve_fixed(p, prune=True):
    P = p if isinstance(p, PolyMatrix) else PolyMatrix([[p]])
    prog = compile_sos([SosConstraint(P)], prune=prune)
    sol = prog.solve()
    return prog, sol


def test_square_gram():
    prog, sol = solve_fixed(x * x)
    assert sol.ok
    cert = prog.certificate(sol)
    assert cert.items[0].bases[0] == [(1,)]
    np.testing.assert_allclose(cert.items[0].gram, [[1.0]], atol=1e-7)
    assert verify_certificate(cert)


def test_explicit_square_rank_one():
    prog, sol = solve_fixed(x**4 - 2 * x**2 + 1)
    assert sol.ok
    cert = prog.certificate(sol)
    G = cert.items[0].gram
    w = np.linalg.eigvalsh(G)
    assert w[-1] > 1.0 and abs(w[-2]) < 1e-5
    assert verify_certificate(cert)


def test_motzkin_not_sos():
    a, b = X2
    motz = a**4 * b**2 + a**2 * b**4 - 3 * a**2 * b**2 + 1
    _, sol = solve_fixed(motz)
    assert not sol.ok
    assert sol.status == "infeasible"


def test_negative_constant_infeasible():
    _, sol = solve_fixed(Polynomial.constant(1, -1.0))
    assert sol.status == "infeasible"


def test_verify_identity_and_perturbed():
    one = PolyMatrix([[Polynomial.constant(1, 1.0)]])
    cert = GramCertificate([SosItem("c", [[(0,)]], np.eye(1), one)], [], np.zeros(0))
    rep = verify_certificate(cert)
    assert rep.passed and rep.max_residual == 0.0
    # x^2 - 1e-3 on basis (1, x): the Gram matrix has eigenvalue -1e-3
    p = PolyMatrix([[x * x + Polynomial.constant(1, -1e-3)]])
    G = np.diag([-1e-3, 1.0])
    bad = GramCertificate([SosItem("c", [[(0,), (1,)]], G, p)], [], np.zeros(0))
    rep = verify_certificate(bad)
    assert not rep.passed and rep.min_eig == pytest.approx(-1e-3)


def test_round_trip_quartic():
    prog, sol = solve_fixed(x**4 + 1)
    cert = prog.certificate(sol)
    assert verify_certificate(cert)
    again = GramCertificate.from_dict(cert.to_dict())
    rep = verify_certificate(again)
    assert rep.passed and rep.max_residual < 1e-9


def test_residual_detects_wrong_target():
    prog, sol = solve_fixed(x**4 + 1)
    cert = prog.certificate(sol)
    cert.items[0].target = PolyMatrix([[x**4 + 2]])
    assert not verify_certificate(cert)


def test_matrix_sos():
    # [[1+x^2, x], [x, 1]] = L L^T with L = [[1, x], [0, 1]]
    P = PolyMatrix([[1 + x * x, x], [x, Polynomial.constant(1, 1.0)]])
    prog, sol = solve_fixed(P)
    assert sol.ok and verify_certificate(prog.certificate(sol))
    # indefinite at x = 0
    two = Polynomial.constant(1, 2.0)
    Q = PolyMatrix([[1 + x * x, two], [two, 1 + x * x]])
    _, sol = solve_fixed(Q)
    assert not sol.ok
    # a constant off-diagonal next to x^2 diagonals is out of reach of the Gram basis
    one = Polynomial.constant(1, 1.0)
    with pytest.raises(DegreeError):
        solve_fixed(PolyMatrix([[x * x, one], [one, x * x]]))


def test_asymmetric_target_rejected():
    with pytest.raises(ValueError):
        SosConstraint(PolyMatrix([[x, x], [x * 0, x]]))


def test_odd_degree_rejected():
    prog = SosProgram(1)
    with pytest.raises(DegreeError):
        prog.add_sos(AffPoly.from_poly(x**3))


def test_multiplier_templates():
    prog = SosProgram(2)
    t0 = prog.multiplier(sos_multiplier([0, 1], 0), "t0")
    assert t0.degree == 0
    before = len(prog.sdp.blocks)
    prog.multiplier(sos_multiplier([0, 1], 2), "t2")
    assert prog.sdp.blocks[before].size == 3
    prog1 = SosProgram(1)
    n0 = prog1.sdp.nvars
    prog1.multiplier(free_poly([0], 1), "f")
    assert prog1.sdp.nvars - n0 == 2
    with pytest.raises(ValueError):
        sos_multiplier([0], 3)


def test_s_procedure_bound():
    # c - x^2 >= 0 on {x^2 <= 1} via c - x^2 - s (1 - x^2) SOS: holds for
    # c = 2, fails for c = 0.9 (negative at x = 1)
    def run(c):
        prog = SosProgram(1)
        s = prog.multiplier(sos_multiplier([0], 2), "s")
        target = AffPoly.from_poly(c - x * x) - s.mul_poly(1 - x * x)
        prog.add_sos(target, "main")
        return prog, prog.solve()

    prog, sol = run(2.0)
    assert sol.ok and verify_certificate(prog.certificate(sol))
    _, sol = run(0.9)
    assert not sol.ok


def test_export_import_round_trip():
    prog, _ = solve_fixed(x**4 - 2 * x**2 + 1)
    buf = io.StringIO()
    export_sdp(prog.sdp, buf)
    buf.seek(0)
    back = import_sdp(buf)
    s1 = ClarabelBackend().solve(prog.sdp)
    s2 = ClarabelBackend().solve(back)
    assert s1.ok and s2.ok
    assert back.nvars == prog.sdp.nvars
    assert len(back.eqs) == len(prog.sdp.eqs)


def test_cvxpy_cross_check():
    pytest.importorskip("cvxpy")
    from tpv.sos import CvxpyBackend

    a, b = X2
    for p, feas in [(a**2 + b**2 - a * b, True), (a**2 - 3 * a * b + b**2, False)]:
        prog = compile_sos([SosConstraint(PolyMatrix([[p]]))])
        s1 = ClarabelBackend().solve(prog.sdp)
        s2 = CvxpyBackend().solve(prog.sdp)
        assert s1.ok == s2.ok == feas
