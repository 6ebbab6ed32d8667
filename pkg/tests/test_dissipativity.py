import numpy as np
import pytest

from tpv.dissipativity import (
    CertificationError,
    MultiplierDegrees,
    OperationSet,
    Partition,
    StorageTemplate,
    SupplyRate,
    assemble_psi,
    assemble_psi_partitioned,
    certificate_bundle,
    check_supply,
    l2_gain_bisect,
    storage_gradient_check,
    verify_dissipativity,
)
from tpv.polyalg import Polynomial
from tpv.setmem import CoefficientEllipsoid, Envelope, fit_envelope, samples_from_arrays
from tpv.sos import verify_certificate
from tpv.taylor import DerivativeBounds, TaylorBasis, joint_model, sector_bound


def lti_envelope(a=-1.0, b=1.0, eps=1e-6, S=30, seed=1):
    # min_order=1 encodes f(0) = 0; with a free constant term any eps > 0
    # admits a shifted equilibrium and no finite gain can be certified
    rng = np.random.default_rng(seed)
    basis = TaylorBasis([0.0, 0.0], 1, min_order=1)
    sec = sector_bound(basis, DerivativeBounds.zero(1, 2, 1))
    X = rng.uniform(-1, 1, (S, 2))
    Y = a * X[:, :1] + b * X[:, 1:]
    d = rng.uniform(-eps, eps, Y.shape)
    return fit_envelope(joint_model(sec), samples_from_arrays(X, Y + d, eps))


BOX1 = OperationSet.box([-1.0, -1.0], [1.0, 1.0], 1)
QUAD1 = StorageTemplate.default(1, 1, 1, 1)


def test_dimension_bookkeeping():
    basis = TaylorBasis([0.0, 0.0, 0.0], 2)
    assert basis.nz == 10
    rng = np.random.default_rng(0)
    X = rng.uniform(-0.5, 0.5, (40, 3))
    Y = np.stack([-X[:, 0] + 0.1 * X[:, 1] ** 2, -X[:, 1] + X[:, 2]], 1)
    sec = sector_bound(basis, DerivativeBounds.zero(2, 3, 2))
    env = fit_envelope(joint_model(sec), samples_from_arrays(X, Y, 1e-6))
    op = OperationSet.box([-0.5] * 3, [0.5] * 3, 2)
    pp = assemble_psi(env, op, SupplyRate.l2_gain(2, 1))
    assert pp.info["psi_size"] == 2 * 2 + 1


def test_lti_feasibility_around_true_gain():
    pp = assemble_psi(lti_envelope(), BOX1, SupplyRate.l2_gain(1, 1), QUAD1)
    assert check_supply(pp, gamma=1.05).certified
    assert not check_supply(pp, gamma=0.9).certified


def test_lti_bisection_and_certificate():
    pp = assemble_psi(lti_envelope(), BOX1, SupplyRate.l2_gain(1, 1), QUAD1)
    res = l2_gain_bisect(pp, (0.5, 3.0), 1e-2)
    assert res.certified and 1.0 <= res.gamma <= 1.0 + 1e-2 + 0.05
    rep = verify_certificate(res.certificate)
    assert rep.passed
    X = res.storage_matrices()[0]
    assert np.linalg.eigvalsh(X)[0] >= -1e-9
    # storage decrease checked pointwise on the true vector field
    P = np.random.default_rng(2).uniform(-1, 1, (500, 2))
    worst = storage_gradient_check(res, lambda P: -P[:, :1] + P[:, 1:], SupplyRate.l2_gain(1, 1), P, 1)
    assert worst <= 1e-6
    b = certificate_bundle(res)
    assert b["verification"]["passed"] and b["gamma"] == res.gamma


def test_degenerate_gamma_range():
    pp = assemble_psi(lti_envelope(), BOX1, SupplyRate.l2_gain(1, 1), QUAD1)
    res = l2_gain_bisect(pp, (2.0, 2.0), 1e-2)
    assert res.certified and res.gamma == 2.0
    with pytest.raises(ValueError):
        l2_gain_bisect(pp, (3.0, 2.0))


def test_gain_monotone_in_noise():
    gs = []
    for eps in (1e-6, 1e-3, 2e-2):
        pp = assemble_psi(lti_envelope(eps=eps), BOX1, SupplyRate.l2_gain(1, 1), QUAD1)
        gs.append(l2_gain_bisect(pp, (0.5, 5.0), 1e-3).gamma)
    assert gs[0] <= gs[1] + 1e-3 and gs[1] <= gs[2] + 1e-3


def test_zero_supply_needs_stable_data():
    zero = SupplyRate.polynomial(Polynomial.zero(2))
    # lambda = 0 is always admissible, so ask for X >= 1e-3 I
    unstable = assemble_psi(lti_envelope(a=0.5, b=1.0), BOX1, zero, QUAD1, storage_margin=1e-3)
    assert not check_supply(unstable).certified
    # x' = -x: x^2 is a Lyapunov function
    stable = assemble_psi(lti_envelope(a=-1.0, b=0.0), BOX1, zero, QUAD1, storage_margin=1e-3)
    assert check_supply(stable).certified


def _cubic_known():
    # x' = -x^3 + u as a singleton envelope (z contains x^3 / 3!)
    basis = TaylorBasis([0.0, 0.0], 3)
    model = joint_model(sector_bound(basis, DerivativeBounds.zero(1, 2, 3)))
    A = np.zeros((1, basis.nz))
    A[0, basis.indices.index((0, 1))] = 1.0
    A[0, basis.indices.index((3, 0))] = -6.0
    return Envelope(model, CoefficientEllipsoid.point(A))


def test_passive_cubic_certified():
    supply = SupplyRate.quadratic([[0.0]], [[0.5]], [[0.0]], 1, 1)  # s = u x
    res = check_supply(assemble_psi(_cubic_known(), BOX1, supply, QUAD1))
    assert res.certified
    assert verify_certificate(res.certificate)
    # the only admissible quadratic storage is x^2 / 2
    assert res.storage_matrices()[0][0, 0] == pytest.approx(0.5, abs=1e-3)


def test_negative_passivity_not_certified():
    supply = SupplyRate.quadratic([[0.0]], [[-0.5]], [[0.0]], 1, 1)  # s = -u x
    for st in (QUAD1, StorageTemplate.default(1, 1, 1, 2)):
        assert not check_supply(assemble_psi(_cubic_known(), BOX1, supply, st)).certified


def test_pipeline_stage_errors():
    basis = TaylorBasis([0.0, 0.0], 2)
    model = joint_model(sector_bound(basis, DerivativeBounds.zero(1, 2, 2)))
    few = samples_from_arrays(np.zeros((3, 2)), np.zeros(3), 0.1)
    with pytest.raises(CertificationError) as exc:
        verify_dissipativity(model, few, BOX1, SupplyRate.l2_gain(1, 1))
    assert exc.value.stage == "rank-check"


def test_order_zero_envelope_cannot_certify_gain():
    # a k = 0 envelope on x' = -x + u (Lipschitz 1 in each argument) contains
    # x' = +|x| as well, so no storage certifies a finite gain
    basis = TaylorBasis([0.0, 0.0], 0)
    model = joint_model(sector_bound(basis, DerivativeBounds.uniform(1, 2, 0, 1.0)))
    rng = np.random.default_rng(5)
    X = rng.uniform(-1, 1, (30, 2))
    S = samples_from_arrays(X, -X[:, :1] + X[:, 1:], 1e-6)
    res = verify_dissipativity(model, S, BOX1, SupplyRate.l2_gain(1, 1), QUAD1, gamma_range=(1.0, 100.0))
    assert not res.certified


def test_single_cell_partition_matches():
    env = lti_envelope()
    supply = SupplyRate.l2_gain(1, 1)
    g_full = l2_gain_bisect(assemble_psi(env, BOX1, supply, QUAD1), (0.5, 3.0), 1e-3).gamma
    part = Partition.intervals(2, 0, [], -1.0, 1.0, envelopes=[[0]])
    u = Polynomial.variable(2, 1)
    pp = assemble_psi_partitioned([env], part, [(u - 1) * (u + 1)], supply, 1, 1, QUAD1)
    g_part = l2_gain_bisect(pp, (0.5, 3.0), 1e-3).gamma
    assert abs(g_full - g_part) <= 2e-3


def test_two_cells_separate_storage():
    env = lti_envelope()
    supply = SupplyRate.l2_gain(1, 1)
    part = Partition.intervals(2, 0, [0.0], -1.0, 1.0, envelopes=[[0], [0]])
    u = Polynomial.variable(2, 1)
    cover = part.check_cover(np.random.default_rng(0).uniform(-1, 1, (200, 2)))
    assert cover["covered"] == 1.0 and cover["overlap"] == 0.0
    pp = assemble_psi_partitioned([env], part, [(u - 1) * (u + 1)], supply, 1, 1, QUAD1, shared_storage=False)
    res = l2_gain_bisect(pp, (0.5, 3.0), 1e-2)
    assert res.certified and res.gamma <= 1.07
    X0, X1 = res.storage_matrices()
    # the common storage is a solution of the cell problems, continuity holds at x = 0
    lam0 = QUAD1.storage(X0)
    lam1 = QUAD1.storage(X1)
    assert abs(lam0([0.0, 0.3]) - lam1([0.0, 0.3])) < 1e-8


def test_operation_set_witness_check():
    with pytest.raises(ValueError):
        OperationSet(1, 1, [Polynomial.variable(2, 0) ** 2 - 1], witness=np.array([2.0, 0.0]))
    with pytest.raises(ValueError):
        OperationSet(1, 1, [Polynomial.variable(3, 0)])


def test_manual_degrees_override():
    env = lti_envelope()
    pp = assemble_psi(env, BOX1, SupplyRate.l2_gain(1, 1), QUAD1, MultiplierDegrees(target=4))
    assert pp.info["degrees"]["target"] == 4
    assert l2_gain_bisect(pp, (0.5, 3.0), 1e-2).certified
