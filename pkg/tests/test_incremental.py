import numpy as np
import pytest

from conftest import hinf_norm
from tpv.dissipativity import OperationSet
from tpv.incremental import (
    DifferentialSupply,
    MetricTemplate,
    assemble_psi_incremental,
    incremental_from_differential,
    incremental_l2_gain_bisect,
    metric_value,
)
from tpv.setmem import CoefficientEllipsoid, Envelope, fit_envelope, samples_from_arrays
from tpv.sos import verify_certificate
from tpv.taylor import DerivativeBounds, TaylorBasis, joint_model, sector_bound


def linear_known(A, B):
    A, B = np.atleast_2d(A), np.atleast_2d(B)
    nx, nu = B.shape
    basis = TaylorBasis(np.zeros(nx + nu), 1, min_order=1)
    model = joint_model(sector_bound(basis, DerivativeBounds.zero(nx, nx + nu, 1)))
    return Envelope(model, CoefficientEllipsoid.point(np.hstack([A, B])))


def test_lti_known_matches_hinf():
    A = np.array([[-1.0, 0.5], [-0.3, -2.0]])
    B = np.array([[1.0], [0.5]])
    env = linear_known(A, B)
    op = OperationSet.box([-1.0] * 3, [1.0] * 3, 2)
    pp = assemble_psi_incremental(env, op)
    res = incremental_l2_gain_bisect(pp, (0.1, 5.0), 1e-3)
    h = hinf_norm(A, B)
    assert res.certified
    assert h - 1e-6 <= res.gamma <= h * 1.02 + 1e-3
    assert verify_certificate(res.certificate)
    M = metric_value(res)
    assert np.linalg.eigvalsh(M)[0] > 0


def test_lti_data_driven():
    rng = np.random.default_rng(3)
    X = rng.uniform(-1, 1, (30, 2))
    Y = -X[:, :1] + X[:, 1:] + rng.uniform(-1e-6, 1e-6, (30, 1))
    basis = TaylorBasis([0.0, 0.0], 1)
    env = fit_envelope(joint_model(sector_bound(basis, DerivativeBounds.zero(1, 2, 1))), samples_from_arrays(X, Y, 1e-6))
    op = OperationSet.box([-1.0, -1.0], [1.0, 1.0], 1)
    res = incremental_l2_gain_bisect(assemble_psi_incremental(env, op), (0.5, 3.0), 1e-2)
    assert res.certified and 1.0 <= res.gamma <= 1.06


def test_degenerate_range():
    env = linear_known([[-1.0]], [[1.0]])
    op = OperationSet.box([-1.0, -1.0], [1.0, 1.0], 1)
    res = incremental_l2_gain_bisect(assemble_psi_incremental(env, op), (2.0, 2.0), 1e-2)
    assert res.certified and res.gamma == 2.0


def test_constant_metric_has_no_gradient_blocks():
    env = linear_known([[-1.0]], [[1.0]])
    op = OperationSet.box([-1.0, -1.0], [1.0, 1.0], 1)
    const = assemble_psi_incremental(env, op, metric=MetricTemplate(0))
    poly = assemble_psi_incremental(env, op, metric=MetricTemplate(2))
    # (dx, du, 1) for the constant metric, extra lifted columns otherwise
    assert const.info["psi_size"] == 1 + 2
    assert poly.info["psi_size"] > const.info["psi_size"]
    r2 = incremental_l2_gain_bisect(poly, (0.5, 3.0), 1e-2)
    assert r2.certified and r2.gamma <= 1.02


def test_nonlinear_known_model_gain_one():
    # x' = -x - x^3 + u: Jacobian -1 - 3x^2 <= -1, incremental gain 1
    basis = TaylorBasis([0.0, 0.0], 3, min_order=1)
    model = joint_model(sector_bound(basis, DerivativeBounds.zero(1, 2, 3)))
    A = np.zeros((1, basis.nz))
    A[0, basis.indices.index((1, 0))] = -1.0
    A[0, basis.indices.index((0, 1))] = 1.0
    A[0, basis.indices.index((3, 0))] = -6.0
    env = Envelope(model, CoefficientEllipsoid.point(A))
    op = OperationSet.box([-1.0, -1.0], [1.0, 1.0], 1)
    res = incremental_l2_gain_bisect(assemble_psi_incremental(env, op), (0.5, 3.0), 1e-2)
    assert res.certified and 1.0 - 1e-6 <= res.gamma <= 1.02


def test_k_zero_rejected():
    basis = TaylorBasis([0.0, 0.0], 0)
    model = joint_model(sector_bound(basis, DerivativeBounds.uniform(1, 2, 0, 1.0)))
    env = Envelope(model, CoefficientEllipsoid.point(np.zeros((1, 1))))
    with pytest.raises(ValueError):
        assemble_psi_incremental(env, OperationSet.box([-1.0, -1.0], [1.0, 1.0], 1))


def test_incremental_claim_wrapping():
    env = linear_known([[-2.0]], [[1.0]])
    op = OperationSet.box([-1.0, -1.0], [1.0, 1.0], 1)
    sup = DifferentialSupply.gain(1, 1)
    res = incremental_l2_gain_bisect(assemble_psi_incremental(env, op, sup), (0.1, 3.0), 1e-2)
    claim = incremental_from_differential(res, sup)
    np.testing.assert_array_equal(claim.Q, sup.Q)
    np.testing.assert_array_equal(claim.S, sup.S)
    assert claim.gamma == res.gamma
    np.testing.assert_allclose(claim.R, res.gamma**2 * np.eye(1))
    assert claim.to_dict()["gamma"] == res.gamma
    with pytest.raises(ValueError):
        DifferentialSupply(np.eye(1), np.zeros((1, 1)), np.eye(1))
