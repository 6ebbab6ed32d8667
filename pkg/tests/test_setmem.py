import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tpv.setmem import (
    CoefficientEllipsoid,
    EllipsoidError,
    Envelope,
    EnvelopeSet,
    Sample,
    build_delta_blocks,
    compute_q,
    dual_quadratic_constraints,
    dualize,
    fit_envelope,
    membership,
    min_noise_scale,
    min_sector_over_ellipsoid,
    model_blocks,
    rank_check,
    samples_from_arrays,
    slab_violation,
    solve_outer_ellipsoid,
)
from tpv.taylor import DerivativeBounds, TaylorBasis, joint_model, sector_bound


def scalar_sector(k=1, M=1.0, w=0.0):
    b = TaylorBasis([w], k)
    return b, sector_bound(b, DerivativeBounds.uniform(1, 1, k, M))


def test_compute_q_examples():
    b, sec = scalar_sector(k=0, M=2.0)
    assert compute_q(Sample([1.0], [0.0], 1.0), sec) == pytest.approx(9.0)
    b, sec = scalar_sector(k=1, M=0.0)
    assert compute_q(Sample([0.3], [0.0], 0.1), sec) == pytest.approx(0.01)
    assert compute_q(Sample([0.3], [0.0], 0.0), sec) > 0.0


def test_rank_check_examples():
    b, _ = scalar_sector(k=2)
    assert not rank_check(samples_from_arrays([[0.0], [1.0]], [0.0, 0.0], 0.1), b)
    assert rank_check(samples_from_arrays([[0.0], [1.0], [2.0]], [0.0, 0.0, 0.0], 0.1), b)
    assert not rank_check(samples_from_arrays([[0.5]] * 6, [0.0] * 6, 0.1), b)
    assert not rank_check([], b)


def test_delta_block_single_sample():
    b, sec = scalar_sector(k=0, M=0.0)
    s = Sample([0.2], [1.5], 0.5)
    (blk,) = build_delta_blocks([s], b, sec)
    q = compute_q(s, sec)
    np.testing.assert_allclose(blk.matrix, [[1.0, -1.5], [-1.5, 1.5**2 - q]])


def test_delta_blocks_structure():
    b, sec = scalar_sector(k=2, M=0.3)
    rng = np.random.default_rng(0)
    X = rng.uniform(-1, 1, (5, 1))
    for blk in build_delta_blocks(samples_from_arrays(X, np.sin(X), 0.01), b, sec):
        D = blk.matrix
        assert np.allclose(D, D.T)
        nz = len(blk.z)
        assert np.linalg.matrix_rank(D[:nz, :nz], tol=1e-12) == 1


def test_no_blocks_error():
    with pytest.raises(ValueError):
        solve_outer_ellipsoid([])


def test_rank_deficient_error():
    b, sec = scalar_sector(k=2)
    with pytest.raises(EllipsoidError):
        fit_envelope(joint_model(sec), samples_from_arrays([[0.5]] * 5, [0.0] * 5, 0.1))


def _poly_data(rng, S=20, eps=1e-3):
    # f(x) = 1 - x + 0.25 x^2 on [-1, 1], k = 2, M = 0
    b, sec = scalar_sector(k=2, M=0.0)
    A = np.array([[1.0, -1.0, 0.5]])
    X = rng.uniform(-1, 1, (S, 1))
    Y = b.eval(X) @ A.T
    d = rng.uniform(-eps, eps, Y.shape)
    return b, sec, A, samples_from_arrays(X, Y + d, eps)


def test_true_coefficients_member(rng):
    b, sec, A, samples = _poly_data(rng)
    env = fit_envelope(joint_model(sec), samples)
    assert env.ellipsoid.membership(A)
    assert membership(env.ellipsoid, A)
    with pytest.raises(ValueError):
        CoefficientEllipsoid.point(A).delta_p


def test_least_squares_center_member_and_far_point(rng):
    b, sec, A, samples = _poly_data(rng, eps=0.05)
    env = fit_envelope(joint_model(sec), samples)
    X = np.array([s.x_tilde for s in samples])
    Y = np.array([s.y_tilde for s in samples])
    Z = b.eval(X)
    A_ls = np.linalg.lstsq(Z, Y, rcond=None)[0].T
    assert env.ellipsoid.membership(A_ls)
    assert not env.ellipsoid.membership(A * 1e6)


def test_delta_matrices_consistent(rng):
    b, sec, A, samples = _poly_data(rng)
    ell = fit_envelope(joint_model(sec), samples).ellipsoid
    # P^{-1} from Delta_1p, center from Delta_2p
    np.testing.assert_allclose(np.linalg.inv(ell.delta1p), ell.P_inv, rtol=1e-6, atol=1e-14)
    np.testing.assert_allclose(-np.linalg.solve(ell.delta1p, ell.delta2p).T, ell.center, atol=1e-9)
    # delta_star is the dualized Delta_p
    np.testing.assert_allclose(dualize(ell.delta_p, ell.nz), ell.delta_star, rtol=1e-6, atol=1e-8)


def test_outer_bound_contains_feasible_set(rng):
    b, sec, A, samples = _poly_data(rng, S=12, eps=0.05)
    model = joint_model(sec)
    ell = fit_envelope(model, samples).ellipsoid
    # rejection-sample the slab intersection inside a box around A
    hits = 0
    for _ in range(20000):
        C = A + rng.uniform(-0.1, 0.1, A.shape)
        if np.all(slab_violation(model, samples, C) <= 0):
            hits += 1
            assert ell.membership(C)
    assert hits > 20


def test_min_noise_scale_consistent_and_not(rng):
    b, sec, A, samples = _poly_data(rng, S=15, eps=0.01)
    model = joint_model(sec)
    t, At = min_noise_scale(model, samples)
    assert t <= 1.0
    assert np.all(slab_violation(model, samples, At) <= 1e-6)
    # shift one sample far off: no coefficient matrix explains it with eps = 0.01
    bad = list(samples)
    bad[0] = Sample(bad[0].x_tilde, bad[0].y_tilde + 1.0, 0.01)
    t2, _ = min_noise_scale(model, bad)
    assert t2 > 1.0


def test_min_sector_inactive_constraint():
    # singleton ellipsoid: the minimum is just the polynomial value
    b, sec = scalar_sector(k=1, M=0.5)
    A = np.array([[0.1, 0.8]])
    ell = CoefficientEllipsoid.point(A)
    x, y = np.array([0.4]), np.array([1.3])
    want = (y[0] - A[0] @ b.eval(x)) ** 2 - sec.rpoly_sum(x)
    assert min_sector_over_ellipsoid(ell, b, sec, x, y) == pytest.approx(want)


def test_min_sector_boundary_member(rng):
    b, sec, A, samples = _poly_data(rng, eps=0.05)
    ell = fit_envelope(joint_model(sec), samples).ellipsoid
    x = np.array([0.3])
    z = b.eval(x)
    Ab = ell.boundary_member(np.array([1.0]), ell.P_inv @ z)
    assert ell.membership(Ab, tol=1e-7)
    # y on the sector surface of Ab, pushed outwards
    r = np.sqrt(sec.rpoly_sum(x))
    direction = np.sign((Ab - ell.center) @ z)[0]
    y = Ab @ z + direction * r
    assert abs(min_sector_over_ellipsoid(ell, b, sec, x, y)) < 1e-6


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_min_sector_is_lower_bound_over_members(seed):
    rng = np.random.default_rng(seed)
    b, sec, A, samples = _poly_data(rng, eps=0.05)
    ell = fit_envelope(joint_model(sec), samples).ellipsoid
    x = rng.uniform(-1, 1, 1)
    y = rng.uniform(-2, 3, 1)
    m = min_sector_over_ellipsoid(ell, b, sec, x, y)
    z = b.eval(x)
    vals = [((y - C @ z) ** 2).sum() - sec.rpoly_sum(x) for C in ell.sample_members(200, rng)]
    assert m <= min(vals) + 1e-9


def test_dualize_involution():
    rng = np.random.default_rng(4)
    for _ in range(5):
        B = rng.standard_normal((4, 4))
        M = B + B.T + np.diag([0, 0, 0, 5.0])
        np.testing.assert_allclose(dualize(dualize(M, 3), 3), M, atol=1e-9)


def test_dual_quadratic_slab_geometry():
    b, sec = scalar_sector(k=1, M=0.0)
    s = Sample([0.5], [2.0], 0.1)
    (dq,) = dual_quadratic_constraints(build_delta_blocks([s], b, sec))
    z = b.eval(s.x_tilde)
    center = np.array([[2.0, 0.0]])  # center z = 2 = y
    perp = np.array([z[1], -z[0]])  # z^T perp = 0
    for scale in (0.0, 1.0, 1e3, -1e6):
        assert dq.satisfied(center + scale * perp[None, :], tol=1e-6)
    huge = dual_quadratic_constraints(build_delta_blocks([Sample([0.5], [2.0], 1e6)], b, sec))[0]
    assert huge.satisfied(np.array([[100.0, -50.0]]))


def test_envelope_set_and_ball_violation(rng):
    b, sec, A, samples = _poly_data(rng, eps=0.01)
    env = fit_envelope(joint_model(sec), samples)
    X = rng.uniform(-1, 1, (50, 1))
    Y = b.eval(X) @ A.T
    assert env.contains(X, Y).all()
    assert not env.ball_violation(X, Y, 0.0).any()
    assert env.ball_violation(X, Y + 10.0, 0.0).all()
    both = EnvelopeSet([env, env])
    np.testing.assert_array_equal(both.contains(X, Y + 0.2), env.contains(X, Y + 0.2))
    lo_hi = env.output_bounds(X)[0]
    assert np.all(np.abs(Y[:, 0] - lo_hi[0][:, 0]) <= lo_hi[1] + 1e-9)


def test_ellipsoid_dict_round_trip(rng):
    b, sec, A, samples = _poly_data(rng)
    ell = fit_envelope(joint_model(sec), samples).ellipsoid
    back = CoefficientEllipsoid.from_dict(ell.to_dict())
    np.testing.assert_allclose(back.center, ell.center)
    np.testing.assert_allclose(back.P_inv, ell.P_inv)


def test_model_blocks_q_matches_compute_q(rng):
    b, sec = scalar_sector(k=1, M=0.7)
    X = rng.uniform(-1, 1, (6, 1))
    S = samples_from_arrays(X, np.sin(X), 0.02)
    for s, blk in zip(S, model_blocks(joint_model(sec), S)):
        assert blk.q == pytest.approx(compute_q(s, sec))
