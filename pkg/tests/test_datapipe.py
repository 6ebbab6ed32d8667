import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import hinf_norm
from tpv.datapipe import (
    NoiseModel,
    SmoothingConfig,
    Trajectory,
    central_diff6,
    chirp_input,
    coupled_oscillators,
    diff6,
    l2_lower_bound,
    lti_system,
    read_samples_csv,
    read_trajectory_csv,
    simulate,
    smooth,
    smooth_signal,
    snapshot_indices,
    snapshots,
    triangular_weights,
    two_tank,
    two_tank_equilibrium,
    write_samples_csv,
    write_trajectory_csv,
)


def test_trajectory_invariants():
    with pytest.raises(ValueError):
        Trajectory([0.0, 0.1, 0.3], np.zeros(3), np.zeros(3))
    with pytest.raises(ValueError):
        Trajectory([0.0, 0.1, 0.2], [0.0, np.nan, 0.0], np.zeros(3))
    tr = Trajectory(np.arange(5) * 0.1, np.zeros(5), [])
    assert tr.nu == 0 and tr.h == pytest.approx(0.1)


def test_weights_shape():
    w = triangular_weights(3)
    assert w.sum() == pytest.approx(1.0)
    np.testing.assert_allclose(w, w[::-1])
    assert np.argmax(w) == 3 and np.all(np.diff(w[:4]) > 0)
    # linear decay hits zero one step past the window
    np.testing.assert_allclose(w[:4] / w[3], [0.25, 0.5, 0.75, 1.0])


def test_smoothing_constant_and_ramp():
    np.testing.assert_allclose(smooth_signal(np.full(50, 3.2), 5), 3.2)
    r = 0.3 * np.arange(60) - 1.0
    out = smooth_signal(r, 7)
    np.testing.assert_allclose(out[7:-7], r[7:-7], atol=1e-12)
    with pytest.raises(ValueError):
        smooth_signal(np.zeros(10), 5)
    with pytest.raises(ValueError):
        SmoothingConfig(0)


def test_smoothing_variance_factor(rng):
    W = 6
    s = rng.standard_normal(200_000)
    out = smooth_signal(s, W)[W:-W]
    want = np.sum(triangular_weights(W) ** 2)
    assert out.var() == pytest.approx(want, rel=0.03)


def test_diff6_examples():
    h = 0.05
    t = np.arange(40) * h
    np.testing.assert_allclose(diff6(t**3, h), 3 * t[3:-3] ** 2, rtol=1e-10, atol=1e-12)
    # stencil exact through degree 6
    np.testing.assert_allclose(diff6(t**6, h), 6 * t[3:-3] ** 5, rtol=1e-8, atol=1e-10)
    h = 0.01
    t = np.arange(0, 1 + h / 2, h)
    assert np.max(np.abs(diff6(np.sin(t), h) - np.cos(t[3:-3]))) <= 1e-10
    np.testing.assert_allclose(diff6(np.full(20, 2.0), 0.1), 0.0, atol=1e-13)
    with pytest.raises(ValueError):
        diff6(np.zeros(6), 0.1)


def test_central_diff6_drops_boundary():
    tr = Trajectory(np.arange(20) * 0.1, np.arange(20) * 0.1, np.zeros(20))
    v = central_diff6(tr)
    assert v.idx[0] == 3 and v.idx[-1] == 16
    np.testing.assert_allclose(v.xdot, 1.0)


def _vel(n):
    tr = Trajectory(np.arange(n + 6) * 0.1, np.arange(n + 6) * 0.1, np.zeros(n + 6))
    return central_diff6(tr)


def test_snapshot_examples():
    v = _vel(30)
    assert len(snapshots(v, 30)) == 30
    two = snapshots(v, 2, 0.5)
    assert two[0].x_tilde[0] == pytest.approx(v.x[0, 0]) and two[1].x_tilde[0] == pytest.approx(v.x[-1, 0])
    assert two[0].eps == 0.5
    idx = snapshot_indices(7500, 50)
    # strides of 7499/49 = 153.04 so both ends are kept
    assert set(np.diff(idx)) <= {153, 154}
    assert idx[0] == 0 and idx[-1] == 7499
    with pytest.raises(ValueError):
        snapshots(v, 31)


def test_snapshot_noise_model():
    v = _vel(10)
    s = snapshots(v, 5, NoiseModel("relative", 0.01))
    assert s[0].eps == pytest.approx(0.01 / 0.99 * np.linalg.norm(s[0].y_tilde))
    per = snapshots(v, 5, np.array([0.1]))
    assert np.shape(per[0].eps) == (1,)


def test_l2_lower_bound_examples(rng):
    t = np.arange(100) * 0.1
    u = rng.standard_normal((100, 1))
    x = np.hstack([u, np.zeros((100, 1))])
    assert l2_lower_bound(Trajectory(t, x, u), 4, 50) == pytest.approx(1.0)
    assert l2_lower_bound(Trajectory(t, 2 * u, u), 4, 50) == pytest.approx(2.0)
    with pytest.raises(ValueError):
        l2_lower_bound(Trajectory(t, u, np.zeros((100, 1))), 4, 50)
    with pytest.raises(ValueError):
        l2_lower_bound(Trajectory(t, u, u), 4, 200)


def test_l2_lower_bound_below_lti_gain():
    # 1/(s+1) driven at w = 0.3 rad/s: gain 1 / sqrt(1.09)
    sys_ = lti_system([[-1.0]], [[1.0]])
    tr, _ = simulate(sys_, [0.0], lambda t: np.array([np.sin(0.3 * t)]), 200.0, 0.05)
    g = hinf_norm(np.array([[-1.0]]), np.array([[1.0]]))
    # windows of at least one input period (419 samples)
    lb = l2_lower_bound(tr, 420, 800)
    assert 0.9 <= lb <= g * 1.02
    # short windows start from a non-zero state and overshoot the gain
    assert l2_lower_bound(tr, 4, 150) > g


def test_simulate_equilibria():
    osc = coupled_oscillators()
    tr, _ = simulate(osc, [0.0, 0.0], lambda t: np.zeros(1), 10.0, 0.01)
    assert np.all(tr.x == 0.0) and "truncated" not in tr.meta
    tank = two_tank()
    xe = two_tank_equilibrium(tank, 0.8)
    np.testing.assert_allclose(tank.f(xe, [0.8]), 0.0, atol=1e-15)
    tr, _ = simulate(tank, [0.12, 0.12], lambda t: np.array([0.8]), 3000.0, 0.5)
    np.testing.assert_allclose(tr.x[-1], xe, rtol=1e-4)


def test_simulate_truncates_outside_box():
    tr, _ = simulate(coupled_oscillators(), [0.0, 0.0], lambda t: np.array([5.0]), 10.0, 0.01)
    assert "truncated" in tr.meta and tr.t[-1] < 10.0
    assert np.all(np.abs(tr.x) <= 0.7)


def test_rk4_order():
    osc = coupled_oscillators()
    u = chirp_input(0.3)
    end = [simulate(osc, [0.1, -0.1], u, 2.0, h)[0].x[-1] for h in (0.1, 0.05, 0.025)]
    r = np.linalg.norm(end[0] - end[1]) / np.linalg.norm(end[1] - end[2])
    assert 12.0 < r < 20.0  # 2^4


def test_pipeline_fidelity():
    osc = coupled_oscillators()
    W = 3
    tr, _ = simulate(osc, [0.0, 0.0], chirp_input(0.3), 30.0, 0.01)
    assert "truncated" not in tr.meta
    v = central_diff6(smooth(tr, SmoothingConfig(W)))
    full = slice(W, len(v.idx) - W)  # complete smoothing windows
    err = np.abs(v.xdot - v.xdot_true)[full]
    assert err.max() / np.abs(v.xdot_true).max() <= 1e-3


@settings(max_examples=20, deadline=None)
@given(st.sampled_from(["amplitude", "relative"]), st.floats(1e-4, 0.5), st.booleans(), st.integers(0, 1000))
def test_noise_draws_inside_ball(kind, level, per, seed):
    rng = np.random.default_rng(seed)
    F = rng.standard_normal((300, 3))
    nm = NoiseModel(kind, level, per)
    d = nm.draw(F, rng)
    b = nm.bound_true(F)
    if per:
        assert np.all(np.abs(d) <= b)
    else:
        assert np.all(np.linalg.norm(d, axis=1) <= b)
    # the measured-side bound covers the true-side bound
    bm = nm.bound_measured(F + d)
    assert np.all(bm >= (np.abs(d) if per else np.linalg.norm(d, axis=1)) - 1e-12)


def test_noise_model_errors():
    with pytest.raises(ValueError):
        NoiseModel("snr", 0.1)
    with pytest.raises(ValueError):
        NoiseModel("relative", 1.0)


def test_csv_round_trips(tmp_path):
    tr, _ = simulate(coupled_oscillators(), [0.0, 0.0], chirp_input(0.3), 1.0, 0.01)
    p = tmp_path / "traj.csv"
    write_trajectory_csv(p, tr)
    back = read_trajectory_csv(p)
    np.testing.assert_array_equal(back.x, tr.x)
    np.testing.assert_array_equal(back.u, tr.u)
    assert p.read_text().startswith("# units")
    S = snapshots(central_diff6(tr), 10, 0.01)
    q = tmp_path / "s.csv"
    write_samples_csv(q, S, 2)
    S2, nx = read_samples_csv(q)
    assert nx == 2 and len(S2) == 10
    for a, b in zip(S, S2):
        np.testing.assert_array_equal(a.x_tilde, b.x_tilde)
        np.testing.assert_array_equal(a.y_tilde, b.y_tilde)
        assert a.eps == b.eps
