import math
import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from bounds.dynamics import MeasurementCatalogue, kinematic_model, linear_model, planar_model
from bounds.mpc import inverse_tracking
from bounds.observability import (CoordinateTransform, ObservabilityError, ObservabilityMatrix,
                                  ObservabilityWarning, chernoff_inverse, chernoff_inverse_batch,
                                  empirical_O, fisher, fisher_batch, noise_block,
                                  polar_velocity_transform, reparameterize, slice_O,
                                  sliding_O, sliding_window_variance, transform_O)
from bounds.trajectory import MotifSpec, compose_motifs, simulated_trajectory

KIN_SENSORS = MeasurementCatalogue.of("psi,gamma,beta")


def _kin_window(window=5):
    m = kinematic_model()
    U = np.tile(m.input_vector(u_z=9.81, u_psi=0.3, u_theta=0.02), (window, 1))
    x0 = m.state_vector(v_x=1.0, v_y=0.2, z=2.0, w=0.8, zeta=0.6, psi=0.1)
    return m, x0, U


# ---------------------------------------------------------------------------
# empirical O


def test_scalar_linear_system_column():
    m = linear_model([[0.9]], [[1.0]])
    O = empirical_O(m, MeasurementCatalogue.of("y0"), [2.0], np.zeros((3, 1)), 3)
    np.testing.assert_allclose(O.values[:, 0], [1.0, 0.9, 0.81], atol=1e-9)


def test_identity_measurement_one_step():
    A = np.array([[0.5, 0.1, 0.0], [0.0, 1.0, 0.2], [0.3, 0.0, 0.9]])
    m = linear_model(A, np.eye(3))
    O = empirical_O(m, MeasurementCatalogue.of("y0,y1,y2"), [1.0, -1.0, 0.5],
                    np.zeros((1, 1)), 1)
    np.testing.assert_allclose(O.values, np.eye(3), atol=1e-9)


def test_planar_optic_flow_row():
    m = planar_model()
    z, vx = 2.5, 1.7
    O = empirical_O(m, MeasurementCatalogue.of("r_x"), [z, 0.0, vx], np.zeros((1, 2)), 1)
    expected = np.array([-vx / z ** 2, 0.0, 1 / z])
    np.testing.assert_allclose(O.values[0], expected, rtol=1e-6, atol=1e-12)


@pytest.mark.parametrize("seed", range(6))
def test_lti_matches_stacked_observability_matrix(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 6))
    p = int(rng.integers(1, 3))
    A = rng.normal(size=(n, n))
    A *= 0.9 / max(np.max(np.abs(np.linalg.eigvals(A))), 1e-9)
    C = rng.normal(size=(p, n))
    w = 5
    m = linear_model(A, C)
    O = empirical_O(m, MeasurementCatalogue.of([f"y{i}" for i in range(p)]),
                    rng.normal(size=n), np.zeros((w, 1)), w)
    stacked = np.vstack([C @ np.linalg.matrix_power(A, k) for k in range(w)])
    np.testing.assert_allclose(O.values, stacked, rtol=1e-6, atol=1e-9)


def test_inputs_not_resolved_for_perturbed_runs():
    m, x0, U = _kin_window()
    a = empirical_O(m, KIN_SENSORS, x0, U, 5)
    b = empirical_O(m, KIN_SENSORS, x0, np.vstack([U, U]), 5)
    np.testing.assert_array_equal(a.values, b.values)
    assert a.row_labels[:3] == [(0, "psi"), (0, "gamma"), (0, "beta")]


def test_undefined_measurement_reported():
    m = planar_model()
    with pytest.raises(ObservabilityError):
        empirical_O(m, MeasurementCatalogue.of("r_x"), [0.0, 0.0, 1.0], np.zeros((2, 2)), 2)


def test_too_few_inputs_rejected():
    m, x0, U = _kin_window(3)
    with pytest.raises(ObservabilityError, match="input rows"):
        empirical_O(m, KIN_SENSORS, x0, U, 5)


def test_angle_measurements_unwrapped_across_pi():
    m = kinematic_model()
    U = np.tile(m.input_vector(u_z=9.81), (4, 1))
    x0 = m.state_vector(v_x=1.0, z=2.0, w=1.0, psi=math.pi - 1e-7)
    O = empirical_O(m, MeasurementCatalogue.of("psi"), x0, U, 4)
    np.testing.assert_allclose(O.values[:, m.state_index("psi")], 1.0, atol=1e-6)


# ---------------------------------------------------------------------------
# Fisher information


def test_fisher_identity_noise():
    rng = np.random.default_rng(1)
    O = ObservabilityMatrix(rng.normal(size=(6, 3)), ("a", "b", "c"), ("y0", "y1"), (0, 1, 2))
    np.testing.assert_allclose(fisher(O, 1.0).F, O.values.T @ O.values, atol=1e-12)


def test_fisher_scales_inversely_with_noise():
    rng = np.random.default_rng(2)
    O = ObservabilityMatrix(rng.normal(size=(6, 3)), ("a", "b", "c"), ("y0", "y1"), (0, 1, 2))
    np.testing.assert_allclose(fisher(O, 10.0).F, fisher(O, 1.0).F / 10, rtol=1e-12)


def test_fisher_matches_blockwise_sum():
    rng = np.random.default_rng(3)
    Ov = rng.normal(size=(6, 3))
    Rk = rng.uniform(0.1, 2.0, size=2)
    O = ObservabilityMatrix(Ov, ("a", "b", "c"), ("y0", "y1"), (0, 1, 2))
    F = fisher(O, Rk).F
    oracle = sum(Ov[2 * k:2 * k + 2].T @ np.diag(1 / Rk) @ Ov[2 * k:2 * k + 2] for k in range(3))
    np.testing.assert_allclose(F, oracle, atol=1e-10)


def test_singular_noise_rejected():
    O = ObservabilityMatrix(np.ones((4, 1)), ("a",), ("y0", "y1"), (0, 1))
    with pytest.raises(ObservabilityError, match="positive definite"):
        fisher(O, np.diag([1.0, 0.0]))


def test_noise_block_default_variance():
    np.testing.assert_array_equal(noise_block(0.1, 2, 3), 0.1 * np.eye(6))


# ---------------------------------------------------------------------------
# Chernoff inverse


def test_unobservable_scalar_is_capped():
    _, v = chernoff_inverse(np.zeros((1, 1)), 1e-6, warn=False)
    assert v.values[0] == pytest.approx(1e6)
    assert v.saturated[0]


def test_diagonal_case():
    _, v = chernoff_inverse(np.diag([2.0, 0.0]), 1e-6)
    np.testing.assert_allclose(v.values, [0.5, 1e6], rtol=1e-6)
    assert list(v.saturated) == [False, True]


def test_rank_deficient_small_lambda_limit():
    rng = np.random.default_rng(4)
    B = rng.normal(size=(4, 2))
    F = B @ B.T
    _, v = chernoff_inverse(F, 1e-6, warn=False)
    # observable subspace: pseudo-inverse restricted to range(F) is the limit
    Q, _ = np.linalg.qr(B)
    Fr = Q.T @ F @ Q
    proj_var = np.diag(Q @ np.linalg.inv(Fr) @ Q.T)
    _, v10 = chernoff_inverse(F, 1e-10, warn=False)
    # full-state diagonals mix null directions; compare the projected quadratic forms
    inv6, _ = chernoff_inverse(F, 1e-6, warn=False)
    inv10, _ = chernoff_inverse(F, 1e-10, warn=False)
    for q in Q.T:
        assert q @ inv6 @ q == pytest.approx(q @ inv10 @ q, rel=1e-3)
        assert q @ inv6 @ q == pytest.approx(q @ (Q @ np.linalg.inv(Fr) @ Q.T) @ q, rel=1e-3)
    N = np.linalg.svd(B.T)[2][2:]
    for nvec in N:
        assert nvec @ inv6 @ nvec == pytest.approx(1e6, rel=1e-6)
    assert np.all(v.values >= proj_var)


def test_lambda_warning():
    with pytest.warns(ObservabilityWarning):
        chernoff_inverse(np.diag([1e-7, 1.0]), 1e-6)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        chernoff_inverse(np.diag([1e-3, 1.0]), 1e-6)


def test_nonpositive_lambda_rejected():
    with pytest.raises(ObservabilityError):
        chernoff_inverse(np.eye(2), 0.0)


@given(st.integers(0, 10_000))
def test_inverse_is_spd_and_matches_solve(seed):
    rng = np.random.default_rng(seed)
    B = rng.normal(size=(5, int(rng.integers(1, 6))))
    F = B @ B.T
    inv = chernoff_inverse_batch(F, 1e-3)
    np.testing.assert_allclose(inv @ (F + 1e-3 * np.eye(5)), np.eye(5), atol=1e-6)
    assert np.all(np.linalg.eigvalsh(inv) > 0)


def test_whitened_and_direct_inverse_agree():
    m, x0, U = _kin_window()
    fi = fisher(empirical_O(m, KIN_SENSORS, x0, U, 5), 0.1)
    a, _ = chernoff_inverse(fi, warn=False)
    b = chernoff_inverse_batch(fi.F)
    np.testing.assert_allclose(np.diag(a), np.diag(b), rtol=1e-6)


# ---------------------------------------------------------------------------
# monotonicity and Cramer-Rao sanity


def _diag_var(O, R=0.1, lam=1e-6):
    return np.diag(chernoff_inverse_batch(fisher_batch(O, noise_block(R, 1, O.shape[0])), lam))


def test_adding_a_sensor_never_increases_variance():
    m, x0, U = _kin_window()
    full = empirical_O(m, MeasurementCatalogue.of("psi,gamma,beta,g"), x0, U, 5)
    prev = None
    for k in range(1, 5):
        sub = slice_O(full, sensors=full.measurement_names[:k])
        d = _diag_var(sub.values)
        if prev is not None:
            assert np.all(d <= prev * (1 + 1e-10) + 1e-10)
        prev = d


def test_extending_window_never_increases_variance():
    m, x0, U = _kin_window(8)
    full = empirical_O(m, KIN_SENSORS, x0, U, 8)
    prev = None
    for w in range(1, 9):
        d = _diag_var(slice_O(full, steps=range(w)).values)
        if prev is not None:
            assert np.all(d <= prev * (1 + 1e-10) + 1e-10)
        prev = d


def test_cramer_rao_scalar_mean():
    sigma2, w = 0.1, 5
    m = linear_model([[1.0]], [[1.0]])
    O = empirical_O(m, MeasurementCatalogue.of("y0"), [0.3], np.zeros((w, 1)), w)
    _, v = chernoff_inverse(fisher(O, sigma2))
    assert v.values[0] == pytest.approx(sigma2 / w, rel=1e-6)
    rng = np.random.default_rng(0)
    trials = 10_000
    est = (0.3 + rng.normal(0, math.sqrt(sigma2), (trials, w))).mean(axis=1)
    mc = est.var(ddof=1)
    # the sample mean is efficient: its variance equals the bound up to
    # Monte Carlo error (relative sd sqrt(2/N))
    assert mc >= v.values[0] * (1 - 3 * math.sqrt(2 / trials))
    assert abs(mc / v.values[0] - 1) <= 0.10


# ---------------------------------------------------------------------------
# transforms and slicing


def _identity_T(n, c=1.0):
    return CoordinateTransform(lambda x: c * np.asarray(x), tuple(f"z{i}" for i in range(n)),
                               lambda x: c * np.eye(n), lambda z: np.asarray(z) / c)


def test_identity_transform():
    m, x0, U = _kin_window()
    O = empirical_O(m, KIN_SENSORS, x0, U, 5)
    np.testing.assert_allclose(transform_O(O, _identity_T(m.n), x0).values, O.values)


def test_scaling_transform_halves_O_and_scales_variance():
    m = planar_model()
    x0 = [2.0, 0.0, 1.0]
    U = np.zeros((5, 2))
    U[1:3, 1] = -1.0
    O = empirical_O(m, MeasurementCatalogue.of("r_x"), x0, U, 5)
    Oz = transform_O(O, _identity_T(3, 2.0), x0)
    np.testing.assert_allclose(Oz.values, O.values / 2, rtol=1e-12)
    # a tiny lambda so the regularizer does not blur the exact scaling
    _, vx = chernoff_inverse(fisher(slice_O(O, states=["z"]), 0.1), 1e-14)
    _, vz = chernoff_inverse(fisher(slice_O(Oz, states=["z0"]), 0.1), 1e-14)
    # z-coordinate variance carries squared units: variance of 2x is 4 var(x)
    assert vz.values[0] == pytest.approx(4 * vx.values[0], rel=1e-6)


def test_polar_transform_matches_reparameterized_model():
    m, x0, U = _kin_window()
    T = polar_velocity_transform(m)
    Oz = transform_O(empirical_O(m, KIN_SENSORS, x0, U, 5), T, x0)
    mz = reparameterize(m, T)
    direct = empirical_O(mz, KIN_SENSORS, T.forward(x0), U, 5)
    scale = np.maximum(np.abs(direct.values), 1e-3)
    assert np.max(np.abs(Oz.values - direct.values) / scale) <= 1e-5


def test_singular_transform_reports_condition():
    m = kinematic_model()
    x0 = m.state_vector(z=2.0, w=1.0)
    O = empirical_O(m, MeasurementCatalogue.of("psi,gamma"), x0,
                    np.tile(m.input_vector(u_z=9.81), (3, 1)), 3)
    with pytest.raises(ObservabilityError, match="condition"):
        transform_O(O, polar_velocity_transform(m), x0)


def test_slice_full_is_identity():
    m, x0, U = _kin_window()
    O = empirical_O(m, KIN_SENSORS, x0, U, 5)
    np.testing.assert_array_equal(slice_O(O).values, O.values)


def test_slice_matches_recomputation():
    m, x0, U = _kin_window()
    O = empirical_O(m, KIN_SENSORS, x0, U, 5)
    s = slice_O(O, sensors=["beta"], steps=[3])
    single = empirical_O(m, MeasurementCatalogue.of("beta"), x0, U, 5)
    assert s.values.shape == (1, m.n)
    np.testing.assert_allclose(s.values[0], single.values[3], atol=1e-12)


def test_slice_before_and_after_steps():
    m, x0, U = _kin_window()
    O = empirical_O(m, KIN_SENSORS, x0, U, 5)
    assert slice_O(O, steps=[0, 4]).values.shape == (2 * 3, m.n)


def test_empty_slice_rejected():
    m, x0, U = _kin_window()
    with pytest.raises(ObservabilityError, match="empty"):
        slice_O(empirical_O(m, KIN_SENSORS, x0, U, 5), sensors=[])


# ---------------------------------------------------------------------------
# sliding windows


def test_lti_constant_trajectory_has_constant_variance():
    A = np.array([[1.0, 0.1], [0.0, 1.0]])
    m = linear_model(A, [[1.0, 0.0]], dt=0.1)
    tr = simulated_trajectory(m, [0.0, 0.0], np.zeros((20, 1)),
                              MeasurementCatalogue.of("y0"))
    vs = sliding_window_variance(m, tr, 5, 0.1, catalogue=MeasurementCatalogue.of("y0"))
    np.testing.assert_allclose(vs.variance, np.broadcast_to(vs.variance[0], vs.variance.shape),
                               rtol=1e-9)
    np.testing.assert_allclose(vs.t_display - vs.t_start, 2.5 * 0.1)


@pytest.fixture(scope="module")
def heading_turn():
    m = kinematic_model()
    sp = compose_motifs([MotifSpec("heading_turn", 1.5, 3.0, 2.0)], 81, 0.1, speed=1.0,
                        wind_speed=1.0, wind_dir=0.5)
    X, U = inverse_tracking(m, sp)
    return m, simulated_trajectory(m, X[0], U)


def test_wind_direction_variance_drops_during_turn(heading_turn):
    m, tr = heading_turn
    vs = sliding_window_variance(m, tr, 5, 0.1, catalogue=KIN_SENSORS,
                                 states=["v_x", "v_y", "psi", "w", "zeta"])
    zeta = vs["zeta"]
    turn = (vs.t_start >= 2.0) & (vs.t_start <= 4.6)
    straight = vs.t_start >= 5.5
    assert zeta[turn].min() <= 0.1 * np.median(zeta[straight])


def test_altitude_needs_acceleration():
    m = planar_model()
    K = 41
    U = np.zeros((K, 2))
    U[15:25, 1] = -0.5
    tr = simulated_trajectory(m, [2.0, 0.0, 2.0], U)
    cat = MeasurementCatalogue.of("r_x")
    vs = sliding_window_variance(m, tr, 5, 0.1, catalogue=cat)
    z = vs["z"]
    const = vs.t_start <= 1.0
    pulse = (vs.t_start >= 1.5) & (vs.t_start <= 2.0)
    O = sliding_O(m, tr.states, tr.inputs, 5, cat)
    assert all(np.linalg.matrix_rank(O[i]) < m.n for i in np.flatnonzero(const))
    assert np.all(z[const] >= 0.5e6 * 0.99)
    assert np.all(vs.saturated[const, 0])
    assert np.all(z[pulse] < 0.5e6)


def test_sliding_variance_workers_agree(heading_turn):
    m, tr = heading_turn
    a = sliding_window_variance(m, tr, 5, catalogue=KIN_SENSORS, chunk=16)
    b = sliding_window_variance(m, tr, 5, catalogue=KIN_SENSORS, chunk=16, workers=3)
    np.testing.assert_array_equal(a.variance, b.variance)


def test_unknown_state_subset_rejected(heading_turn):
    m, tr = heading_turn
    with pytest.raises(ObservabilityError, match="unknown states"):
        sliding_window_variance(m, tr, 5, catalogue=KIN_SENSORS, states=["speed"])


def test_short_trajectory_rejected(heading_turn):
    m, tr = heading_turn
    with pytest.raises(ObservabilityError, match="shorter"):
        sliding_window_variance(m, tr, 200, catalogue=KIN_SENSORS)


def test_variance_csv(heading_turn):
    m, tr = heading_turn
    vs = sliding_window_variance(m, tr, 5, catalogue=KIN_SENSORS, states=["w", "zeta"])
    lines = vs.to_csv().splitlines()
    assert lines[0] == "t_start,t_display,var_w,var_zeta,saturated_w,saturated_zeta"
    assert len(lines) == 1 + tr.K - 4
