import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from bounds.dynamics import GRAVITY, MeasurementCatalogue, kinematic_model
from bounds.trajectory import (CsvFormatError, CsvSchema, MotifSpec, RandomTrajectoryRanges,
                               Trajectory, TrajectoryError, compose_motifs, eased_step,
                               export_csv, generate_motif_setpoints, generate_random_setpoints,
                               ingest_csv, simulated_trajectory, sum_of_sines_velocity)


def test_straight_motif_is_constant():
    sp = generate_motif_setpoints(MotifSpec("straight", speed=1.0), 50, 0.1)
    assert np.all(sp.v_x == 1.0)
    assert np.all(np.diff(sp.psi) == 0.0)


def test_heading_turn_ramps_heading_and_keeps_speed():
    sp = generate_motif_setpoints(MotifSpec("heading_turn", math.pi / 2, 2.0, 1.0), 50, 0.1)
    assert sp.psi[-1] - sp.psi[0] == pytest.approx(math.pi / 2)
    np.testing.assert_allclose(np.hypot(sp.v_x, sp.v_y), 1.0)


def test_offset_turn_holds_heading():
    sp = generate_motif_setpoints(MotifSpec("offset_turn", 0.5, 2.0, 1.0), 50, 0.1)
    assert np.all(sp.psi == sp.psi[0])
    assert math.atan2(sp.v_y[-1], sp.v_x[-1]) == pytest.approx(0.5)


def test_upwind_crossing_crosses_wind_once():
    sp = generate_motif_setpoints(
        MotifSpec("upwind_crossing", 0.2, 3.0, 1.0, wind_dir=0.0), 60, 0.1)
    assert sp.psi[0] == pytest.approx(-0.2)
    assert sp.psi[-1] == pytest.approx(0.2)
    d = np.sign(sp.psi - sp.zeta)
    d = d[d != 0]
    assert np.count_nonzero(np.diff(d)) == 1


def test_motif_past_end_rejected():
    with pytest.raises(TrajectoryError, match="beyond"):
        generate_motif_setpoints(MotifSpec("heading_turn", 1.0, 3.0, 4.0), 50, 0.1)


def test_unknown_motif_rejected():
    with pytest.raises(TrajectoryError):
        MotifSpec("loop")


@given(amp=st.floats(-3, 3), dur=st.floats(0.3, 3), start=st.floats(0, 2))
def test_motif_steps_are_bounded(amp, dur, start):
    dt = 0.1
    sp = compose_motifs([MotifSpec("heading_turn", amp, dur, start)], 60, dt)
    assert np.all(np.isfinite(sp.psi))
    assert np.max(np.abs(np.diff(sp.psi))) <= 2 * abs(amp) / dur * dt + 1e-12


def test_eased_step_endpoints():
    y = eased_step([0.0, 1.0, 2.0, 3.0, 4.0], 1.0, 2.0)
    np.testing.assert_allclose(y, [0.0, 0.0, 0.5, 1.0, 1.0], atol=1e-15)


def test_random_setpoints_deterministic():
    r = RandomTrajectoryRanges()
    a = generate_random_setpoints(r, 7, 40, 0.01, count=5)
    b = generate_random_setpoints(r, 7, 40, 0.01, count=5)
    for name in ("v_x", "v_y", "psi", "w", "zeta"):
        np.testing.assert_array_equal(getattr(a, name), getattr(b, name))


def test_random_wind_draws_respect_bounds():
    sp = generate_random_setpoints(RandomTrajectoryRanges(), 0, 2, 0.01, count=10_000)
    w = sp.w[:, 0]
    assert w.min() >= 0.0 and w.max() <= 2.0
    # uniform(0, 2): sd = 2/sqrt(12)
    assert abs(w.mean() - 1.0) <= 3 * (2 / math.sqrt(12)) / math.sqrt(w.size)


def test_unit_speed_ratio_means_no_acceleration():
    sp = generate_random_setpoints(RandomTrajectoryRanges(v_x_ratio=(1, 1)), 3, 30, 0.01,
                                   count=20)
    assert np.all(np.diff(sp.v_x, axis=-1) == 0.0)


def test_inverted_range_rejected():
    with pytest.raises(TrajectoryError):
        RandomTrajectoryRanges(w=(2.0, 0.0))


def test_sum_of_sines_zero_amplitude_is_offset():
    v = sum_of_sines_velocity(1, 50, 0.1, n_components=1, amplitude=(0, 0), offset=(3, 3))
    np.testing.assert_array_equal(v, 3.0)


def test_sum_of_sines_reproducible_and_band_limited():
    a = sum_of_sines_velocity(4, 111, 0.1, count=50)
    np.testing.assert_array_equal(a, sum_of_sines_velocity(4, 111, 0.1, count=50))
    # fraction of (non-DC) power below 1 Hz, averaged over the batch
    x = a - a.mean(axis=1, keepdims=True)
    P = np.abs(np.fft.rfft(x * np.hanning(111), axis=1)) ** 2
    f = np.fft.rfftfreq(111, 0.1)
    frac = P[:, f < 1.0].sum(axis=1) / P.sum(axis=1)
    assert frac.mean() >= 0.95


def _sim_traj(K=100):
    m = kinematic_model()
    U = np.tile(m.input_vector(u_z=GRAVITY, u_psi=0.2), (K, 1))
    return m, simulated_trajectory(m, m.state_vector(v_x=1.0, z=2.0, w=0.5), U,
                                   MeasurementCatalogue.of("psi,gamma,beta,r"))


def test_csv_round_trip(tmp_path):
    _, tr = _sim_traj()
    p = tmp_path / "t.csv"
    export_csv(tr, p)
    back = ingest_csv(p)
    assert back.dt == tr.dt
    assert back.state_names == tr.state_names
    assert back.input_names == tr.input_names
    assert back.measurement_names == tr.measurement_names
    np.testing.assert_array_equal(back.states, tr.states)
    np.testing.assert_array_equal(back.inputs, tr.inputs)
    np.testing.assert_array_equal(back.measurements, tr.measurements)


def test_csv_gap_names_row(tmp_path):
    p = tmp_path / "gap.csv"
    p.write_text("t,v_x\n0,1\n0.1,1\n0.2,1\n0.5,1\n0.6,1\n")
    with pytest.raises(CsvFormatError, match="row 3"):
        ingest_csv(p)


def test_csv_flow_scaling(tmp_path):
    p = tmp_path / "flow.csv"
    p.write_text("t,y_r\n0,1.0\n0.1,2.0\n0.2,-4.0\n")
    tr = ingest_csv(p, CsvSchema(flow_columns=("r",)))
    np.testing.assert_allclose(tr.measurement("r"), np.array([1.0, 2.0, -4.0]) * 0.057)


def test_csv_collects_all_problems(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("t,v_x\n0,1\n0.1,nan\n0.2,abc\n")
    with pytest.raises(CsvFormatError) as ei:
        ingest_csv(p)
    assert "row 1" in str(ei.value) and "row 2" in str(ei.value)


def test_csv_missing_declared_column(tmp_path):
    p = tmp_path / "m.csv"
    p.write_text("t,v_x\n0,1\n0.1,1\n")
    with pytest.raises(CsvFormatError, match="psi"):
        ingest_csv(p, CsvSchema(states=("v_x", "psi")))


def test_trajectory_label_mismatch_rejected():
    with pytest.raises(TrajectoryError):
        Trajectory(0.1, np.zeros((3, 2)), ("a",), np.zeros((3, 0)), (), np.zeros((3, 0)), ())


def test_trajectory_arrays_are_read_only():
    _, tr = _sim_traj(10)
    with pytest.raises(ValueError):
        tr.states[0, 0] = 1.0
