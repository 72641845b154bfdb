"""Trajectories, setpoint generators and CSV persistence."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .dynamics import MeasurementCatalogue, SystemModel, measure_series, simulate

MOTIF_KINDS = ("accelerate", "decelerate", "heading_turn", "offset_turn",
               "upwind_crossing", "straight")

OPTIC_FLOW_SCALE = 0.057


class TrajectoryError(ValueError):
    pass


class CsvFormatError(TrajectoryError):
    """Raised with one diagnostic line per offending row/column."""

    def __init__(self, problems: Sequence[str]):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Trajectory:
    """Uniformly sampled states, inputs and measurements.

    Any of the three blocks may have zero columns (measured data usually has
    no full state).  Angles are stored unwrapped.
    """

    dt: float
    states: np.ndarray
    state_names: tuple[str, ...]
    inputs: np.ndarray
    input_names: tuple[str, ...]
    measurements: np.ndarray
    measurement_names: tuple[str, ...]
    provenance: str = "simulated"
    t0: float = 0.0

    def __post_init__(self):
        for attr, names in (("states", "state_names"), ("inputs", "input_names"),
                            ("measurements", "measurement_names")):
            object.__setattr__(self, names, tuple(getattr(self, names)))
            arr = np.asarray(getattr(self, attr), dtype=float)
            if arr.size == 0 and not getattr(self, names):
                arr = arr.reshape(arr.shape[0] if arr.ndim else 0, 0)
            if arr.ndim != 2 or arr.shape[1] != len(getattr(self, names)):
                raise TrajectoryError(f"{attr} shape {arr.shape} does not match its labels")
            object.__setattr__(self, attr, _frozen(arr))
        Ks = {self.states.shape[0] if self.state_names else None,
              self.inputs.shape[0] if self.input_names else None,
              self.measurements.shape[0] if self.measurement_names else None} - {None}
        if len(Ks) > 1:
            raise TrajectoryError(f"states/inputs/measurements lengths differ: {sorted(Ks)}")
        if not self.dt > 0:
            raise TrajectoryError("dt must be positive")
        all_names = self.state_names + self.input_names + self.measurement_names
        if len(set(self.state_names)) != len(self.state_names) or \
                len(set(self.input_names)) != len(self.input_names) or \
                len(set(self.measurement_names)) != len(self.measurement_names):
            raise TrajectoryError(f"duplicate labels in {all_names}")

    @property
    def K(self) -> int:
        for arr, names in ((self.states, self.state_names), (self.inputs, self.input_names),
                           (self.measurements, self.measurement_names)):
            if names:
                return arr.shape[0]
        return 0

    @property
    def t(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.K)

    def state(self, name: str) -> np.ndarray:
        return self.states[:, self.state_names.index(name)]

    def input(self, name: str) -> np.ndarray:
        return self.inputs[:, self.input_names.index(name)]

    def measurement(self, name: str) -> np.ndarray:
        return self.measurements[:, self.measurement_names.index(name)]

    def check_model(self, model: SystemModel, *, full_state: bool = True):
        if full_state and self.state_names != model.state_names:
            raise TrajectoryError(
                f"trajectory states {self.state_names} do not match model {model.state_names}")
        if not set(self.state_names) <= set(model.state_names):
            raise TrajectoryError(f"unknown states for model {model.name!r}")
        if self.input_names and self.input_names != model.input_names:
            raise TrajectoryError(
                f"trajectory inputs {self.input_names} do not match model {model.input_names}")


def simulated_trajectory(model: SystemModel, x0, U, catalogue: MeasurementCatalogue | None = None,
                         *, provenance: str = "simulated") -> Trajectory:
    X = simulate(model, x0, U)
    if catalogue is None:
        Y = np.zeros((X.shape[0], 0))
        ynames: tuple[str, ...] = ()
    else:
        Y = measure_series(model, X, U, catalogue)
        ynames = catalogue.output_names(model)
    return Trajectory(model.dt, X, model.state_names, U, model.input_names, Y, ynames,
                      provenance)


# ---------------------------------------------------------------------------
# setpoints


@dataclass(frozen=True)
class Setpoints:
    """Desired body-level velocity and heading plus the (exogenous) wind.

    Arrays are 1-D over time or carry a leading batch axis.
    """

    dt: float
    v_x: np.ndarray
    v_y: np.ndarray
    psi: np.ndarray
    w: np.ndarray
    zeta: np.ndarray
    z: np.ndarray | None = None

    def __post_init__(self):
        shape = np.shape(self.v_x)
        for f in fields(self):
            if f.name == "dt":
                continue
            val = getattr(self, f.name)
            if val is None:
                continue
            arr = np.broadcast_to(np.asarray(val, dtype=float), shape)
            if not np.all(np.isfinite(arr)):
                raise TrajectoryError(f"non-finite setpoint series {f.name!r}")
            object.__setattr__(self, f.name, _frozen(arr))

    @property
    def K(self) -> int:
        return np.shape(self.v_x)[-1]

    @property
    def t(self) -> np.ndarray:
        return self.dt * np.arange(self.K)

    def channel(self, name: str) -> np.ndarray:
        val = getattr(self, name, None)
        if val is None:
            raise KeyError(f"no setpoint channel {name!r}")
        return val

    def __getitem__(self, idx) -> Setpoints:
        """Select one trajectory from a batch."""
        kw = {f.name: (getattr(self, f.name) if f.name == "dt" or getattr(self, f.name) is None
                       else getattr(self, f.name)[idx]) for f in fields(self)}
        return Setpoints(**kw)


@dataclass(frozen=True)
class MotifSpec:
    """One active-sensing motif on top of a straight-flight baseline.

    ``amplitude`` is in m/s for accelerate/decelerate and in rad for the
    turns (for ``upwind_crossing`` the heading sweeps from ``zeta - amplitude``
    to ``zeta + amplitude``).  ``start`` and ``duration`` are in seconds.
    """

    kind: str
    amplitude: float = 0.0
    duration: float = 1.0
    start: float = 0.0
    speed: float = 1.0
    heading: float = 0.0
    wind_speed: float = 1.0
    wind_dir: float = 0.0

    def __post_init__(self):
        if self.kind not in MOTIF_KINDS:
            raise TrajectoryError(f"unknown motif {self.kind!r}; choose from {MOTIF_KINDS}")
        if not self.duration > 0:
            raise TrajectoryError("motif duration must be positive")
        if self.start < 0:
            raise TrajectoryError("motif start must be nonnegative")


def eased_step(t, start: float, duration: float) -> np.ndarray:
    """0 before ``start``, 1 after ``start + duration``, cosine ramp between."""
    s = np.clip((np.asarray(t, dtype=float) - start) / duration, 0.0, 1.0)
    return 0.5 - 0.5 * np.cos(np.pi * s)


def _motif_deltas(spec: MotifSpec, t: np.ndarray):
    """(speed, heading, course-offset) increments contributed by a motif."""
    ramp = eased_step(t, spec.start, spec.duration)
    zero = np.zeros_like(t)
    A = spec.amplitude
    if spec.kind == "accelerate":
        return A * ramp, zero, zero
    if spec.kind == "decelerate":
        return -A * ramp, zero, zero
    if spec.kind == "heading_turn":
        return zero, A * ramp, zero
    if spec.kind == "offset_turn":
        return zero, zero, A * ramp
    if spec.kind == "upwind_crossing":
        return zero, 2 * A * ramp, zero
    return zero, zero, zero


def _check_fits(spec: MotifSpec, length: int, dt: float):
    end = (length - 1) * dt
    if spec.start + spec.duration > end + 1e-9:
        raise TrajectoryError(
            f"{spec.kind} motif ends at {spec.start + spec.duration:g} s, beyond the "
            f"trajectory end {end:g} s")


def generate_motif_setpoints(spec: MotifSpec, length: int, dt: float) -> Setpoints:
    """Setpoints for a single motif over ``length`` samples."""
    return compose_motifs([spec], length, dt, speed=spec.speed, heading=(
        spec.wind_dir - spec.amplitude if spec.kind == "upwind_crossing" else spec.heading),
        wind_speed=spec.wind_speed, wind_dir=spec.wind_dir)


def compose_motifs(motifs: Sequence[MotifSpec], length: int, dt: float, *,
                   speed: float = 1.0, heading: float = 0.0, course_offset: float = 0.0,
                   wind_speed: float = 1.0, wind_dir: float = 0.0,
                   altitude: float | None = None) -> Setpoints:
    """Superimpose motifs on a straight-flight baseline.

    Each motif adds an eased step to ground speed, heading, or the course
    offset between heading and ground velocity; body velocities follow from
    speed and offset.  ``wind_dir`` may be an array for time-varying wind.
    """
    if length < 2:
        raise TrajectoryError("trajectory needs at least 2 samples")
    t = dt * np.arange(length)
    s = np.full(length, float(speed))
    psi = np.full(length, float(heading))
    chi = np.full(length, float(course_offset))
    for spec in motifs:
        _check_fits(spec, length, dt)
        ds, dpsi, dchi = _motif_deltas(spec, t)
        s += ds
        psi += dpsi
        chi += dchi
    return Setpoints(dt, s * np.cos(chi), s * np.sin(chi), psi,
                     np.broadcast_to(wind_speed, t.shape), np.broadcast_to(wind_dir, t.shape),
                     None if altitude is None else np.full(length, float(altitude)))


@dataclass(frozen=True)
class RandomTrajectoryRanges:
    """Uniform sampling ranges for random training trajectories."""

    w: tuple[float, float] = (0.0, 2.0)
    zeta: tuple[float, float] = (-math.pi, math.pi)
    psi: tuple[float, float] = (-math.pi, math.pi)
    psi_dot: tuple[float, float] = (-0.11, 0.11)
    psi_ddot: tuple[float, float] = (-2.08, 2.08)
    v_x: tuple[float, float] = (0.05, 5.0)
    v_x_ratio: tuple[float, float] = (0.05, 2.0)
    v_y: tuple[float, float] = (-0.2, 0.2)
    v_y_dot: tuple[float, float] = (-0.1, 0.1)

    def __post_init__(self):
        for f in fields(self):
            lo, hi = getattr(self, f.name)
            if not lo <= hi:
                raise TrajectoryError(f"range {f.name}: low {lo} > high {hi}")
            object.__setattr__(self, f.name, (float(lo), float(hi)))


def generate_random_setpoints(ranges: RandomTrajectoryRanges, seed: int, length: int,
                              dt: float, count: int | None = None) -> Setpoints:
    """Random setpoint series (one, or a batch of ``count``).

    Heading follows a quadratic in time, forward speed ramps linearly from
    ``v_x`` to ``v_x * v_x_ratio`` over the trajectory, lateral speed ramps
    with ``v_y_dot``.  Wind is constant per trajectory.
    """
    rng = np.random.default_rng(seed)
    shape = () if count is None else (count,)
    draw = {f.name: rng.uniform(*getattr(ranges, f.name), size=shape + (1,))
            for f in fields(ranges)}
    t = dt * np.arange(length)
    T = max(t[-1], dt)
    psi = draw["psi"] + draw["psi_dot"] * t + 0.5 * draw["psi_ddot"] * t ** 2
    v_x = draw["v_x"] * (1.0 + (draw["v_x_ratio"] - 1.0) * t / T)
    v_y = draw["v_y"] + draw["v_y_dot"] * t
    full = shape + (length,)
    return Setpoints(dt, v_x, v_y, psi, np.broadcast_to(draw["w"], full),
                     np.broadcast_to(draw["zeta"], full))


def sum_of_sines_velocity(seed: int, length: int, dt: float, *, n_components: int = 3,
                          freq=(0.1, 0.9), amplitude=(-15.0, 15.0),
                          phase=(-math.pi / 2, math.pi / 2), offset=(-10.0, 10.0),
                          count: int | None = None) -> np.ndarray:
    """Band-limited forward-velocity series: offset plus a sum of sines."""
    rng = np.random.default_rng(seed)
    shape = () if count is None else (count,)
    f = rng.uniform(*freq, size=shape + (n_components, 1))
    a = rng.uniform(*amplitude, size=shape + (n_components, 1))
    ph = rng.uniform(*phase, size=shape + (n_components, 1))
    c = rng.uniform(*offset, size=shape + (1,))
    t = dt * np.arange(length)
    return c + np.sum(a * np.sin(2 * np.pi * f * t + ph), axis=-2)


# ---------------------------------------------------------------------------
# CSV


@dataclass(frozen=True)
class CsvSchema:
    """Column roles for CSV ingestion.

    Unlisted columns are classified by prefix: ``u_`` inputs, ``y_``
    measurements (prefix stripped), anything else a state.  ``flow_columns``
    are measurement names multiplied by ``flow_scale`` on ingestion.
    """

    states: tuple[str, ...] | None = None
    inputs: tuple[str, ...] | None = None
    measurements: tuple[str, ...] | None = None
    flow_columns: tuple[str, ...] = ()
    flow_scale: float = OPTIC_FLOW_SCALE
    jitter: float = 0.01


def _fmt(v: float) -> str:
    return repr(float(v))


def export_csv(traj: Trajectory, path) -> None:
    """Write ``t`` then states, inputs (``u_*``) and ``y_``-prefixed measurements."""
    header = ["t", *traj.state_names, *traj.input_names,
              *("y_" + s for s in traj.measurement_names)]
    blocks = [traj.t[:, None]]
    for arr, names in ((traj.states, traj.state_names), (traj.inputs, traj.input_names),
                       (traj.measurements, traj.measurement_names)):
        if names:
            blocks.append(arr)
    table = np.hstack(blocks)
    buf = io.StringIO()
    buf.write(f"# dt={_fmt(traj.dt)}\n")
    buf.write(f"# provenance={traj.provenance}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in table:
        w.writerow([_fmt(v) for v in row])
    Path(path).write_text(buf.getvalue())


def ingest_csv(path, schema: CsvSchema | None = None) -> Trajectory:
    """Read a trajectory CSV; all problems are collected before raising."""
    schema = schema or CsvSchema()
    meta: dict[str, str] = {}
    rows: list[list[str]] = []
    header: list[str] | None = None
    with open(path, newline="") as fh:
        for line_no, row in enumerate(csv.reader(fh), start=1):
            if not row or not "".join(row).strip():
                continue
            if row[0].lstrip().startswith("#"):
                text = ",".join(row).lstrip()[1:].strip()
                if "=" in text:
                    k, v = text.split("=", 1)
                    meta[k.strip()] = v.strip()
                continue
            if header is None:
                header = [h.strip() for h in row]
            else:
                rows.append(row)
    if header is None:
        raise CsvFormatError(["no header row"])
    problems = []
    if header[0] != "t":
        problems.append(f"first column must be 't', got {header[0]!r}")
    declared = {}
    for role in ("states", "inputs", "measurements"):
        for name in getattr(schema, role) or ():
            declared[name] = role
    col_role = {}
    for col in header[1:]:
        if col in declared:
            col_role[col] = declared[col]
        elif "y_" + col in header:
            col_role[col] = "states"
        elif col.startswith("y_") and col[2:] in declared:
            col_role[col] = declared[col[2:]]
        elif col.startswith("y_"):
            col_role[col] = "measurements"
        elif col.startswith("u_"):
            col_role[col] = "inputs"
        else:
            col_role[col] = "states"
    for name, role in declared.items():
        if name not in header and "y_" + name not in header:
            problems.append(f"missing column {name!r} ({role})")
    data = np.full((len(rows), len(header)), np.nan)
    for i, row in enumerate(rows):
        if len(row) != len(header):
            problems.append(f"row {i}: expected {len(header)} fields, got {len(row)}")
            continue
        for j, cell in enumerate(row):
            try:
                data[i, j] = float(cell)
            except ValueError:
                problems.append(f"row {i}: column {header[j]!r}: not a number: {cell!r}")
                continue
            if not math.isfinite(data[i, j]):
                problems.append(f"row {i}: column {header[j]!r}: non-finite value {cell!r}")
    if problems:
        raise CsvFormatError(problems)
    if len(rows) < 2:
        raise CsvFormatError(["need at least two data rows"])
    t = data[:, 0]
    dt = float(meta["dt"]) if "dt" in meta else float(np.median(np.diff(t)))
    for i, d in enumerate(np.diff(t), start=1):
        if abs(d - dt) > schema.jitter * dt:
            problems.append(f"row {i}: non-uniform sampling, step {d:g} s vs dt {dt:g} s")
    if problems:
        raise CsvFormatError(problems)

    def block(role):
        cols = [j for j, c in enumerate(header) if j > 0 and col_role[c] == role]
        names = tuple(header[j][2:] if role == "measurements" and header[j].startswith("y_")
                      else header[j] for j in cols)
        return data[:, cols], names

    X, xn = block("states")
    U, un = block("inputs")
    Y, yn = block("measurements")
    for name in schema.flow_columns:
        if name not in yn:
            raise CsvFormatError([f"flow column {name!r} not among measurements {yn}"])
        Y[:, yn.index(name)] *= schema.flow_scale
    return Trajectory(dt, X, xn, U, un, Y, yn, meta.get("provenance", f"measured({path})"),
                      t0=float(t[0]))


def with_measurements(traj: Trajectory, model: SystemModel,
                      catalogue: MeasurementCatalogue) -> Trajectory:
    """Recompute the measurement block from the trajectory's states."""
    Y = measure_series(model, traj.states, traj.inputs, catalogue)
    return replace(traj, measurements=Y, measurement_names=catalogue.output_names(model))
