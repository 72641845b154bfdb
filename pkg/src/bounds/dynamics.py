"""System models for flying agents and a fixed-step integrator.

Every model is a :class:`SystemModel`: labelled state, input and measurement
spaces plus a discrete ``step_map`` and a ``measure_map``.  Continuous models
are discretised with classical RK4 under zero-order-hold inputs, so a
simulation restarted from any stored state reproduces the stored suffix
exactly.

All vector fields and measurement functions accept batched arrays with the
state/input on the last axis, which is what lets the observability engine
simulate every perturbed run of every window in one pass.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Callable, Mapping, Sequence

import numpy as np

GRAVITY = 9.81

LINEAR = "linear"
ANGLE = "angle"
MAGNITUDE = "magnitude"
_KINDS = (LINEAR, ANGLE, MAGNITUDE)


class ModelError(ValueError):
    """Invalid model construction or non-finite state/input."""


class MeasurementUndefinedError(ValueError):
    """A selected measurement is not defined at the requested state."""

    def __init__(self, measurement: str, condition: str):
        self.measurement = measurement
        self.condition = condition
        super().__init__(f"measurement '{measurement}' undefined: {condition}")


@dataclass(frozen=True)
class Label:
    name: str
    unit: str = ""
    kind: str = LINEAR

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ModelError(f"label {self.name!r}: unknown kind {self.kind!r}")


def _labels(spec: Sequence) -> tuple[Label, ...]:
    out = []
    for item in spec:
        out.append(item if isinstance(item, Label) else Label(*item))
    names = [lab.name for lab in out]
    if len(set(names)) != len(names):
        dup = sorted({n for n in names if names.count(n) > 1})
        raise ModelError(f"duplicate labels: {dup}")
    return tuple(out)


StepMap = Callable[[np.ndarray, np.ndarray, float], np.ndarray]
MeasureMap = Callable[[np.ndarray, np.ndarray, Sequence[str]], np.ndarray]


@dataclass(frozen=True)
class SystemModel:
    """Discrete-time model ``x[k+1] = step_map(x, u, dt)``, ``y = measure_map(x, u, names)``.

    ``measure_map`` returns the requested measurements stacked on the last
    axis and raises :class:`MeasurementUndefinedError` where one is undefined.
    """

    name: str
    state_labels: tuple[Label, ...]
    input_labels: tuple[Label, ...]
    measurement_labels: tuple[Label, ...]
    step_map: StepMap
    measure_map: MeasureMap
    params: Mapping[str, float] = field(default_factory=dict)
    dt: float = 0.1
    # nominal input (hover / trim); MPC penalises deviation from it
    trim_input: tuple[float, ...] | None = None
    # continuous vector field (x, u) -> dx/dt, when the model has one
    rhs: Callable[[np.ndarray, np.ndarray], np.ndarray] | None = None

    def __post_init__(self):
        object.__setattr__(self, "state_labels", _labels(self.state_labels))
        object.__setattr__(self, "input_labels", _labels(self.input_labels))
        object.__setattr__(self, "measurement_labels", _labels(self.measurement_labels))
        object.__setattr__(self, "params", MappingProxyType(dict(self.params)))
        if self.dt <= 0:
            raise ModelError("dt must be positive")
        if self.trim_input is None:
            object.__setattr__(self, "trim_input", (0.0,) * len(self.input_labels))

    @property
    def n(self) -> int:
        return len(self.state_labels)

    @property
    def m(self) -> int:
        return len(self.input_labels)

    @property
    def state_names(self) -> tuple[str, ...]:
        return tuple(lab.name for lab in self.state_labels)

    @property
    def input_names(self) -> tuple[str, ...]:
        return tuple(lab.name for lab in self.input_labels)

    @property
    def measurement_names(self) -> tuple[str, ...]:
        return tuple(lab.name for lab in self.measurement_labels)

    def state_index(self, name: str) -> int:
        try:
            return self.state_names.index(name)
        except ValueError:
            raise KeyError(f"model {self.name!r} has no state {name!r}") from None

    def input_index(self, name: str) -> int:
        try:
            return self.input_names.index(name)
        except ValueError:
            raise KeyError(f"model {self.name!r} has no input {name!r}") from None

    def measurement_label(self, name: str) -> Label:
        for lab in self.measurement_labels:
            if lab.name == name:
                return lab
        raise KeyError(f"model {self.name!r} has no measurement {name!r}")

    def state_vector(self, values: Mapping[str, float] | None = None, **kw) -> np.ndarray:
        """Build a state vector from names; unspecified entries default to 0
        (calibration coefficients and physical-parameter states default to
        their nominal values)."""
        vals = dict(self.default_state)
        vals.update(values or {})
        vals.update(kw)
        unknown = set(vals) - set(self.state_names)
        if unknown:
            raise KeyError(f"unknown states {sorted(unknown)}")
        return np.array([float(vals[s]) for s in self.state_names])

    def input_vector(self, values: Mapping[str, float] | None = None, **kw) -> np.ndarray:
        vals = dict(zip(self.input_names, self.trim_input))
        vals.update(values or {})
        vals.update(kw)
        unknown = set(vals) - set(self.input_names)
        if unknown:
            raise KeyError(f"unknown inputs {sorted(unknown)}")
        return np.array([float(vals[s]) for s in self.input_names])

    @property
    def default_state(self) -> dict[str, float]:
        d = {s: 0.0 for s in self.state_names}
        for s in self.state_names:
            if s.startswith("k_"):
                d[s] = 1.0
            elif s in self.params:
                d[s] = float(self.params[s])
        return d


# ---------------------------------------------------------------------------
# integration


def rk4(rhs: Callable[[np.ndarray, np.ndarray], np.ndarray], x: np.ndarray,
        u: np.ndarray, dt: float) -> np.ndarray:
    """One classical Runge-Kutta step with ``u`` held constant."""
    k1 = rhs(x, u)
    k2 = rhs(x + 0.5 * dt * k1, u)
    k3 = rhs(x + 0.5 * dt * k2, u)
    k4 = rhs(x + dt * k3, u)
    return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _check_finite(values: np.ndarray, labels: Sequence[Label], what: str):
    bad = ~np.isfinite(values)
    if np.any(bad):
        idx = np.nonzero(bad.reshape(-1, len(labels)).any(axis=0))[0]
        names = [labels[i].name for i in idx]
        raise ModelError(f"non-finite {what} component(s): {', '.join(names)}")


def step(model: SystemModel, x, u, dt: float | None = None) -> np.ndarray:
    """Advance one step under a zero-order-hold input."""
    dt = model.dt if dt is None else float(dt)
    if not dt > 0:
        raise ModelError("dt must be positive")
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    _check_finite(x, model.state_labels, "state")
    _check_finite(u, model.input_labels, "input")
    return model.step_map(x, u, dt)


def simulate(model: SystemModel, x0, U, dt: float | None = None, *,
             check: bool = True) -> np.ndarray:
    """Simulate from ``x0`` under inputs ``U`` (K x m, or batched (..., K, m)).

    Returns K states: ``X[0] = x0`` and ``X[k+1] = step(X[k], U[k])``.  The last
    input is not used for stepping (it pairs with the last state for
    measurement).  Batched ``x0`` of shape (B, n) with ``U`` of shape (B, K, m)
    or (K, m) simulates every row independently.
    """
    dt = model.dt if dt is None else float(dt)
    x0 = np.asarray(x0, dtype=float)
    U = np.asarray(U, dtype=float)
    if check:
        _check_finite(x0, model.state_labels, "state")
        _check_finite(U, model.input_labels, "input")
    K = U.shape[-2]
    batch = np.broadcast_shapes(x0.shape[:-1], U.shape[:-2])
    X = np.empty(batch + (K, model.n))
    x = np.broadcast_to(x0, batch + (model.n,)).copy()
    X[..., 0, :] = x
    for k in range(K - 1):
        x = model.step_map(x, U[..., k, :], dt)
        X[..., k + 1, :] = x
    return X


# ---------------------------------------------------------------------------
# measurement catalogue


@dataclass(frozen=True)
class MeasurementCatalogue:
    """Ordered selection of model measurements.

    Angles listed in ``expand`` are emitted as a (sin, cos) pair named
    ``sin_<name>``, ``cos_<name>``.
    """

    names: tuple[str, ...]
    expand: frozenset[str] = frozenset()

    def __post_init__(self):
        object.__setattr__(self, "names", tuple(self.names))
        object.__setattr__(self, "expand", frozenset(self.expand))
        if not self.names:
            raise ModelError("empty measurement catalogue")
        if len(set(self.names)) != len(self.names):
            raise ModelError(f"duplicate measurements in catalogue: {self.names}")
        stray = self.expand - set(self.names)
        if stray:
            raise ModelError(f"expansion requested for unselected measurements {sorted(stray)}")

    @classmethod
    def of(cls, names, expand=()) -> MeasurementCatalogue:
        if isinstance(names, str):
            names = [s.strip() for s in names.split(",") if s.strip()]
        return cls(tuple(names), frozenset(expand))

    def output_labels(self, model: SystemModel) -> tuple[Label, ...]:
        out = []
        for name in self.names:
            lab = model.measurement_label(name)
            if name in self.expand:
                if lab.kind != ANGLE:
                    raise ModelError(f"cannot expand non-angle measurement {name!r}")
                out += [Label(f"sin_{name}", "", LINEAR), Label(f"cos_{name}", "", LINEAR)]
            else:
                out.append(lab)
        return tuple(out)

    def output_names(self, model: SystemModel) -> tuple[str, ...]:
        return tuple(lab.name for lab in self.output_labels(model))

    def angle_mask(self, model: SystemModel) -> np.ndarray:
        return np.array([lab.kind == ANGLE for lab in self.output_labels(model)])


def wrap_angle(a):
    """Wrap to [-pi, pi)."""
    return (np.asarray(a) + np.pi) % (2 * np.pi) - np.pi


def measure(model: SystemModel, x, u, catalogue: MeasurementCatalogue, *,
            reference=None) -> np.ndarray:
    """Evaluate the catalogue's measurements at ``(x, u)``.

    With ``reference`` (an array shaped like the output) scalar angle outputs
    are unwrapped to lie within pi of the reference.
    """
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    raw = model.measure_map(x, u, catalogue.names)
    cols = []
    for j, name in enumerate(catalogue.names):
        col = raw[..., j]
        if name in catalogue.expand:
            cols += [np.sin(col), np.cos(col)]
        else:
            cols.append(col)
    y = np.stack(cols, axis=-1)
    if reference is not None:
        mask = catalogue.angle_mask(model)
        ref = np.asarray(reference, dtype=float)
        y[..., mask] = ref[..., mask] + wrap_angle(y[..., mask] - ref[..., mask])
    return y


def measure_series(model: SystemModel, X, U, catalogue: MeasurementCatalogue) -> np.ndarray:
    """Measurements along (possibly batched) state/input series, angle
    outputs unwrapped along time."""
    Y = measure(model, X, U, catalogue)
    mask = catalogue.angle_mask(model)
    if mask.any():
        Y[..., mask] = np.unwrap(Y[..., mask], axis=-2)
    return Y


# ---------------------------------------------------------------------------
# flying-agent models


def apparent_airflow(v_x, v_y, psi, w, zeta):
    """Body-level apparent airflow ``(a_x, a_y)`` from ground velocity and wind."""
    d = np.asarray(psi) - np.asarray(zeta)
    return v_x - w * np.cos(d), v_y + w * np.sin(d)


def _require(cond, measurement, condition):
    if np.any(cond):
        raise MeasurementUndefinedError(measurement, condition)


def _planar_measurements(names, *, v_x, v_y, psi, a_x, a_y, dv_x, dv_y, psidot, z):
    """Shared horizontal-plane measurement catalogue for the 3D models."""
    out = []
    for name in names:
        if name == "psi":
            val = psi
        elif name == "beta":
            _require((v_x == 0) & (v_y == 0), "beta", "ground velocity (v_x, v_y) = (0, 0)")
            val = np.arctan2(v_y, v_x)
        elif name == "gamma":
            _require((a_x == 0) & (a_y == 0), "gamma", "apparent airflow (a_x, a_y) = (0, 0)")
            val = np.arctan2(a_y, a_x)
        elif name == "eta":
            _require((dv_x == 0) & (dv_y == 0), "eta", "acceleration (dv_x, dv_y) = (0, 0)")
            val = np.arctan2(dv_y, dv_x)
        elif name == "g":
            val = np.hypot(v_x, v_y)
        elif name == "a":
            val = np.hypot(a_x, a_y)
        elif name == "r":
            _require(z <= 0, "r", "altitude z <= 0")
            val = np.hypot(v_x, v_y) / z
        elif name == "r_x":
            _require(z <= 0, "r_x", "altitude z <= 0")
            val = v_x / z
        elif name == "q":
            val = np.hypot(dv_x - v_y * psidot, dv_y + v_x * psidot)
        else:
            raise KeyError(f"unknown measurement {name!r}")
        out.append(np.broadcast_to(val, np.shape(v_x)))
    return np.stack(out, axis=-1)


_PLANAR_MEAS = (
    Label("psi", "rad", ANGLE),
    Label("beta", "rad", ANGLE),
    Label("gamma", "rad", ANGLE),
    Label("eta", "rad", ANGLE),
    Label("g", "m/s", MAGNITUDE),
    Label("a", "m/s", MAGNITUDE),
    Label("r", "1/s", MAGNITUDE),
    Label("r_x", "1/s", LINEAR),
    Label("q", "m/s^2", MAGNITUDE),
)

KINEMATIC_STATES = (
    Label("x", "m"), Label("y", "m"), Label("z", "m"),
    Label("v_x", "m/s"), Label("v_y", "m/s"), Label("v_z", "m/s"),
    Label("phi", "rad", ANGLE), Label("theta", "rad", ANGLE), Label("psi", "rad", ANGLE),
    Label("w", "m/s", MAGNITUDE), Label("zeta", "rad", ANGLE),
    Label("k_z"), Label("k_phi"), Label("k_theta"), Label("k_psi"),
)
KINEMATIC_INPUTS = (
    Label("u_z", "m/s^2"), Label("u_phi", "rad/s"), Label("u_theta", "rad/s"),
    Label("u_psi", "rad/s"), Label("u_w", "m/s^2"), Label("u_zeta", "rad/s"),
)


def _kinematic_rhs(x, u, C, g):
    (_, _, _, vx, vy, vz, phi, theta, psi, w, zeta, kz, kphi, ktheta, kpsi) = np.moveaxis(x, -1, 0)
    uz, uphi, utheta, upsi, uw, uzeta = np.moveaxis(u, -1, 0)
    ax, ay = apparent_airflow(vx, vy, psi, w, zeta)
    psidot = upsi * kpsi
    thrust = uz * kz
    cpsi, spsi = np.cos(psi), np.sin(psi)
    zero = np.zeros_like(vx)
    return np.stack([
        vx * cpsi - vy * spsi,
        vx * spsi + vy * cpsi,
        vz,
        thrust * np.cos(phi) * np.sin(theta) - C * ax + vy * psidot,
        -thrust * np.sin(phi) - C * ay - vx * psidot,
        -thrust * np.cos(phi) * np.cos(theta) - C * vz + g,
        uphi * kphi,
        utheta * ktheta,
        psidot,
        uw + zero,
        uzeta + zero,
        zero, zero, zero, zero,
    ], axis=-1)


def kinematic_model(C: float = 0.1, dt: float = 0.1, g: float = GRAVITY) -> SystemModel:
    """3D kinematic flying agent with wind and input calibration coefficients.

    Inputs are a body-axis specific thrust ``u_z`` and attitude rates; wind
    magnitude and direction are driven by the exogenous inputs ``u_w`` and
    ``u_zeta``.  Drag is a kinematic term proportional to apparent airflow.
    """
    C, g = float(C), float(g)

    def rhs(x, u):
        return _kinematic_rhs(x, u, C, g)

    def step_map(x, u, h):
        return rk4(rhs, x, u, h)

    def measure_map(x, u, names):
        f = rhs(x, u)
        vx, vy, psi, w, zeta, z = (x[..., i] for i in (3, 4, 8, 9, 10, 2))
        ax, ay = apparent_airflow(vx, vy, psi, w, zeta)
        return _planar_measurements(names, v_x=vx, v_y=vy, psi=psi, a_x=ax, a_y=ay,
                                    dv_x=f[..., 3], dv_y=f[..., 4], psidot=f[..., 8], z=z)

    return SystemModel("kinematic", KINEMATIC_STATES, KINEMATIC_INPUTS, _PLANAR_MEAS,
                       step_map, measure_map, {"C": C, "g": g}, dt,
                       trim_input=(g, 0.0, 0.0, 0.0, 0.0, 0.0), rhs=rhs)


# quadcopter parameters measured for the physical vehicle
DRONE_PARAMS = {"m": 2.529, "I_x": 0.040, "I_y": 0.040, "I_z": 0.046, "C": 0.1}

DYNAMIC_STATES = (
    Label("x", "m"), Label("y", "m"), Label("z", "m"),
    Label("v_x", "m/s"), Label("v_y", "m/s"), Label("v_z", "m/s"),
    Label("phi", "rad", ANGLE), Label("theta", "rad", ANGLE), Label("psi", "rad", ANGLE),
    Label("omega_x", "rad/s"), Label("omega_y", "rad/s"), Label("omega_z", "rad/s"),
    Label("w", "m/s", MAGNITUDE), Label("zeta", "rad", ANGLE),
    Label("m", "kg", MAGNITUDE), Label("I_x", "kg m^2", MAGNITUDE),
    Label("I_y", "kg m^2", MAGNITUDE), Label("I_z", "kg m^2", MAGNITUDE),
    Label("C", "kg/s", MAGNITUDE),
)
DYNAMIC_INPUTS = (
    Label("u_z", "N"), Label("u_phi", "N m"), Label("u_theta", "N m"),
    Label("u_psi", "N m"), Label("u_w", "m/s^2"), Label("u_zeta", "rad/s"),
)


def _dynamic_rhs(x, u, g):
    (_, _, _, vx, vy, vz, phi, theta, psi, wx, wy, wz, w, zeta,
     m, Ix, Iy, Iz, C) = np.moveaxis(x, -1, 0)
    uz, uphi, utheta, upsi, uw, uzeta = np.moveaxis(u, -1, 0)
    ax, ay = apparent_airflow(vx, vy, psi, w, zeta)
    sphi, cphi = np.sin(phi), np.cos(phi)
    ctheta = np.cos(theta)
    psidot = wy * sphi / ctheta - wz * cphi / ctheta
    cpsi, spsi = np.cos(psi), np.sin(psi)
    zero = np.zeros_like(vx)
    return np.stack([
        vx * cpsi - vy * spsi,
        vx * spsi + vy * cpsi,
        vz,
        (uz * cphi * np.sin(theta) - C * ax) / m + vy * psidot,
        (-uz * sphi - C * ay) / m - vx * psidot,
        (-uz * cphi * ctheta - C * vz + m * g) / m,
        wx + np.tan(theta) * (wy * sphi + wz * cphi),
        wy * cphi - wz * sphi,
        psidot,
        uphi / Ix + (Iy - Iz) / Ix * wy * wz,
        utheta / Iy + (Iz - Ix) / Iy * wx * wz,
        upsi / Iz + (Ix - Iy) / Iz * wx * wy,
        uw + zero,
        uzeta + zero,
        zero, zero, zero, zero, zero,
    ], axis=-1)


def dynamic_model(params: Mapping[str, float] | None = None, dt: float = 0.1,
                  g: float = GRAVITY) -> SystemModel:
    """Force/torque-driven quadcopter with mass, inertia and drag carried as
    auxiliary (constant) states so their observability can be analysed."""
    p = dict(DRONE_PARAMS)
    p.update(params or {})
    unknown = set(p) - set(DRONE_PARAMS)
    if unknown:
        raise ModelError(f"unknown drone parameters {sorted(unknown)}")
    for key in ("m", "I_x", "I_y", "I_z"):
        if not p[key] > 0:
            raise ModelError(f"{key} must be positive")
    g = float(g)

    def rhs(x, u):
        return _dynamic_rhs(x, u, g)

    def step_map(x, u, h):
        return rk4(rhs, x, u, h)

    def measure_map(x, u, names):
        f = rhs(x, u)
        vx, vy, psi, w, zeta, z = (x[..., i] for i in (3, 4, 8, 12, 13, 2))
        ax, ay = apparent_airflow(vx, vy, psi, w, zeta)
        return _planar_measurements(names, v_x=vx, v_y=vy, psi=psi, a_x=ax, a_y=ay,
                                    dv_x=f[..., 3], dv_y=f[..., 4], psidot=f[..., 8], z=z)

    return SystemModel("dynamic", DYNAMIC_STATES, DYNAMIC_INPUTS, _PLANAR_MEAS,
                       step_map, measure_map, {**p, "g": g}, dt,
                       trim_input=(p["m"] * g, 0.0, 0.0, 0.0, 0.0, 0.0), rhs=rhs)


PLANAR_STATES = (Label("z", "m", MAGNITUDE), Label("v_z", "m/s"), Label("v_x", "m/s"))
PLANAR_INPUTS = (Label("u_z", "m/s^2"), Label("u_x", "m/s^2"))
PLANAR_MEAS = (
    Label("r_x", "1/s"),
    Label("dv_x", "m/s^2"),
    Label("dv_z", "m/s^2"),
)


def _planar_rhs(x, u):
    return np.stack([x[..., 1], u[..., 0] + 0 * x[..., 1], u[..., 1] + 0 * x[..., 2]], axis=-1)


def planar_model(dt: float = 0.1) -> SystemModel:
    """2D kinematic altitude model: states (z, v_z, v_x), measured
    accelerations as inputs, forward optic flow ``r_x = v_x / z``."""

    def step_map(x, u, h):
        return rk4(_planar_rhs, x, u, h)

    def measure_map(x, u, names):
        out = []
        for name in names:
            if name == "r_x":
                _require(x[..., 0] <= 0, "r_x", "altitude z <= 0")
                val = x[..., 2] / x[..., 0]
            elif name == "dv_x":
                val = u[..., 1] + 0 * x[..., 0]
            elif name == "dv_z":
                val = u[..., 0] + 0 * x[..., 0]
            else:
                raise KeyError(f"unknown measurement {name!r}")
            out.append(val)
        return np.stack(out, axis=-1)

    return SystemModel("planar", PLANAR_STATES, PLANAR_INPUTS, PLANAR_MEAS,
                       step_map, measure_map, {}, dt, rhs=_planar_rhs)


def linear_model(A, C, B=None, dt: float = 1.0, name: str = "lti") -> SystemModel:
    """Discrete LTI system ``x+ = A x + B u``, ``y = C x`` (``dt`` is nominal)."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    C = np.atleast_2d(np.asarray(C, dtype=float))
    n = A.shape[0]
    B = np.zeros((n, 1)) if B is None else np.atleast_2d(np.asarray(B, dtype=float))
    if A.shape != (n, n) or C.shape[1] != n or B.shape[0] != n:
        raise ModelError("inconsistent A, B, C shapes")
    p, m = C.shape[0], B.shape[1]

    def step_map(x, u, h):
        return np.einsum("ij,...j->...i", A, x) + np.einsum("ij,...j->...i", B, u)

    meas_names = [f"y{i}" for i in range(p)]

    def measure_map(x, u, names):
        y = np.einsum("ij,...j->...i", C, x)
        return y[..., [meas_names.index(s) for s in names]]

    return SystemModel(name, [Label(f"x{i}") for i in range(n)],
                       [Label(f"u{i}") for i in range(m)],
                       [Label(s) for s in meas_names], step_map, measure_map, {}, dt)


MODELS = {
    "kinematic": kinematic_model,
    "dynamic": dynamic_model,
    "planar": planar_model,
}


def build_model(name: str, params: Mapping[str, float] | None = None,
                dt: float = 0.1) -> SystemModel:
    """Construct a named model with parameter overrides (used by the CLI)."""
    params = dict(params or {})
    if name == "kinematic":
        bad = set(params) - {"C", "g"}
        if bad:
            raise ModelError(f"unknown kinematic parameters {sorted(bad)}")
        return kinematic_model(dt=dt, **params)
    if name == "dynamic":
        g = params.pop("g", GRAVITY)
        return dynamic_model(params, dt=dt, g=g)
    if name == "planar":
        if params:
            raise ModelError(f"planar model takes no parameters, got {sorted(params)}")
        return planar_model(dt=dt)
    raise ModelError(f"unknown model {name!r}; choose from {sorted(MODELS)}")
