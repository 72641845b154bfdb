"""Receding-horizon tracking control used to reconstruct input sequences.

Each horizon problem is a nonlinear least-squares problem in the controlled
inputs, solved by Levenberg-damped Gauss-Newton with forward-difference input
sensitivities.  All perturbed horizon rollouts are simulated as one batch.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .dynamics import SystemModel, simulate
from .trajectory import Setpoints

log = logging.getLogger(__name__)

DEFAULT_WEIGHTS = {"v_x": 1.0, "v_y": 1.0, "psi": 1.0}


class MpcError(RuntimeError):
    """Horizon solve failed to converge; carries the best iterate found."""

    def __init__(self, msg: str, best_cost: float, best_inputs: np.ndarray, step: int):
        self.best_cost = best_cost
        self.best_inputs = best_inputs
        self.step = step
        super().__init__(f"{msg} (step {step}, best cost {best_cost:.6g})")


@dataclass(frozen=True)
class MpcConfig:
    horizon: int = 10
    weights: Mapping[str, float] = field(default_factory=lambda: dict(DEFAULT_WEIGHTS))
    # scalar or per-input penalty on deviation from the model's trim input
    input_penalty: float | Mapping[str, float] = 1e-2
    max_iter: int = 50
    tol: float = 1e-10

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if any(w < 0 for w in self.weights.values()) or not any(
                w > 0 for w in self.weights.values()):
            raise ValueError("setpoint weights must be >= 0 with at least one positive")
        pen = self.input_penalty
        vals = pen.values() if isinstance(pen, Mapping) else [pen]
        if any(v < 0 for v in vals):
            raise ValueError("input penalties must be >= 0")


@dataclass(frozen=True)
class MpcResult:
    inputs: np.ndarray
    states: np.ndarray
    rms: dict[str, float]
    iterations: int


def exogenous_from_setpoints(model: SystemModel, sp: Setpoints) -> dict[str, np.ndarray]:
    """Wind-rate inputs that make the model's wind states follow ``sp``."""
    out = {}
    if "u_w" in model.input_names:
        out["u_w"] = np.append(np.diff(sp.w) / sp.dt, 0.0)
    if "u_zeta" in model.input_names:
        out["u_zeta"] = np.append(np.diff(sp.zeta) / sp.dt, 0.0)
    return out


def setpoint_channels(sp: Setpoints | Mapping[str, np.ndarray],
                      weights: Mapping[str, float]) -> dict[str, np.ndarray]:
    if isinstance(sp, Setpoints):
        chans = {name: sp.channel(name) for name in weights
                 if name in ("v_x", "v_y", "psi", "z") and getattr(sp, name, None) is not None}
        missing = set(weights) - set(chans)
        if missing:
            raise KeyError(f"setpoints lack channels {sorted(missing)}")
        return chans
    return {k: np.asarray(sp[k], dtype=float) for k in weights}


def solve_tracking(model: SystemModel, setpoints, x0, cfg: MpcConfig | None = None, *,
                   exogenous: Mapping[str, np.ndarray] | None = None,
                   initial_guess: np.ndarray | None = None) -> MpcResult:
    """Track setpoint series with full state feedback.

    ``setpoints`` is a :class:`Setpoints` or a mapping of state name to series.
    Inputs named in ``exogenous`` are fixed to the given series; every other
    input is optimised.  Returns the applied inputs ``U`` (K x m) and the
    closed-loop states, which equal ``simulate(model, x0, U)`` exactly.
    """
    cfg = cfg or MpcConfig()
    chans = setpoint_channels(setpoints, cfg.weights)
    if exogenous is None and isinstance(setpoints, Setpoints):
        exogenous = exogenous_from_setpoints(model, setpoints)
    exogenous = dict(exogenous or {})
    K = len(next(iter(chans.values())))
    for name, series in chans.items():
        if series.shape != (K,):
            raise ValueError(f"setpoint {name!r} has shape {series.shape}, expected ({K},)")
        if not np.all(np.isfinite(series)):
            raise ValueError(f"setpoint {name!r} contains non-finite values")
    tracked = [model.state_index(s) for s in chans]
    sp = np.stack([chans[s] for s in chans], axis=1)
    wsqrt = np.sqrt(np.array([cfg.weights[s] for s in chans]))

    trim = np.array(model.trim_input, dtype=float)
    U = np.tile(trim, (K, 1))
    for name, series in exogenous.items():
        U[:, model.input_index(name)] = series
    ctrl = [i for i, s in enumerate(model.input_names) if s not in exogenous]
    pen = cfg.input_penalty
    if isinstance(pen, Mapping):
        unknown = set(pen) - set(model.input_names)
        if unknown:
            raise KeyError(f"input penalties for unknown inputs {sorted(unknown)}")
        rsqrt = np.sqrt(np.array([pen.get(model.input_names[i], 0.0) for i in ctrl]))
    else:
        rsqrt = np.full(len(ctrl), np.sqrt(pen))

    H = cfg.horizon
    guess = np.tile(trim[ctrl], (H, 1)) if initial_guess is None else \
        np.asarray(initial_guess, dtype=float)[:H, ctrl].copy()
    x = np.asarray(x0, dtype=float).copy()
    X = np.empty((K, model.n))
    X[0] = x
    total_iter = 0

    def pad(arr, k):
        idx = np.minimum(np.arange(k, k + H + 1), K - 1)
        return arr[idx]

    for k in range(K - 1):
        sp_h = pad(sp, k)[1:]            # targets for x_{k+1..k+H}
        U_h = pad(U, k)[:H].copy()       # exogenous parts fixed
        sol, it = _solve_horizon(model, x, U_h, ctrl, guess, tracked, sp_h, wsqrt,
                                 rsqrt, trim[ctrl], cfg, k)
        total_iter += it
        U[k, ctrl] = sol[0]
        x = model.step_map(x, U[k], model.dt)
        X[k + 1] = x
        guess = np.vstack([sol[1:], sol[-1:]])
    U[K - 1, ctrl] = U[K - 2, ctrl] if K > 1 else trim[ctrl]
    err = X[:, tracked] - sp
    rms = {s: float(np.sqrt(np.mean(err[:, j] ** 2))) for j, s in enumerate(chans)}
    return MpcResult(U, X, rms, total_iter)


def _residuals(model, x, U_h, ctrl, V, tracked, sp_h, wsqrt, rsqrt, ref):
    """Residuals for a batch of candidate controlled-input sequences V (B, H, mc)."""
    B = V.shape[0]
    Ub = np.broadcast_to(U_h, (B,) + U_h.shape).copy()
    Ub[:, :, ctrl] = V
    # H steps need H+1 input rows; the trailing row is unused
    Ub = np.concatenate([Ub, Ub[:, -1:]], axis=1)
    Xb = simulate(model, x, Ub, check=False)[:, 1:]
    track = (Xb[:, :, tracked] - sp_h) * wsqrt
    effort = (V - ref) * rsqrt
    return np.concatenate([track.reshape(B, -1), effort.reshape(B, -1)], axis=1)


def _solve_horizon(model, x, U_h, ctrl, guess, tracked, sp_h, wsqrt, rsqrt, ref, cfg, k):
    H, mc = guess.shape
    v = guess.reshape(-1).copy()
    nv = v.size

    def resid(batch):
        return _residuals(model, x, U_h, ctrl, batch.reshape(-1, H, mc), tracked, sp_h,
                          wsqrt, rsqrt, ref)

    r = resid(v[None])[0]
    cost = 0.5 * r @ r
    mu = 1e-6
    for it in range(1, cfg.max_iter + 1):
        h = 1e-6 * np.maximum(1.0, np.abs(v))
        batch = np.vstack([v, v + np.diag(h)])
        R = resid(batch)
        if not np.all(np.isfinite(R)):
            raise MpcError("non-finite residuals in horizon rollout", cost,
                           v.reshape(H, mc), k)
        r = R[0]
        J = ((R[1:] - r) / h[:, None]).T
        grad = J.T @ r
        JtJ = J.T @ J
        if np.linalg.norm(grad) <= 1e-14 * max(1.0, cost):
            return v.reshape(H, mc), it
        while True:
            A = JtJ + mu * (np.diag(np.diag(JtJ)) + 1e-12 * np.eye(nv))
            dv = np.linalg.solve(A, -grad)
            r_new = resid((v + dv)[None])[0]
            new_cost = 0.5 * r_new @ r_new
            if np.isfinite(new_cost) and new_cost <= cost:
                break
            mu *= 10.0
            if mu > 1e12:
                return v.reshape(H, mc), it
        decrease = cost - new_cost
        v = v + dv
        cost = new_cost
        mu = max(mu / 10.0, 1e-12)
        if decrease <= cfg.tol * max(cost, 1e-300) or cost < 1e-28:
            return v.reshape(H, mc), it
    raise MpcError("Gauss-Newton did not converge within the iteration cap", cost,
                   v.reshape(H, mc), k)


def rms_tracking_error(result: MpcResult) -> dict[str, float]:
    return dict(result.rms)


# ---------------------------------------------------------------------------
# batched inverse-model tracker


@dataclass(frozen=True)
class InverseTrackerGains:
    """Feedback gains (1/s) on velocity, heading and altitude errors."""

    velocity: float = 5.0
    heading: float = 5.0
    altitude: float = 2.0
    climb: float = 4.0


def _central_rate(series: np.ndarray, dt: float) -> np.ndarray:
    return np.gradient(series, dt, axis=-1) if series.shape[-1] > 1 else np.zeros_like(series)


def inverse_tracking(model: SystemModel, setpoints: Setpoints, *,
                     gains: InverseTrackerGains | None = None,
                     altitude: float | np.ndarray = 2.0) -> tuple[np.ndarray, np.ndarray]:
    """Track setpoints on the kinematic model by inverting its velocity dynamics.

    At each step the thrust and attitude that produce the desired body
    acceleration (feed-forward plus proportional feedback) are computed in
    closed form and reached with one step of attitude rate.  Works on a batch
    of setpoint series at once, which makes it suitable for generating large
    training sets where the receding-horizon solver would be too slow.
    Returns ``(X, U)`` with ``X`` the simulated states under ``U``.
    """
    if model.name != "kinematic":
        raise ValueError("inverse_tracking supports the kinematic model only")
    gains = gains or InverseTrackerGains()
    dt = setpoints.dt
    C, g = model.params["C"], model.params["g"]
    vx_d, vy_d, psi_d = (np.asarray(setpoints.channel(s), dtype=float)
                         for s in ("v_x", "v_y", "psi"))
    w_d, zeta_d = np.asarray(setpoints.w, float), np.asarray(setpoints.zeta, float)
    z_d = np.broadcast_to(setpoints.z if setpoints.z is not None else altitude, vx_d.shape)
    dvx, dvy, dpsi = (_central_rate(s, dt) for s in (vx_d, vy_d, psi_d))
    batch, K = vx_d.shape[:-1], vx_d.shape[-1]
    ix = {s: model.state_index(s) for s in model.state_names}

    def attitude(x, k):
        """Thrust, roll, pitch and yaw rate commanded for step k from state x."""
        vx, vy, vz, psi, z = (x[..., ix[s]] for s in ("v_x", "v_y", "v_z", "psi", "z"))
        w, zeta = x[..., ix["w"]], x[..., ix["zeta"]]
        r = dpsi[..., k] + gains.heading * (psi_d[..., k] - psi)
        d = psi - zeta
        ax = vx - w * np.cos(d)
        ay = vy + w * np.sin(d)
        acc_x = dvx[..., k] + gains.velocity * (vx_d[..., k] - vx)
        acc_y = dvy[..., k] + gains.velocity * (vy_d[..., k] - vy)
        acc_z = gains.altitude * gains.climb * (z_d[..., k] - z) - gains.climb * vz
        Ax = acc_x + C * ax - vy * r
        Ay = -(acc_y + C * ay + vx * r)
        Az = g - C * vz - acc_z
        thrust = np.sqrt(Ax ** 2 + Ay ** 2 + Az ** 2)
        phi = np.arcsin(np.clip(Ay / thrust, -1.0, 1.0))
        theta = np.arctan2(Ax, Az)
        return thrust, phi, theta, r

    x = np.zeros(batch + (model.n,))
    x[..., ix["z"]] = z_d[..., 0]
    x[..., ix["v_x"]], x[..., ix["v_y"]], x[..., ix["psi"]] = vx_d[..., 0], vy_d[..., 0], psi_d[..., 0]
    x[..., ix["w"]], x[..., ix["zeta"]] = w_d[..., 0], zeta_d[..., 0]
    for s in ("k_z", "k_phi", "k_theta", "k_psi"):
        x[..., ix[s]] = 1.0
    _, phi0, theta0, _ = attitude(x, 0)
    x[..., ix["phi"]], x[..., ix["theta"]] = phi0, theta0

    exo = exogenous_from_setpoints(model, setpoints)
    X = np.empty(batch + (K, model.n))
    U = np.zeros(batch + (K, model.m))
    iu = {s: model.input_index(s) for s in model.input_names}
    X[..., 0, :] = x
    for k in range(K):
        thrust, _, _, r = attitude(x, k)
        # attitude needed one step ahead, from a one-step velocity prediction
        _, phi_n, theta_n, _ = attitude(x, min(k + 1, K - 1))
        u = np.zeros(batch + (model.m,))
        u[..., iu["u_z"]] = thrust
        u[..., iu["u_phi"]] = (phi_n - x[..., ix["phi"]]) / dt
        u[..., iu["u_theta"]] = (theta_n - x[..., ix["theta"]]) / dt
        u[..., iu["u_psi"]] = r
        u[..., iu["u_w"]] = exo["u_w"][..., k]
        u[..., iu["u_zeta"]] = exo["u_zeta"][..., k]
        U[..., k, :] = u
        if k + 1 < K:
            x = model.step_map(x, u, dt)
            X[..., k + 1, :] = x
    return X, U
