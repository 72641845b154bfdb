"""Square-root unscented Kalman filter and the augmented-information variant.

The augmented filter appends a data-driven estimate of one state to the
measurement vector.  Its noise variance is set per step from the mean
absolute forward acceleration in the estimator's window, so the estimate
only carries weight when the window was informative.
"""

from __future__ import annotations

import csv
import io
import math
from collections import deque
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .dynamics import (MeasurementCatalogue, MeasurementUndefinedError, SystemModel, measure,
                       planar_model, simulate)
from .estimators import EstimatorNet, forward

RHO_MIN = 1e-3
RHO_MAX = 1e12


class FilterError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# filter state and model


@dataclass(frozen=True)
class UnscentedParams:
    alpha: float = 1e-3
    beta: float = 1.0
    kappa: float = 0.0


@dataclass(frozen=True)
class FilterState:
    """Mean ``x``, lower-triangular covariance factor ``S`` (P = S S^T),
    process noise ``Q`` and measurement noise ``R``."""

    x: np.ndarray
    S: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    params: UnscentedParams = UnscentedParams()

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float).reshape(-1)
        n = x.size
        for name, shape in (("S", (n, n)), ("Q", (n, n))):
            if np.shape(getattr(self, name)) != shape:
                raise FilterError(f"{name} has shape {np.shape(getattr(self, name))}, expected {shape}")
        R = np.atleast_2d(np.asarray(self.R, dtype=float))
        if R.shape[0] != R.shape[1]:
            raise FilterError("R must be square")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "S", np.asarray(self.S, dtype=float))
        object.__setattr__(self, "Q", np.asarray(self.Q, dtype=float))
        object.__setattr__(self, "R", R)

    @classmethod
    def from_covariance(cls, x, P, Q, R, params: UnscentedParams = UnscentedParams()):
        return cls(x, _chol(np.asarray(P, dtype=float), "initial covariance"), Q, R, params)

    @property
    def P(self) -> np.ndarray:
        return self.S @ self.S.T

    @property
    def n(self) -> int:
        return self.x.size


@dataclass(frozen=True)
class FilterModel:
    """Batched transition ``f(X, u)`` and measurement ``h(X, u)`` maps on
    sigma points stacked along the leading axis."""

    f: Callable[[np.ndarray, np.ndarray], np.ndarray]
    h: Callable[[np.ndarray, np.ndarray], np.ndarray]
    state_names: tuple[str, ...] = ()
    measurement_names: tuple[str, ...] = ()


def filter_model(model: SystemModel, catalogue: MeasurementCatalogue,
                 dt: float | None = None) -> FilterModel:
    h_dt = model.dt if dt is None else dt
    return FilterModel(lambda X, u: model.step_map(X, u, h_dt),
                       lambda X, u: measure(model, X, u, catalogue),
                       model.state_names, catalogue.output_names(model))


def linear_filter_model(A, C, B=None) -> FilterModel:
    A = np.atleast_2d(np.asarray(A, dtype=float))
    C = np.atleast_2d(np.asarray(C, dtype=float))
    B = np.zeros((A.shape[0], 1)) if B is None else np.atleast_2d(np.asarray(B, dtype=float))
    return FilterModel(lambda X, u: X @ A.T + np.asarray(u, dtype=float) @ B.T,
                       lambda X, u: X @ C.T)


# ---------------------------------------------------------------------------
# square-root helpers


def _chol(P: np.ndarray, what: str) -> np.ndarray:
    try:
        return np.linalg.cholesky(0.5 * (P + P.T))
    except np.linalg.LinAlgError:
        ev = np.linalg.eigvalsh(0.5 * (P + P.T))
        raise FilterError(f"{what} is not positive definite (eigenvalues {ev.min():.3g} .. "
                          f"{ev.max():.3g})") from None


def _psd_factor(Q: np.ndarray) -> np.ndarray:
    """Any F with F F^T = Q for positive semidefinite Q."""
    ev, V = np.linalg.eigh(0.5 * (Q + Q.T))
    if ev.min() < -1e-12 * max(1.0, abs(ev.max())):
        raise FilterError(f"process noise has a negative eigenvalue {ev.min():.3g}")
    return V * np.sqrt(np.clip(ev, 0.0, None))


def cholupdate(S: np.ndarray, v: np.ndarray, sign: float = 1.0) -> np.ndarray:
    """Lower factor of ``S S^T + sign * v v^T`` (rank-one update/downdate)."""
    L = S.copy()
    v = np.array(v, dtype=float)
    n = v.size
    for k in range(n):
        r2 = L[k, k] ** 2 + sign * v[k] ** 2
        if not r2 > 0:
            raise FilterError(
                f"covariance factor breakdown in rank-one {'downdate' if sign < 0 else 'update'} "
                f"(pivot {k}, diag {L[k, k]:.3g}, cond {np.linalg.cond(S):.3g})")
        r = math.sqrt(r2)
        c, s = r / L[k, k], v[k] / L[k, k]
        L[k, k] = r
        if k + 1 < n:
            L[k + 1:, k] = (L[k + 1:, k] + sign * s * v[k + 1:]) / c
            v[k + 1:] = c * v[k + 1:] - s * L[k + 1:, k]
    return L


def _qr_factor(M: np.ndarray) -> np.ndarray:
    """Lower triangular L with ``L L^T = M^T M`` (from QR of M), positive diagonal."""
    Rt = np.linalg.qr(M, mode="r")
    sgn = np.where(np.diag(Rt) < 0, -1.0, 1.0)
    return (Rt * sgn[:, None]).T


def unscented_weights(n: int, p: UnscentedParams):
    lam = p.alpha ** 2 * (n + p.kappa) - n
    c = n + lam
    wm = np.full(2 * n + 1, 0.5 / c)
    wc = wm.copy()
    wm[0] = lam / c
    wc[0] = lam / c + (1.0 - p.alpha ** 2 + p.beta)
    return wm, wc, math.sqrt(c)


def sigma_points(x: np.ndarray, S: np.ndarray, gamma: float) -> np.ndarray:
    return np.vstack([x, x + gamma * S.T, x - gamma * S.T])


def _weighted_mean(Y: np.ndarray, wm: np.ndarray) -> np.ndarray:
    # deviations from the centre point avoid cancellation of the large
    # negative centre weight against the others
    return Y[0] + wm[1:] @ (Y[1:] - Y[0])


def _sqrt_cov(Y: np.ndarray, mean: np.ndarray, wc: np.ndarray, noise_factor: np.ndarray):
    D = Y - mean
    M = np.vstack([np.sqrt(wc[1:])[:, None] * D[1:], noise_factor.T])
    S = _qr_factor(M)
    return cholupdate(S, math.sqrt(abs(wc[0])) * D[0], 1.0 if wc[0] >= 0 else -1.0), D


def unscented_transform(x, P, fn, params: UnscentedParams = UnscentedParams()):
    """Mean and covariance of ``fn`` applied to N(x, P) via sigma points."""
    x = np.asarray(x, dtype=float)
    S = _chol(np.asarray(P, dtype=float), "covariance")
    wm, wc, g = unscented_weights(x.size, params)
    Y = fn(sigma_points(x, S, g))
    mean = _weighted_mean(Y, wm)
    D = Y - mean
    return mean, (D.T * wc) @ D


# ---------------------------------------------------------------------------
# filter steps


def ukf_predict(fs: FilterState, fm: FilterModel, u) -> FilterState:
    wm, wc, g = unscented_weights(fs.n, fs.params)
    Xs = sigma_points(fs.x, fs.S, g)
    Xp = np.asarray(fm.f(Xs, np.broadcast_to(u, (len(Xs),) + np.shape(u))), dtype=float)
    if not np.all(np.isfinite(Xp)):
        bad = int(np.flatnonzero(~np.all(np.isfinite(Xp), axis=1))[0])
        raise FilterError(f"non-finite propagated sigma point {bad}")
    x = _weighted_mean(Xp, wm)
    S, _ = _sqrt_cov(Xp, x, wc, _psd_factor(fs.Q))
    return replace(fs, x=x, S=S)


def _measure_sigma(fm: FilterModel, Xs, u):
    ub = np.broadcast_to(u, (len(Xs),) + np.shape(u))
    try:
        return np.asarray(fm.h(Xs, ub), dtype=float)
    except MeasurementUndefinedError as exc:
        for i in range(len(Xs)):
            try:
                fm.h(Xs[i:i + 1], ub[i:i + 1])
            except MeasurementUndefinedError:
                raise FilterError(f"sigma point {i} ({np.array2string(Xs[i], precision=4)}): "
                                  f"{exc}") from exc
        raise


def ukf_update(fs: FilterState, fm: FilterModel, u, y, *, R=None) -> FilterState:
    y = np.atleast_1d(np.asarray(y, dtype=float))
    R = fs.R if R is None else np.atleast_2d(np.asarray(R, dtype=float))
    if R.shape != (y.size, y.size):
        raise FilterError(f"measurement of length {y.size} does not match R {R.shape}")
    wm, wc, g = unscented_weights(fs.n, fs.params)
    Xs = sigma_points(fs.x, fs.S, g)
    Y = _measure_sigma(fm, Xs, u)
    if Y.shape[-1] != y.size:
        raise FilterError(f"measurement map returns {Y.shape[-1]} values, y has {y.size}")
    y_hat = _weighted_mean(Y, wm)
    Sy, DY = _sqrt_cov(Y, y_hat, wc, _chol(R, "R"))
    DX = Xs - fs.x
    Pxy = (DX.T * wc) @ DY
    K = np.linalg.solve(Sy.T, np.linalg.solve(Sy, Pxy.T)).T
    innov = y - y_hat
    x = fs.x + K @ innov
    S = fs.S
    for col in (K @ Sy).T:
        S = cholupdate(S, col, -1.0)
    return replace(fs, x=x, S=S)


def ukf_step(fs: FilterState, fm: FilterModel, u, y, *, u_meas=None) -> FilterState:
    """Predict with input ``u`` then update with measurement ``y`` (whose
    map is evaluated with ``u_meas``, default ``u``)."""
    fs = ukf_predict(fs, fm, u)
    return ukf_update(fs, fm, u if u_meas is None else u_meas, y)


def kalman_step(x, P, A, B, C, Q, R, u, y):
    """Closed-form linear Kalman predict/update (reference implementation)."""
    x = A @ x + B @ np.atleast_1d(u)
    P = A @ P @ A.T + Q
    Syy = C @ P @ C.T + R
    K = np.linalg.solve(Syy, C @ P).T
    x = x + K @ (np.atleast_1d(y) - C @ x)
    I_KC = np.eye(len(x)) - K @ C
    P = I_KC @ P @ I_KC.T + K @ R @ K.T
    return x, P


# ---------------------------------------------------------------------------
# augmentation


@dataclass(frozen=True)
class AugmentationSpec:
    """Augmented estimator and its noise map.

    ``accel_min``/``accel_max`` normalize the mean absolute forward
    acceleration of the estimator window.  ``correlation`` sets a constant
    correlation coefficient between the augmented estimate and every
    original measurement (0 keeps the cross-covariance zero).
    """

    net: EstimatorNet | None
    state: str = "z"
    rho_min: float = RHO_MIN
    rho_max: float = RHO_MAX
    accel_min: float = 0.0
    accel_max: float = 1.0
    correlation: float = 0.0

    def __post_init__(self):
        if not 0 < self.rho_min < self.rho_max:
            raise FilterError("need 0 < rho_min < rho_max")
        if not self.accel_min < self.accel_max:
            raise FilterError("need accel_min < accel_max")
        if not -1.0 < self.correlation < 1.0:
            raise FilterError("correlation must lie in (-1, 1)")


def r_sigma(mean_abs_accel: float, spec: AugmentationSpec) -> float:
    s = (spec.accel_max - mean_abs_accel) / (spec.accel_max - spec.accel_min)
    return float(np.clip(s, 0.0, 1.0))


def r_map(mean_abs_accel: float, spec: AugmentationSpec) -> float:
    """Augmented variance ``rho_min^(1 - sigma) * rho_max^sigma``."""
    s = r_sigma(mean_abs_accel, spec)
    return float(math.exp((1.0 - s) * math.log(spec.rho_min) + s * math.log(spec.rho_max)))


class WindowBuffer:
    """Rolling window of estimator input rows and forward accelerations."""

    def __init__(self, window: int):
        if window < 1:
            raise FilterError("window must be >= 1")
        self.window = window
        self.rows: deque[np.ndarray] = deque(maxlen=window)
        self.accel: deque[float] = deque(maxlen=window)

    def push(self, row, accel: float) -> None:
        self.rows.append(np.atleast_1d(np.asarray(row, dtype=float)))
        self.accel.append(float(accel))

    @property
    def full(self) -> bool:
        return len(self.rows) == self.window

    def vector(self) -> np.ndarray:
        return np.concatenate(list(self.rows))

    def mean_abs_accel(self) -> float:
        return float(np.mean(np.abs(self.accel)))


def augmented_noise(R: np.ndarray, r_aug: float, correlation: float = 0.0) -> np.ndarray:
    p = R.shape[0]
    Ra = np.zeros((p + 1, p + 1))
    Ra[:p, :p] = R
    Ra[p, p] = r_aug
    if correlation:
        c = correlation * np.sqrt(np.diag(R) * r_aug)
        Ra[:p, p] = Ra[p, :p] = c
    return Ra


@dataclass(frozen=True)
class AugmentedOutcome:
    state: FilterState
    estimate: float | None
    r_aug: float | None


def aikf_step(fs: FilterState, fm: FilterModel, u, y, buffer: WindowBuffer,
              spec: AugmentationSpec, *, u_meas=None, r_aug: float | None = None
              ) -> AugmentedOutcome:
    """One augmented-information step.

    Until ``buffer`` is full this is a plain :func:`ukf_step`.  ``r_aug``
    overrides the noise map (used to check inertness).
    """
    fs = ukf_predict(fs, fm, u)
    um = u if u_meas is None else u_meas
    if not buffer.full or spec.net is None:
        return AugmentedOutcome(ukf_update(fs, fm, um, y), None, None)
    est = float(forward(spec.net, buffer.vector())[0])
    var = r_map(buffer.mean_abs_accel(), spec) if r_aug is None else float(r_aug)
    try:
        j = fm.state_names.index(spec.state)
    except ValueError:
        raise FilterError(f"filter model has no state {spec.state!r}") from None

    def h_aug(X, uu):
        return np.concatenate([fm.h(X, uu), X[:, j:j + 1]], axis=1)

    afm = replace(fm, h=h_aug)
    Ra = augmented_noise(fs.R, var, spec.correlation)
    y_aug = np.append(np.atleast_1d(np.asarray(y, dtype=float)), est)
    return AugmentedOutcome(ukf_update(fs, afm, um, y_aug, R=Ra), est, var)


# ---------------------------------------------------------------------------
# simulated altitude scenario and comparison sweep


@dataclass(frozen=True)
class AltitudeScenario:
    """Straight flight at constant altitude with a deceleration followed by
    an acceleration (each ``event_duration`` long, cosine-shaped speed
    change of ``speed_change``).  A constant bias is added to the measured
    vertical acceleration between the two halves of the event.
    Timing is this toolkit's own choice."""

    duration: float = 30.0
    dt: float = 0.1
    altitude: float = 10.0
    speed: float = 10.0
    speed_change: float = 10.0
    event_start: float = 8.0
    event_duration: float = 3.0
    noise_var: float = 1e-2
    bias: float = 0.2
    bias_duration: float = 1.0
    seed: int = 0

    @property
    def K(self) -> int:
        return int(round(self.duration / self.dt)) + 1

    @property
    def event_end(self) -> float:
        return self.event_start + 2 * self.event_duration

    @property
    def peak_accel(self) -> float:
        """Largest forward acceleration magnitude of the cosine speed profile."""
        return math.pi * abs(self.speed_change) / (2 * self.event_duration)

    def augmentation(self, net: EstimatorNet, **kw) -> AugmentationSpec:
        """Augmentation spec whose acceleration bounds are the scenario's
        known input envelope [0, peak]; a zero-acceleration scenario falls
        back to a unit upper bound so the mapping stays defined."""
        kw.setdefault("accel_min", 0.0)
        kw.setdefault("accel_max", self.peak_accel if self.peak_accel > 0 else 1.0)
        return AugmentationSpec(net, **kw)


@dataclass(frozen=True)
class SimulatedRun:
    t: np.ndarray
    states: np.ndarray         # true (K, 3)
    inputs: np.ndarray         # true accelerations (K, 2): u_z, u_x
    r_x: np.ndarray            # noisy optic flow (K,)
    accel: np.ndarray          # noisy measured accelerations (K, 2)


def simulate_altitude_scenario(sc: AltitudeScenario, model: SystemModel | None = None
                               ) -> SimulatedRun:
    model = model or planar_model(sc.dt)
    K = sc.K
    t = sc.dt * np.arange(K)
    s1 = np.clip((t - sc.event_start) / sc.event_duration, 0, 1)
    s2 = np.clip((t - sc.event_start - sc.event_duration) / sc.event_duration, 0, 1)
    vx = sc.speed - sc.speed_change * (0.5 - 0.5 * np.cos(np.pi * s1)) \
        + sc.speed_change * (0.5 - 0.5 * np.cos(np.pi * s2))
    U = np.zeros((K, 2))
    U[:-1, model.input_index("u_x")] = np.diff(vx) / sc.dt
    X = simulate(model, np.array([sc.altitude, 0.0, vx[0]]), U)
    rng = np.random.default_rng(sc.seed)
    sd = math.sqrt(sc.noise_var)
    r_x = X[:, 2] / X[:, 0] + rng.normal(0, sd, K)
    acc = U + rng.normal(0, sd, (K, 2))
    mid = sc.event_start + sc.event_duration
    biased = (t >= mid - 0.5 * sc.bias_duration) & (t < mid + 0.5 * sc.bias_duration)
    acc[biased, model.input_index("u_z")] += sc.bias
    return SimulatedRun(t, X, U, r_x, acc)


@dataclass(frozen=True)
class ComparisonConfig:
    z0: tuple[float, ...] = (2.0, 5.0, 10.0, 20.0, 40.0)
    P0_scale: tuple[float, ...] = (0.1, 1.0, 10.0)
    Q_scale: tuple[float, ...] = (0.1, 1.0, 10.0)
    P0_base: tuple[float, float, float] = (1.0, 0.1, 1.0)
    Q_base: float = 1e-4
    r_x_var: float = 1e-3
    converge_tol: float = 0.1


@dataclass(frozen=True)
class RunResult:
    run_id: int
    filter: str
    z0: float
    P0_scale: float
    Q_scale: float
    median_err_z: float
    median_err_vx: float
    converged: bool
    estimates: np.ndarray | None = None
    aug_estimates: np.ndarray | None = None
    aug_variance: np.ndarray | None = None


def run_filter(run: SimulatedRun, sc: AltitudeScenario, x0, P0, Q, r_var: float, *,
               spec: AugmentationSpec | None = None) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Run the UKF (``spec`` None) or the AI-UKF on one simulated run.

    Returns estimates (K, 3), augmented estimates and their variances (NaN
    where not used)."""
    model = planar_model(sc.dt)
    fm = filter_model(model, MeasurementCatalogue(("r_x",)))
    fs = FilterState.from_covariance(x0, P0, Q, [[r_var]])
    K = len(run.t)
    out = np.empty((K, 3))
    aug = np.full(K, np.nan)
    aug_var = np.full(K, np.nan)
    window = spec.net.window if spec is not None and spec.net is not None else 1
    buf = WindowBuffer(window)
    ix = model.input_index("u_x")
    for k in range(K):
        if spec is not None:
            buf.push([run.r_x[k], run.accel[k, ix]], run.accel[k, ix])
        if k == 0:
            fs = ukf_update(fs, fm, run.accel[0], [run.r_x[0]])
        elif spec is None:
            fs = ukf_step(fs, fm, run.accel[k - 1], [run.r_x[k]], u_meas=run.accel[k])
        else:
            res = aikf_step(fs, fm, run.accel[k - 1], [run.r_x[k]], buf, spec,
                            u_meas=run.accel[k])
            fs = res.state
            if res.estimate is not None:
                aug[k], aug_var[k] = res.estimate, res.r_aug
        out[k] = fs.x
    return out, aug, aug_var


def run_comparison(sc: AltitudeScenario, spec: AugmentationSpec, cfg: ComparisonConfig | None = None,
                   *, keep_estimates: bool = False) -> list[RunResult]:
    """UKF vs AI-UKF over the (z0 x P0 scale x Q scale) grid.

    Errors are medians of absolute error over the samples after the end of
    the deceleration/acceleration event.  A run counts as converged when the
    median altitude error is within ``converge_tol`` of the true altitude.
    Failed runs are recorded with NaN errors.
    """
    cfg = cfg or ComparisonConfig()
    run = simulate_altitude_scenario(sc)
    post = run.t >= sc.event_end
    results = []
    rid = 0
    for z0 in cfg.z0:
        for ps in cfg.P0_scale:
            for qs in cfg.Q_scale:
                # initial forward speed consistent with the first optic-flow reading
                x0 = np.array([z0, 0.0, run.r_x[0] * z0])
                P0 = ps * np.diag(cfg.P0_base)
                Q = qs * cfg.Q_base * np.eye(3)
                for name, sp in (("UKF", None), ("AI-UKF", spec)):
                    try:
                        est, aug, av = run_filter(run, sc, x0, P0, Q, cfg.r_x_var, spec=sp)
                        ez = float(np.median(np.abs(est[post, 0] - run.states[post, 0])))
                        ev = float(np.median(np.abs(est[post, 2] - run.states[post, 2])))
                        ok = bool(ez <= cfg.converge_tol * sc.altitude)
                    except FilterError:
                        est = aug = av = None
                        ez = ev = float("nan")
                        ok = False
                    results.append(RunResult(
                        rid, name, z0, ps, qs, ez, ev, ok,
                        est if keep_estimates else None,
                        aug if keep_estimates else None,
                        av if keep_estimates else None))
                rid += 1
    return results


COMPARISON_COLUMNS = ("run_id", "filter", "z0", "P0_scale", "Q_scale", "median_err_z",
                      "median_err_vx", "converged")


def comparison_csv(results: Sequence[RunResult], path=None) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(COMPARISON_COLUMNS)
    for r in results:
        w.writerow([r.run_id, r.filter, repr(r.z0), repr(r.P0_scale), repr(r.Q_scale),
                    repr(r.median_err_z), repr(r.median_err_vx), int(r.converged)])
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text)
    return text


@dataclass(frozen=True)
class SweepPoint:
    speed_change: float
    peak_accel: float
    ukf_error: float       # median over the (z0 x P0 x Q) grid of post-event median errors
    aikf_error: float

    @property
    def ratio(self) -> float:
        return self.aikf_error / self.ukf_error


def acceleration_sweep(base: AltitudeScenario, net: EstimatorNet, speed_changes: Sequence[float],
                       cfg: ComparisonConfig | None = None, *,
                       accel_max: float | None = None) -> list[SweepPoint]:
    """UKF vs AI-UKF as the event's speed change grows.

    By default each run normalizes accelerations by its own input envelope
    (see :meth:`AltitudeScenario.augmentation`); a fixed ``accel_max`` keeps
    one map across the sweep instead.  With zero speed change the
    augmentation should be inert.
    """
    out = []
    for dv in speed_changes:
        sc = replace(base, speed_change=float(dv))
        spec = sc.augmentation(net) if accel_max is None else \
            AugmentationSpec(net, accel_min=0.0, accel_max=accel_max)
        res = run_comparison(sc, spec, cfg)
        u = np.nanmedian([r.median_err_z for r in res if r.filter == "UKF"])
        a = np.nanmedian([r.median_err_z for r in res if r.filter == "AI-UKF"])
        out.append(SweepPoint(float(dv), sc.peak_accel, float(u), float(a)))
    return out
