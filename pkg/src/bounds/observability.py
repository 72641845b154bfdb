"""Empirical observability, Fisher information and minimum error variance.

The observability matrix is the central-difference Jacobian of the stacked
window measurements with respect to the window's initial state.  Rows are
ordered time-major: row ``k * p + j`` holds measurement ``j`` at step ``k``.
"""

from __future__ import annotations

import csv
import io
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .dynamics import (MAGNITUDE, MeasurementCatalogue, MeasurementUndefinedError,
                       SystemModel, measure, simulate, wrap_angle)
from .trajectory import Trajectory

DEFAULT_EPS = 1e-5
DEFAULT_LAMBDA = 1e-6
DEFAULT_WINDOW = 5
DEFAULT_NOISE_VAR = 0.1


class ObservabilityError(ValueError):
    pass


class ObservabilityWarning(UserWarning):
    pass


@dataclass(frozen=True)
class ObservabilityMatrix:
    values: np.ndarray
    state_names: tuple[str, ...]
    measurement_names: tuple[str, ...]
    steps: tuple[int, ...]
    eps: float = DEFAULT_EPS
    start: int = 0

    def __post_init__(self):
        object.__setattr__(self, "state_names", tuple(self.state_names))
        object.__setattr__(self, "measurement_names", tuple(self.measurement_names))
        object.__setattr__(self, "steps", tuple(int(k) for k in self.steps))
        v = np.asarray(self.values, dtype=float)
        shape = (len(self.steps) * len(self.measurement_names), len(self.state_names))
        if v.shape != shape:
            raise ObservabilityError(f"observability matrix shape {v.shape}, expected {shape}")
        if not np.all(np.isfinite(v)):
            raise ObservabilityError("observability matrix has non-finite entries")
        object.__setattr__(self, "values", v)

    @property
    def p(self) -> int:
        return len(self.measurement_names)

    @property
    def window(self) -> int:
        return len(self.steps)

    @property
    def row_labels(self) -> list[tuple[int, str]]:
        return [(k, s) for k in self.steps for s in self.measurement_names]


@dataclass(frozen=True)
class FisherInfo:
    F: np.ndarray
    noise: np.ndarray
    state_names: tuple[str, ...]
    # whitened observability matrix A with F = A^T A, when available
    whitened: np.ndarray | None = None


@dataclass(frozen=True)
class MinErrorVariance:
    """Diagonal of the regularized inverse Fisher information (squared state units)."""

    values: np.ndarray
    lam: float
    saturated: np.ndarray
    state_names: tuple[str, ...]

    def __getitem__(self, name: str) -> float:
        return float(self.values[self.state_names.index(name)])


@dataclass(frozen=True)
class CoordinateTransform:
    """Diffeomorphism ``z = forward(x)`` on full state vectors.

    ``jacobian`` (dz/dx) is optional; without it the Jacobian is taken by
    central differences.  ``inverse`` is only needed to re-parameterize a
    model.
    """

    forward: Callable[[np.ndarray], np.ndarray]
    names: tuple[str, ...]
    jacobian: Callable[[np.ndarray], np.ndarray] | None = None
    inverse: Callable[[np.ndarray], np.ndarray] | None = None

    def jacobian_at(self, x0) -> np.ndarray:
        x0 = np.asarray(x0, dtype=float)
        if self.jacobian is not None:
            return np.asarray(self.jacobian(x0), dtype=float)
        n = x0.size
        h = 1e-6 * np.maximum(1.0, np.abs(x0))
        J = np.empty((len(self.names), n))
        for i in range(n):
            e = np.zeros(n)
            e[i] = h[i]
            J[:, i] = (np.asarray(self.forward(x0 + e)) - np.asarray(self.forward(x0 - e))) / (2 * h[i])
        return J


# ---------------------------------------------------------------------------
# empirical observability matrix


def _perturbation_batch(model: SystemModel, X0: np.ndarray, eps: float, one_sided: bool):
    """Initial states (W, 2n, n) and the per-state difference denominators."""
    W, n = X0.shape
    mag = np.array([lab.kind == MAGNITUDE for lab in model.state_labels])
    low = X0 - eps
    too_low = mag[None, :] & (low < 0)
    steps = np.full((W, n), 2 * eps)
    minus_offset = np.full((W, n), -eps)
    if np.any(too_low):
        w_idx, s_idx = np.nonzero(too_low)
        name = model.state_names[s_idx[0]]
        if not one_sided:
            raise ObservabilityError(
                f"perturbing magnitude state {name!r} by -{eps:g} makes it negative "
                f"(value {X0[w_idx[0], s_idx[0]]:g}); use a smaller eps or one_sided=True")
        warnings.warn(f"one-sided difference used for magnitude state {name!r}",
                      ObservabilityWarning, stacklevel=3)
        minus_offset[too_low] = 0.0
        steps[too_low] = eps
    P = np.repeat(X0[:, None, :], 2 * n, axis=1)
    idx = np.arange(n)
    P[:, idx, idx] += eps
    P[:, n + idx, idx] += minus_offset
    return P, steps


def _locate_undefined(model, catalogue, P, U, n):
    """Find (state, sign, step) for the first perturbed run with an undefined measurement."""
    for i in range(P.shape[0]):
        for s in range(2 * n):
            X = simulate(model, P[i, s], U[i], check=False)
            for k in range(X.shape[0]):
                try:
                    measure(model, X[k], U[i, k], catalogue)
                except MeasurementUndefinedError as exc:
                    sign = "+" if s < n else "-"
                    return (f"window {i}: perturbing {model.state_names[s % n]!r} ({sign}eps) "
                            f"makes {exc} at step {k}")
    return None


def empirical_O_batch(model: SystemModel, catalogue: MeasurementCatalogue, X0, U, *,
                      eps: float = DEFAULT_EPS, one_sided: bool = False) -> np.ndarray:
    """Observability matrices for many windows at once.

    ``X0`` is (W, n) and ``U`` is (W, w, m).  Returns (W, p*w, n).
    """
    X0 = np.asarray(X0, dtype=float)
    U = np.asarray(U, dtype=float)
    if not eps > 0:
        raise ObservabilityError("eps must be positive")
    W, n = X0.shape
    w = U.shape[1]
    P, denom = _perturbation_batch(model, X0, eps, one_sided)
    Ub = U[:, None]
    try:
        Xn = simulate(model, X0, U, check=False)
        Yn = measure(model, Xn, U, catalogue)
        Xp = simulate(model, P, Ub, check=False)
        Yp = measure(model, Xp, Ub, catalogue)
    except MeasurementUndefinedError as exc:
        try:
            Xn = simulate(model, X0, U, check=False)
            measure(model, Xn, U, catalogue)
        except MeasurementUndefinedError:
            raise ObservabilityError(f"nominal run: {exc}") from exc
        where = _locate_undefined(model, catalogue, P, U, n)
        raise ObservabilityError(where or str(exc)) from exc
    if not (np.all(np.isfinite(Yn)) and np.all(np.isfinite(Yp))):
        raise ObservabilityError("non-finite measurements along a perturbed run")
    angle = catalogue.angle_mask(model)
    if angle.any():
        Yn[..., angle] = np.unwrap(Yn[..., angle], axis=-2)
        ref = Yn[:, None][..., angle]
        Yp[..., angle] = ref + wrap_angle(Yp[..., angle] - ref)
    dY = (Yp[:, :n] - Yp[:, n:]) / denom[:, :, None, None]   # (W, n, w, p)
    p = Yn.shape[-1]
    return dY.reshape(W, n, w * p).transpose(0, 2, 1)


def empirical_O(model: SystemModel, catalogue: MeasurementCatalogue, x0, U, window: int,
                eps: float = DEFAULT_EPS, *, one_sided: bool = False,
                start: int = 0) -> ObservabilityMatrix:
    """Empirical observability matrix of one window starting at ``x0``.

    The stored inputs ``U[:window]`` drive both perturbed runs; they are not
    re-solved for the perturbed initial conditions.
    """
    U = np.asarray(U, dtype=float)
    if U.ndim != 2 or U.shape[0] < window:
        raise ObservabilityError(f"need at least {window} input rows, got {U.shape}")
    if window < 1:
        raise ObservabilityError("window must be >= 1")
    O = empirical_O_batch(model, catalogue, np.asarray(x0, dtype=float)[None],
                          U[None, :window], eps=eps, one_sided=one_sided)[0]
    return ObservabilityMatrix(O, model.state_names, catalogue.output_names(model),
                               tuple(range(window)), eps, start)


# ---------------------------------------------------------------------------
# Fisher information and its regularized inverse


def noise_block(R, p: int, window: int) -> np.ndarray:
    """Full (p*w) x (p*w) block-diagonal noise covariance.

    ``R`` may be a scalar variance, a length-p variance vector, a p x p
    per-step covariance, or the full matrix.
    """
    R = np.asarray(R, dtype=float)
    if R.ndim == 0:
        return float(R) * np.eye(p * window)
    if R.ndim == 1:
        if R.size != p:
            raise ObservabilityError(f"noise vector has {R.size} entries, expected {p}")
        return np.kron(np.eye(window), np.diag(R))
    if R.shape == (p, p):
        return np.kron(np.eye(window), R)
    if R.shape == (p * window, p * window):
        return R
    raise ObservabilityError(f"noise matrix shape {R.shape} matches neither {p} nor {p * window}")


def _noise_factor(Rfull: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.cholesky(Rfull)
    except np.linalg.LinAlgError:
        ev = np.linalg.eigvalsh(0.5 * (Rfull + Rfull.T))
        raise ObservabilityError(
            f"noise covariance is not positive definite (min eigenvalue {ev.min():.3g})") from None


def whiten(O: np.ndarray, Rfull: np.ndarray) -> np.ndarray:
    """``L^-1 O`` with ``R = L L^T``, so that ``F = A^T A``."""
    return np.linalg.solve(_noise_factor(Rfull), O)


def fisher_batch(O: np.ndarray, Rfull: np.ndarray) -> np.ndarray:
    """``O^T R^-1 O`` for a stack of matrices (..., p*w, n)."""
    A = whiten(O, Rfull)
    F = np.swapaxes(A, -1, -2) @ A
    return 0.5 * (F + np.swapaxes(F, -1, -2))


def fisher(O: ObservabilityMatrix, R=DEFAULT_NOISE_VAR) -> FisherInfo:
    Rfull = noise_block(R, O.p, O.window)
    A = whiten(O.values, Rfull)
    F = A.T @ A
    return FisherInfo(0.5 * (F + F.T), Rfull, O.state_names, A)


def _lambda_check(F: np.ndarray, lam: float):
    ev = np.linalg.eigvalsh(F)
    scale = max(float(np.max(np.abs(ev))), 1e-300)
    nonzero = ev[ev > 1e-12 * scale]
    if nonzero.size and lam >= nonzero.min():
        warnings.warn(f"lambda {lam:g} >= smallest nonzero Fisher eigenvalue "
                      f"{nonzero.min():.3g}; regularization distorts observable directions",
                      ObservabilityWarning, stacklevel=3)


def chernoff_inverse_batch(F: np.ndarray, lam: float = DEFAULT_LAMBDA) -> np.ndarray:
    """``(F + lam I)^-1`` via Cholesky for a stack of symmetric matrices."""
    if not lam > 0:
        raise ObservabilityError("lambda must be positive")
    n = F.shape[-1]
    A = F + lam * np.eye(n)
    # symmetric diagonal equilibration keeps the factorization stable when
    # individual states carry information on very different scales
    d = np.sqrt(np.diagonal(A, axis1=-2, axis2=-1))
    scale = d[..., :, None] * d[..., None, :]
    try:
        L = np.linalg.cholesky(A / scale)
    except np.linalg.LinAlgError:
        ev = np.linalg.eigvalsh(A)
        raise ObservabilityError(
            "regularized Fisher matrix not positive definite; eigenvalues "
            f"{np.array2string(np.atleast_2d(ev)[0], precision=3)}") from None
    Linv = np.linalg.solve(L, np.broadcast_to(np.eye(n), A.shape))
    inv = (np.swapaxes(Linv, -1, -2) @ Linv) / scale
    return 0.5 * (inv + np.swapaxes(inv, -1, -2))


def chernoff_inverse_whitened(A: np.ndarray, lam: float = DEFAULT_LAMBDA) -> np.ndarray:
    """``(A^T A + lam I)^-1`` without forming ``A^T A``.

    The triangular factor of ``[A; sqrt(lam) I]`` is the Cholesky factor of
    ``F + lam I`` but is computed from a matrix with the square root of its
    condition number, which matters when a measurement is nearly singular.
    """
    if not lam > 0:
        raise ObservabilityError("lambda must be positive")
    A = np.asarray(A, dtype=float)
    n = A.shape[-1]
    reg = np.broadcast_to(np.sqrt(lam) * np.eye(n), A.shape[:-2] + (n, n))
    Rt = np.linalg.qr(np.concatenate([A, reg], axis=-2), mode="r")
    if not np.all(np.abs(np.diagonal(Rt, axis1=-2, axis2=-1)) > 0):
        raise ObservabilityError("regularized Fisher factor is singular")
    Rinv = np.linalg.solve(Rt, np.broadcast_to(np.eye(n), Rt.shape))
    inv = Rinv @ np.swapaxes(Rinv, -1, -2)
    return 0.5 * (inv + np.swapaxes(inv, -1, -2))


def saturation_threshold(lam: float) -> float:
    return 0.5 / lam


def chernoff_inverse(F: FisherInfo | np.ndarray, lam: float = DEFAULT_LAMBDA, *,
                     state_names: Sequence[str] | None = None,
                     warn: bool = True) -> tuple[np.ndarray, MinErrorVariance]:
    """Regularized inverse and its diagonal.  Unobservable directions are
    capped at ``1/lam`` and flagged as saturated."""
    A = None
    if isinstance(F, FisherInfo):
        names = F.state_names
        A = F.whitened
        F = F.F
    else:
        F = np.asarray(F, dtype=float)
        names = tuple(state_names) if state_names else tuple(f"x{i}" for i in range(F.shape[0]))
    if warn:
        _lambda_check(F, lam)
    inv = chernoff_inverse_batch(F, lam) if A is None else chernoff_inverse_whitened(A, lam)
    d = np.diag(inv).copy()
    return inv, MinErrorVariance(d, lam, d >= saturation_threshold(lam), names)


# ---------------------------------------------------------------------------
# coordinate transforms


def transform_O(O: ObservabilityMatrix, T: CoordinateTransform, x0, *,
                max_cond: float = 1e12) -> ObservabilityMatrix:
    """Re-express ``O`` in coordinates ``z = T(x)``: ``O_z = O_x (dT/dx)^-1`` at ``x0``."""
    J = T.jacobian_at(x0)
    if J.shape != (O.values.shape[1],) * 2:
        raise ObservabilityError(f"transform Jacobian shape {J.shape} is not square n x n")
    cond = np.linalg.cond(J) if np.all(np.isfinite(J)) else np.inf
    if not np.isfinite(cond) or cond > max_cond:
        raise ObservabilityError(f"transform Jacobian singular at x0 (condition number {cond:.3g})")
    Oz = np.linalg.solve(J.T, O.values.T).T
    return ObservabilityMatrix(Oz, T.names, O.measurement_names, O.steps, O.eps, O.start)


def polar_velocity_transform(model: SystemModel) -> CoordinateTransform:
    """Replace body velocity ``(v_x, v_y)`` by ground speed ``g`` and course ``beta``."""
    ix, iy = model.state_index("v_x"), model.state_index("v_y")
    names = list(model.state_names)
    names[ix], names[iy] = "g", "beta"

    def forward(x):
        z = np.array(x, dtype=float)
        z[..., ix] = np.hypot(x[..., ix], x[..., iy])
        z[..., iy] = np.arctan2(x[..., iy], x[..., ix])
        return z

    def inverse(z):
        x = np.array(z, dtype=float)
        x[..., ix] = z[..., ix] * np.cos(z[..., iy])
        x[..., iy] = z[..., ix] * np.sin(z[..., iy])
        return x

    def jacobian(x):
        J = np.eye(x.size)
        vx, vy = x[ix], x[iy]
        g2 = vx * vx + vy * vy
        g = np.sqrt(g2)
        J[ix, ix], J[ix, iy] = (vx / g, vy / g) if g > 0 else (np.nan, np.nan)
        J[iy, ix], J[iy, iy] = (-vy / g2, vx / g2) if g > 0 else (np.nan, np.nan)
        return J

    return CoordinateTransform(forward, tuple(names), jacobian, inverse)


def reparameterize(model: SystemModel, T: CoordinateTransform) -> SystemModel:
    """The same system simulated directly in ``z`` coordinates."""
    if T.inverse is None:
        raise ObservabilityError("transform has no inverse")
    from dataclasses import replace

    from .dynamics import Label
    labels = tuple(Label(nz, lab.unit if nz == lab.name else "", lab.kind if nz == lab.name else
                         ("angle" if nz == "beta" else "linear"))
                   for nz, lab in zip(T.names, model.state_labels))

    def step_map(z, u, dt):
        return T.forward(model.step_map(T.inverse(z), u, dt))

    def measure_map(z, u, names):
        return model.measure_map(T.inverse(z), u, names)

    return replace(model, name=model.name + "_z", state_labels=labels, step_map=step_map,
                   measure_map=measure_map, rhs=None)


# ---------------------------------------------------------------------------
# slicing


def slice_O(O: ObservabilityMatrix, sensors: Sequence[str] | None = None,
            steps: Sequence[int] | None = None,
            states: Sequence[str] | None = None) -> ObservabilityMatrix:
    """Extract rows for a sensor/time-step subset and columns for a state subset."""
    sensors = O.measurement_names if sensors is None else tuple(sensors)
    steps = O.steps if steps is None else tuple(steps)
    states = O.state_names if states is None else tuple(states)
    for what, sub in (("sensor", sensors), ("step", steps), ("state", states)):
        if len(sub) == 0:
            raise ObservabilityError(f"empty {what} subset")
    try:
        js = [O.measurement_names.index(s) for s in sensors]
        ks = [O.steps.index(k) for k in steps]
        cs = [O.state_names.index(s) for s in states]
    except ValueError as exc:
        raise ObservabilityError(f"invalid subset: {exc}") from None
    rows = [k * O.p + j for k in ks for j in js]
    return ObservabilityMatrix(O.values[np.ix_(rows, cs)], states, sensors, steps, O.eps,
                               O.start)


# ---------------------------------------------------------------------------
# sliding windows


@dataclass(frozen=True)
class VarianceSeries:
    """Minimum error variance per window start."""

    t_start: np.ndarray
    t_display: np.ndarray
    variance: np.ndarray
    saturated: np.ndarray
    state_names: tuple[str, ...]
    window: int
    lam: float

    def __getitem__(self, name: str) -> np.ndarray:
        return self.variance[:, self.state_names.index(name)]

    def at(self, i: int) -> MinErrorVariance:
        return MinErrorVariance(self.variance[i], self.lam, self.saturated[i], self.state_names)

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t_start", "t_display", *(f"var_{s}" for s in self.state_names),
                    *(f"saturated_{s}" for s in self.state_names)])
        for i in range(len(self.t_start)):
            w.writerow([repr(float(self.t_start[i])), repr(float(self.t_display[i])),
                        *(repr(float(v)) for v in self.variance[i]),
                        *(str(int(b)) for b in self.saturated[i])])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text


def window_starts(K: int, window: int) -> np.ndarray:
    if window < 1:
        raise ObservabilityError("window must be >= 1")
    if K < window:
        raise ObservabilityError(f"trajectory length {K} is shorter than window {window}")
    return np.arange(K - window + 1)


def sliding_O(model: SystemModel, X: np.ndarray, U: np.ndarray, window: int,
              catalogue: MeasurementCatalogue, *, eps: float = DEFAULT_EPS,
              one_sided: bool = False, starts=None, chunk: int = 512,
              workers: int = 1) -> np.ndarray:
    """Observability matrices (W, p*w, n) for windows starting at ``starts``."""
    X = np.asarray(X, dtype=float)
    U = np.asarray(U, dtype=float)
    starts = window_starts(len(X), window) if starts is None else np.asarray(starts)
    idx = starts[:, None] + np.arange(window)[None]
    chunks = [slice(i, i + chunk) for i in range(0, len(starts), chunk)]

    def run(sl):
        try:
            return empirical_O_batch(model, catalogue, X[starts[sl]], U[idx[sl]], eps=eps,
                                     one_sided=one_sided)
        except ObservabilityError as exc:
            # re-run per window to tag the failing one
            for j in range(sl.start, min(sl.stop, len(starts))):
                try:
                    empirical_O_batch(model, catalogue, X[starts[j]][None], U[idx[j]][None],
                                      eps=eps, one_sided=one_sided)
                except ObservabilityError as inner:
                    raise ObservabilityError(f"window {int(starts[j])}: {inner}") from exc
            raise

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(run, chunks))
    else:
        parts = [run(sl) for sl in chunks]
    return np.concatenate(parts, axis=0)


def sliding_window_variance(model: SystemModel, trajectory: Trajectory,
                            window: int = DEFAULT_WINDOW, R=DEFAULT_NOISE_VAR,
                            lam: float = DEFAULT_LAMBDA,
                            catalogue: MeasurementCatalogue | None = None,
                            transform: CoordinateTransform | None = None, *,
                            eps: float = DEFAULT_EPS, one_sided: bool = False,
                            states: Sequence[str] | None = None, chunk: int = 512,
                            workers: int = 1, warn: bool = False) -> VarianceSeries:
    """Minimum error variance of every state in sliding windows along a trajectory.

    ``states`` restricts the Fisher analysis to a subset of (possibly
    transformed) state columns, treating the others as known.
    """
    if catalogue is None:
        raise ObservabilityError("a measurement catalogue is required")
    trajectory.check_model(model)
    X, U = trajectory.states, trajectory.inputs
    starts = window_starts(trajectory.K, window)
    O = sliding_O(model, X, U, window, catalogue, eps=eps, one_sided=one_sided,
                  starts=starts, chunk=chunk, workers=workers)
    names = model.state_names
    if transform is not None:
        Oz = np.empty_like(O)
        for i, s in enumerate(starts):
            try:
                om = ObservabilityMatrix(O[i], names, catalogue.output_names(model),
                                         tuple(range(window)), eps, int(s))
                Oz[i] = transform_O(om, transform, X[s]).values
            except ObservabilityError as exc:
                raise ObservabilityError(f"window {int(s)}: {exc}") from exc
        O, names = Oz, transform.names
    if states is not None:
        unknown = [s for s in states if s not in names]
        if unknown:
            raise ObservabilityError(f"unknown states {unknown}; available {list(names)}")
        cols = [names.index(s) for s in states]
        O, names = O[:, :, cols], tuple(states)
    Rfull = noise_block(R, O.shape[1] // window, window)
    A = whiten(O, Rfull)
    if warn:
        for i in range(len(A)):
            _lambda_check(A[i].T @ A[i], lam)
    inv = chernoff_inverse_whitened(A, lam)
    var = np.diagonal(inv, axis1=-2, axis2=-1).copy()
    t_start = trajectory.t[starts]
    return VarianceSeries(t_start, t_start + 0.5 * window * trajectory.dt, var,
                          var >= saturation_threshold(lam), tuple(names), window, lam)
