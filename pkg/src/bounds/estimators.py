"""Feed-forward estimators, observability-based data curation and the
observability filter.

Networks are plain numpy multilayer perceptrons (rectifier hidden layers,
linear output) trained with Adam on either a squared-error or a circular
loss.  Inputs can be standardized; the statistics travel with the net.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .dynamics import MeasurementCatalogue, SystemModel, measure_series, planar_model, simulate
from .mpc import inverse_tracking
from .observability import (DEFAULT_LAMBDA, chernoff_inverse_whitened, empirical_O_batch,
                            noise_block, whiten)
from .trajectory import (RandomTrajectoryRanges, Setpoints, generate_random_setpoints,
                         sum_of_sines_velocity)

NET_FORMAT = "bounds-net"
NET_VERSION = 1


class EstimatorError(ValueError):
    pass


class TrainingError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# network


@dataclass
class EstimatorNet:
    """Fully connected network ``sizes[0] -> ... -> sizes[-1]``.

    ``weights[i]`` has shape ``(sizes[i], sizes[i+1])``.  Hidden layers use
    the rectifier, the output layer is linear.  ``input_mean`` and
    ``input_scale`` standardize raw inputs before the first layer.
    """

    sizes: tuple[int, ...]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    input_noise_std: float = 0.0
    window: int = 1
    input_labels: tuple[str, ...] = ()
    output_kind: str = "linear"
    input_mean: np.ndarray | None = None
    input_scale: np.ndarray | None = None

    def __post_init__(self):
        self.sizes = tuple(int(s) for s in self.sizes)
        self.input_labels = tuple(self.input_labels)
        if len(self.sizes) < 2:
            raise EstimatorError("a net needs at least an input and an output layer")
        if len(self.weights) != len(self.sizes) - 1 or len(self.biases) != len(self.weights):
            raise EstimatorError("number of weight/bias arrays does not match layer sizes")
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            if W.shape != (self.sizes[i], self.sizes[i + 1]) or b.shape != (self.sizes[i + 1],):
                raise EstimatorError(
                    f"layer {i}: weight {W.shape} / bias {b.shape} incompatible with sizes "
                    f"{self.sizes[i]} -> {self.sizes[i + 1]}")
        if self.output_kind not in ("linear", "angle"):
            raise EstimatorError(f"unknown output kind {self.output_kind!r}")
        if self.input_labels and len(self.input_labels) != self.sizes[0]:
            raise EstimatorError("input_labels length differs from the input layer size")
        if (self.input_mean is None) != (self.input_scale is None):
            raise EstimatorError("input_mean and input_scale must be given together")

    @property
    def n_in(self) -> int:
        return self.sizes[0]

    @property
    def n_out(self) -> int:
        return self.sizes[-1]

    def copy(self) -> EstimatorNet:
        return replace(self, weights=[W.copy() for W in self.weights],
                       biases=[b.copy() for b in self.biases],
                       input_mean=None if self.input_mean is None else self.input_mean.copy(),
                       input_scale=None if self.input_scale is None else self.input_scale.copy())

    def params(self) -> list[np.ndarray]:
        return [p for pair in zip(self.weights, self.biases) for p in pair]


def init_net(sizes: Sequence[int], seed: int = 0, **kw) -> EstimatorNet:
    """He-initialized weights, zero biases."""
    rng = np.random.default_rng(seed)
    sizes = tuple(int(s) for s in sizes)
    weights = [rng.normal(0.0, math.sqrt(2.0 / a), size=(a, b)) for a, b in zip(sizes, sizes[1:])]
    biases = [np.zeros(b) for b in sizes[1:]]
    return EstimatorNet(sizes, weights, biases, **kw)


def _standardize(net: EstimatorNet, X: np.ndarray) -> np.ndarray:
    if net.input_mean is None:
        return X
    return (X - net.input_mean) / net.input_scale


def _check_input(net: EstimatorNet, X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.shape[-1] != net.n_in:
        raise EstimatorError(f"input length {X.shape[-1]} does not match the net's {net.n_in}")
    return X


def forward(net: EstimatorNet, X) -> np.ndarray:
    """Network output for one input vector or a batch (..., n_in)."""
    X = _check_input(net, X)
    h = _standardize(net, X)
    last = len(net.weights) - 1
    for i, (W, b) in enumerate(zip(net.weights, net.biases)):
        h = h @ W + b
        if i < last:
            h = np.maximum(h, 0.0)
    return h


def _forward_cache(net: EstimatorNet, X: np.ndarray):
    acts = [_standardize(net, X)]
    last = len(net.weights) - 1
    for i, (W, b) in enumerate(zip(net.weights, net.biases)):
        z = acts[-1] @ W + b
        acts.append(np.maximum(z, 0.0) if i < last else z)
    return acts


def _backward(net: EstimatorNet, acts, grad_out: np.ndarray) -> list[np.ndarray]:
    """Gradients (interleaved W, b) of ``sum(grad_out * output)``."""
    grads: list[np.ndarray] = []
    delta = grad_out
    for i in range(len(net.weights) - 1, -1, -1):
        grads.append(delta.sum(axis=0))
        grads.append(acts[i].T @ delta)
        if i > 0:
            delta = (delta @ net.weights[i].T) * (acts[i] > 0)
    return grads[::-1]


def parameter_gradients(net: EstimatorNet, X) -> list[np.ndarray]:
    """Gradient of the summed network output with respect to every parameter."""
    X = np.atleast_2d(_check_input(net, X))
    acts = _forward_cache(net, X)
    return _backward(net, acts, np.ones_like(acts[-1]))


# ---------------------------------------------------------------------------
# serialization


def _fmt(v: float) -> str:
    return f"{v:.17g}"


def net_to_text(net: EstimatorNet, meta: dict[str, object] | None = None) -> str:
    """Versioned flat text: header lines then one row-major array per line.
    ``meta`` entries go on a ``meta`` line that readers ignore."""
    lines = [f"{NET_FORMAT} {NET_VERSION}"]
    if meta:
        lines.append("meta " + " ".join(f"{k}={v}" for k, v in meta.items()))
    lines += [
             "sizes " + " ".join(str(s) for s in net.sizes),
             f"output_kind {net.output_kind}",
             f"window {net.window}",
             f"input_noise_std {_fmt(net.input_noise_std)}",
             "input_labels " + " ".join(net.input_labels),
             f"normalized {int(net.input_mean is not None)}"]
    if net.input_mean is not None:
        lines.append("input_mean " + " ".join(map(_fmt, net.input_mean)))
        lines.append("input_scale " + " ".join(map(_fmt, net.input_scale)))
    for i, (W, b) in enumerate(zip(net.weights, net.biases)):
        lines.append(f"W{i} " + " ".join(map(_fmt, W.ravel())))
        lines.append(f"b{i} " + " ".join(map(_fmt, b)))
    return "\n".join(lines) + "\n"


def net_from_text(text: str) -> EstimatorNet:
    rows = {}
    lines = text.splitlines()
    if not lines or lines[0].split() != [NET_FORMAT, str(NET_VERSION)]:
        raise EstimatorError(f"not a {NET_FORMAT} v{NET_VERSION} file")
    for line in lines[1:]:
        if not line.strip():
            continue
        key, _, rest = line.partition(" ")
        rows[key] = rest.split()
    try:
        sizes = tuple(int(s) for s in rows["sizes"])
        weights, biases = [], []
        for i, (a, b) in enumerate(zip(sizes, sizes[1:])):
            weights.append(np.array(rows[f"W{i}"], dtype=float).reshape(a, b))
            biases.append(np.array(rows[f"b{i}"], dtype=float).reshape(b))
        norm = rows["normalized"] == ["1"]
        return EstimatorNet(
            sizes, weights, biases,
            input_noise_std=float(rows["input_noise_std"][0]),
            window=int(rows["window"][0]),
            input_labels=tuple(rows.get("input_labels", [])),
            output_kind=rows["output_kind"][0],
            input_mean=np.array(rows["input_mean"], dtype=float) if norm else None,
            input_scale=np.array(rows["input_scale"], dtype=float) if norm else None)
    except (KeyError, ValueError) as exc:
        raise EstimatorError(f"malformed net file: {exc}") from exc


def save_net(net: EstimatorNet, path, meta: dict[str, object] | None = None) -> None:
    Path(path).write_text(net_to_text(net, meta))


def load_net(path) -> EstimatorNet:
    return net_from_text(Path(path).read_text())


# ---------------------------------------------------------------------------
# losses


def circular_loss(zeta, zeta_hat):
    """``(sin a - sin b)^2 + (cos a - cos b)^2 = 2 - 2 cos(a - b)``, in [0, 4]."""
    d = np.asarray(zeta, dtype=float) - np.asarray(zeta_hat, dtype=float)
    return 2.0 - 2.0 * np.cos(d)


def _loss_and_grad(kind: str, target: np.ndarray, out: np.ndarray):
    if kind == "circular":
        d = target - out
        return np.mean(2.0 - 2.0 * np.cos(d)), -2.0 * np.sin(d) / d.size
    r = out - target
    return np.mean(r ** 2), 2.0 * r / r.size


def circular_error(zeta, zeta_hat) -> np.ndarray:
    """Signed angular error wrapped to [-pi, pi)."""
    d = np.asarray(zeta_hat, dtype=float) - np.asarray(zeta, dtype=float)
    return (d + np.pi) % (2 * np.pi) - np.pi


def error_variance(target, pred, kind: str = "linear") -> float:
    e = circular_error(target, pred) if kind == "angle" else np.asarray(pred) - np.asarray(target)
    return float(np.var(e))


# ---------------------------------------------------------------------------
# datasets


@dataclass(frozen=True)
class TrainingDataset:
    """Windowed network inputs with targets.

    ``observability`` holds each sample's minimum error variance for the
    target state (smaller is more observable).  ``groups`` identifies the
    source trajectory so splits never leak windows of one trajectory.
    """

    inputs: np.ndarray
    targets: np.ndarray
    observability: np.ndarray | None = None
    groups: np.ndarray | None = None
    input_labels: tuple[str, ...] = ()
    window: int = 1
    target_kind: str = "linear"

    def __post_init__(self):
        X = np.atleast_2d(np.asarray(self.inputs, dtype=float))
        y = np.asarray(self.targets, dtype=float).reshape(len(X), -1)
        object.__setattr__(self, "inputs", X)
        object.__setattr__(self, "targets", y)
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
            raise EstimatorError("dataset contains non-finite inputs or targets")
        for name in ("observability", "groups"):
            val = getattr(self, name)
            if val is not None:
                val = np.asarray(val)
                if val.shape != (len(X),):
                    raise EstimatorError(f"{name} has shape {val.shape}, expected ({len(X)},)")
                object.__setattr__(self, name, val)
        object.__setattr__(self, "input_labels", tuple(self.input_labels))

    def __len__(self) -> int:
        return len(self.inputs)

    def subset(self, idx) -> TrainingDataset:
        idx = np.asarray(idx)
        return replace(self, inputs=self.inputs[idx], targets=self.targets[idx],
                       observability=None if self.observability is None else self.observability[idx],
                       groups=None if self.groups is None else self.groups[idx])

    def split(self, train_fraction: float = 0.8, seed: int = 0
              ) -> tuple[TrainingDataset, TrainingDataset]:
        """Random train/test split; whole trajectories go to one side."""
        rng = np.random.default_rng(seed)
        groups = self.groups if self.groups is not None else np.arange(len(self))
        uniq = np.unique(groups)
        perm = rng.permutation(uniq)
        n_train = int(round(train_fraction * len(uniq)))
        train_groups = np.isin(groups, perm[:n_train])
        return self.subset(np.flatnonzero(train_groups)), self.subset(np.flatnonzero(~train_groups))


def curate_by_observability(dataset: TrainingDataset, bins: int = 10, mode: str = "sorted",
                            seed: int = 0) -> list[TrainingDataset]:
    """Partition into ``bins`` equal-size bins (sizes differ by at most one).

    ``sorted`` puts the most observable samples (smallest minimum error
    variance) in bin 0; ``random`` shuffles with ``seed``.
    """
    if mode not in ("sorted", "random"):
        raise EstimatorError(f"unknown curation mode {mode!r}")
    if bins < 1 or bins > len(dataset):
        raise EstimatorError(f"cannot split {len(dataset)} samples into {bins} bins")
    if mode == "sorted":
        if dataset.observability is None:
            raise EstimatorError("dataset has no per-sample observability values")
        order = np.argsort(dataset.observability, kind="stable")
    else:
        order = np.random.default_rng(seed).permutation(len(dataset))
    return [dataset.subset(part) for part in np.array_split(order, bins)]


# ---------------------------------------------------------------------------
# training


@dataclass(frozen=True)
class TrainConfig:
    """Adam training settings.  ``lr_decay`` multiplies the step size once
    per epoch (1.0 keeps it constant)."""

    epochs: int = 500
    batch_size: int = 1024
    learning_rate: float = 1e-3
    lr_decay: float = 1.0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    input_noise_std: float = 0.01
    loss: str = "mse"
    normalize: bool = True

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1:
            raise EstimatorError("epochs must be >= 0 and batch_size >= 1")
        if self.learning_rate < 0 or self.input_noise_std < 0:
            raise EstimatorError("learning rate and input noise must be nonnegative")
        if self.loss not in ("mse", "circular"):
            raise EstimatorError(f"unknown loss {self.loss!r}")


@dataclass(frozen=True)
class TrainingResult:
    net: EstimatorNet
    train_loss: np.ndarray
    test_loss: np.ndarray

    def curve_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["epoch", "train_loss", "test_loss"])
        for e, (a, b) in enumerate(zip(self.train_loss, self.test_loss)):
            w.writerow([e, _fmt(a), "" if np.isnan(b) else _fmt(b)])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text


def _as_xy(data) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(data, TrainingDataset):
        return data.inputs, data.targets
    X, y = data
    X = np.atleast_2d(np.asarray(X, dtype=float))
    return X, np.asarray(y, dtype=float).reshape(len(X), -1)


def evaluate_loss(net: EstimatorNet, data, loss: str = "mse") -> float:
    X, y = _as_xy(data)
    return float(_loss_and_grad(loss, y, forward(net, X))[0])


def train(net: EstimatorNet, data, cfg: TrainConfig | None = None, *, test=None) -> TrainingResult:
    """Mini-batch Adam.  Gaussian input noise of ``cfg.input_noise_std``
    (in raw input units) is added to every training batch, never to the
    test evaluation.  Returns a trained copy of ``net`` with its loss curve
    (entry 0 is before the first update)."""
    cfg = cfg or TrainConfig()
    X, y = _as_xy(data)
    if len(X) == 0:
        raise EstimatorError("empty training set")
    net = net.copy()
    _check_input(net, X)
    if isinstance(data, TrainingDataset):
        net.window = data.window
        if data.input_labels:
            net.input_labels = tuple(data.input_labels)
    if cfg.normalize and net.input_mean is None:
        # statistics of the noisy inputs the net actually sees in training
        net.input_mean = X.mean(axis=0)
        net.input_scale = np.maximum(np.sqrt(X.var(axis=0) + cfg.input_noise_std ** 2), 1e-8)
    net.input_noise_std = cfg.input_noise_std
    if cfg.loss == "circular":
        net.output_kind = "angle"
    rng = np.random.default_rng(cfg.seed)
    params = net.params()
    m1 = [np.zeros_like(p) for p in params]
    m2 = [np.zeros_like(p) for p in params]
    step = 0
    lr = cfg.learning_rate

    def record():
        tr = evaluate_loss(net, (X, y), cfg.loss)
        te = evaluate_loss(net, test, cfg.loss) if test is not None else float("nan")
        return tr, te

    curve = [record()]
    for epoch in range(cfg.epochs):
        perm = rng.permutation(len(X))
        for start in range(0, len(X), cfg.batch_size):
            idx = perm[start:start + cfg.batch_size]
            xb = X[idx]
            if cfg.input_noise_std > 0:
                xb = xb + rng.normal(0.0, cfg.input_noise_std, size=xb.shape)
            acts = _forward_cache(net, xb)
            loss, g_out = _loss_and_grad(cfg.loss, y[idx], acts[-1])
            if not np.isfinite(loss):
                raise TrainingError(f"non-finite loss at epoch {epoch} "
                                    f"(learning rate {lr:g}); lower the learning rate")
            grads = _backward(net, acts, g_out)
            step += 1
            c1 = 1.0 - cfg.beta1 ** step
            c2 = 1.0 - cfg.beta2 ** step
            for p, g, a, b in zip(params, grads, m1, m2):
                a *= cfg.beta1
                a += (1.0 - cfg.beta1) * g
                b *= cfg.beta2
                b += (1.0 - cfg.beta2) * g * g
                p -= lr * (a / c1) / (np.sqrt(b / c2) + cfg.adam_eps)
        lr *= cfg.lr_decay
        curve.append(record())
    arr = np.array(curve)
    return TrainingResult(net, arr[:, 0], arr[:, 1])


def train_observability_estimator(dataset: TrainingDataset, cfg: TrainConfig | None = None, *,
                                  hidden: Sequence[int] = (64, 64, 64), test=None,
                                  seed: int | None = None) -> TrainingResult:
    """Regress log10 minimum error variance from the same windowed inputs."""
    if dataset.observability is None:
        raise EstimatorError("dataset has no per-sample observability values")
    cfg = replace(cfg or TrainConfig(), loss="mse")
    logd = replace(dataset, targets=np.log10(dataset.observability), target_kind="linear")
    if test is not None:
        test = replace(test, targets=np.log10(test.observability), target_kind="linear")
    net = init_net((dataset.inputs.shape[1], *hidden, 1), cfg.seed if seed is None else seed,
                   window=dataset.window, input_labels=dataset.input_labels)
    return train(net, logd, cfg, test=test)


def predict_variance(net: EstimatorNet, X) -> np.ndarray:
    """Observability-estimator output mapped back from log10 to variance."""
    return 10.0 ** forward(net, X)[..., 0]


def within_order_fraction(true_var, pred_var) -> float:
    """Fraction of predictions within one order of magnitude of the truth."""
    d = np.abs(np.log10(np.asarray(pred_var)) - np.log10(np.asarray(true_var)))
    return float(np.mean(d <= 1.0))


# ---------------------------------------------------------------------------
# observability filter


@dataclass(frozen=True)
class ObservabilityFilterState:
    """Filtered estimate; angles are carried as a (cos, sin) unit vector."""

    estimate: np.ndarray
    previous: np.ndarray | None = None
    angle: bool = False

    @classmethod
    def initial(cls, value, angle: bool = False) -> ObservabilityFilterState:
        v = np.atleast_1d(np.asarray(value, dtype=float))
        if angle:
            v = np.concatenate([np.cos(v), np.sin(v)])
        return cls(v, None, angle)

    @property
    def value(self) -> np.ndarray:
        if self.angle:
            k = len(self.estimate) // 2
            return np.arctan2(self.estimate[k:], self.estimate[:k])
        return self.estimate


def observability_filter_step(state: ObservabilityFilterState, raw, alpha: float
                              ) -> ObservabilityFilterState:
    """``x_hat_k = alpha * x_raw_k + (1 - alpha) * x_hat_{k-1}``."""
    if not 0.0 <= alpha <= 1.0:
        raise EstimatorError(f"alpha must lie in [0, 1], got {alpha}")
    raw = np.atleast_1d(np.asarray(raw, dtype=float))
    if state.angle:
        raw = np.concatenate([np.cos(raw), np.sin(raw)])
    new = alpha * raw + (1.0 - alpha) * state.estimate
    if state.angle:
        k = len(new) // 2
        norm = np.hypot(new[:k], new[k:])
        # exactly opposite inputs with alpha = 1/2 cancel; keep the old direction
        norm_safe = np.where(norm > 0, norm, 1.0)
        c = np.where(norm > 0, new[:k] / norm_safe, state.estimate[:k])
        s = np.where(norm > 0, new[k:] / norm_safe, state.estimate[k:])
        new = np.concatenate([c, s])
    return ObservabilityFilterState(new, state.estimate, state.angle)


def alpha_from_observability(variance, v_low: float, v_high: float):
    """Log-linear map from estimated minimum error variance to a filter gain:
    1 at or below ``v_low``, 0 at or above ``v_high``."""
    if not 0 < v_low < v_high:
        raise EstimatorError("need 0 < v_low < v_high")
    v = np.asarray(variance, dtype=float)
    if np.any(~(v > 0)):
        raise EstimatorError("variance must be positive")
    a = (math.log(v_high) - np.log(v)) / (math.log(v_high) - math.log(v_low))
    return np.clip(a, 0.0, 1.0)


def run_observability_filter(raw, alpha, *, angle: bool = False, initial=None) -> np.ndarray:
    """Filter a whole series; the first raw value initializes the filter
    unless ``initial`` is given."""
    raw = np.asarray(raw, dtype=float)
    alpha = np.broadcast_to(np.asarray(alpha, dtype=float), raw.shape[:1])
    st = ObservabilityFilterState.initial(raw[0] if initial is None else initial, angle)
    out = np.empty((len(raw),) + raw.shape[1:])
    for k in range(len(raw)):
        st = observability_filter_step(st, raw[k], float(alpha[k]))
        v = st.value
        out[k] = v if raw.ndim > 1 else v[0]
    return out


# ---------------------------------------------------------------------------
# windowing and simulated datasets


def window_inputs(Y: np.ndarray, window: int, angle_cols: Sequence[int] = ()) -> np.ndarray:
    """Stack ``window`` consecutive measurement rows ending at each index
    ``k >= window`` into a flat time-major vector.

    ``Y`` is (..., K, p).  Angle columns are unwrapped inside each window and
    shifted by a multiple of 2 pi so the newest sample lies in [-pi, pi).
    Returns (..., K - window, window * p).
    """
    Y = np.asarray(Y, dtype=float)
    K, p = Y.shape[-2:]
    if K <= window:
        raise EstimatorError(f"series of length {K} too short for window {window}")
    idx = np.arange(window, K)[:, None] + np.arange(-window + 1, 1)[None, :]
    Wn = Y[..., idx, :]                                    # (..., S, window, p)
    for j in angle_cols:
        col = np.unwrap(Wn[..., j], axis=-1)
        last = col[..., -1:]
        col = col - (last - ((last + np.pi) % (2 * np.pi) - np.pi))
        Wn[..., j] = col
    return Wn.reshape(Wn.shape[:-2] + (window * p,))


def window_labels(names: Sequence[str], window: int) -> tuple[str, ...]:
    return tuple(f"{s}[{k - window + 1}]" for k in range(window) for s in names)


def _window_variance(model: SystemModel, catalogue: MeasurementCatalogue, X: np.ndarray,
                     U: np.ndarray, window: int, noise_var: float, lam: float, state: str,
                     chunk: int = 2048) -> np.ndarray:
    """Minimum error variance of ``state`` for the window of ``window``
    samples ending at each index ``k >= window`` of every trajectory."""
    B, K = X.shape[:2]
    starts = np.arange(1, K - window + 1)
    X0 = X[:, starts].reshape(-1, model.n)
    idx = starts[:, None] + np.arange(window)[None, :]
    Uw = U[:, idx].reshape(-1, window, model.m)
    p = len(catalogue.output_names(model))
    Rfull = noise_block(noise_var, p, window)
    col = model.state_index(state)
    out = np.empty(len(X0))
    for s in range(0, len(X0), chunk):
        O = empirical_O_batch(model, catalogue, X0[s:s + chunk], Uw[s:s + chunk])
        inv = chernoff_inverse_whitened(whiten(O, Rfull), lam)
        out[s:s + chunk] = inv[:, col, col]
    return out.reshape(B, len(starts))


WIND_SENSORS = ("psi", "gamma", "beta")


@dataclass(frozen=True)
class WindDataConfig:
    """Random-trajectory wind-direction dataset (defaults follow the paper's
    0.2 s, 21-point trajectories with a 4-sample window)."""

    n_trajectories: int = 2000
    length: int = 21
    dt: float = 0.01
    window: int = 4
    ranges: RandomTrajectoryRanges = field(default_factory=RandomTrajectoryRanges)
    sensors: tuple[str, ...] = WIND_SENSORS
    obs_noise_var: float = 1e-4
    lam: float = DEFAULT_LAMBDA
    altitude: float = 2.0


def wind_dataset(cfg: WindDataConfig, seed: int, *, model: SystemModel | None = None,
                 with_observability: bool = True) -> TrainingDataset:
    """Simulate random trajectories and build (window of psi, gamma, beta) -> zeta samples."""
    from .dynamics import kinematic_model

    model = model or kinematic_model(dt=cfg.dt)
    sp = generate_random_setpoints(cfg.ranges, seed, cfg.length, cfg.dt, count=cfg.n_trajectories)
    X, U = inverse_tracking(model, sp, altitude=cfg.altitude)
    cat = MeasurementCatalogue(cfg.sensors)
    Y = measure_series(model, X, U, cat)
    inputs = window_inputs(Y, cfg.window, range(len(cfg.sensors)))
    zeta = X[:, cfg.window:, model.state_index("zeta")]
    zeta = (zeta + np.pi) % (2 * np.pi) - np.pi
    S = inputs.shape[1]
    obs = None
    if with_observability:
        obs = _window_variance(model, cat, X, U, cfg.window, cfg.obs_noise_var, cfg.lam,
                               "zeta").reshape(-1)
    groups = np.repeat(np.arange(cfg.n_trajectories), S)
    return TrainingDataset(inputs.reshape(-1, inputs.shape[-1]), zeta.reshape(-1), obs, groups,
                           window_labels(cfg.sensors, cfg.window), cfg.window, "angle")


@dataclass(frozen=True)
class AltitudeDataConfig:
    """Constant-altitude planar trajectories with sum-of-sines forward speed."""

    n_trajectories: int = 2000
    length: int = 111
    dt: float = 0.1
    window: int = 20
    altitude: tuple[float, float] = (0.5, 20.0)
    n_components: int = 3
    freq: tuple[float, float] = (0.1, 0.9)
    amplitude: tuple[float, float] = (-15.0, 15.0)
    phase: tuple[float, float] = (-math.pi / 2, math.pi / 2)
    offset: tuple[float, float] = (-10.0, 10.0)
    obs_noise_var: float = 1e-3
    lam: float = DEFAULT_LAMBDA


def altitude_trajectories(cfg: AltitudeDataConfig, seed: int, model: SystemModel | None = None):
    """States (B, K, 3) and inputs (B, K, 2) of the planar model."""
    model = model or planar_model(cfg.dt)
    rng = np.random.default_rng(seed)
    z = rng.uniform(*cfg.altitude, size=cfg.n_trajectories)
    vx = sum_of_sines_velocity(int(rng.integers(2 ** 31)), cfg.length, cfg.dt,
                               n_components=cfg.n_components, freq=cfg.freq,
                               amplitude=cfg.amplitude, phase=cfg.phase, offset=cfg.offset,
                               count=cfg.n_trajectories)
    U = np.zeros((cfg.n_trajectories, cfg.length, model.m))
    U[:, :-1, model.input_index("u_x")] = np.diff(vx, axis=1) / cfg.dt
    x0 = np.stack([z, np.zeros_like(z), vx[:, 0]], axis=1)
    return simulate(model, x0, U), U


ALTITUDE_SENSORS = ("r_x", "dv_x")


def altitude_dataset(cfg: AltitudeDataConfig, seed: int, *, model: SystemModel | None = None,
                     with_observability: bool = False) -> TrainingDataset:
    """(window of r_x and forward acceleration) -> z samples."""
    model = model or planar_model(cfg.dt)
    X, U = altitude_trajectories(cfg, seed, model)
    cat = MeasurementCatalogue(ALTITUDE_SENSORS)
    Y = measure_series(model, X, U, cat)
    inputs = window_inputs(Y, cfg.window)
    target = X[:, cfg.window:, model.state_index("z")]
    obs = None
    if with_observability:
        obs = _window_variance(model, MeasurementCatalogue(("r_x",)), X, U, cfg.window,
                               cfg.obs_noise_var, cfg.lam, "z").reshape(-1)
    S = inputs.shape[1]
    groups = np.repeat(np.arange(cfg.n_trajectories), S)
    return TrainingDataset(inputs.reshape(-1, inputs.shape[-1]), target.reshape(-1), obs, groups,
                           window_labels(ALTITUDE_SENSORS, cfg.window), cfg.window, "linear")


# ---------------------------------------------------------------------------
# variable-wind observability-filter scenario


@dataclass(frozen=True)
class WindFilterScenario:
    """Straight flight in a slowly veering wind, broken by sporadic heading
    turns.  Each turn is a raised-cosine pulse of yaw rate that alternates in
    sign, so the heading swings away and back over successive turns.
    Timings and magnitudes are this toolkit's own choice."""

    duration: float = 70.0
    dt: float = 0.1
    speed: float = 1.0
    heading: float = 0.3
    wind_speed: float = 0.6
    wind_dir: float = 0.5
    wind_swing: float = 0.3
    wind_period: float = 80.0
    turns: tuple[float, ...] = (10.0, 25.0, 40.0, 55.0)
    turn_duration: float = 2.0
    turn_rate: float = 1.5
    noise_std: float = 0.01
    window: int = 4
    seed: int = 0

    @property
    def K(self) -> int:
        return int(round(self.duration / self.dt)) + 1

    @property
    def t(self) -> np.ndarray:
        return self.dt * np.arange(self.K)

    def setpoints(self) -> Setpoints:
        t = self.t
        rate = np.zeros_like(t)
        for i, t0 in enumerate(self.turns):
            s = (t - t0) / self.turn_duration
            on = (s >= 0) & (s <= 1)
            rate[on] += (-1) ** i * self.turn_rate * 0.5 * (1 - np.cos(2 * np.pi * s[on]))
        psi = self.heading + np.concatenate([[0.0], np.cumsum(rate[:-1]) * self.dt])
        zeta = self.wind_dir + self.wind_swing * np.sin(2 * np.pi * t / self.wind_period)
        return Setpoints(self.dt, np.full_like(t, self.speed), np.zeros_like(t), psi,
                         np.full_like(t, self.wind_speed), zeta)


@dataclass(frozen=True)
class WindFilterResult:
    t: np.ndarray
    zeta_true: np.ndarray
    zeta_raw: np.ndarray
    zeta_filtered: np.ndarray
    alpha: np.ndarray
    variance: np.ndarray

    COLUMNS = ("t", "zeta_true", "zeta_raw", "zeta_filtered", "alpha")

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.COLUMNS)
        for row in zip(self.t, self.zeta_true, self.zeta_raw, self.zeta_filtered, self.alpha):
            w.writerow([repr(float(v)) for v in row])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text


def simulate_wind_scenario(sc: WindFilterScenario, model: SystemModel | None = None):
    """True states, inputs and noisy (psi, gamma, beta) measurements."""
    from .dynamics import kinematic_model

    model = model or kinematic_model(dt=sc.dt)
    X, U = inverse_tracking(model, sc.setpoints())
    Y = measure_series(model, X, U, MeasurementCatalogue(WIND_SENSORS))
    rng = np.random.default_rng(sc.seed)
    return model, X, U, Y + rng.normal(0.0, sc.noise_std, Y.shape)


def run_wind_filter(sc: WindFilterScenario, net: EstimatorNet, *,
                    observability_net: EstimatorNet | None = None,
                    v_low: float = 1e-3, v_high: float = 1.0,
                    noise_var: float = 1e-4, lam: float = DEFAULT_LAMBDA) -> WindFilterResult:
    """Raw network estimates of the wind direction, blended by the
    observability filter with a gain from the estimated minimum error
    variance.  Without ``observability_net`` the variance is computed from
    the true trajectory (the bound the estimator net approximates)."""
    if net.window != sc.window:
        raise EstimatorError(f"net window {net.window} != scenario window {sc.window}")
    model, X, U, Y = simulate_wind_scenario(sc)
    W = window_inputs(Y, sc.window, range(len(WIND_SENSORS)))
    raw = forward(net, W)[:, 0]
    raw = (raw + np.pi) % (2 * np.pi) - np.pi
    if observability_net is not None:
        var = predict_variance(observability_net, W)
    else:
        var = _window_variance(model, MeasurementCatalogue(WIND_SENSORS), X[None], U[None],
                               sc.window, noise_var, lam, "zeta")[0]
    alpha = alpha_from_observability(var, v_low, v_high)
    filt = run_observability_filter(raw, alpha, angle=True)
    k = np.arange(sc.window, sc.K)
    zeta = (X[k, model.state_index("zeta")] + np.pi) % (2 * np.pi) - np.pi
    return WindFilterResult(sc.t[k], zeta, raw, filt, alpha, var)


@dataclass(frozen=True)
class TurnRecovery:
    """Per-turn checks of a filtered wind-direction series."""

    turn_end: np.ndarray          # s
    settled_error: np.ndarray     # |error| of the filtered estimate ``settle`` s after each turn
    drift_rate: np.ndarray        # max |d zeta_filtered / dt| until the next turn, rad/s
    raw_error: np.ndarray         # max |raw error| over the same stretch, rad


def turn_recovery(result: WindFilterResult, sc: WindFilterScenario,
                  settle: float = 1.0) -> TurnRecovery:
    ends, settled, drift, raw = [], [], [], []
    e_f = np.abs(circular_error(result.zeta_true, result.zeta_filtered))
    e_r = np.abs(circular_error(result.zeta_true, result.zeta_raw))
    stops = list(sc.turns[1:]) + [result.t[-1]]
    for t0, stop in zip(sc.turns, stops):
        end = t0 + sc.turn_duration
        k = int(np.argmin(np.abs(result.t - (end + settle))))
        seg = (result.t >= end + settle) & (result.t <= stop)
        ends.append(end)
        settled.append(e_f[k])
        z = np.unwrap(result.zeta_filtered[seg])
        drift.append(float(np.max(np.abs(np.diff(z)))) / sc.dt if seg.sum() > 1 else 0.0)
        raw.append(float(np.max(e_r[seg])) if seg.any() else 0.0)
    return TurnRecovery(np.array(ends), np.array(settled), np.array(drift), np.array(raw))


# ---------------------------------------------------------------------------
# observability binning experiment


def spearman(a, b) -> float:
    """Spearman rank correlation (average ranks for ties)."""
    def ranks(x):
        x = np.asarray(x, dtype=float)
        order = np.argsort(x, kind="stable")
        r = np.empty(len(x))
        r[order] = np.arange(len(x), dtype=float)
        for v in np.unique(x):
            tie = x == v
            r[tie] = r[tie].mean()
        return r

    ra, rb = ranks(a), ranks(b)
    if len(ra) != len(rb) or len(ra) < 2:
        raise EstimatorError("spearman needs two equal-length series of length >= 2")
    ra -= ra.mean()
    rb -= rb.mean()
    den = math.sqrt(float(ra @ ra) * float(rb @ rb))
    return float(ra @ rb) / den if den > 0 else float("nan")


@dataclass(frozen=True)
class BinningConfig:
    data: WindDataConfig = field(default_factory=WindDataConfig)
    bins: int = 10
    hidden: tuple[int, ...] = (64, 64, 64)
    train: TrainConfig = field(default_factory=lambda: TrainConfig(epochs=500, loss="circular"))
    seed: int = 1


@dataclass(frozen=True)
class BinningResult:
    """One net per observability bin, each tested on the same bin of held-out data.

    Bin 0 holds the smallest minimum error variance (most observable)."""

    bin_variance: np.ndarray       # mean minimum error variance per test bin
    error_variance: np.ndarray     # test error variance of the net trained on that bin
    top_on_top: float              # bin-0 net on bin-0 test data
    bottom_on_top: float           # last-bin net on bin-0 test data

    @property
    def rank_correlation(self) -> float:
        return spearman(self.bin_variance, self.error_variance)


def binning_experiment(cfg: BinningConfig | None = None) -> BinningResult:
    cfg = cfg or BinningConfig()
    ds = wind_dataset(cfg.data, cfg.seed)
    tr, te = ds.split(0.8, cfg.seed)
    btr = curate_by_observability(tr, cfg.bins)
    bte = curate_by_observability(te, cfg.bins)
    nets = []
    for i, part in enumerate(btr):
        net = init_net((ds.inputs.shape[1], *cfg.hidden, 1), cfg.train.seed + i)
        nets.append(train(net, part, cfg.train).net)
    err = np.array([error_variance(b.targets[:, 0], forward(n, b.inputs)[:, 0], ds.target_kind)
                    for n, b in zip(nets, bte)])
    top = bte[0]
    bottom_on_top = error_variance(top.targets[:, 0], forward(nets[-1], top.inputs)[:, 0],
                                   ds.target_kind)
    return BinningResult(np.array([np.mean(b.observability) for b in bte]), err,
                         float(err[0]), float(bottom_on_top))
