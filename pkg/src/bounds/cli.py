"""Scenario-driven command line front end.

A run is described by one INI file (sections and keys below); command-line
flags override individual keys.  Every command writes its outputs, plus a
``resolved.ini`` copy of the effective configuration, into the output
directory.  Rerunning a command from that copy reproduces its CSV outputs
byte for byte.

Exit codes: 0 success, 1 input error (bad config, data or arguments),
2 runtime error (a numerical method failed).  Errors are reported on
stderr as one line ``error code=<n> type=<name> message=<text>``.
"""

from __future__ import annotations

import argparse
import configparser
import io
import math
import sys
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any, Callable, Mapping, Sequence

import numpy as np

from . import __version__
from .aikf import (AltitudeScenario, ComparisonConfig, comparison_csv, run_comparison,
                   run_filter, simulate_altitude_scenario)
from .dynamics import MeasurementCatalogue, SystemModel, build_model, simulate
from .estimators import (AltitudeDataConfig, EstimatorNet, TrainConfig, WindDataConfig,
                         WindFilterScenario, altitude_dataset, init_net, load_net,
                         run_wind_filter, save_net, train, train_observability_estimator,
                         wind_dataset)
from .mpc import MpcConfig, inverse_tracking, solve_tracking
from .observability import polar_velocity_transform, sliding_window_variance
from .trajectory import (MotifSpec, RandomTrajectoryRanges, Trajectory, compose_motifs,
                         export_csv, generate_random_setpoints, ingest_csv,
                         simulated_trajectory, sum_of_sines_velocity, with_measurements)

COMMANDS = ("simulate", "observability", "train", "filter", "aikf", "compare")


class ConfigError(ValueError):
    """Invalid scenario configuration."""


# ---------------------------------------------------------------------------
# configuration schema


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(s) for s in text.split(",") if s.strip())


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(s) for s in text.split(",") if s.strip())


def _strs(text: str) -> tuple[str, ...]:
    return tuple(s.strip() for s in text.split(",") if s.strip())


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _fmt_value(v: Any) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ", ".join(_fmt_value(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


# section -> key -> (parser, default)
SCHEMA: dict[str, dict[str, tuple[Callable[[str], Any], Any]]] = {
    "run": {"seed": (int, 0), "out": (str, "out"), "workers": (int, 1)},
    "model": {"name": (str, "kinematic"), "dt": (float, 0.1), "params": (_strs, ())},
    "trajectory": {
        "source": (str, "motifs"),          # motifs | random | sines | csv
        "duration": (float, 10.0),
        "speed": (float, 1.0), "heading": (float, 0.0), "course_offset": (float, 0.0),
        "wind_speed": (float, 1.0), "wind_dir": (float, 0.5), "altitude": (float, 2.0),
        "motifs": (str, ""),                # "kind amplitude start duration; ..."
        "csv": (str, ""),
        "controller": (str, "inverse"),     # inverse | mpc
        "mpc_horizon": (int, 10),
    },
    "sensors": {"names": (_strs, ("psi", "gamma", "beta"))},
    "observability": {
        "window": (int, 5), "eps": (float, 1e-5), "lam": (float, 1e-6),
        "noise_var": (float, 0.1), "states": (_strs, ()), "transform": (str, "none"),
        "plot": (_bool, True), "plot_states": (_strs, ()),
    },
    "estimator": {
        "kind": (str, "wind"),              # wind | altitude
        "n_trajectories": (int, 2000), "epochs": (int, 500), "batch_size": (int, 1024),
        "learning_rate": (float, 1e-3), "hidden": (_ints, (64, 64, 64)),
        "input_noise_std": (float, 0.01),
        # 0 selects the kind's default: the filter/aikf scenario dt, window 4 or 20
        "dt": (float, 0.0), "window": (int, 0),
        "observability": (_bool, False), "obs_noise_var": (float, 1e-4),
        "net": (str, ""), "observability_net": (str, ""),
    },
    "filter": {
        "duration": (float, 70.0), "dt": (float, 0.1), "speed": (float, 1.0),
        "heading": (float, 0.3), "wind_speed": (float, 0.6), "wind_dir": (float, 0.5),
        "wind_swing": (float, 0.3), "wind_period": (float, 80.0),
        "turns": (_floats, (10.0, 25.0, 40.0, 55.0)), "turn_duration": (float, 2.0),
        "turn_rate": (float, 1.5), "noise_std": (float, 0.01),
        "v_low": (float, 1e-3), "v_high": (float, 1.0), "alpha_source": (str, "bound"),
    },
    "aikf": {
        "duration": (float, 30.0), "dt": (float, 0.1), "altitude": (float, 10.0),
        "speed": (float, 10.0), "speed_change": (float, 10.0), "event_start": (float, 8.0),
        "event_duration": (float, 3.0), "noise_var": (float, 1e-2), "bias": (float, 0.2),
        "bias_duration": (float, 1.0),
        "z0": (float, 20.0), "P0_scale": (float, 1.0), "Q_scale": (float, 1.0),
        "z0_sweep": (_floats, (2.0, 5.0, 10.0, 20.0, 40.0)),
        "P0_sweep": (_floats, (0.1, 1.0, 10.0)), "Q_sweep": (_floats, (0.1, 1.0, 10.0)),
        "r_x_var": (float, 1e-3), "Q_base": (float, 1e-4),
        "accel_max": (float, 0.0),          # 0 means the scenario's peak acceleration
    },
}

# desk-scale training presets per estimator kind: (trajectories, epochs)
DESK_SCALE = {"wind": (2000, 500), "altitude": (2000, 100)}


@dataclass(frozen=True)
class ScenarioConfig:
    """Fully resolved configuration: ``values[section][key]``."""

    values: Mapping[str, Mapping[str, Any]]

    def __getitem__(self, section: str) -> Mapping[str, Any]:
        return self.values[section]

    @property
    def seed(self) -> int:
        return int(self.values["run"]["seed"])

    def to_ini(self) -> str:
        buf = io.StringIO()
        buf.write(f"# resolved configuration, bounds {__version__}\n")
        for section, keys in self.values.items():
            buf.write(f"[{section}]\n")
            for key, val in keys.items():
                buf.write(f"{key} = {_fmt_value(val)}\n")
            buf.write("\n")
        return buf.getvalue()


def parse_config(text: str = "", overrides: Mapping[str, Any] | None = None) -> ScenarioConfig:
    """Parse INI text against :data:`SCHEMA`; unknown sections or keys raise
    :class:`ConfigError` naming them.  ``overrides`` maps ``section.key`` to
    already-typed values or strings."""
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",))
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"unparseable config: {exc}".replace("\n", " ")) from None
    values = {s: {k: d for k, (_, d) in keys.items()} for s, keys in SCHEMA.items()}
    for section in cp.sections():
        if section not in SCHEMA:
            raise ConfigError(f"unknown section [{section}]")
        for key, raw in cp.items(section):
            if key not in SCHEMA[section]:
                raise ConfigError(f"unknown key '{key}' in section [{section}]")
            values[section][key] = _convert(section, key, raw)
    for dotted, val in (overrides or {}).items():
        section, _, key = dotted.partition(".")
        if section not in SCHEMA or key not in SCHEMA[section]:
            raise ConfigError(f"unknown key '{dotted}'")
        values[section][key] = _convert(section, key, val) if isinstance(val, str) else val
    return ScenarioConfig(values)


def _convert(section: str, key: str, raw: str):
    parser = SCHEMA[section][key][0]
    try:
        return parser(raw)
    except ValueError as exc:
        raise ConfigError(f"bad value for {section}.{key}: {exc}") from None


# ---------------------------------------------------------------------------
# building blocks


def _model(cfg: ScenarioConfig, dt: float | None = None) -> SystemModel:
    params = {}
    for item in cfg["model"]["params"]:
        k, sep, v = item.partition("=")
        if not sep:
            raise ConfigError(f"model.params entry {item!r} is not key=value")
        params[k.strip()] = float(v)
    return build_model(cfg["model"]["name"], params, dt=cfg["model"]["dt"] if dt is None else dt)


def parse_motifs(text: str, **base) -> list[MotifSpec]:
    """``"heading_turn 1.5 2 3; accelerate 1 5 2"``: kind, amplitude, start, duration."""
    out = []
    for chunk in text.split(";"):
        parts = chunk.split()
        if not parts:
            continue
        if len(parts) != 4:
            raise ConfigError(f"motif {chunk.strip()!r}: expected 'kind amplitude start duration'")
        try:
            amp, start, dur = map(float, parts[1:])
        except ValueError:
            raise ConfigError(f"motif {chunk.strip()!r}: non-numeric field") from None
        out.append(MotifSpec(parts[0], amp, dur, start, **base))
    return out


def _setpoints(cfg: ScenarioConfig, K: int, dt: float):
    tc = cfg["trajectory"]
    src = tc["source"]
    if src == "motifs":
        motifs = parse_motifs(tc["motifs"], speed=tc["speed"], heading=tc["heading"],
                              wind_speed=tc["wind_speed"], wind_dir=tc["wind_dir"])
        return compose_motifs(motifs, K, dt, speed=tc["speed"], heading=tc["heading"],
                              course_offset=tc["course_offset"], wind_speed=tc["wind_speed"],
                              wind_dir=tc["wind_dir"], altitude=tc["altitude"])
    if src == "random":
        return generate_random_setpoints(RandomTrajectoryRanges(), cfg.seed, K, dt)
    raise ConfigError(f"trajectory.source {src!r} cannot produce setpoints")


def build_trajectory(cfg: ScenarioConfig, catalogue: MeasurementCatalogue | None
                     ) -> tuple[SystemModel, Trajectory]:
    """Simulate (or ingest) the configured trajectory."""
    tc = cfg["trajectory"]
    model = _model(cfg)
    if tc["source"] == "csv":
        if not tc["csv"]:
            raise ConfigError("trajectory.source = csv needs trajectory.csv")
        traj = ingest_csv(tc["csv"])
        model = _model(cfg, dt=traj.dt)
        traj.check_model(model)
        if not traj.input_names:
            raise ConfigError("ingested trajectory has no input columns")
        if catalogue is not None:
            traj = with_measurements(traj, model, catalogue)
        return model, traj
    dt = model.dt
    K = int(round(tc["duration"] / dt)) + 1
    if model.name == "planar":
        if tc["source"] == "sines":
            vx = sum_of_sines_velocity(cfg.seed, K, dt)
        else:
            vx = np.asarray(_setpoints(cfg, K, dt).v_x)
        U = np.zeros((K, model.m))
        U[:-1, model.input_index("u_x")] = np.diff(vx) / dt
        x0 = model.state_vector(z=tc["altitude"], v_x=vx[0])
        return model, simulated_trajectory(model, x0, U, catalogue)
    sp = _setpoints(cfg, K, dt)
    if tc["controller"] == "inverse":
        X, U = inverse_tracking(model, sp, altitude=tc["altitude"])
    elif tc["controller"] == "mpc":
        x0 = model.state_vector(v_x=sp.v_x[0], v_y=sp.v_y[0], psi=sp.psi[0], z=tc["altitude"],
                                w=sp.w[0], zeta=sp.zeta[0])
        weights = {"v_x": 1.0, "v_y": 1.0, "psi": 1.0, "z": 1.0}
        res = solve_tracking(model, sp, x0, MpcConfig(horizon=tc["mpc_horizon"],
                                                      weights=weights))
        U = res.inputs
        X = simulate(model, x0, U)
    else:
        raise ConfigError(f"unknown trajectory.controller {tc['controller']!r}")
    return model, simulated_trajectory(model, X[0], U, catalogue)


def _stamp(cfg: ScenarioConfig, command: str) -> str:
    return f"# bounds {__version__} command={command} seed={cfg.seed}\n"


def _write(path: Path, text: str) -> None:
    path.write_text(text)


# ---------------------------------------------------------------------------
# SVG


def svg_line_plot(x: np.ndarray, series: Mapping[str, np.ndarray], *, log_y: bool = True,
                  title: str = "", xlabel: str = "", ylabel: str = "",
                  width: int = 640, height: int = 400) -> str:
    """Minimal SVG line chart with axes, optional log-10 y axis and a legend."""
    colors = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b",
              "#e377c2", "#7f7f7f", "#17becf", "#bcbd22")
    left, right, top, bottom = 70, 150, 30, 50
    pw, ph = width - left - right, height - top - bottom
    x = np.asarray(x, dtype=float)
    ys = {k: np.asarray(v, dtype=float) for k, v in series.items()}
    if log_y:
        ys = {k: np.log10(np.where(v > 0, v, np.nan)) for k, v in ys.items()}
    finite = np.concatenate([v[np.isfinite(v)] for v in ys.values()] or [np.zeros(1)])
    y0, y1 = (float(finite.min()), float(finite.max())) if finite.size else (0.0, 1.0)
    if log_y:
        y0, y1 = math.floor(y0), math.ceil(y1)
    if y1 <= y0:
        y1 = y0 + 1.0
    x0, x1 = float(x.min()), float(x.max())
    if x1 <= x0:
        x1 = x0 + 1.0

    def px(v):
        return left + (v - x0) / (x1 - x0) * pw

    def py(v):
        return top + ph - (v - y0) / (y1 - y0) * ph

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'font-family="sans-serif" font-size="11">',
           f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>',
           f'<text x="{left + pw / 2:.1f}" y="{top - 10}" text-anchor="middle" '
           f'font-size="13">{title}</text>',
           f'<text x="{left + pw / 2:.1f}" y="{height - 10}" text-anchor="middle">{xlabel}</text>',
           f'<text x="15" y="{top + ph / 2:.1f}" text-anchor="middle" '
           f'transform="rotate(-90 15 {top + ph / 2:.1f})">{ylabel}</text>']
    yt = np.arange(y0, y1 + 0.5) if log_y else np.linspace(y0, y1, 5)
    for v in yt:
        label = f"1e{int(v)}" if log_y else f"{v:.3g}"
        out.append(f'<line x1="{left - 4}" y1="{py(v):.1f}" x2="{left}" y2="{py(v):.1f}" '
                   f'stroke="black"/><text x="{left - 6}" y="{py(v) + 4:.1f}" '
                   f'text-anchor="end">{label}</text>')
    for v in np.linspace(x0, x1, 6):
        out.append(f'<line x1="{px(v):.1f}" y1="{top + ph}" x2="{px(v):.1f}" '
                   f'y2="{top + ph + 4}" stroke="black"/><text x="{px(v):.1f}" '
                   f'y="{top + ph + 16}" text-anchor="middle">{v:.3g}</text>')
    for i, (name, v) in enumerate(ys.items()):
        color = colors[i % len(colors)]
        segs, cur = [], []
        for xi, vi in zip(x, v):
            if np.isfinite(vi):
                cur.append(f"{px(xi):.1f},{py(vi):.1f}")
            elif cur:
                segs.append(cur)
                cur = []
        if cur:
            segs.append(cur)
        for seg in segs:
            out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" '
                       f'points="{" ".join(seg)}"/>')
        ly = top + 12 + 16 * i
        out.append(f'<line x1="{left + pw + 10}" y1="{ly}" x2="{left + pw + 30}" y2="{ly}" '
                   f'stroke="{color}" stroke-width="2"/><text x="{left + pw + 35}" '
                   f'y="{ly + 4}">{name}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


# ---------------------------------------------------------------------------
# commands


def cmd_simulate(cfg: ScenarioConfig, out: Path) -> list[Path]:
    cat = MeasurementCatalogue.of(cfg["sensors"]["names"])
    _, traj = build_trajectory(cfg, cat)
    path = out / "trajectory.csv"
    export_csv(traj, path)
    path.write_text(_stamp(cfg, "simulate") + path.read_text())
    return [path]


def cmd_observability(cfg: ScenarioConfig, out: Path) -> list[Path]:
    oc = cfg["observability"]
    cat = MeasurementCatalogue.of(cfg["sensors"]["names"])
    model, traj = build_trajectory(cfg, None)
    transform = None
    if oc["transform"] == "polar":
        transform = polar_velocity_transform(model)
    elif oc["transform"] != "none":
        raise ConfigError(f"unknown observability.transform {oc['transform']!r}")
    vs = sliding_window_variance(model, traj, oc["window"], oc["noise_var"], oc["lam"], cat,
                                 transform, eps=oc["eps"], states=oc["states"] or None,
                                 workers=cfg["run"]["workers"])
    paths = [out / "variance.csv"]
    _write(paths[0], _stamp(cfg, "observability") + vs.to_csv())
    if oc["plot"]:
        names = oc["plot_states"] or vs.state_names
        svg = svg_line_plot(vs.t_display, {s: vs[s] for s in names}, log_y=True,
                            title=f"minimum error variance ({', '.join(cat.names)})",
                            xlabel="time (s)", ylabel="variance")
        paths.append(out / "variance.svg")
        _write(paths[1], svg)
    return paths


def _train_cfg(cfg: ScenarioConfig, desk: bool) -> tuple[int, int]:
    ec = cfg["estimator"]
    n, epochs = ec["n_trajectories"], ec["epochs"]
    if desk:
        dn, de = DESK_SCALE.get(ec["kind"], (n, epochs))
        n, epochs = min(n, dn), min(epochs, de)
    return n, epochs


def train_estimators(cfg: ScenarioConfig, desk: bool = False):
    """Train the configured state estimator (and, optionally, the
    observability estimator).  Returns (net, observability net or None,
    loss-curve CSV text)."""
    ec = cfg["estimator"]
    n, epochs = _train_cfg(cfg, desk)
    if ec["kind"] == "wind":
        dt, window = ec["dt"] or cfg["filter"]["dt"], ec["window"] or 4
        data = wind_dataset(WindDataConfig(n_trajectories=n, dt=dt, window=window,
                                           obs_noise_var=ec["obs_noise_var"]),
                            cfg.seed, with_observability=ec["observability"])
        loss = "circular"
    elif ec["kind"] == "altitude":
        dt, window = ec["dt"] or cfg["aikf"]["dt"], ec["window"] or 20
        data = altitude_dataset(AltitudeDataConfig(n_trajectories=n, dt=dt, window=window),
                                cfg.seed, with_observability=ec["observability"])
        loss = "mse"
    else:
        raise ConfigError(f"unknown estimator.kind {ec['kind']!r}")
    tr, te = data.split(0.8, cfg.seed)
    tcfg = TrainConfig(epochs=epochs, batch_size=ec["batch_size"],
                       learning_rate=ec["learning_rate"], seed=cfg.seed,
                       input_noise_std=ec["input_noise_std"], loss=loss)
    sizes = (data.inputs.shape[1], *ec["hidden"], 1)
    res = train(init_net(sizes, cfg.seed), tr, tcfg, test=te)
    obs_net = None
    if ec["observability"]:
        obs_net = train_observability_estimator(
            tr, TrainConfig(epochs=epochs, batch_size=ec["batch_size"],
                            learning_rate=ec["learning_rate"], seed=cfg.seed,
                            input_noise_std=ec["input_noise_std"]),
            hidden=ec["hidden"], test=te).net
    return res.net, obs_net, res.curve_csv()


def _meta(cfg: ScenarioConfig) -> dict[str, object]:
    return {"seed": cfg.seed, "version": __version__}


def cmd_train(cfg: ScenarioConfig, out: Path, desk: bool = False) -> list[Path]:
    net, obs_net, curve = train_estimators(cfg, desk)
    paths = [out / "net.txt", out / "loss.csv"]
    save_net(net, paths[0], _meta(cfg))
    _write(paths[1], _stamp(cfg, "train") + curve)
    if obs_net is not None:
        paths.append(out / "observability_net.txt")
        save_net(obs_net, paths[-1], _meta(cfg))
    return paths


def _load_or_train(cfg: ScenarioConfig, kind: str, desk: bool) -> tuple[EstimatorNet,
                                                                        EstimatorNet | None]:
    ec = cfg["estimator"]
    if ec["net"]:
        obs = load_net(ec["observability_net"]) if ec["observability_net"] else None
        return load_net(ec["net"]), obs
    if ec["kind"] != kind:
        raise ConfigError(f"estimator.kind must be {kind!r} to train a net in-run")
    net, obs, _ = train_estimators(cfg, desk)
    return net, obs


def wind_scenario(cfg: ScenarioConfig, window: int) -> WindFilterScenario:
    fc = cfg["filter"]
    names = {f.name for f in fields(WindFilterScenario)}
    kw = {k: v for k, v in fc.items() if k in names}
    return WindFilterScenario(**kw, window=window, seed=cfg.seed)


def cmd_filter(cfg: ScenarioConfig, out: Path, desk: bool = False) -> list[Path]:
    fc = cfg["filter"]
    net, obs = _load_or_train(cfg, "wind", desk)
    if fc["alpha_source"] not in ("bound", "net"):
        raise ConfigError(f"unknown filter.alpha_source {fc['alpha_source']!r}")
    if fc["alpha_source"] == "net" and obs is None:
        raise ConfigError("filter.alpha_source = net needs an observability estimator "
                          "(estimator.observability_net or estimator.observability = true)")
    res = run_wind_filter(wind_scenario(cfg, net.window), net,
                          observability_net=obs if fc["alpha_source"] == "net" else None,
                          v_low=fc["v_low"], v_high=fc["v_high"],
                          noise_var=cfg["estimator"]["obs_noise_var"])
    path = out / "filter.csv"
    _write(path, _stamp(cfg, "filter") + res.to_csv())
    return [path]


def altitude_scenario(cfg: ScenarioConfig) -> AltitudeScenario:
    names = {f.name for f in fields(AltitudeScenario)}
    kw = {k: v for k, v in cfg["aikf"].items() if k in names}
    return AltitudeScenario(**kw, seed=cfg.seed)


def _spec(cfg: ScenarioConfig, sc: AltitudeScenario, net: EstimatorNet):
    amax = cfg["aikf"]["accel_max"]
    return sc.augmentation(net, **({"accel_max": amax} if amax > 0 else {}))


def cmd_aikf(cfg: ScenarioConfig, out: Path, desk: bool = False) -> list[Path]:
    ac = cfg["aikf"]
    net, _ = _load_or_train(cfg, "altitude", desk)
    sc = altitude_scenario(cfg)
    spec = _spec(cfg, sc, net)
    run = simulate_altitude_scenario(sc)
    base = ComparisonConfig()
    x0 = np.array([ac["z0"], 0.0, run.r_x[0] * ac["z0"]])
    P0 = ac["P0_scale"] * np.diag(base.P0_base)
    Q = ac["Q_scale"] * ac["Q_base"] * np.eye(3)
    ukf, _, _ = run_filter(run, sc, x0, P0, Q, ac["r_x_var"])
    ai, aug, aug_var = run_filter(run, sc, x0, P0, Q, ac["r_x_var"], spec=spec)
    buf = io.StringIO()
    buf.write(_stamp(cfg, "aikf"))
    buf.write("t,z_true,v_x_true,z_ukf,v_x_ukf,z_aikf,v_x_aikf,z_augmented,r_augmented\n")
    for k in range(len(run.t)):
        row = (run.t[k], run.states[k, 0], run.states[k, 2], ukf[k, 0], ukf[k, 2],
               ai[k, 0], ai[k, 2], aug[k], aug_var[k])
        buf.write(",".join(repr(float(v)) for v in row) + "\n")
    path = out / "aikf.csv"
    _write(path, buf.getvalue())
    return [path]


def cmd_compare(cfg: ScenarioConfig, out: Path, desk: bool = False) -> list[Path]:
    ac = cfg["aikf"]
    net, _ = _load_or_train(cfg, "altitude", desk)
    sc = altitude_scenario(cfg)
    ccfg = ComparisonConfig(z0=ac["z0_sweep"], P0_scale=ac["P0_sweep"], Q_scale=ac["Q_sweep"],
                            Q_base=ac["Q_base"], r_x_var=ac["r_x_var"])
    results = run_comparison(sc, _spec(cfg, sc, net), ccfg)
    path = out / "comparison.csv"
    _write(path, _stamp(cfg, "compare") + comparison_csv(results))
    return [path]


# ---------------------------------------------------------------------------
# entry point


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="bounds", description=__doc__.split("\n")[0])
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", type=Path, help="scenario INI file")
    p.add_argument("--seed", type=int, help="master seed (overrides run.seed)")
    p.add_argument("--out", type=Path, help="output directory (overrides run.out)")
    p.add_argument("--desk-scale", action="store_true",
                   help="cap training size to the desk-scale presets")
    p.add_argument("--sensors", help="comma-separated sensor list (overrides sensors.names)")
    p.add_argument("--version", action="version", version=f"bounds {__version__}")
    return p


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _fail(code: int, exc: BaseException) -> int:
    msg = " ".join(str(exc).split())
    print(f"error code={code} type={type(exc).__name__} message={msg}", file=sys.stderr)
    return code


def main(argv: Sequence[str] | None = None) -> int:
    parser = _parser()
    parser.__class__ = _Parser
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        return _fail(1, exc)
    try:
        text = args.config.read_text() if args.config else ""
        overrides: dict[str, Any] = {}
        if args.seed is not None:
            overrides["run.seed"] = args.seed
        if args.out is not None:
            overrides["run.out"] = str(args.out)
        if args.sensors is not None:
            overrides["sensors.names"] = args.sensors
        cfg = parse_config(text, overrides)
        out = Path(cfg["run"]["out"])
        out.mkdir(parents=True, exist_ok=True)
        _write(out / "resolved.ini", cfg.to_ini())
        cmd = {"simulate": cmd_simulate, "observability": cmd_observability}.get(args.command)
        if cmd is not None:
            paths = cmd(cfg, out)
        else:
            paths = {"train": cmd_train, "filter": cmd_filter, "aikf": cmd_aikf,
                     "compare": cmd_compare}[args.command](cfg, out, args.desk_scale)
    except (ValueError, KeyError, OSError) as exc:
        return _fail(1, exc)
    except (RuntimeError, ArithmeticError, np.linalg.LinAlgError) as exc:
        return _fail(2, exc)
    for p in paths:
        print(p)
    return 0


if __name__ == "__main__":
    sys.exit(main())
