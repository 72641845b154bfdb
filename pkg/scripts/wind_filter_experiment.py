"""Wind-direction estimation with and without the observability filter.

Trains (or loads) a wind-direction net on 4-sample angle windows, flies the
turn scenario, and reports settling error and drift after each turn.
"""

from __future__ import annotations

import argparse
from pathlib import Path

import numpy as np

from bounds.estimators import (TrainConfig, WindDataConfig, WindFilterScenario, circular_error,
                               init_net, load_net, run_wind_filter, save_net, train,
                               turn_recovery, wind_dataset)


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--net", help="load a trained net instead of training")
    ap.add_argument("--trajectories", type=int, default=2000)
    ap.add_argument("--epochs", type=int, default=500)
    ap.add_argument("--out", default="results/wind_filter")
    a = ap.parse_args(argv)
    out = Path(a.out)
    out.mkdir(parents=True, exist_ok=True)
    sc = WindFilterScenario()
    if a.net:
        net = load_net(a.net)
    else:
        data = wind_dataset(WindDataConfig(n_trajectories=a.trajectories, dt=sc.dt), 0,
                            with_observability=False)
        tr, _ = data.split(0.8, 0)
        net = train(init_net((tr.inputs.shape[1], 64, 64, 64, 1), 0), tr,
                    TrainConfig(epochs=a.epochs, loss="circular")).net
        save_net(net, out / "wind.net")
    res = run_wind_filter(sc, net)
    rec = turn_recovery(res, sc)
    raw = np.abs(circular_error(res.zeta_true, res.zeta_raw))
    filt = np.abs(circular_error(res.zeta_true, res.zeta_filtered))
    print(f"median |error|: raw {np.median(raw):.3f} rad, filtered {np.median(filt):.3f} rad")
    for k in range(len(rec.turn_end)):
        print(f"turn ending {rec.turn_end[k]:5.1f} s: settled {rec.settled_error[k]:.3f} rad, "
              f"drift {rec.drift_rate[k]:.4f} rad/s, max raw {rec.raw_error[k]:.2f} rad")
    np.savetxt(out / "series.csv",
               np.column_stack([res.t, res.zeta_true, res.zeta_raw, res.zeta_filtered, res.alpha]),
               delimiter=",", header="t,zeta_true,zeta_raw,zeta_filtered,alpha", comments="")


if __name__ == "__main__":
    main()
