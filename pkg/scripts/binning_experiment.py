"""Train one wind-direction net per observability bin and compare test errors.

If the minimum error variance is informative, nets trained and tested on
more observable windows should be more accurate.
"""

from __future__ import annotations

import argparse
from dataclasses import replace

import numpy as np

from bounds.estimators import BinningConfig, TrainConfig, WindDataConfig, binning_experiment


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--trajectories", type=int, default=2000)
    ap.add_argument("--epochs", type=int, default=500)
    ap.add_argument("--dt", type=float, default=WindDataConfig.dt)
    a = ap.parse_args(argv)
    cfg = BinningConfig(data=replace(WindDataConfig(), n_trajectories=a.trajectories, dt=a.dt),
                        train=TrainConfig(epochs=a.epochs, loss="circular"))
    res = binning_experiment(cfg)
    print("bin  mean min-variance  net error variance")
    for i, (v, e) in enumerate(zip(res.bin_variance, res.error_variance)):
        print(f"{i:3d}  {v:18.4g}  {e:18.4f}")
    print(f"Spearman rank correlation: {res.rank_correlation:+.2f}")
    print(f"top-bin test data: top-bin net {res.top_on_top:.4f}, "
          f"bottom-bin net {res.bottom_on_top:.4f}")


if __name__ == "__main__":
    np.seterr(over="ignore")
    main()
