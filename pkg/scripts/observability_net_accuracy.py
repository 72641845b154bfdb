"""How well a net predicts the minimum error variance from sensor windows.

Reports the fraction of held-out windows whose predicted variance lies
within one order of magnitude of the computed bound, for clean and noisy
inputs, alongside a constant-median baseline.
"""

from __future__ import annotations

import argparse

import numpy as np

from bounds.estimators import (TrainConfig, WindDataConfig, predict_variance,
                               train_observability_estimator, within_order_fraction,
                               wind_dataset)


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--trajectories", type=int, default=2000)
    ap.add_argument("--epochs", type=int, default=200)
    ap.add_argument("--dt", type=float, default=0.1)
    ap.add_argument("--noise-var", default="1e-4,1e-1")
    a = ap.parse_args(argv)
    tr, te = wind_dataset(WindDataConfig(n_trajectories=a.trajectories, dt=a.dt), 0).split(0.8, 0)
    baseline = within_order_fraction(te.observability,
                                     np.full(len(te.observability), np.median(tr.observability)))
    print(f"constant-median baseline: {baseline:.2f}")
    for var in (float(v) for v in a.noise_var.split(",")):
        std = var ** 0.5
        net = train_observability_estimator(
            tr, TrainConfig(epochs=a.epochs, input_noise_std=std)).net
        X = te.inputs + np.random.default_rng(5).normal(0, std, te.inputs.shape)
        frac = within_order_fraction(te.observability, predict_variance(net, X))
        print(f"input noise variance {var:g}: {frac:.2f} within one order of magnitude")


if __name__ == "__main__":
    main()
