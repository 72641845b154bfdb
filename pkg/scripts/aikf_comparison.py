"""UKF vs augmented-information UKF on the altitude scenario.

Trains (or loads) the altitude net, runs the initial-condition grid, then
sweeps the size of the speed change to show that the augmentation fades
out as acceleration vanishes.
"""

from __future__ import annotations

import argparse
from pathlib import Path

from bounds.aikf import AltitudeScenario, acceleration_sweep, comparison_csv, run_comparison
from bounds.estimators import (AltitudeDataConfig, TrainConfig, altitude_dataset, init_net,
                               load_net, save_net, train)


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--net", help="load a trained altitude net instead of training")
    ap.add_argument("--epochs", type=int, default=100)
    ap.add_argument("--sweep", default="0,0.5,1,2,3")
    ap.add_argument("--out", default="results/aikf")
    a = ap.parse_args(argv)
    out = Path(a.out)
    out.mkdir(parents=True, exist_ok=True)
    if a.net:
        net = load_net(a.net)
    else:
        tr, te = altitude_dataset(AltitudeDataConfig(), seed=3).split(0.8, 0)
        net = train(init_net((tr.inputs.shape[1], 64, 64, 64, 1), 0, window=20), tr,
                    TrainConfig(epochs=a.epochs, batch_size=1024, input_noise_std=0.1),
                    test=te).net
        save_net(net, out / "altitude.net")
    sc = AltitudeScenario()
    res = run_comparison(sc, sc.augmentation(net))
    comparison_csv(res, out / "comparison.csv")
    for name in ("UKF", "AI-UKF"):
        rs = [r for r in res if r.filter == name]
        print(f"{name:7s} converged {sum(r.converged for r in rs)}/{len(rs)}")
    print("speed change  peak accel  UKF err  AI-UKF err  ratio")
    for p in acceleration_sweep(sc, net, [float(s) for s in a.sweep.split(",")]):
        print(f"{p.speed_change:12.2f}  {p.peak_accel:10.3f}  {p.ukf_error:7.3f}  "
              f"{p.aikf_error:10.3f}  {p.ratio:5.2f}")


if __name__ == "__main__":
    main()
