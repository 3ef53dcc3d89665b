#!/usr/bin/env python3
"""Two-layer staircase runs: mixed-cumulant classification with censored test
sets (both couplings) and the three teacher-student variants.

Writes one training-log CSV per run; render them with plots/render.py.
"""

import argparse
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from stairslab.hermite import Relu  # noqa: E402
from stairslab.mcm import McmParams, SpikeSet  # noqa: E402
from stairslab.sampling import LatentCoupling, RngHandle  # noqa: E402
from stairslab.two_layer import (TeacherSpec, TrainConfig2L, TwoLayerNet,  # noqa: E402
                                 train_online)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="out/two_layer")
    ap.add_argument("--seed", type=int, default=2024)
    ap.add_argument("--d", type=int, default=64)
    ap.add_argument("--m", type=int, default=256)
    ap.add_argument("--steps", type=int, default=1_500_000)
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg = TrainConfig2L(eta1=0.02, steps=args.steps, eval_every=16,
                        eval_set_size=4000, eval_log=True)

    runs = [("mcm_independent", dict(kind="mcm", q=0.0)),
            ("mcm_sign_matched", dict(kind="mcm", q=1.0)),
            ("teacher_plain", dict(kind="plain", gamma=0.0)),
            ("teacher_mixed", dict(kind="mixed", gamma=0.0)),
            ("teacher_cross", dict(kind="plain", gamma=0.95))]
    for name, spec in runs:
        rng = RngHandle(args.seed).derive(name)
        net = TwoLayerNet.init(args.d, args.m, Relu(), rng.derive("net"))
        spikes = SpikeSet.orthogonal(args.d, rng.derive("spikes"))
        if spec["kind"] == "mcm":
            params = McmParams(d=args.d, beta_m=1.0, beta_u=5.0, beta_v=10.0,
                               coupling=LatentCoupling.partial_sign(spec["q"]))
            log = train_online(net, params, cfg, rng.derive("train"), spikes=spikes)
        else:
            teacher = TeacherSpec(spec["kind"], spikes, cross_gamma=spec["gamma"])
            log = train_online(net, teacher, cfg, rng.derive("train"))
        with open(out / f"{name}.csv", "w") as fh:
            log.write_csv(fh)
        print(f"{name}: final metrics "
              + ", ".join(f"{k}={v[-1]:.3f}" for k, v in log.metrics.items())
              + f" -> {out / (name + '.csv')}")


if __name__ == "__main__":
    main()
