"""Adversarial ramp vs. L1-only ablation, 3 seeds x 10k iterations (about 2 h on one CPU).

    python3 scripts/adversarial_ablation.py [--iters N] [--out scripts/results/adversarial_ablation.json]
"""
import argparse
import os

from ksvs.experiments import adversarial_ablation

HERE = os.path.dirname(os.path.abspath(__file__))

if __name__ == "__main__":
    ap = argparse.ArgumentParser()
    ap.add_argument("--iters", type=int, default=10000)
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--out", default=os.path.join(HERE, "results", "adversarial_ablation.json"))
    a = ap.parse_args()
    res = adversarial_ablation(seeds=tuple(a.seeds), iters=a.iters, log=lambda m: print(m, flush=True),
                               out_path=a.out)
    print(f"GAN arm wins {res['gan_wins']}/{len(res['runs'])} seeds; majority={res['majority']}")
