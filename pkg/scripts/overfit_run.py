"""Overfit two synthetic songs and report the mel-L1 curve on fixed training crops.

    python3 scripts/overfit_run.py [--iters 2000] [--out scripts/results/overfit.json]
"""
import argparse
import json
import os

from ksvs.experiments import overfit_run
from ksvs.io_utils import atomic_write_text

HERE = os.path.dirname(os.path.abspath(__file__))

if __name__ == "__main__":
    ap = argparse.ArgumentParser()
    ap.add_argument("--iters", type=int, default=2000)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--random-crops", action="store_true", help="sample fresh crops instead of one cached batch")
    ap.add_argument("--out")
    a = ap.parse_args()
    out = a.out or os.path.join(HERE, "results", "overfit_random.json" if a.random_crops else "overfit.json")
    res = overfit_run(a.iters, a.seed, cached=not a.random_crops, log=lambda m: print(m, flush=True))
    atomic_write_text(out, json.dumps(res, indent=1))
    print(f"L1 ratio final/iter10 = {res['ratio']:.3f} in {res['seconds']:.0f} s")
