"""Inner step size grid: x-maml vs xla-maml and the sampling ablations.

Used to pick the desk defaults and to check whether the parallel-episode
result depends on the inner step size.

    python scripts/inner_lr_grid.py --alphas 0.03,0.1,0.3,0.5,1.0
"""

import argparse
from dataclasses import replace

import numpy as np

from xlamaml.config import ExperimentConfig
from xlamaml.runner import mean_zero_shot_over_seeds


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--alphas", default="0.03,0.1,0.3,0.5,1.0")
    ap.add_argument("--seeds", default="0,1,2,3,4")
    args = ap.parse_args()
    seeds = [int(s) for s in args.seeds.split(",")]
    base = replace(ExperimentConfig(), few_shot=False)
    baseline = np.mean(mean_zero_shot_over_seeds(replace(base, mode="baseline"), seeds))
    print(f"baseline {baseline:.4f}")
    print(f"{'alpha':>6} {'x-maml':>8} {'xla':>8} {'random':>8} {'parallel':>8}")
    for alpha in (float(a) for a in args.alphas.split(",")):
        cfg = replace(base, alpha=alpha)
        row = [
            mean_zero_shot_over_seeds(replace(cfg, mode="x-maml"), seeds),
            mean_zero_shot_over_seeds(cfg, seeds),
            mean_zero_shot_over_seeds(replace(cfg, strategy="random"), seeds),
            mean_zero_shot_over_seeds(replace(cfg, parallel=True), seeds),
        ]
        print(f"{alpha:>6g} " + " ".join(f"{np.mean(v):8.4f}" for v in row), flush=True)


if __name__ == "__main__":
    main()
