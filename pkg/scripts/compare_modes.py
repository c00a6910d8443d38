"""Mode and sampling-strategy comparison on the default synthetic family.

Prints mean zero-shot target accuracy per seed for baseline / x-maml /
xla-maml and for the random, covering and parallel sampling variants of
xla-maml. Optionally writes everything to JSON.

    python scripts/compare_modes.py --seeds 0,1,2,3,4 --out runs/compare.json
"""

import argparse
import json
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from xlamaml.config import ExperimentConfig
from xlamaml.runner import mean_zero_shot_over_seeds

VARIANTS = {
    "baseline": {"mode": "baseline"},
    "x-maml": {"mode": "x-maml"},
    "xla-maml (covering)": {},
    "xla-maml (random)": {"strategy": "random"},
    "xla-maml (covering, parallel)": {"parallel": True},
    "xla-maml (random, parallel)": {"strategy": "random", "parallel": True},
}


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--seeds", default="0,1,2,3,4")
    ap.add_argument("--out", type=Path)
    args = ap.parse_args()
    seeds = [int(s) for s in args.seeds.split(",")]
    base = replace(ExperimentConfig(), few_shot=False)

    table = {}
    for name, overrides in VARIANTS.items():
        t0 = time.perf_counter()
        values = mean_zero_shot_over_seeds(replace(base, **overrides), seeds)
        table[name] = values
        per_seed = " ".join(f"{v:.4f}" for v in values)
        print(f"{name:32s} mean {np.mean(values):.4f}  [{per_seed}]  {time.perf_counter() - t0:.0f}s", flush=True)

    if args.out:
        args.out.parent.mkdir(parents=True, exist_ok=True)
        args.out.write_text(json.dumps({"seeds": seeds, "per_seed": table}, indent=2) + "\n")


if __name__ == "__main__":
    main()
