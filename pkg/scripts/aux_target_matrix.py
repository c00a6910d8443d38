"""Auxiliary x target difference matrix with an outlier auxiliary language.

Each row is one xla-maml run whose query pool is a single auxiliary
language; each cell is the change in zero-shot accuracy on a target
language relative to the finetuned baseline, averaged over seeds. The
outlier ("sw") should give the lowest row mean.

    python scripts/aux_target_matrix.py --seeds 0,1,2 --out runs/matrix
"""

import argparse
from pathlib import Path

from xlamaml.config import ExperimentConfig
from xlamaml.runner import matrix_csv, row_means, sweep_matrix


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--seeds", default="0,1,2")
    ap.add_argument("--outlier", default="sw")
    ap.add_argument("--out", type=Path, default=Path("runs/matrix"))
    args = ap.parse_args()

    cfg = ExperimentConfig(outlier=args.outlier)
    aux = list(cfg.aux_pool())
    # targets plus the auxiliary languages themselves, so the diagonal shows up as n/a
    targets = list(cfg.target_languages) + aux
    matrix = sweep_matrix(cfg, aux, targets, [int(s) for s in args.seeds.split(",")], args.out)
    print(matrix_csv(matrix), end="")
    for lang, mean in sorted(row_means(matrix).items(), key=lambda kv: -kv[1]):
        print(f"row mean {lang}: {mean:+.4f}")


if __name__ == "__main__":
    main()
