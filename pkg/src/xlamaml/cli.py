"""Command line: ``gen-data``, ``run``, ``sweep``, ``report``.

Every config key is also a ``--key-name`` flag; flags beat the config file.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .config import ConfigError, ExperimentConfig, build_config, field_names
from .data import gen_corpus, write_corpus
from .runner import MissingLogs, report, row_means, run_experiment, sweep_matrix

_BOOL_KEYS = {"first_order", "few_shot", "parallel"}
_CHOICES = {"mode": ("baseline", "x-maml", "xla-maml"), "strategy": ("random", "covering"), "task": ("nli", "qa")}


def _add_config_flags(p: argparse.ArgumentParser):
    p.add_argument("--config", help="INI-style config file")
    for key in field_names():
        flag = "--" + key.replace("_", "-")
        if key in _BOOL_KEYS:
            p.add_argument(flag, dest=key, action=argparse.BooleanOptionalAction, default=None)
        else:
            p.add_argument(flag, dest=key, default=None, choices=_CHOICES.get(key), metavar=None)


def _config_from(args) -> ExperimentConfig:
    overrides = {k: getattr(args, k) for k in field_names() if getattr(args, k, None) is not None}
    return build_config(args.config, overrides)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="xlamaml", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="write a synthetic corpus as train/dev/test JSONL")
    _add_config_flags(p)
    p.add_argument("--out", required=True, help="output directory for the JSONL files")

    p = sub.add_parser("run", help="finetune, meta-train and evaluate one configuration")
    _add_config_flags(p)

    p = sub.add_parser("sweep", help="auxiliary x target difference matrix")
    _add_config_flags(p)
    p.add_argument("--aux", help="comma-separated auxiliary languages (default: aux pool)")
    p.add_argument("--targets", help="comma-separated target languages (default: target languages)")
    p.add_argument("--seeds", help="comma-separated seeds averaged per cell (default: --seed)")

    p = sub.add_parser("report", help="summarize a run directory")
    p.add_argument("log_dir")
    return parser


def _split(value):
    return [s.strip() for s in value.split(",") if s.strip()] if value else []


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "report":
            sys.stdout.write(report(args.log_dir))
            return 0
        cfg = _config_from(args)
        if args.command == "gen-data":
            seed = cfg.sub_seeds()["data"]
            corpus = gen_corpus(cfg.layout(), cfg.family(), seed)
            paths = write_corpus(corpus, args.out)
            specs = [{"code": s.code, "group": s.group, "angles": list(s.angles),
                      "permutation": list(s.permutation) if s.permutation else None} for s in corpus.specs]
            Path(args.out, "languages.json").write_text(json.dumps(specs, indent=2) + "\n")
            print("\n".join(str(p) for p in paths.values()))
            return 0
        out_dir = cfg.resolved_output_dir()
        if args.command == "run":
            results = run_experiment(cfg, out_dir)
            print(f"{cfg.mode}: mean zero-shot {results['metric']} {results['mean_zero_shot']:.4f} "
                  f"(baseline {results['mean_baseline_zero_shot']:.4f}) -> {out_dir}")
            return 0
        if args.command == "sweep":
            aux = _split(args.aux) or list(cfg.aux_pool())
            targets = _split(args.targets) or list(cfg.target_languages)
            seeds = [int(s) for s in _split(args.seeds)] or [cfg.seed]
            matrix = sweep_matrix(cfg, aux, targets, seeds, out_dir)
            sys.stdout.write((out_dir / "matrix.csv").read_text())
            for aux_lang, mean in row_means(matrix).items():
                print(f"row mean {aux_lang}: {mean:+.4f}")
            return 0
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except MissingLogs as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 1


if __name__ == "__main__":
    raise SystemExit(main())
