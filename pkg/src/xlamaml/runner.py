"""Experiment pipeline: data -> finetune -> meta-train -> evaluate -> persist.

Output directory layout (fixed names)::

    config.echo              resolved config + derived seeds
    metrics.jsonl            one record per meta iteration, then {"results": ...}
    checkpoints/step-N.json  parameters every ``checkpoint_every`` iterations
    checkpoints/step-N.optim.json
    checkpoints/final.json
    results.json
    matrix.csv, matrix.json  (sweep only)
"""

from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .config import ExperimentConfig
from .data import LanguageBag, gen_corpus, load_corpus_dir
from .metatrain import MetricsRecord, few_shot_eval, finetune, run_meta_training, zero_shot_eval
from .model import EncoderConfig, init_params, save_params

log = logging.getLogger(__name__)

EXPECTED_FILES = ("config.echo", "metrics.jsonl", "results.json")


@dataclass
class Prepared:
    train: dict[str, LanguageBag]
    dev: dict[str, LanguageBag]
    test: dict[str, LanguageBag]
    encoder: EncoderConfig


def prepare_data(cfg: ExperimentConfig, data_seed: int) -> Prepared:
    if cfg.dataset:
        splits = load_corpus_dir(cfg.dataset, n_classes=cfg.n_classes if cfg.task == "nli" else None)
        sample = next(iter(splits["train"].values())).examples[0]
        if cfg.task == "nli":
            enc = cfg.encoder(input_dim=int(sample.x.shape[0]))
        else:
            top = max(int(e.x.max()) for split in splits.values() for bag in split.values() for e in bag.examples)
            enc = cfg.encoder(vocab_size=max(cfg.vocab_size, top + 1))
        return Prepared(splits["train"], splits["dev"], splits["test"], enc)
    corpus = gen_corpus(cfg.layout(), cfg.family(), data_seed)
    return Prepared(corpus.train, corpus.dev, corpus.test, cfg.encoder())


def primary_metric(cfg: ExperimentConfig) -> str:
    return "accuracy" if cfg.task == "nli" else "f1"


def _mean_metric(per_lang: dict[str, dict[str, float]], metric: str) -> float:
    return float(np.mean([m[metric] for m in per_lang.values()])) if per_lang else float("nan")


def _dump(obj) -> str:
    return json.dumps(obj, sort_keys=True)


def finetuned_start(cfg: ExperimentConfig, data: Prepared, seeds: dict[str, int]) -> dict[str, np.ndarray]:
    if cfg.high_resource not in data.train:
        raise ValueError(f"no training bag for high-resource language {cfg.high_resource!r}")
    p0 = init_params(data.encoder, np.random.default_rng(seeds["init"]))
    theta, _ = finetune(p0, data.train[cfg.high_resource].examples, data.encoder, epochs=cfg.finetune_epochs,
                        lr=cfg.finetune_lr, batch_size=cfg.finetune_batch, weight_decay=cfg.weight_decay,
                        rng=np.random.default_rng(seeds["finetune"]))
    return theta


def run_experiment(cfg: ExperimentConfig, out_dir: Path | None = None) -> dict:
    """Run one configured experiment; writes artifacts when ``out_dir`` is given."""
    seeds = cfg.sub_seeds()
    data = prepare_data(cfg, seeds["data"])
    train_cfg = cfg.train_config(seeds["sampler"])
    theta0 = finetuned_start(cfg, data, seeds)
    targets = {t: data.test[t] for t in cfg.target_languages}

    metrics_fh = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        (out_dir / "checkpoints").mkdir(parents=True, exist_ok=True)
        (out_dir / "config.echo").write_text(cfg.to_ini({"seeds": seeds}))
        metrics_fh = open(out_dir / "metrics.jsonl", "w")

    def on_record(rec: MetricsRecord):
        if metrics_fh is not None:
            metrics_fh.write(_dump(rec.to_json()) + "\n")

    def on_checkpoint(step, theta, optimizer):
        if out_dir is not None:
            save_params(theta, out_dir / "checkpoints" / f"step-{step}.json")
            (out_dir / "checkpoints" / f"step-{step}.optim.json").write_text(_dump(optimizer.to_json()))

    try:
        theta, records = run_meta_training(train_cfg, data.dev, theta0, data.encoder,
                                           rng=np.random.default_rng(seeds["sampler"]), on_record=on_record,
                                           on_checkpoint=on_checkpoint)
        metric = primary_metric(cfg)
        baseline = zero_shot_eval(theta0, targets, data.encoder)
        zero_shot = zero_shot_eval(theta, targets, data.encoder)
        results = {
            "mode": cfg.mode, "task": cfg.task, "seed": cfg.seed, "metric": metric,
            "iterations": len(records),
            "zero_shot": zero_shot,
            "baseline_zero_shot": baseline,
            "mean_zero_shot": _mean_metric(zero_shot, metric),
            "mean_baseline_zero_shot": _mean_metric(baseline, metric),
        }
        if cfg.few_shot:
            few = {}
            for i, t in enumerate(sorted(targets)):
                rng = np.random.default_rng([seeds["finetune"], 1 + i])
                few[t] = few_shot_eval(theta, data.dev[t], data.test[t], data.encoder, train_cfg, rng)
            results["few_shot"] = few
            results["mean_few_shot"] = _mean_metric(few, metric)
        if metrics_fh is not None:
            metrics_fh.write(_dump({"results": results}) + "\n")
    finally:
        if metrics_fh is not None:
            metrics_fh.close()

    if out_dir is not None:
        save_params(theta, out_dir / "checkpoints" / "final.json")
        (out_dir / "results.json").write_text(json.dumps(results, sort_keys=True, indent=2) + "\n")
    return results


def mean_zero_shot_over_seeds(cfg: ExperimentConfig, seeds: Sequence[int]) -> list[float]:
    """Mean zero-shot target metric of one configuration, one value per seed (nothing written)."""
    return [run_experiment(replace(cfg, seed=s))["mean_zero_shot"] for s in seeds]


# ---------------------------------------------------------------------------
# aux x target matrix


def sweep_matrix(cfg: ExperimentConfig, aux_languages: Sequence[str], target_languages: Sequence[str],
                 seeds: Sequence[int] = (), out_dir: Path | None = None) -> dict:
    """One xla-maml run per auxiliary language; cell = metric(aux -> target) - baseline(target).

    Cells are averaged over ``seeds``; the raw per-seed metrics are kept so
    every cell can be recomputed from the stored output.
    """
    seeds = list(seeds) or [cfg.seed]
    metric = primary_metric(cfg)
    runs = {}
    for seed in seeds:
        scfg = replace(cfg, seed=seed, mode="xla-maml")
        sub = scfg.sub_seeds()
        data = prepare_data(scfg, sub["data"])
        unknown = [t for t in target_languages if t not in data.test]
        if unknown:
            raise ValueError(f"no test split for columns {unknown}")
        theta0 = finetuned_start(scfg, data, sub)
        targets = {t: data.test[t] for t in target_languages}
        base = {t: m[metric] for t, m in zero_shot_eval(theta0, targets, data.encoder).items()}
        per_aux = {}
        for aux in aux_languages:
            acfg = replace(scfg, query_langs=(aux,), support_langs=())
            tc = acfg.train_config(sub["sampler"])
            theta, _ = run_meta_training(tc, data.dev, theta0, data.encoder, rng=np.random.default_rng(sub["sampler"]))
            per_aux[aux] = {t: m[metric] for t, m in zero_shot_eval(theta, targets, data.encoder).items()}
            log.info("seed %d aux %s done", seed, aux)
        runs[str(seed)] = {"baseline": base, "aux": per_aux}

    cells = {}
    for aux in aux_languages:
        row = {}
        for t in target_languages:
            if aux == t:
                row[t] = "n/a"
            else:
                row[t] = float(np.mean([runs[str(s)]["aux"][aux][t] - runs[str(s)]["baseline"][t] for s in seeds]))
        cells[aux] = row
    matrix = {"metric": metric, "rows": list(aux_languages), "columns": list(target_languages), "cells": cells,
              "seeds": seeds, "runs": runs}
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "config.echo").write_text(cfg.to_ini({"sweep": {"aux": list(aux_languages),
                                                                   "targets": list(target_languages),
                                                                   "seeds": seeds}}))
        (out_dir / "matrix.json").write_text(json.dumps(matrix, sort_keys=True, indent=2) + "\n")
        (out_dir / "matrix.csv").write_text(matrix_csv(matrix))
    return matrix


def matrix_csv(matrix: dict) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["aux\\target"] + matrix["columns"])
    for aux in matrix["rows"]:
        row = matrix["cells"][aux]
        writer.writerow([aux] + [v if v == "n/a" else f"{v:.6f}" for v in (row[t] for t in matrix["columns"])])
    return buf.getvalue()


def row_means(matrix: dict) -> dict[str, float]:
    return {
        aux: float(np.mean([v for v in matrix["cells"][aux].values() if v != "n/a"]))
        for aux in matrix["rows"]
    }


# ---------------------------------------------------------------------------
# report


class MissingLogs(FileNotFoundError):
    pass


def load_run(log_dir) -> dict:
    log_dir = Path(log_dir)
    missing = [f for f in EXPECTED_FILES if not (log_dir / f).is_file()]
    if missing:
        raise MissingLogs(f"{log_dir}: missing {', '.join(missing)} (expected {', '.join(EXPECTED_FILES)}, "
                          f"or matrix.json for a sweep)")
    records, results = [], None
    for line in (log_dir / "metrics.jsonl").read_text().splitlines():
        row = json.loads(line)
        if "results" in row:
            results = row["results"]
        else:
            records.append(row)
    if results is None:
        raise MissingLogs(f"{log_dir}/metrics.jsonl has no final results object")
    return {"config": (log_dir / "config.echo").read_text(), "records": records, "results": results}


def summarize(log_dir) -> dict:
    run = load_run(log_dir)
    res, metric = run["results"], run["results"]["metric"]
    rows = []
    for lang in sorted(res["zero_shot"]):
        base = res["baseline_zero_shot"][lang][metric]
        value = res["zero_shot"][lang][metric]
        row = {"language": lang, "baseline": base, res["mode"]: value, "delta": value - base}
        if "few_shot" in res:
            row["few_shot"] = res["few_shot"][lang][metric]
        rows.append(row)
    recs = run["records"]
    return {
        "mode": res["mode"], "metric": metric, "rows": rows, "iterations": len(recs),
        "mean_inner_loss": float(np.mean([r["inner_loss"] for r in recs])) if recs else float("nan"),
        "mean_meta_loss": float(np.mean([r["meta_loss"] for r in recs])) if recs else float("nan"),
        "config": run["config"],
    }


def _sweep_report(log_dir: Path) -> str:
    matrix = json.loads((log_dir / "matrix.json").read_text())
    lines = [(log_dir / "config.echo").read_text().rstrip() if (log_dir / "config.echo").is_file() else "", "",
             f"metric: {matrix['metric']}   seeds: {', '.join(str(s) for s in matrix['seeds'])}", "",
             matrix_csv(matrix).rstrip(), ""]
    lines += [f"row mean {aux}: {mean:+.4f}" for aux, mean in row_means(matrix).items()]
    return "\n".join(lines) + "\n"


def report(log_dir) -> str:
    log_dir = Path(log_dir)
    if (log_dir / "matrix.json").is_file() and not (log_dir / "metrics.jsonl").is_file():
        return _sweep_report(log_dir)
    s = summarize(log_dir)
    cols = list(s["rows"][0]) if s["rows"] else ["language"]
    lines = [s["config"].rstrip(), "", f"metric: {s['metric']}   iterations: {s['iterations']}   "
             f"mean inner loss: {s['mean_inner_loss']:.4f}   mean meta loss: {s['mean_meta_loss']:.4f}", ""]
    lines.append("  ".join(f"{c:>10}" for c in cols))
    for row in s["rows"]:
        lines.append("  ".join(f"{row[c]:>10}" if isinstance(row[c], str) else f"{row[c]:>10.4f}" for c in cols))
    matrix_path = Path(log_dir) / "matrix.csv"
    if matrix_path.is_file():
        lines += ["", matrix_path.read_text().rstrip()]
    return "\n".join(lines) + "\n"
