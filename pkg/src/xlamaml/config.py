"""Experiment configuration: one flat set of keys, grouped into INI sections.

Keys are unique across sections, so a file section is only a grouping aid.
Precedence is CLI flag > config file > dataclass default.
"""

from __future__ import annotations

import configparser
import os
import typing
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .data import CorpusLayout, FamilyConfig
from .episodes import SamplerConfig
from .metatrain import MODES, TrainConfig
from .model import EncoderConfig

OUTPUT_ROOT_ENV = "XLAMAML_OUTPUT_ROOT"


class ConfigError(ValueError):
    """Invalid configuration; ``field`` names the offending key."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


@dataclass
class ExperimentConfig:
    # [experiment]
    task: str = "nli"  # "nli" (feature classification) | "qa" (token spans)
    seed: int = 0
    output_dir: str = "runs/default"
    checkpoint_every: int = 0
    # [data]
    dataset: str = ""  # directory with train/dev/test.jsonl; empty = synthetic family
    high_resource: str = "en"
    aux_languages: tuple[str, ...] = ("a1", "a2", "a3", "a4")
    target_languages: tuple[str, ...] = ("t1", "t2", "t3")
    outlier: str = ""
    spread: float = 0.7
    jitter: float = 0.3
    target_positions: tuple[float, ...] = (0.4, 0.7, 1.0)
    outlier_factor: float = 4.0
    latent_dim: int = 8
    n_classes: int = 3
    class_separation: float = 2.0
    noise: float = 1.0
    vocab_size: int = 24
    seq_len: int = 10
    permute_fraction: float = 0.25
    train_size: int = 2000
    dev_size: int = 250
    test_size: int = 500
    # [model]
    hidden_dim: int = 16
    n_layers: int = 2
    # [train]
    mode: str = "xla-maml"
    alpha: float = 0.5
    beta: float = 2e-3
    inner_steps: int = 1
    weight_decay: float = 0.01
    iters_per_lang: int = 200
    episodes_per_update: int = 1
    first_order: bool = False
    finetune_epochs: int = 3
    finetune_lr: float = 1e-2
    finetune_batch: int = 32
    few_shot: bool = True
    few_shot_epochs: int = 1
    few_shot_lr: float = 1e-2
    few_shot_batch: int = 8
    # [sampler]
    strategy: str = "covering"
    parallel: bool = False
    support_langs: tuple[str, ...] = ()  # empty = {high_resource} (x-maml: query pool)
    query_langs: tuple[str, ...] = ()  # empty = aux languages (+ outlier)
    support_subset_size: int = 1
    query_subset_size: int = 1
    k_support: int = 8
    n_query: int = 8
    support_strategy: str = ""
    query_strategy: str = ""

    SECTIONS: typing.ClassVar[dict[str, tuple[str, ...]]] = {
        "experiment": ("task", "seed", "output_dir", "checkpoint_every"),
        "data": ("dataset", "high_resource", "aux_languages", "target_languages", "outlier", "spread", "jitter",
                 "target_positions", "outlier_factor", "latent_dim", "n_classes", "class_separation", "noise",
                 "vocab_size", "seq_len", "permute_fraction", "train_size", "dev_size", "test_size"),
        "model": ("hidden_dim", "n_layers"),
        "train": ("mode", "alpha", "beta", "inner_steps", "weight_decay", "iters_per_lang", "episodes_per_update",
                  "first_order", "finetune_epochs", "finetune_lr", "finetune_batch", "few_shot", "few_shot_epochs",
                  "few_shot_lr", "few_shot_batch"),
        "sampler": ("strategy", "parallel", "support_langs", "query_langs", "support_subset_size",
                    "query_subset_size", "k_support", "n_query", "support_strategy", "query_strategy"),
    }

    # ------------------------------------------------------------------
    def validate(self) -> "ExperimentConfig":
        if self.task not in ("nli", "qa"):
            raise ConfigError("task", f"expected 'nli' or 'qa', got {self.task!r}")
        if self.mode not in MODES:
            raise ConfigError("mode", f"expected one of {MODES}, got {self.mode!r}")
        if self.strategy not in ("random", "covering"):
            raise ConfigError("strategy", f"expected 'random' or 'covering', got {self.strategy!r}")
        if self.dataset and not Path(self.dataset).is_dir():
            raise ConfigError("dataset", f"path does not exist: {self.dataset}")
        for name in ("alpha", "beta"):
            if not getattr(self, name) > 0:
                raise ConfigError(name, "must be positive")
        for name in ("inner_steps", "k_support", "n_query", "hidden_dim", "train_size", "dev_size", "test_size"):
            if getattr(self, name) < 1:
                raise ConfigError(name, "must be >= 1")
        if self.parallel and self.k_support != self.n_query:
            raise ConfigError("parallel", "parallel episodes need k_support == n_query")
        return self

    def family(self) -> FamilyConfig:
        return FamilyConfig(
            kind="features" if self.task == "nli" else "tokens",
            latent_dim=self.latent_dim, n_classes=self.n_classes, high_resource=self.high_resource,
            aux_languages=tuple(self.aux_languages), target_languages=tuple(self.target_languages),
            spread=self.spread, jitter=self.jitter, target_positions=tuple(self.target_positions),
            outlier=self.outlier, outlier_factor=self.outlier_factor, class_separation=self.class_separation,
            noise=self.noise, vocab_size=self.vocab_size, seq_len=self.seq_len,
            permute_fraction=self.permute_fraction,
        )

    def layout(self) -> CorpusLayout:
        return CorpusLayout(self.train_size, self.dev_size, self.test_size)

    def aux_pool(self) -> tuple[str, ...]:
        return tuple(self.aux_languages) + ((self.outlier,) if self.outlier else ())

    def encoder(self, input_dim: int | None = None, vocab_size: int | None = None) -> EncoderConfig:
        if self.task == "nli":
            return EncoderConfig("features", input_dim or self.latent_dim, 0, self.hidden_dim, self.n_layers,
                                 "classify", self.n_classes)
        return EncoderConfig("tokens", 0, vocab_size or self.vocab_size, self.hidden_dim, self.n_layers, "span")

    def train_config(self, sampler_seed: int) -> TrainConfig:
        query_pool = tuple(self.query_langs) or self.aux_pool()
        support_pool = tuple(self.support_langs) or (self.high_resource,)
        if self.mode == "x-maml":
            support_pool = query_pool
        sampler = SamplerConfig(
            strategy=self.strategy, parallel=self.parallel, support_pool=support_pool, query_pool=query_pool,
            support_subset_size=self.support_subset_size, query_subset_size=self.query_subset_size,
            k_support=self.k_support, n_query=self.n_query, support_strategy=self.support_strategy,
            query_strategy=self.query_strategy,
        )
        return TrainConfig(
            mode=self.mode, alpha=self.alpha, inner_steps=self.inner_steps, beta=self.beta,
            weight_decay=self.weight_decay, iters_per_lang=self.iters_per_lang,
            episodes_per_update=self.episodes_per_update, first_order=self.first_order, sampler=sampler,
            seed=sampler_seed, finetune_epochs=self.finetune_epochs, finetune_lr=self.finetune_lr,
            finetune_batch=self.finetune_batch, few_shot_epochs=self.few_shot_epochs,
            few_shot_lr=self.few_shot_lr, few_shot_batch=self.few_shot_batch,
            checkpoint_every=self.checkpoint_every,
        )

    def sub_seeds(self) -> dict[str, int]:
        """Master seed split into independent data / sampler / init / finetune seeds."""
        children = np.random.SeedSequence(self.seed).spawn(4)
        names = ("data", "sampler", "init", "finetune")
        return {n: int(c.generate_state(1)[0]) for n, c in zip(names, children)}

    def resolved_output_dir(self) -> Path:
        out = Path(self.output_dir)
        root = os.environ.get(OUTPUT_ROOT_ENV)
        if root and not out.is_absolute():
            out = Path(root) / out
        return out

    # ------------------------------------------------------------------
    def to_ini(self, extra: dict[str, dict[str, object]] | None = None) -> str:
        parser = configparser.ConfigParser(interpolation=None)
        for section, keys in self.SECTIONS.items():
            parser[section] = {k: format_value(getattr(self, k)) for k in keys}
        for section, values in (extra or {}).items():
            parser[section] = {k: format_value(v) for k, v in values.items()}
        lines = []
        for section in parser.sections():
            lines.append(f"[{section}]")
            lines.extend(f"{k} = {v}" for k, v in parser[section].items())
            lines.append("")
        return "\n".join(lines)


_FIELD_TYPES = {f.name: f.type for f in fields(ExperimentConfig)}


def format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (tuple, list)):
        return ",".join(str(v) for v in value)
    return str(value)


def _unquote(raw: str) -> str:
    if len(raw) >= 2 and raw[0] == raw[-1] and raw[0] in "\"'":
        return raw[1:-1]
    return raw


def parse_value(key: str, raw: str):
    """Parse one config value; TOML-style quotes and ``[a, b]`` lists are accepted too."""
    kind = _FIELD_TYPES[key]
    raw = _unquote(raw.strip())
    if kind.startswith("tuple") and raw.startswith("[") and raw.endswith("]"):
        raw = ",".join(_unquote(s.strip()) for s in raw[1:-1].split(","))
    try:
        if kind == "bool":
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(f"not a boolean: {raw!r}")
            return low in ("true", "1", "yes")
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if kind == "tuple[str, ...]":
            return tuple(s.strip() for s in raw.split(",") if s.strip())
        if kind == "tuple[float, ...]":
            return tuple(float(s) for s in raw.split(",") if s.strip())
        return raw
    except ValueError as exc:
        raise ConfigError(key, str(exc)) from None


def read_config_file(path) -> dict[str, object]:
    parser = configparser.ConfigParser(interpolation=None)
    path = Path(path)
    if not path.is_file():
        raise ConfigError("config", f"file not found: {path}")
    try:
        parser.read(path)
    except configparser.Error as exc:
        raise ConfigError("config", str(exc)) from None
    values = {}
    for section in parser.sections():
        for key, raw in parser[section].items():
            key = key.replace("-", "_")
            if key not in _FIELD_TYPES:
                raise ConfigError(key, f"unknown key in section [{section}]")
            values[key] = parse_value(key, raw)
    return values


def build_config(path=None, overrides: dict[str, object] | None = None) -> ExperimentConfig:
    values = read_config_file(path) if path else {}
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        values[key] = parse_value(key, value) if isinstance(value, str) else value
    return ExperimentConfig(**values).validate()


def field_names() -> list[str]:
    return list(_FIELD_TYPES)
