"""High-resource finetuning, the cross-lingual MAML loop, and evaluation.

Modes:

* ``baseline`` - finetuned model only, no meta-training
* ``x-maml``   - support and query drawn from the same auxiliary language subset
* ``xla-maml`` - support from the support pool (e.g. the high-resource
                 language), query from the auxiliary pool
"""

from __future__ import annotations

import copy
import logging
import math
from collections import Counter
from dataclasses import dataclass, field, replace
from typing import Callable, Mapping, Sequence

import numpy as np

from . import autodiff as ad
from .data import Example, LanguageBag
from .episodes import Episode, EpisodeSampler, SamplerConfig
from .model import (EncoderConfig, batch_span_nll, classify, decode_span, encode, encode_sequences, nll,
                    span_logits)
from .optim import AdamWState, adamw_step, linear_lr, sgd_functional_step

log = logging.getLogger(__name__)

MODES = ("baseline", "x-maml", "xla-maml")


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    mode: str = "xla-maml"
    alpha: float = 1e-5
    inner_steps: int = 1
    beta: float = 1e-5
    weight_decay: float = 0.01
    iters_per_lang: int = 500
    episodes_per_update: int = 1
    first_order: bool = False
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    seed: int = 0
    finetune_epochs: int = 3
    finetune_lr: float = 2e-5
    finetune_batch: int = 32
    few_shot_epochs: int = 1
    few_shot_lr: float = 2e-5
    few_shot_batch: int = 8
    checkpoint_every: int = 0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if not (self.alpha > 0 and self.beta > 0):
            raise ValueError("alpha and beta must be positive")
        if self.inner_steps < 1:
            raise ValueError("inner_steps must be >= 1")
        if self.iters_per_lang < 0:
            raise ValueError("iters_per_lang must be >= 0")
        if self.episodes_per_update < 1:
            raise ValueError("episodes_per_update must be >= 1")

    @property
    def total_iterations(self) -> int:
        if self.mode == "baseline":
            return 0
        return self.iters_per_lang * len(self.sampler.query_pool)


# ---------------------------------------------------------------------------
# task losses and predictions


def _pooled(params: Mapping, examples: Sequence[Example], config: EncoderConfig) -> ad.Node:
    X = np.stack([e.x for e in examples])
    if config.input_kind == "features":
        return encode(X, params, config).pooled
    B, L = X.shape
    # mean over each sequence's positions as one matmul
    averaging = np.kron(np.eye(B), np.full((1, L), 1.0 / L))
    return ad.matmul(ad.const(averaging), encode_sequences(X, params, config))


def batch_loss(params: Mapping, examples: Sequence[Example], config: EncoderConfig) -> ad.Node:
    """Mean task loss over a list of examples."""
    if not examples:
        raise ValueError("batch_loss: empty batch")
    if config.task == "classify":
        return nll(classify(_pooled(params, examples, config), params), [e.label for e in examples])

    groups: dict[int, list[Example]] = {}
    for e in examples:
        groups.setdefault(len(e.x), []).append(e)
    total = None
    for length in sorted(groups):
        group = groups[length]
        states = encode_sequences(np.stack([e.x for e in group]), params, config)
        part = ad.mul(batch_span_nll(states, params, [e.label for e in group], length), len(group))
        total = part if total is None else ad.add(total, part)
    return ad.mul(total, 1.0 / len(examples))


def predict(params: Mapping, examples: Sequence[Example], config: EncoderConfig, k: int = 20) -> list:
    with ad.no_grad():
        if config.task == "classify":
            logp = classify(_pooled(params, examples, config), params).value
            return [int(i) for i in np.argmax(logp, axis=1)]
        out = []
        for e in examples:
            states = encode_sequences(np.asarray(e.x)[None, :], params, config)
            start, end = span_logits(states, params)
            out.append(decode_span(start.value.ravel(), end.value.ravel(), k))
        return out


def accuracy(predictions: Sequence, labels: Sequence) -> float:
    if len(predictions) != len(labels) or not labels:
        raise ValueError("accuracy needs equally long, nonempty sequences")
    return sum(int(p == y) for p, y in zip(predictions, labels)) / len(labels)


def compute_em_f1(predicted: Sequence, gold: Sequence) -> tuple[int, float]:
    """Exact match and token-overlap F1 between two token sequences."""
    em = int(list(predicted) == list(gold))
    common = Counter(predicted) & Counter(gold)
    overlap = sum(common.values())
    if overlap == 0:
        return em, 0.0
    precision = overlap / len(predicted)
    recall = overlap / len(gold)
    return em, 2 * precision * recall / (precision + recall)


def span_tokens(span: tuple[int, int]) -> list[int]:
    return list(range(span[0], span[1] + 1))


def evaluate(params: Mapping, examples: Sequence[Example], config: EncoderConfig) -> dict[str, float]:
    preds = predict(params, examples, config)
    labels = [e.label for e in examples]
    if config.task == "classify":
        return {"accuracy": accuracy(preds, labels)}
    scores = [compute_em_f1(span_tokens(p), span_tokens(g)) for p, g in zip(preds, labels)]
    return {"em": float(np.mean([s[0] for s in scores])), "f1": float(np.mean([s[1] for s in scores]))}


# ---------------------------------------------------------------------------
# finetuning


def _check_finite(value: float, what: str):
    if not math.isfinite(value):
        raise TrainingDiverged(f"{what} is not finite ({value})")


def finetune(params: Mapping[str, np.ndarray], examples: Sequence[Example], config: EncoderConfig, *,
             epochs: int, lr: float, batch_size: int, weight_decay: float = 0.01,
             rng: np.random.Generator) -> tuple[dict[str, np.ndarray], list[float]]:
    """Minibatch AdamW with a linear schedule; returns new parameters and per-step losses."""
    if not examples:
        raise ValueError("finetune: empty training set")
    theta = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
    if epochs <= 0:
        return theta, []
    n = len(examples)
    per_epoch = math.ceil(n / batch_size)
    total = epochs * per_epoch
    state = AdamWState(lr=lr, weight_decay=weight_decay)
    losses = []
    step = 0
    for _ in range(epochs):
        order = rng.permutation(n)
        for b in range(per_epoch):
            batch = [examples[i] for i in order[b * batch_size:(b + 1) * batch_size]]
            nodes = ad.params_from(theta)
            loss = batch_loss(nodes, batch, config)
            _check_finite(float(loss.value), f"finetune loss at step {step}")
            grads = ad.grad(loss, nodes)
            adamw_step(state, theta, grads, linear_lr(step, total, lr))
            losses.append(float(loss.value))
            step += 1
    return theta, losses


# ---------------------------------------------------------------------------
# inner / meta steps


LossFn = Callable[[Mapping[str, ad.Node]], ad.Node]


def inner_adapt(params: Mapping[str, ad.Node], support_loss: LossFn, alpha: float, steps: int,
                track_meta_graph: bool = True) -> tuple[dict[str, ad.Node], float]:
    """``steps`` functional SGD steps on ``support_loss``.

    Returns the adapted parameters and the first inner loss. With
    ``track_meta_graph`` the adapted parameters are differentiable with
    respect to ``params`` through the gradients (second order); without it
    the inner gradients are treated as constants (first order).
    """
    current = dict(params)
    first_loss = None
    for _ in range(steps):
        loss = support_loss(current)
        value = float(loss.value)
        _check_finite(value, "inner loss")
        if first_loss is None:
            first_loss = value
        grads = ad.grad(loss, current, create_graph=track_meta_graph)
        if not track_meta_graph:
            grads = {k: ad.const(g) for k, g in grads.items()}
        current = sgd_functional_step(current, grads, alpha)
    return current, first_loss


def meta_gradient(params: Mapping[str, np.ndarray], tasks: Sequence[tuple[LossFn, LossFn]], alpha: float,
                  inner_steps: int = 1, first_order: bool = False) -> tuple[dict[str, np.ndarray], float, float]:
    """Gradient w.r.t. the ORIGINAL parameters of the summed adapted query losses.

    ``tasks`` is a list of (support_loss, query_loss) callables. Returns the
    gradient arrays, the mean inner loss and the summed query loss.
    """
    if not tasks:
        raise ValueError("meta_gradient: need at least one task")
    theta = ad.params_from(params)
    total, inner = None, []
    for support_loss, query_loss in tasks:
        adapted, l0 = inner_adapt(theta, support_loss, alpha, inner_steps, not first_order)
        inner.append(l0)
        l1 = query_loss(adapted)
        total = l1 if total is None else ad.add(total, l1)
    meta_loss = float(total.value)
    _check_finite(meta_loss, "meta loss")
    return ad.grad(total, theta), float(np.mean(inner)), meta_loss


def episode_tasks(episodes: Sequence[Episode], config: EncoderConfig) -> list[tuple[LossFn, LossFn]]:
    def bind(examples):
        return lambda p: batch_loss(p, examples, config)

    return [(bind(ep.support), bind(ep.query)) for ep in episodes]


def meta_step(params: dict[str, np.ndarray], episodes: Sequence[Episode], config: EncoderConfig, *,
              alpha: float, inner_steps: int, optimizer: AdamWState, lr_t: float,
              first_order: bool = False) -> dict:
    """One meta update of ``params`` in place; returns the loss summary."""
    grads, l0, l1 = meta_gradient(params, episode_tasks(episodes, config), alpha, inner_steps, first_order)
    adamw_step(optimizer, params, grads, lr_t)
    return {"inner_loss": l0, "meta_loss": l1}


# ---------------------------------------------------------------------------
# the loop


@dataclass
class MetricsRecord:
    iteration: int
    inner_loss: float
    meta_loss: float
    lr: float
    support_languages: list[str]
    query_languages: list[str]

    def to_json(self) -> dict:
        return {
            "iteration": self.iteration, "inner_loss": self.inner_loss, "meta_loss": self.meta_loss,
            "lr": self.lr, "support_languages": self.support_languages, "query_languages": self.query_languages,
        }


def run_meta_training(config: TrainConfig, bags: Mapping[str, LanguageBag], params0: Mapping[str, np.ndarray],
                      model_config: EncoderConfig, *, rng: np.random.Generator | None = None,
                      on_record: Callable[[MetricsRecord], None] | None = None,
                      on_checkpoint: Callable[[int, dict, AdamWState], None] | None = None,
                      ) -> tuple[dict[str, np.ndarray], list[MetricsRecord]]:
    """Sample episodes and apply meta updates for the configured iteration budget."""
    theta = {k: np.array(v, dtype=np.float64) for k, v in params0.items()}
    total = config.total_iterations
    if total == 0:
        return theta, []
    rng = rng if rng is not None else np.random.default_rng(config.seed)
    sampler = EpisodeSampler(bags, config.sampler, rng, tie_roles=config.mode == "x-maml")
    optimizer = AdamWState(lr=config.beta, weight_decay=config.weight_decay)
    records = []
    for it in range(total):
        episodes = [sampler.next() for _ in range(config.episodes_per_update)]
        lr_t = linear_lr(it, total, config.beta)
        out = meta_step(theta, episodes, model_config, alpha=config.alpha, inner_steps=config.inner_steps,
                        optimizer=optimizer, lr_t=lr_t, first_order=config.first_order)
        rec = MetricsRecord(it, out["inner_loss"], out["meta_loss"], lr_t,
                            list(episodes[0].support_languages), list(episodes[0].query_languages))
        records.append(rec)
        if on_record is not None:
            on_record(rec)
        if on_checkpoint is not None and config.checkpoint_every and (it + 1) % config.checkpoint_every == 0:
            on_checkpoint(it + 1, theta, optimizer)
    return theta, records


def sampler_for_mode(config: TrainConfig, high_resource: str, aux_pool: Sequence[str]) -> TrainConfig:
    """Fill in the default role assignment for a mode (zero-shot setting)."""
    s = config.sampler
    query_pool = s.query_pool or tuple(aux_pool)
    support_pool = s.support_pool or (high_resource,)
    if config.mode == "x-maml":
        support_pool = query_pool
    return replace(config, sampler=replace(s, support_pool=tuple(support_pool), query_pool=tuple(query_pool)))


# ---------------------------------------------------------------------------
# evaluation


def zero_shot_eval(params: Mapping[str, np.ndarray], test_bags: Mapping[str, LanguageBag],
                   config: EncoderConfig) -> dict[str, dict[str, float]]:
    """Per-language metrics, keyed in language-code order; parameters untouched."""
    out = {}
    for lang in sorted(test_bags):
        bag = test_bags[lang]
        if not bag.examples:
            raise ValueError(f"test bag {lang} is empty")
        out[lang] = evaluate(params, bag.examples, config)
    return out


def few_shot_eval(params: Mapping[str, np.ndarray], dev_bag: LanguageBag, test_bag: LanguageBag,
                  config: EncoderConfig, train: TrainConfig, rng: np.random.Generator) -> dict[str, float]:
    """Finetune a copy on the target dev bag, then evaluate on the target test bag."""
    if not dev_bag.examples:
        raise ValueError(f"dev bag {dev_bag.language} is empty")
    clone = copy.deepcopy(dict(params))
    if train.few_shot_lr > 0:
        clone, _ = finetune(clone, dev_bag.examples, config, epochs=train.few_shot_epochs, lr=train.few_shot_lr,
                            batch_size=train.few_shot_batch, weight_decay=train.weight_decay, rng=rng)
    return evaluate(clone, test_bag.examples, config)
