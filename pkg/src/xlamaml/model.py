"""Small trainable encoder with a classification head and a span head.

Parameters live in a plain ``dict[str, np.ndarray]`` (a "param set"). Every
forward function also accepts ``dict[str, Node]`` so the same code path is
used for plain evaluation, first-order training and differentiation through
inner SGD steps.

Encoder layout::

    h0 = x @ w_in + b_in                 (features)   or  embed[ids]  (tokens)
    h_{k+1} = tanh(h_k) @ w_k + b_k      k = 0 .. n_layers-1

The activation sits before each hidden matmul, so an all-zero encoder emits
exactly the last bias. Pooling is a mean over positions and plays the role
of a [CLS] vector (there is no pretraining that would give a CLS token
meaning).
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Mapping, NamedTuple

import numpy as np

from . import autodiff as ad
from .autodiff import Node


@dataclass(frozen=True)
class EncoderConfig:
    input_kind: str = "features"  # "features" | "tokens"
    input_dim: int = 8
    vocab_size: int = 0
    hidden_dim: int = 16
    n_layers: int = 2
    task: str = "classify"  # "classify" | "span"
    n_classes: int = 3

    def __post_init__(self):
        if self.input_kind not in ("features", "tokens"):
            raise ValueError(f"input_kind must be 'features' or 'tokens', got {self.input_kind!r}")
        if self.task not in ("classify", "span"):
            raise ValueError(f"task must be 'classify' or 'span', got {self.task!r}")
        if self.hidden_dim < 1:
            raise ValueError("hidden_dim must be >= 1")
        if self.input_kind == "tokens" and self.vocab_size < 1:
            raise ValueError("vocab_size must be >= 1 in token mode")
        if self.input_kind == "features" and self.input_dim < 1:
            raise ValueError("input_dim must be >= 1 in feature mode")
        if self.task == "classify" and self.n_classes < 2:
            raise ValueError("n_classes must be >= 2")
        if self.task == "span" and self.input_kind != "tokens":
            raise ValueError("the span head needs per-position states (token mode)")

    def param_shapes(self) -> dict[str, tuple[int, ...]]:
        H = self.hidden_dim
        shapes: dict[str, tuple[int, ...]] = {}
        if self.input_kind == "tokens":
            shapes["embed"] = (self.vocab_size, H)
        else:
            shapes["w_in"] = (self.input_dim, H)
            shapes["b_in"] = (H,)
        for k in range(self.n_layers):
            shapes[f"w_{k}"] = (H, H)
            shapes[f"b_{k}"] = (H,)
        if self.task == "classify":
            shapes["cls_w"] = (H, self.n_classes)
            shapes["cls_b"] = (self.n_classes,)
        else:
            shapes["span_start"] = (H,)
            shapes["span_end"] = (H,)
        return shapes


def init_params(config: EncoderConfig, rng: np.random.Generator) -> dict[str, np.ndarray]:
    """Glorot-style uniform weights, zero biases."""
    params = {}
    for name, shape in config.param_shapes().items():
        if name.startswith("b_") or name == "cls_b":
            params[name] = np.zeros(shape)
        elif name == "embed":
            params[name] = rng.normal(0.0, 1.0 / np.sqrt(shape[1]), size=shape)
        elif len(shape) == 1:
            params[name] = rng.normal(0.0, 1.0 / np.sqrt(shape[0]), size=shape)
        else:
            limit = np.sqrt(6.0 / (shape[0] + shape[1]))
            params[name] = rng.uniform(-limit, limit, size=shape)
    return params


class EncoderOutput(NamedTuple):
    states: Node | None  # (positions, H) in token mode
    pooled: Node  # (batch, H)


def _as_nodes(params: Mapping) -> dict[str, Node]:
    return {k: ad.as_node(v) for k, v in params.items()}


def _mlp(h: Node, p: Mapping[str, Node], n_layers: int) -> Node:
    for k in range(n_layers):
        h = ad.tanh(h) @ p[f"w_{k}"] + p[f"b_{k}"]
    return h


def encode(x, params: Mapping, config: EncoderConfig) -> EncoderOutput:
    """Encode a batch of feature rows ``(B, d)`` or one token sequence ``(L,)``."""
    p = _as_nodes(params)
    if config.input_kind == "features":
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if x.shape[1] != config.input_dim:
            raise ad.ShapeError(f"encode: expected {config.input_dim} features, got {x.shape[1]}")
        h = ad.matmul(ad.const(x), p["w_in"]) + p["b_in"]
        return EncoderOutput(None, _mlp(h, p, config.n_layers))

    ids = np.asarray(x, dtype=np.int64).reshape(-1)
    if ids.size == 0:
        raise ValueError("encode: empty token sequence")
    if ids.min() < 0 or ids.max() >= config.vocab_size:
        raise ValueError(f"encode: token id outside vocabulary [0, {config.vocab_size})")
    states = _mlp(ad.take_rows(p["embed"], ids), p, config.n_layers)
    pooled = ad.mean(states, axis=0, keepdims=True)
    return EncoderOutput(states, pooled)


def encode_sequences(batch, params: Mapping, config: EncoderConfig) -> Node:
    """Per-position states for ``B`` equal-length sequences, as a ``(B*L, H)`` node."""
    ids = np.asarray(batch, dtype=np.int64)
    if ids.ndim != 2:
        raise ad.ShapeError(f"encode_sequences: expected (B, L) ids, got shape {ids.shape}")
    if ids.min() < 0 or ids.max() >= config.vocab_size:
        raise ValueError(f"encode_sequences: token id outside vocabulary [0, {config.vocab_size})")
    p = _as_nodes(params)
    return _mlp(ad.take_rows(p["embed"], ids.reshape(-1)), p, config.n_layers)


# ---------------------------------------------------------------------------
# classification head


def classify(pooled, params: Mapping) -> Node:
    """Class log-probabilities, one row per pooled vector."""
    p = _as_nodes(params)
    pooled = ad.as_node(pooled)
    if pooled.ndim == 1:
        pooled = ad.reshape(pooled, (1, -1))
    return ad.log_softmax(pooled @ p["cls_w"] + p["cls_b"])


def nll(log_probs: Node, labels) -> Node:
    """Mean negative log-likelihood of integer labels."""
    return ad.neg(ad.mean(ad.gather(log_probs, np.asarray(labels, dtype=np.int64))))


# ---------------------------------------------------------------------------
# span head


def span_logits(states, params: Mapping) -> tuple[Node, Node]:
    """Raw start/end scores ``S . T_i`` and ``E . T_i``; ``states`` is ``(L, H)`` or ``(B*L, H)``."""
    p = _as_nodes(params)
    states = ad.as_node(states)
    H = states.shape[-1]
    start = states @ ad.reshape(p["span_start"], (H, 1))
    end = states @ ad.reshape(p["span_end"], (H, 1))
    return start, end


def span_scores(enc: EncoderOutput, params: Mapping) -> tuple[Node, Node]:
    """Start and end probability distributions over the positions of one sequence."""
    if enc.states is None or enc.states.shape[0] < 1:
        raise ValueError("span_scores: need at least one position")
    start, end = span_logits(enc.states, params)
    L = enc.states.shape[0]
    return ad.softmax(ad.reshape(start, (L,))), ad.softmax(ad.reshape(end, (L,)))


def span_loss(start_dist, end_dist, gold_start: int, gold_end: int) -> Node:
    """Negative log-likelihood of the gold start and end positions."""
    start_dist, end_dist = ad.as_node(start_dist), ad.as_node(end_dist)
    L = start_dist.shape[-1]
    if not (0 <= gold_start < L and 0 <= gold_end < L):
        raise IndexError(f"span_loss: gold span ({gold_start}, {gold_end}) outside [0, {L})")
    if gold_end < gold_start:
        raise ValueError(f"span_loss: gold end {gold_end} precedes start {gold_start}")
    picked = ad.gather(start_dist, [gold_start]) * ad.gather(end_dist, [gold_end])
    return ad.neg(ad.sum(ad.log(picked)))


def batch_span_nll(states: Node, params: Mapping, spans, length: int) -> Node:
    """Mean span NLL over ``B`` sequences of equal ``length`` (log-softmax form)."""
    spans = np.asarray(spans, dtype=np.int64).reshape(-1, 2)
    B = spans.shape[0]
    start, end = span_logits(states, params)
    start_lp = ad.log_softmax(ad.reshape(start, (B, length)))
    end_lp = ad.log_softmax(ad.reshape(end, (B, length)))
    picked = ad.gather(start_lp, spans[:, 0]) + ad.gather(end_lp, spans[:, 1])
    return ad.neg(ad.mean(picked))


def decode_span(start_logits, end_logits, k: int = 20) -> tuple[int, int]:
    """Best valid span ``(i, j)``, ``j >= i``, maximizing ``start[i] + end[j]``.

    Walks the k best unconstrained pairs first and falls back to an
    exhaustive search over valid pairs. Ties go to the smaller ``i``, then
    the smaller ``j``.
    """
    start = np.asarray(start_logits, dtype=np.float64).reshape(-1)
    end = np.asarray(end_logits, dtype=np.float64).reshape(-1)
    if start.size == 0 or end.size == 0:
        raise ValueError("decode_span: empty logits")
    if start.size != end.size:
        raise ValueError(f"decode_span: length mismatch {start.size} vs {end.size}")
    if k < 1:
        raise ValueError("decode_span: k must be >= 1")
    L = start.size
    scores = start[:, None] + end[None, :]
    ii, jj = np.meshgrid(np.arange(L), np.arange(L), indexing="ij")
    ii, jj, flat = ii.ravel(), jj.ravel(), scores.ravel()
    order = np.lexsort((jj, ii, -flat))
    for pos in order[:k]:
        if jj[pos] >= ii[pos]:
            return int(ii[pos]), int(jj[pos])
    valid = np.where(jj >= ii, flat, -np.inf)
    order = np.lexsort((jj, ii, -valid))
    return int(ii[order[0]]), int(jj[order[0]])


# ---------------------------------------------------------------------------
# checkpoints


def save_params(params: Mapping[str, np.ndarray], path) -> None:
    payload = {
        name: {"shape": list(np.shape(v)), "data": np.asarray(v, dtype=np.float64).ravel().tolist()}
        for name, v in sorted(params.items())
    }
    Path(path).write_text(json.dumps(payload, sort_keys=True))


def load_params(path, config: EncoderConfig | None = None) -> dict[str, np.ndarray]:
    payload = json.loads(Path(path).read_text())
    params = {
        name: np.asarray(entry["data"], dtype=np.float64).reshape(entry["shape"])
        for name, entry in payload.items()
    }
    if config is not None:
        expected = config.param_shapes()
        if set(expected) != set(params):
            raise ValueError(f"checkpoint parameters {sorted(params)} do not match config {sorted(expected)}")
        for name, shape in expected.items():
            if params[name].shape != shape:
                raise ValueError(f"checkpoint {name}: shape {params[name].shape} != expected {shape}")
    return params


def config_dict(config: EncoderConfig) -> dict:
    return asdict(config)
