import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from xlamaml import autodiff as ad
from xlamaml.model import (EncoderConfig, classify, decode_span, encode, init_params, load_params, nll,
                           save_params, span_loss, span_scores, EncoderOutput)

FEATURES = EncoderConfig(input_dim=4, hidden_dim=5, n_layers=2, n_classes=3)
TOKENS = EncoderConfig(input_kind="tokens", vocab_size=12, hidden_dim=5, n_layers=1, task="span")


def brute_force_span(start, end):
    best, arg = -math.inf, None
    for i, j in itertools.product(range(len(start)), repeat=2):
        if j >= i and start[i] + end[j] > best:
            best, arg = start[i] + end[j], (i, j)
    return arg


def test_zero_encoder_pools_to_last_bias():
    params = {k: np.zeros_like(v) for k, v in init_params(FEATURES, np.random.default_rng(0)).items()}
    params["b_1"] = np.arange(5.0)
    out = encode(np.array([[3.0, -1.0, 2.0, 0.5]]), params, FEATURES)
    assert np.array_equal(out.pooled.value, [np.arange(5.0)])


def test_encode_is_deterministic(rng):
    params = init_params(FEATURES, rng)
    x = rng.normal(size=(3, 4))
    assert np.array_equal(encode(x, params, FEATURES).pooled.value, encode(x, params, FEATURES).pooled.value)


def test_token_id_out_of_vocab_rejected(rng):
    params = init_params(TOKENS, rng)
    with pytest.raises(ValueError, match="vocab"):
        encode(np.array([1, 12]), params, TOKENS)


def test_zero_head_is_uniform():
    p = {"cls_w": np.zeros((5, 3)), "cls_b": np.zeros(3)}
    probs = np.exp(classify(np.ones(5), p).value)
    assert np.allclose(probs, 1 / 3, atol=1e-15)


def test_classify_known_logits():
    p = {"cls_w": np.zeros((2, 2)), "cls_b": np.array([0.0, math.log(3.0)])}
    assert np.allclose(np.exp(classify(np.zeros(2), p).value), [[0.25, 0.75]])


def test_nll_of_uniform_three_classes():
    logp = ad.const(np.log(np.full((2, 3), 1 / 3)))
    assert float(nll(logp, [0, 2]).value) == pytest.approx(math.log(3))


def test_span_scores_uniform_and_analytic():
    head = {"span_start": np.array([1.0, 0.0]), "span_end": np.array([0.0, 1.0])}
    flat = EncoderOutput(ad.const(np.ones((4, 2))), None)
    s, e = span_scores(flat, head)
    assert np.allclose(s.value, 0.25) and np.allclose(e.value, 0.25)
    states = EncoderOutput(ad.const(np.array([[0.0, 0.0], [math.log(3.0), 0.0]])), None)
    s, _ = span_scores(states, head)
    assert np.allclose(s.value, [0.25, 0.75])


def test_span_loss_examples():
    u = np.full(4, 0.25)
    assert float(span_loss(u, u, 1, 2).value) == pytest.approx(2 * math.log(4))
    onehot = np.eye(4)
    assert float(span_loss(onehot[1], onehot[3], 1, 3).value) == pytest.approx(0.0, abs=1e-15)
    with pytest.raises(IndexError):
        span_loss(u, u, 0, 4)
    with pytest.raises(ValueError):
        span_loss(u, u, 2, 1)


def test_decode_span_examples():
    assert decode_span([0.1, 2.0, 0.3], [1.5, 0.2, 2.5]) == (1, 2)
    assert decode_span([0, 0, 5], [5, 0, 0]) == (0, 0)
    assert decode_span([0.7], [-3.0]) == (0, 0)


def test_decode_span_errors():
    with pytest.raises(ValueError):
        decode_span([], [])
    with pytest.raises(ValueError):
        decode_span([1.0, 2.0], [1.0])
    with pytest.raises(ValueError):
        decode_span([1.0], [1.0], k=0)


def test_decode_span_top1_invalid_falls_through():
    # best unconstrained pair is (2, 0): invalid
    start = np.array([0.0, 0.0, 9.0])
    end = np.array([9.0, 0.0, 0.0])
    assert decode_span(start, end) == brute_force_span(start, end) == (0, 0)


def test_decode_span_exhaustive_fallback_when_k_is_small():
    start = np.array([0.0, 1.0, 8.0, 9.0])
    end = np.array([9.0, 8.0, 1.0, 0.0])
    # the top four unconstrained pairs are all invalid
    assert decode_span(start, end, k=1) == brute_force_span(start, end)


_logits = st.integers(1, 20).flatmap(
    lambda n: st.tuples(
        arrays(np.float64, n, elements=st.floats(-5, 5, allow_nan=False)),
        arrays(np.float64, n, elements=st.floats(-5, 5, allow_nan=False)),
    )
)


@settings(max_examples=200, deadline=None)
@given(_logits, st.integers(1, 30))
def test_decode_span_matches_brute_force(pair, k):
    start, end = pair
    i, j = decode_span(start, end, k=k)
    assert j >= i
    bi, bj = brute_force_span(start, end)
    assert start[i] + end[j] == start[bi] + end[bj]


def test_checkpoint_round_trip(tmp_path, rng):
    params = init_params(FEATURES, rng)
    save_params(params, tmp_path / "ck.json")
    back = load_params(tmp_path / "ck.json", FEATURES)
    assert set(back) == set(params)
    for k in params:
        assert np.array_equal(back[k], params[k])


def test_checkpoint_shape_mismatch_rejected(tmp_path, rng):
    save_params(init_params(FEATURES, rng), tmp_path / "ck.json")
    with pytest.raises(ValueError, match="shape"):
        load_params(tmp_path / "ck.json", EncoderConfig(input_dim=4, hidden_dim=6, n_layers=2))


def test_param_count_of_tiny_configs_is_small():
    assert sum(int(np.prod(s)) for s in FEATURES.param_shapes().values()) <= 200


def test_config_validation():
    with pytest.raises(ValueError):
        EncoderConfig(input_kind="pixels")
    with pytest.raises(ValueError):
        EncoderConfig(task="span")  # span needs token mode
