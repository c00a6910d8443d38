import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from xlamaml import autodiff as ad
from xlamaml.optim import AdamWState, SgdConfig, adamw_step, linear_lr, sgd_functional_step


def test_sgd_step_arithmetic():
    theta = {"w": ad.param([1.0])}
    out = sgd_functional_step(theta, {"w": ad.const([0.5])}, 0.1)
    assert out["w"].value.tolist() == [0.95]


def test_sgd_zero_lr_is_identity():
    theta = {"w": ad.param([1.0, -2.0])}
    out = sgd_functional_step(theta, {"w": ad.const([0.5, 0.5])}, 0.0)
    assert out["w"] is theta["w"]


def test_sgd_missing_gradient():
    with pytest.raises(KeyError):
        sgd_functional_step({"w": ad.param(1.0), "b": ad.param(0.0)}, {"w": ad.const(1.0)}, 0.1)


def test_sgd_config_rejects_nonpositive_lr():
    with pytest.raises(ValueError):
        SgdConfig(lr=0.0)


def test_adapted_parameter_derivative_is_one_minus_alpha_a():
    # L0 = a/2 (theta - s)^2, theta' = theta - alpha a (theta - s), d theta'/d theta = 1 - alpha a
    a, s, alpha = 2.0, 0.3, 0.1
    theta = ad.param(1.7)
    loss = ad.mul(ad.mul(ad.sub(theta, s), ad.sub(theta, s)), a / 2)
    (g,) = ad.grad(loss, [theta], create_graph=True)
    adapted = sgd_functional_step({"t": theta}, {"t": g}, alpha)["t"]
    (d,) = ad.grad(adapted, [theta])
    assert float(d) == pytest.approx(0.8, abs=1e-15)


def test_adamw_first_step_closed_form():
    theta = {"w": np.array([1.0])}
    state = AdamWState(lr=0.01, weight_decay=0.01, eps=0.0)
    adamw_step(state, theta, {"w": np.array([0.5])}, lr_t=0.01)
    # m_hat = g, v_hat = g^2 -> update 0.01; decay 0.01 * 0.01 * 1.0
    assert theta["w"][0] == pytest.approx(1.0 - 0.01 - 0.0001, abs=1e-12)


def test_adamw_zero_gradient_no_decay_keeps_theta():
    theta = {"w": np.array([1.0, -3.0])}
    state = AdamWState(lr=0.1, weight_decay=0.0)
    for _ in range(3):
        adamw_step(state, theta, {"w": np.zeros(2)}, lr_t=0.1)
    assert theta["w"].tolist() == [1.0, -3.0]


def test_adamw_rejects_negative_lr():
    with pytest.raises(ValueError):
        adamw_step(AdamWState(), {"w": np.ones(1)}, {"w": np.ones(1)}, lr_t=-1.0)


def test_adamw_state_json_round_trip():
    theta = {"w": np.array([1.0, 2.0]), "b": np.array([0.5])}
    state = AdamWState(lr=0.01)
    adamw_step(state, theta, {"w": np.array([0.1, -0.2]), "b": np.array([0.3])}, lr_t=0.01)
    back = AdamWState.from_json(json.loads(json.dumps(state.to_json())))
    assert back.step == 1
    for k in theta:
        assert np.array_equal(back.m[k], state.m[k]) and np.array_equal(back.v[k], state.v[k])


@settings(max_examples=50, deadline=None)
@given(st.floats(-10, 10), st.floats(1e-3, 10), st.sampled_from([-1.0, 1.0]), st.floats(1e-4, 0.1))
def test_adamw_first_step_moves_by_lr_against_gradient_sign(theta0, magnitude, sign, lr):
    g = sign * magnitude
    theta = {"w": np.array([theta0])}
    adamw_step(AdamWState(lr=lr, weight_decay=0.0, eps=0.0), theta, {"w": np.array([g])}, lr_t=lr)
    expected = theta0 - lr * np.sign(g)
    assert theta["w"][0] == pytest.approx(expected, abs=1e-12)


def test_linear_lr_examples():
    assert linear_lr(0, 500, 1e-5) == 1e-5
    assert linear_lr(250, 500, 1e-5) == pytest.approx(5e-6)
    assert linear_lr(500, 500, 1e-5) == 0.0
    assert linear_lr(900, 500, 1e-5) == 0.0


def test_linear_lr_errors():
    with pytest.raises(ValueError):
        linear_lr(0, 0, 1.0)
    with pytest.raises(ValueError):
        linear_lr(-1, 10, 1.0)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 1000), st.data())
def test_linear_lr_is_monotone_and_bounded(total, data):
    a = data.draw(st.integers(0, total + 5))
    b = data.draw(st.integers(a, total + 10))
    assert 0.0 <= linear_lr(b, total, 1.0) <= linear_lr(a, total, 1.0) <= 1.0
