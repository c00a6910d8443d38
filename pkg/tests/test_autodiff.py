import hashlib

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from xlamaml import autodiff as ad
from conftest import max_rel_err, value_fn


def test_add_forward():
    assert np.array_equal(ad.add(ad.const([1.0, 2.0]), ad.const([3.0, 4.0])).value, [4.0, 6.0])


def test_softmax_of_zeros_is_uniform():
    assert np.allclose(ad.softmax(ad.const([0.0, 0.0])).value, [0.5, 0.5])


def test_matmul_forward():
    out = ad.matmul(ad.const([[1.0, 2.0]]), ad.const([[3.0], [4.0]]))
    assert out.value.tolist() == [[11.0]]


def test_shape_mismatch_names_primitive_and_shapes():
    with pytest.raises(ad.ShapeError, match=r"matmul.*\(2, 3\).*\(2, 3\)"):
        ad.matmul(ad.const(np.ones((2, 3))), ad.const(np.ones((2, 3))))
    with pytest.raises(ad.ShapeError, match="add"):
        ad.add(ad.const(np.ones(3)), ad.const(np.ones(4)))


def test_grad_of_square():
    x = ad.param(3.0)
    (g,) = ad.grad(x * x, [x])
    assert g == pytest.approx(6.0)


def test_second_derivative_of_cube():
    x = ad.param(2.0)
    (g,) = ad.grad(x * x * x, [x], create_graph=True)
    (h,) = ad.grad(g, [x])
    assert float(g.value) == pytest.approx(12.0)
    assert float(h) == pytest.approx(12.0, abs=1e-9)


def test_third_derivative_of_quartic():
    x = ad.param(1.5)
    y = x * x * x * x
    (g1,) = ad.grad(y, [x], create_graph=True)
    (g2,) = ad.grad(g1, [x], create_graph=True)
    (g3,) = ad.grad(g2, [x])
    assert float(g1.value) == pytest.approx(4 * 1.5 ** 3, abs=1e-9)
    assert float(g2.value) == pytest.approx(12 * 1.5 ** 2, abs=1e-9)
    assert float(g3) == pytest.approx(24 * 1.5, abs=1e-9)


def test_non_scalar_loss_rejected():
    x = ad.param([1.0, 2.0])
    with pytest.raises(ad.ShapeError, match="scalar"):
        ad.grad(x * x, [x])


def test_unreachable_parameter_gets_zero_gradient():
    x, unused = ad.param(2.0), ad.param(np.ones((2, 3)))
    g = ad.grad(x * x, {"x": x, "unused": unused})
    assert np.array_equal(g["unused"], np.zeros((2, 3)))
    assert g["x"] == pytest.approx(4.0)


def test_fd_oracle_on_analytic_functions():
    g = ad.finite_difference_gradient(lambda p: float(p["x"] ** 2), {"x": np.array(3.0)}, h=1e-5)
    assert g["x"] == pytest.approx(6.0, abs=1e-9)
    g = ad.finite_difference_gradient(lambda p: float(np.sin(p["x"])), {"x": np.array(0.0)}, h=1e-5)
    assert g["x"] == pytest.approx(1.0, abs=1e-9)


def test_fd_rejects_nonpositive_step():
    with pytest.raises(ValueError):
        ad.finite_difference_gradient(lambda p: 0.0, {"x": np.zeros(1)}, h=0)


def _two_layer_tanh(rng, d_in=5, hidden=7, classes=3, batch=6):
    params = {
        "w1": rng.normal(size=(d_in, hidden)), "b1": rng.normal(size=hidden),
        "w2": rng.normal(size=(hidden, classes)), "b2": rng.normal(size=classes),
    }
    X = rng.normal(size=(batch, d_in))
    y = rng.integers(0, classes, size=batch)

    def build(p):
        h = ad.tanh(ad.matmul(ad.const(X), p["w1"]) + p["b1"])
        logp = ad.log_softmax(ad.matmul(h, p["w2"]) + p["b2"])
        return ad.neg(ad.mean(ad.gather(logp, y)))

    return params, build


@pytest.mark.parametrize("seed", range(5))
def test_two_layer_network_matches_finite_differences(seed):
    params, build = _two_layer_tanh(np.random.default_rng(seed))
    assert sum(v.size for v in params.values()) <= 200
    nodes = ad.params_from(params)
    g = ad.grad(build(nodes), nodes)
    fd = ad.finite_difference_gradient(value_fn(build), params, h=1e-5)
    assert max_rel_err(g, fd) <= 1e-4


# one builder per primitive: f(params) -> scalar, differentiable in every input
PRIMITIVES = {
    "add": (lambda p: ad.sum(ad.tanh(p["a"] + p["b"]))),
    "sub": (lambda p: ad.sum(ad.tanh(p["a"] - p["b"]))),
    "mul": (lambda p: ad.sum(p["a"] * p["b"])),
    "div": (lambda p: ad.sum(p["a"] / (ad.exp(p["b"]) + 1.0))),
    "matmul": (lambda p: ad.sum(ad.tanh(ad.matmul(p["m"], p["n"])))),
    "tanh": (lambda p: ad.sum(ad.tanh(p["a"]) * p["b"])),
    "exp": (lambda p: ad.sum(ad.exp(p["a"] * 0.5))),
    "log": (lambda p: ad.sum(ad.log(p["a"] * p["a"] + 1.0))),
    "sum_axis": (lambda p: ad.sum(ad.tanh(ad.sum(p["m"], axis=1)))),
    "mean": (lambda p: ad.mean(p["a"] * p["b"])),
    "softmax": (lambda p: ad.sum(ad.softmax(p["m"]) * ad.const(np.arange(12.0).reshape(3, 4)))),
    "log_softmax": (lambda p: ad.sum(ad.gather(ad.log_softmax(p["m"]), [0, 3, 1]))),
    "gather_vector": (lambda p: ad.sum(ad.exp(ad.gather(p["a"], [0, 2, 2])))),
    "take_rows": (lambda p: ad.sum(ad.tanh(ad.take_rows(p["n"], [0, 3, 3, 1])))),
    "broadcast_bias": (lambda p: ad.sum(ad.tanh(ad.add(p["m"], p["v"])))),
    "reshape_transpose": (lambda p: ad.sum(ad.transpose(ad.reshape(p["m"], (4, 3))) * ad.const(np.ones((3, 4))))),
}


def _primitive_inputs(rng):
    return {
        "a": rng.normal(size=4), "b": rng.normal(size=4),
        "m": rng.normal(size=(3, 4)), "n": rng.normal(size=(4, 2)), "v": rng.normal(size=4),
    }


@pytest.mark.parametrize("name", sorted(PRIMITIVES))
def test_each_primitive_matches_finite_differences(name, rng):
    build = PRIMITIVES[name]
    for _ in range(3):
        params = _primitive_inputs(rng)
        nodes = ad.params_from(params)
        g = ad.grad(build(nodes), nodes)
        fd = ad.finite_difference_gradient(value_fn(build), params, h=1e-5)
        assert max_rel_err(g, fd) <= 1e-4, name


@pytest.mark.parametrize("name", sorted(PRIMITIVES))
def test_each_primitive_second_order_matches_fd_of_gradient(name, rng):
    """Differentiate sum(grad * w) again and compare against FD of the first gradient."""
    build = PRIMITIVES[name]
    params = _primitive_inputs(rng)
    weights = {k: rng.normal(size=v.shape) for k, v in params.items()}

    def directional(p):
        g = ad.grad(build(p), p, create_graph=True)
        total = None
        for k in p:
            term = ad.sum(g[k] * ad.const(weights[k]))
            total = term if total is None else total + term
        return total

    nodes = ad.params_from(params)
    hv = ad.grad(directional(nodes), nodes)

    def fd_target(arrays):
        nodes = ad.params_from(arrays)
        g = ad.grad(build(nodes), nodes)
        return float(sum(np.sum(g[k] * weights[k]) for k in arrays))

    fd = ad.finite_difference_gradient(fd_target, params, h=1e-5)
    assert max_rel_err(hv, fd, floor=1e-4) <= 1e-4, name


@settings(max_examples=40, deadline=None)
@given(
    coeffs=st.lists(st.integers(-5, 5), min_size=1, max_size=5),
    x=st.floats(-2.0, 2.0, allow_nan=False),
)
def test_second_derivative_of_polynomials(coeffs, x):
    xn = ad.param(x)
    y = ad.const(0.0)
    power = ad.const(1.0)
    for c in coeffs:
        y = y + power * float(c)
        power = power * xn
    (g,) = ad.grad(y, [xn], create_graph=True)
    (h,) = ad.grad(g, [xn])
    expected = sum(c * k * (k - 1) * x ** (k - 2) for k, c in enumerate(coeffs) if k >= 2)
    assert float(h) == pytest.approx(expected, abs=1e-9)


def _digest(arrays):
    h = hashlib.sha256()
    for a in arrays:
        h.update(np.ascontiguousarray(a).tobytes())
    return h.hexdigest()


def test_graph_construction_never_mutates_values(rng):
    params, build = _two_layer_tanh(rng)
    nodes = ad.params_from(params)
    before = _digest(n.value for n in nodes.values())
    loss = build(nodes)
    g = ad.grad(loss, nodes, create_graph=True)
    ad.grad(ad.sum(g["w1"] * g["w1"]), nodes)
    assert _digest(n.value for n in nodes.values()) == before
    with pytest.raises(ValueError):
        nodes["w1"].value[0, 0] = 1.0


def test_no_grad_builds_constants():
    x = ad.param(2.0)
    with ad.no_grad():
        y = x * x
    assert not y.requires_grad and y.parents == ()


def test_gradients_are_nodes_only_with_create_graph():
    x = ad.param(1.0)
    (plain,) = ad.grad(x * x, [x])
    (graph,) = ad.grad(x * x, [x], create_graph=True)
    assert isinstance(plain, np.ndarray)
    assert isinstance(graph, ad.Node) and graph.requires_grad
