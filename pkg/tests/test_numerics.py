import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ltrobust import losses
from ltrobust import numerics as nx
from ltrobust.numerics import ContractError, Graph, GraphStateError, OptimizerState, sgd_step


def test_square_derivative():
    g = Graph()
    w = g.leaf(3.0)
    (dw,) = g.backward(w * w)
    assert dw == pytest.approx(6.0)


def test_constant_function_has_zero_gradient():
    g = Graph()
    w = g.leaf(np.array([1.0, -2.0]))
    root = g.constant(4.0) + 0.0
    (dw,) = g.backward(root, [w])
    np.testing.assert_array_equal(dw, [0.0, 0.0])


def test_softmax_cross_entropy_logit_gradient():
    g = Graph()
    z = g.leaf(np.array([[0.0, 0.0]]))
    (dz,) = g.backward(losses.cross_entropy(z, [0]))
    np.testing.assert_allclose(dz, [[-0.5, 0.5]], atol=1e-15)


def test_backward_rejects_non_scalar_root():
    g = Graph()
    w = g.leaf(np.ones(3))
    with pytest.raises(ContractError):
        g.backward(w * 2.0)


def test_backward_on_foreign_or_cleared_graph():
    g, h = Graph(), Graph()
    root = nx.sum(g.leaf(np.ones(2)))
    with pytest.raises(GraphStateError):
        h.backward(root)
    g.clear()
    with pytest.raises(GraphStateError):
        g.backward(root)


def test_finite_difference_square():
    err = nx.finite_difference_check(lambda g, w: w * w, [np.array(3.0)], step=1e-4)
    assert err < 1e-6


def test_finite_difference_two_layer_mlp():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(5, 3))
    y = rng.integers(0, 2, 5)

    def f(g, w1, b1, w2, b2):
        h = nx.relu(g.constant(x) @ w1 + b1)
        return losses.cross_entropy(h @ w2 + b2, y)

    params = [rng.normal(size=(3, 4)), rng.normal(size=4), rng.normal(size=(4, 2)), rng.normal(size=2)]
    assert nx.finite_difference_check(f, params, step=1e-3) < 1e-3


def test_finite_difference_kink_is_reported_not_raised():
    err = nx.finite_difference_check(lambda g, w: nx.absolute(w), [np.array(0.0)], step=1e-3)
    assert np.isfinite(err)


@settings(max_examples=30, deadline=None)
@given(a=st.floats(-3, 3), b=st.floats(-3, 3), seed=st.integers(0, 2**16))
def test_backward_is_linear(a, b, seed):
    rng = np.random.default_rng(seed)
    w0 = rng.normal(size=(3, 2))
    x = rng.normal(size=(4, 3))

    def f(g, w):
        return nx.sum(nx.exp(g.constant(x) @ w * 0.3))

    def h(g, w):
        return losses.cross_entropy(g.constant(x) @ w, [0, 1, 1, 0])

    def grad(fn):
        g = Graph()
        w = g.leaf(w0)
        return g.backward(fn(g, w), [w])[0]

    def combo(g, w):
        return a * f(g, w) + b * h(g, w)

    np.testing.assert_allclose(grad(combo), a * grad(f) + b * grad(h), atol=1e-10, rtol=0)


def test_broadcast_add_unbroadcasts():
    g = Graph()
    x = g.leaf(np.ones((3, 2)))
    b = g.leaf(np.zeros(2))
    gx, gb = g.backward(nx.sum(x + b))
    np.testing.assert_array_equal(gb, [3.0, 3.0])
    np.testing.assert_array_equal(gx, np.ones((3, 2)))


def test_conv_and_pool_gradients():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(2, 2, 4, 4))
    w = rng.normal(size=(3, 2, 3, 3))
    b = rng.normal(size=3)

    def f(g, x, w, b):
        return nx.sum(nx.square(nx.max_pool2d(nx.conv2d(x, w, b))))

    assert nx.finite_difference_check(f, [x, w, b], step=1e-5) < 1e-6


@pytest.mark.parametrize(
    "w, grad, wd, expected",
    [(1.0, 0.5, 0.0, 0.95), (1.0, 0.0, 0.0, 1.0), (1.0, 0.0, 0.5, 0.95)],
)
def test_sgd_step_arithmetic(w, grad, wd, expected):
    state = OptimizerState(learning_rate=0.1, momentum=0.0, weight_decay=wd)
    out = sgd_step({"w": np.array(w)}, {"w": np.array(grad)}, state)
    assert out["w"] == pytest.approx(expected, abs=1e-15)


def test_sgd_momentum_accumulates():
    state = OptimizerState(learning_rate=0.1, momentum=0.9, weight_decay=0.0)
    p = {"w": np.array(1.0)}
    p = sgd_step(p, {"w": np.array(1.0)}, state)
    p = sgd_step(p, {"w": np.array(1.0)}, state)
    # v1 = 1, v2 = 1.9
    assert p["w"] == pytest.approx(1.0 - 0.1 - 0.19)


def test_sgd_zero_lr_is_identity():
    rng = np.random.default_rng(0)
    p = {"a": rng.normal(size=(2, 3)), "b": rng.normal(size=3)}
    g = {k: rng.normal(size=v.shape) for k, v in p.items()}
    out = sgd_step(p, g, OptimizerState(0.0, 0.9, 5e-4))
    for k in p:
        np.testing.assert_array_equal(out[k], p[k])


def test_sgd_shape_mismatch():
    with pytest.raises(ContractError):
        sgd_step({"w": np.ones(2)}, {"w": np.ones(3)}, OptimizerState())
