import numpy as np
import pytest

from ltrobust import numerics as nx
from ltrobust.models import (
    CheckpointError,
    Model,
    ModelSpec,
    bind,
    checkpoint_bytes,
    forward,
    init_model,
    load_checkpoint,
    predict,
    predict_logits,
    save_checkpoint,
)
from ltrobust.numerics import ContractError, Graph


def test_linear_shapes_and_zero_bias():
    m = init_model(ModelSpec("linear", (2,), 2), seed=0)
    assert m.params["weight"].shape == (2, 2)
    assert m.params["bias"].shape == (2,)
    assert np.all(m.params["bias"] == 0)


def test_init_is_deterministic():
    spec = ModelSpec("mlp", (4,), 3, hidden=(8, 8))
    a, b = init_model(spec, 5), init_model(spec, 5)
    for k in a.params:
        assert a.params[k].tobytes() == b.params[k].tobytes()
    assert a.checksum() != init_model(spec, 6).checksum()


def test_mlp_parameter_count():
    assert init_model(ModelSpec("mlp", (4,), 3, hidden=(16,))).num_parameters() == 4 * 16 + 16 + 16 * 3 + 3


def test_tinyconv_shapes():
    spec = ModelSpec("tinyconv", (3, 8, 8), 10, channels=(4, 6))
    m = init_model(spec)
    assert m.params["conv0.weight"].shape == (4, 3, 3, 3)
    assert m.params["head.weight"].shape == (6 * 2 * 2, 10)
    assert predict_logits(m, np.zeros((5, 3, 8, 8))).shape == (5, 10)


def test_identity_linear_logits():
    m = Model(ModelSpec("linear", (2,), 2), {"weight": np.eye(2), "bias": np.zeros(2)})
    np.testing.assert_array_equal(predict_logits(m, np.array([[2.0, 3.0]])), [[2.0, 3.0]])


def test_zero_model_gives_zero_logits():
    m = Model(ModelSpec("linear", (3,), 4), {"weight": np.zeros((3, 4)), "bias": np.zeros(4)})
    x = np.random.default_rng(0).normal(size=(6, 3))
    assert np.all(predict_logits(m, x) == 0)
    assert np.all(predict(m, x) == 0)  # ties go to class 0


def test_logit_input_gradient_is_weight_column():
    rng = np.random.default_rng(1)
    m = init_model(ModelSpec("linear", (3,), 4), 2)
    x0 = rng.normal(size=(1, 3))
    g = Graph()
    x = g.leaf(x0)
    (gx,) = g.backward(predict_logits(m, x)[0, 0], [x])
    np.testing.assert_allclose(gx[0], m.params["weight"][:, 0], atol=1e-12)
    err = nx.finite_difference_check(lambda g, x: predict_logits(m, x)[0, 0], [x0], 1e-4)
    assert err < 1e-8


@pytest.mark.parametrize(
    "spec, shape",
    [
        (ModelSpec("linear", (5,), 3), (4, 5)),
        (ModelSpec("mlp", (5,), 3, hidden=(6, 4)), (4, 5)),
        (ModelSpec("tinyconv", (2, 4, 4), 3, channels=(3, 2)), (2, 2, 4, 4)),
    ],
)
def test_input_gradients_pass_finite_difference(spec, shape):
    rng = np.random.default_rng(7)
    m = init_model(spec, 3)
    x0 = rng.normal(size=shape)
    assert nx.finite_difference_check(lambda g, x: nx.sum(nx.square(predict_logits(m, x))), [x0], 1e-3) < 1e-3


def test_shape_mismatch_raises():
    m = init_model(ModelSpec("mlp", (4,), 2, hidden=(3,)))
    with pytest.raises(ContractError):
        predict_logits(m, np.zeros((2, 5)))


def test_spec_validation():
    with pytest.raises(ContractError):
        ModelSpec("linear", (2,), 1)
    with pytest.raises(ContractError):
        ModelSpec("mlp", (2,), 2, hidden=(0,))
    with pytest.raises(ContractError):
        ModelSpec("tinyconv", (3, 6, 6), 2)


def test_forward_is_deterministic():
    m = init_model(ModelSpec("mlp", (4,), 3, hidden=(5,)), 1)
    x = np.random.default_rng(0).normal(size=(3, 4))
    assert predict_logits(m, x).tobytes() == predict_logits(m, x).tobytes()


def test_checkpoint_roundtrip(tmp_path):
    m = init_model(ModelSpec("mlp", (4,), 3, hidden=(5, 2)), 4)
    path = tmp_path / "m.ckpt"
    save_checkpoint(m, path, {"epoch": 3})
    loaded, extra = load_checkpoint(path)
    assert extra == {"epoch": 3}
    assert loaded.spec == m.spec
    assert loaded.checksum() == m.checksum()
    assert checkpoint_bytes(loaded, {"epoch": 3}) == path.read_bytes()


def test_checkpoint_detects_corruption(tmp_path):
    m = init_model(ModelSpec("linear", (2,), 2))
    raw = bytearray(checkpoint_bytes(m))
    raw[-12] ^= 0xFF
    path = tmp_path / "bad.ckpt"
    path.write_bytes(bytes(raw))
    with pytest.raises(CheckpointError, match="checksum"):
        load_checkpoint(path)
    path.write_bytes(b"garbage")
    with pytest.raises(CheckpointError):
        load_checkpoint(path)


def test_bind_trainable_leaves():
    m = init_model(ModelSpec("linear", (2,), 2))
    g = Graph()
    params = bind(m, g)
    x = g.constant(np.ones((1, 2)))
    grads = g.backward(nx.sum(forward(m.spec, params, x)), list(params.values()))
    assert [gr.shape for gr in grads] == [(2, 2), (2,)]
