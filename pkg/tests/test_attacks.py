import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ltrobust.attacks import AttackConfig, fgsm, pgd
from ltrobust.losses import cross_entropy
from ltrobust.models import Model, ModelSpec, init_model, predict_logits
from ltrobust.numerics import ContractError


def logistic_model():
    # logit_1 - logit_0 = x_0
    return Model(ModelSpec("linear", (2,), 2), {"weight": np.array([[0.0, 1.0], [0.0, 0.0]]), "bias": np.zeros(2)})


def test_fgsm_zero_budget_is_identity():
    m = init_model(ModelSpec("mlp", (3,), 2, hidden=(4,)))
    x = np.random.default_rng(0).normal(size=(5, 3))
    out = fgsm(m, x, np.zeros(5, dtype=int), AttackConfig(epsilon=0.0, clamp=None))
    np.testing.assert_array_equal(out, x)


def test_fgsm_logistic_direction():
    eps = 0.3
    out = fgsm(logistic_model(), np.zeros((1, 2)), [1], AttackConfig(epsilon=eps, clamp=None))
    np.testing.assert_array_equal(out, [[-eps, 0.0]])


def test_fgsm_respects_clamp():
    m = init_model(ModelSpec("linear", (4,), 3), 1)
    x = np.full((3, 4), 0.999)
    out = fgsm(m, x, [0, 1, 2], AttackConfig(epsilon=8 / 255, clamp=(0.0, 1.0)))
    assert out.max() <= 1.0


def test_pgd_single_step_equals_fgsm():
    rng = np.random.default_rng(2)
    m = init_model(ModelSpec("mlp", (5,), 3, hidden=(8,)), 2)
    x, y = rng.uniform(size=(10, 5)), rng.integers(0, 3, 10)
    cfg = AttackConfig(epsilon=0.05, step_size=0.05, steps=1, random_start=False)
    np.testing.assert_allclose(pgd(m, x, y, cfg), fgsm(m, x, y, cfg), atol=1e-12, rtol=0)


def test_pgd_zero_budget_is_identity():
    m = init_model(ModelSpec("linear", (2,), 2))
    x = np.random.default_rng(0).normal(size=(4, 2))
    for steps in (1, 7):
        out = pgd(m, x, [0, 1, 0, 1], AttackConfig(epsilon=0.0, steps=steps, clamp=None), rng=3)
        np.testing.assert_array_equal(out, x)


def test_pgd_needs_a_step():
    m = init_model(ModelSpec("linear", (2,), 2))
    with pytest.raises(ContractError):
        pgd(m, np.zeros((1, 2)), [0], AttackConfig(steps=0))


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**16), eps=st.floats(0, 0.3), steps=st.integers(1, 5),
       start=st.booleans(), clamp=st.booleans())
def test_attack_outputs_stay_in_bounds(seed, eps, steps, start, clamp):
    rng = np.random.default_rng(seed)
    m = init_model(ModelSpec("mlp", (4,), 3, hidden=(6,)), seed)
    x, y = rng.uniform(size=(6, 4)), rng.integers(0, 3, 6)
    cfg = AttackConfig(epsilon=eps, step_size=0.05, steps=steps, random_start=start,
                       clamp=(0.0, 1.0) if clamp else None)
    before = m.checksum()
    for out in (fgsm(m, x, y, cfg), pgd(m, x, y, cfg, rng=seed)):
        assert np.max(np.abs(out - x)) <= eps + 1e-12
        if clamp:
            assert out.min() >= 0.0 and out.max() <= 1.0
    assert m.checksum() == before


def test_pgd_without_random_start_is_bit_deterministic():
    rng = np.random.default_rng(4)
    m = init_model(ModelSpec("mlp", (4,), 3, hidden=(6,)), 4)
    x, y = rng.normal(size=(8, 4)), rng.integers(0, 3, 8)
    cfg = AttackConfig(epsilon=0.1, step_size=0.02, steps=5, random_start=False, clamp=None)
    assert pgd(m, x, y, cfg).tobytes() == pgd(m, x, y, cfg).tobytes()
    cfg = AttackConfig(epsilon=0.1, step_size=0.02, steps=5, random_start=True, clamp=None)
    assert pgd(m, x, y, cfg, rng=11).tobytes() == pgd(m, x, y, cfg, rng=11).tobytes()


def _train_toy(seed=0):
    """Small MLP fit by plain gradient descent on a 3-class mixture."""
    from ltrobust.datasets import sample_gaussian_mixture
    from ltrobust.models import bind, forward
    from ltrobust.numerics import Graph

    data = sample_gaussian_mixture(3, 4, 2.0, 100, seed=seed)
    m = init_model(ModelSpec("mlp", (4,), 3, hidden=(16,)), seed)
    for _ in range(300):
        g = Graph()
        p = bind(m, g)
        loss = cross_entropy(forward(m.spec, p, g.constant(data.features)), data.labels)
        grads = g.backward(loss, list(p.values()))
        m.params = {k: v - 0.2 * gr for (k, v), gr in zip(m.params.items(), grads)}
    return m, data


def test_pgd_is_stronger_than_fgsm():
    m, data = _train_toy()
    cfg = AttackConfig(epsilon=0.5, step_size=0.125, steps=10, random_start=False, clamp=None)
    x, y = data.features, data.labels
    x_pgd, x_fgsm = pgd(m, x, y, cfg), fgsm(m, x, y, cfg)
    z_pgd, z_fgsm = predict_logits(m, x_pgd), predict_logits(m, x_fgsm)
    per_pgd = np.array([cross_entropy(z_pgd[i:i + 1], y[i:i + 1]) for i in range(len(y))])
    per_fgsm = np.array([cross_entropy(z_fgsm[i:i + 1], y[i:i + 1]) for i in range(len(y))])
    assert np.mean(per_pgd >= per_fgsm - 1e-12) >= 0.9


def test_balanced_softmax_attack_loss():
    m, data = _train_toy(1)
    cfg = AttackConfig(epsilon=0.3, step_size=0.1, steps=3, random_start=False, clamp=None,
                       loss_kind="balanced-softmax", counts=(100, 30, 5))
    out = pgd(m, data.features, data.labels, cfg)
    assert np.max(np.abs(out - data.features)) <= 0.3 + 1e-12
    with pytest.raises(ContractError):
        AttackConfig(loss_kind="balanced-softmax")
