"""L-infinity FGSM and PGD attacks."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import losses
from .models import Model, bind, forward
from .numerics import ContractError, Graph

LOSS_KINDS = ("cross-entropy", "balanced-softmax")


@dataclass(frozen=True)
class AttackConfig:
    """Attack parameters.

    ``clamp`` is an optional ``(lo, hi)`` box for valid inputs (``(0, 1)``
    for images, ``None`` for raw Gaussian features).  ``counts``/``tau`` are
    only read when ``loss_kind == "balanced-softmax"``.
    """

    epsilon: float = 8 / 255
    step_size: float = 2 / 255
    steps: int = 10
    random_start: bool = True
    clamp: tuple[float, float] | None = (0.0, 1.0)
    loss_kind: str = "cross-entropy"
    counts: tuple[int, ...] | None = None
    tau: float = 1.0

    def __post_init__(self):
        if self.epsilon < 0:
            raise ContractError("epsilon must be >= 0")
        if self.steps < 0:
            raise ContractError("steps must be >= 0")
        if self.steps > 0 and self.step_size <= 0:
            raise ContractError("step_size must be > 0 when steps > 0")
        if self.loss_kind not in LOSS_KINDS:
            raise ContractError(f"loss_kind must be one of {LOSS_KINDS}")
        if self.loss_kind == "balanced-softmax" and self.counts is None:
            raise ContractError("balanced-softmax attack loss needs class counts")
        if self.clamp is not None and not self.clamp[0] < self.clamp[1]:
            raise ContractError("clamp must be an interval lo < hi")


def input_gradient(model: Model, x: np.ndarray, y: np.ndarray, cfg: AttackConfig) -> np.ndarray:
    """Gradient of the summed attack loss with respect to the inputs."""
    g = Graph()
    xn = g.leaf(x)
    logits = forward(model.spec, bind(model, g, trainable=False), xn)
    if cfg.loss_kind == "cross-entropy":
        loss = losses.cross_entropy(logits, y)
    else:
        loss = losses.balanced_softmax_loss(logits, y, cfg.counts, cfg.tau)
    # Summed loss: avoids shrinking per-sample gradients by 1/N.
    (grad,) = g.backward(loss * len(x), [xn])
    return grad


def _project(x_adv, x, cfg: AttackConfig):
    x_adv = np.clip(x_adv, x - cfg.epsilon, x + cfg.epsilon)
    if cfg.clamp is not None:
        x_adv = np.clip(x_adv, cfg.clamp[0], cfg.clamp[1])
    return x_adv


def _check_bounds(x_adv, x, cfg: AttackConfig):
    assert np.max(np.abs(x_adv - x), initial=0.0) <= cfg.epsilon + 1e-12
    if cfg.clamp is not None and x_adv.size:
        assert x_adv.min() >= cfg.clamp[0] and x_adv.max() <= cfg.clamp[1]


def fgsm(model: Model, x, y, cfg: AttackConfig) -> np.ndarray:
    """One signed-gradient ascent step of size epsilon; ``sign(0) = 0``."""
    x = np.asarray(x, dtype=np.float64)
    if cfg.epsilon == 0:
        return x.copy()
    x_adv = _project(x + cfg.epsilon * np.sign(input_gradient(model, x, y, cfg)), x, cfg)
    _check_bounds(x_adv, x, cfg)
    return x_adv


def pgd(model: Model, x, y, cfg: AttackConfig, rng: np.random.Generator | int | None = None) -> np.ndarray:
    """Projected signed-gradient ascent inside the epsilon ball and clamp box.

    ``rng`` seeds the uniform random start (ignored without random start).
    """
    if cfg.steps < 1:
        raise ContractError("pgd needs steps >= 1")
    x = np.asarray(x, dtype=np.float64)
    if cfg.epsilon == 0:
        return x.copy()
    x_adv = x
    if cfg.random_start:
        rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng or 0)
        x_adv = _project(x + rng.uniform(-cfg.epsilon, cfg.epsilon, size=x.shape), x, cfg)
    for _ in range(cfg.steps):
        step = cfg.step_size * np.sign(input_gradient(model, x_adv, y, cfg))
        x_adv = _project(x_adv + step, x, cfg)
    _check_bounds(x_adv, x, cfg)
    return x_adv
