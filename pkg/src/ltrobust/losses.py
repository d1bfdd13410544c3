"""Classification and distillation objectives.

Every loss accepts either a graph :class:`~ltrobust.numerics.Node` (returns a
scalar node, differentiable) or a plain array (returns a float).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .numerics import ContractError, Graph, Node


@dataclass(frozen=True)
class LossConfig:
    tau: float = 1.0
    alpha: float = 5.0
    kd_temperature: float = 1.0

    def __post_init__(self):
        if self.tau < 0:
            raise ContractError("tau must be >= 0")
        if self.alpha < 0:
            raise ContractError("alpha must be >= 0")
        if self.kd_temperature <= 0:
            raise ContractError("kd_temperature must be > 0")


def _graph_of(*items):
    for item in items:
        if isinstance(item, Node):
            return item.graph, False
    return Graph(), True


def _node(graph: Graph, value) -> Node:
    return value if isinstance(value, Node) else graph.constant(value)


def _finish(node: Node, plain: bool):
    return float(node.value) if plain else node


def _check_labels(logits: Node, y: np.ndarray) -> np.ndarray:
    y = np.asarray(y, dtype=np.intp)
    n, c = logits.shape
    if y.shape != (n,):
        raise ContractError(f"expected {n} labels, got shape {y.shape}")
    if n and (y.min() < 0 or y.max() >= c):
        raise ContractError(f"labels must lie in [0, {c})")
    return y


def cross_entropy(logits, y):
    """Mean negative log-likelihood of ``y`` under ``softmax(logits)``."""
    graph, plain = _graph_of(logits)
    z = _node(graph, logits)
    y = _check_labels(z, y)
    return _finish(-nx.mean(nx.take_labels(nx.log_softmax(z), y)), plain)


def prior_offsets(counts, tau: float) -> np.ndarray:
    """Per-class logit offsets ``tau * ln(n_c)``."""
    counts = np.asarray(counts, dtype=np.float64)
    if np.any(counts < 1):
        raise ContractError("balanced softmax needs every class count >= 1")
    return tau * np.log(counts)


def balanced_softmax_loss(logits, y, counts, tau: float = 1.0):
    """Cross-entropy on logits shifted by ``tau * ln(count)`` of each class."""
    graph, plain = _graph_of(logits)
    z = _node(graph, logits)
    offsets = prior_offsets(counts, tau)
    if offsets.shape != (z.shape[1],):
        raise ContractError(f"need {z.shape[1]} class counts, got {offsets.shape[0]}")
    y = _check_labels(z, y)
    shifted = z + graph.constant(offsets)
    return _finish(-nx.mean(nx.take_labels(nx.log_softmax(shifted), y)), plain)


def kd_loss(student_logits, teacher_logits, temperature: float = 1.0):
    """``T**2 * mean_i KL(softmax(t_i/T) || softmax(s_i/T))``.

    The teacher side is always treated as a constant.
    """
    if temperature <= 0:
        raise ContractError("temperature must be > 0")
    graph, plain = _graph_of(student_logits)
    s = _node(graph, student_logits)
    t = teacher_logits.value if isinstance(teacher_logits, Node) else np.asarray(teacher_logits, dtype=np.float64)
    if t.shape != s.shape:
        raise ContractError(f"student {s.shape} and teacher {t.shape} logits differ in shape")
    t_logp = t / temperature - t.max(axis=1, keepdims=True) / temperature
    t_logp = t_logp - np.log(np.exp(t_logp).sum(axis=1, keepdims=True))
    t_p = np.exp(t_logp)
    # Constant entropy part keeps the value an exact KL (zero at equality).
    neg_entropy = float((t_p * t_logp).sum()) / s.shape[0]
    s_logp = nx.log_softmax(s / temperature)
    cross = -nx.sum(s_logp * graph.constant(t_p)) / s.shape[0]
    return _finish((cross + neg_entropy) * (temperature ** 2), plain)


def student_objective(adv_logits, clean_teacher_logits, y, counts, cfg: LossConfig):
    """Balanced softmax on adversarial student logits plus ``alpha`` times
    distillation toward the teacher's logits on the clean inputs."""
    bsl = balanced_softmax_loss(adv_logits, y, counts, cfg.tau)
    if cfg.alpha == 0:
        return bsl
    return bsl + cfg.alpha * kd_loss(adv_logits, clean_teacher_logits, cfg.kd_temperature)
