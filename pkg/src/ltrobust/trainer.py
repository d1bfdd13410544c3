"""Balanced self-teacher distillation for adversarial training on long-tailed data.

Two phases:

1. ``train_teacher``: PGD adversarial training with cross-entropy on a
   class-balanced resample of the long-tailed set.
2. ``train_student``: PGD adversarial training on the full long-tailed set
   with balanced softmax on the adversarial logits plus ``alpha`` times KL
   distillation toward the frozen teacher's logits on the clean inputs.

``alpha = 0`` is AT-BSL; ``alpha = 0, tau = 0`` is plain PGD-AT.
"""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import losses
from .attacks import AttackConfig, pgd
from .datasets import LabeledSet, make_balanced_subset
from .losses import LossConfig
from .models import Model, ModelSpec, bind, forward, init_model, predict, predict_logits, save_checkpoint
from .numerics import ContractError, Graph, OptimizerState, sgd_step

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PhaseConfig:
    epochs: int
    batch_size: int
    lr: float

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ContractError("epochs and batch_size must be >= 1")
        if self.lr <= 0:
            raise ContractError("learning rate must be > 0")


@dataclass(frozen=True)
class TrainConfig:
    model: ModelSpec
    teacher: PhaseConfig = PhaseConfig(30, 32, 0.1)
    student: PhaseConfig = PhaseConfig(100, 128, 0.1)
    momentum: float = 0.9
    weight_decay: float = 5e-4
    attack: AttackConfig = AttackConfig()
    eval_attack: AttackConfig = AttackConfig(steps=20)
    loss: LossConfig = LossConfig()
    gamma: float = 5.0
    seed: int = 0
    # fractions of the student's epochs after which lr is multiplied by lr_decay
    lr_milestones: tuple[float, ...] = (0.5, 0.75)
    lr_decay: float = 0.1
    tail_group: tuple[int, ...] | None = None
    eval_every: int = 1

    def __post_init__(self):
        if self.gamma <= 1:
            raise ContractError("gamma must be > 1")
        tg = self.tail_group
        if tg is not None and (not tg or min(tg) < 0 or max(tg) >= self.model.num_classes):
            raise ContractError(f"tail_group must be a nonempty subset of [0, {self.model.num_classes})")

    def resolved_tail_group(self) -> tuple[int, ...]:
        return self.tail_group if self.tail_group is not None else default_tail_group(self.model.num_classes)

    def snapshot(self) -> dict:
        return asdict(self)


def default_tail_group(num_classes: int) -> tuple[int, ...]:
    """Last class for up to 10 classes, otherwise the last 10% of classes."""
    if num_classes <= 10:
        return (num_classes - 1,)
    k = max(1, num_classes // 10)
    return tuple(range(num_classes - k, num_classes))


@dataclass
class Metrics:
    clean_acc: float
    pgd_acc: float
    per_class_clean: list[float]
    per_class_pgd: list[float]
    tail_clean: float
    tail_pgd: float

    def row(self, epoch: int | None = None) -> dict:
        out = {} if epoch is None else {"epoch": epoch}
        out.update(clean_acc=self.clean_acc, pgd_acc=self.pgd_acc,
                   tail_clean=self.tail_clean, tail_pgd=self.tail_pgd)
        out.update({f"per_class_clean_{c}": v for c, v in enumerate(self.per_class_clean)})
        out.update({f"per_class_pgd_{c}": v for c, v in enumerate(self.per_class_pgd)})
        return out


def metrics_columns(num_classes: int) -> list[str]:
    return (["epoch", "clean_acc", "pgd_acc", "tail_clean", "tail_pgd"]
            + [f"per_class_clean_{c}" for c in range(num_classes)]
            + [f"per_class_pgd_{c}" for c in range(num_classes)])


@dataclass
class RunHistory:
    config: dict
    epochs: list[Metrics] = field(default_factory=list)
    evaluated_epochs: list[int] = field(default_factory=list)
    step_losses: list[float] = field(default_factory=list)
    checkpoints: dict[str, str] = field(default_factory=dict)
    best_params: dict[str, np.ndarray] | None = None

    @property
    def best_epoch(self) -> int | None:
        """1-indexed epoch with the highest PGD accuracy (earliest on ties)."""
        if not self.epochs:
            return None
        return self.evaluated_epochs[best_index([m.pgd_acc for m in self.epochs])]

    def best(self) -> Metrics:
        return self.epochs[best_index([m.pgd_acc for m in self.epochs])]

    def last(self) -> Metrics:
        return self.epochs[-1]


def best_index(values: Sequence[float]) -> int:
    return int(np.argmax(np.asarray(values)))


# ---------------------------------------------------------------------------
# evaluation


def evaluate(model: Model, test: LabeledSet, attack: AttackConfig, tail_group: Sequence[int],
             seed: int = 0, chunk: int = 2048) -> Metrics:
    """Clean and PGD accuracy, overall, per class and over ``tail_group`` (percent)."""
    counts = test.class_counts
    if counts.min() == 0:
        raise ContractError(f"test set has no samples of class {int(counts.argmin())}")
    rng = np.random.default_rng(seed)
    clean_ok = predict(model, test.features) == test.labels
    adv_ok = np.empty_like(clean_ok)
    for i in range(0, len(test), chunk):
        xs, ys = test.features[i:i + chunk], test.labels[i:i + chunk]
        adv = pgd(model, xs, ys, attack, rng) if attack.epsilon > 0 else xs
        adv_ok[i:i + chunk] = predict(model, adv) == ys

    def per_class(ok):
        return [100.0 * float(ok[test.labels == c].mean()) for c in range(test.num_classes)]

    tail = np.isin(test.labels, list(tail_group))
    return Metrics(
        clean_acc=100.0 * float(clean_ok.mean()),
        pgd_acc=100.0 * float(adv_ok.mean()),
        per_class_clean=per_class(clean_ok),
        per_class_pgd=per_class(adv_ok),
        tail_clean=100.0 * float(clean_ok[tail].mean()),
        tail_pgd=100.0 * float(adv_ok[tail].mean()),
    )


# ---------------------------------------------------------------------------
# training loops


def _rngs(seed: int, phase: int):
    ss = np.random.SeedSequence([seed, phase])
    init, data, shuffle, attack, evals = ss.spawn(5)
    return (int(init.generate_state(1)[0]), np.random.default_rng(data),
            np.random.default_rng(shuffle), np.random.default_rng(attack), np.random.default_rng(evals))


def _lr_at(epoch: int, phase: PhaseConfig, cfg: TrainConfig, scheduled: bool) -> float:
    lr = phase.lr
    if scheduled:
        for frac in cfg.lr_milestones:
            if epoch > frac * phase.epochs:
                lr *= cfg.lr_decay
    return lr


def _run(data: LabeledSet, cfg: TrainConfig, phase: PhaseConfig, phase_id: int, objective,
         test: LabeledSet | None, scheduled: bool, run_dir: Path | None, name: str,
         rngs=None) -> tuple[Model, RunHistory]:
    init_seed, _, shuffle_rng, attack_rng, eval_rng = rngs or _rngs(cfg.seed, phase_id)
    model = init_model(cfg.model, init_seed)
    opt = OptimizerState(phase.lr, cfg.momentum, cfg.weight_decay)
    history = RunHistory(config=cfg.snapshot())
    tail_group = cfg.resolved_tail_group()
    names = list(model.params)
    best_pgd = -np.inf
    for epoch in range(1, phase.epochs + 1):
        opt.learning_rate = _lr_at(epoch, phase, cfg, scheduled)
        order = shuffle_rng.permutation(len(data))
        for start in range(0, len(order), phase.batch_size):
            idx = order[start:start + phase.batch_size]
            x, y = data.features[idx], data.labels[idx]
            x_adv = pgd(model, x, y, cfg.attack, attack_rng) if cfg.attack.epsilon > 0 else x
            g = Graph()
            params = bind(model, g)
            logits = forward(model.spec, params, g.constant(x_adv))
            loss = objective(logits, x, y)
            grads = g.backward(loss, [params[k] for k in names])
            history.step_losses.append(float(loss.value))
            model.params = sgd_step(model.params, dict(zip(names, grads)), opt)
        if test is not None and (epoch % cfg.eval_every == 0 or epoch == phase.epochs):
            m = evaluate(model, test, cfg.eval_attack, tail_group, seed=int(eval_rng.integers(2**31)))
            history.epochs.append(m)
            history.evaluated_epochs.append(epoch)
            if m.pgd_acc > best_pgd:
                best_pgd = m.pgd_acc
                history.best_params = {k: v.copy() for k, v in model.params.items()}
            log.debug("%s epoch %d: clean %.2f pgd %.2f tail-pgd %.2f", name, epoch,
                      m.clean_acc, m.pgd_acc, m.tail_pgd)
    if run_dir is not None:
        _write_run(run_dir, name, model, history)
    return model, history


def train_teacher(lt: LabeledSet, cfg: TrainConfig, test: LabeledSet | None = None,
                  run_dir: str | Path | None = None) -> tuple[Model, RunHistory]:
    """PGD adversarial training with cross-entropy on ``make_balanced_subset(lt, gamma)``.

    The last-epoch model is returned; no checkpoint selection is applied.
    """
    rngs = _rngs(cfg.seed, 1)
    balanced = make_balanced_subset(lt, cfg.gamma, seed=int(rngs[1].integers(2**31)))

    def objective(logits, x, y):
        return losses.cross_entropy(logits, y)

    model, history = _run(balanced, cfg, cfg.teacher, 1, objective, test, scheduled=False,
                          run_dir=None if run_dir is None else Path(run_dir), name="teacher", rngs=rngs)
    history.config["balanced_size"] = len(balanced)
    return model, history


def train_student(lt: LabeledSet, teacher: Model | None, cfg: TrainConfig, test: LabeledSet | None = None,
                  run_dir: str | Path | None = None) -> tuple[Model, RunHistory]:
    """Adversarial training on the full long-tailed set with the distillation objective.

    ``teacher`` may be ``None`` only when ``cfg.loss.alpha == 0``.  The
    teacher sees clean inputs and is never modified.
    """
    counts = lt.class_counts
    if teacher is None and cfg.loss.alpha != 0:
        raise ContractError("alpha > 0 needs a teacher model")
    if teacher is not None and teacher.spec.num_classes != cfg.model.num_classes:
        raise ContractError("teacher and student disagree on the number of classes")

    def objective(logits, x, y):
        teacher_logits = predict_logits(teacher, x) if cfg.loss.alpha != 0 else None
        return losses.student_objective(logits, teacher_logits, y, counts, cfg.loss)

    return _run(lt, cfg, cfg.student, 2, objective, test, scheduled=True,
                run_dir=None if run_dir is None else Path(run_dir), name="student")


# ---------------------------------------------------------------------------
# run directories and comparisons


def _write_run(run_dir: Path, name: str, model: Model, history: RunHistory) -> None:
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / f"{name}_config.json").write_text(json.dumps(history.config, indent=2, sort_keys=True, default=list))
    if history.epochs:
        with open(run_dir / f"{name}_metrics.csv", "w", newline="") as f:
            w = csv.DictWriter(f, fieldnames=metrics_columns(model.spec.num_classes), lineterminator="\n")
            w.writeheader()
            for ep, m in zip(history.evaluated_epochs, history.epochs):
                w.writerow(m.row(ep))
    last = run_dir / f"{name}_last.ckpt"
    save_checkpoint(model, last, {"epoch": len(history.evaluated_epochs) and history.evaluated_epochs[-1]})
    history.checkpoints["last"] = str(last)
    if history.best_params is not None:
        best = run_dir / f"{name}_best.ckpt"
        save_checkpoint(Model(model.spec, history.best_params), best, {"epoch": history.best_epoch})
        history.checkpoints["best"] = str(best)


COMPARISON_COLUMNS = ["method", "seed", "best_epoch",
                      "best_clean", "best_pgd", "best_tail_clean", "best_tail_pgd",
                      "last_clean", "last_pgd", "last_tail_clean", "last_tail_pgd"]


def _teacher_key(cfg: TrainConfig):
    return (cfg.seed, cfg.model, cfg.teacher, cfg.momentum, cfg.weight_decay, cfg.attack, cfg.gamma)


def compare_methods(lt: LabeledSet, test: LabeledSet, methods: dict[str, TrainConfig], seeds: Sequence[int],
                    out_dir: str | Path | None = None) -> tuple[list[dict], list[dict]]:
    """Train every method for every seed; return (per-run rows, aggregate rows).

    Methods with ``alpha > 0`` share one teacher per seed when their teacher
    settings agree.  Aggregates hold mean and standard deviation over seeds
    for best- and last-checkpoint Clean/PGD/T-Clean/T-PGD.
    """
    eval_attacks = {cfg.eval_attack for cfg in methods.values()}
    if len(eval_attacks) > 1:
        raise ContractError("all methods must share the evaluation attack")
    teachers: dict = {}
    rows = []
    for name, base in methods.items():
        for seed in seeds:
            cfg = replace(base, seed=seed)
            run_dir = None if out_dir is None else Path(out_dir) / f"{name}_seed{seed}"
            teacher = None
            if cfg.loss.alpha != 0:
                key = _teacher_key(cfg)
                if key not in teachers:
                    teachers[key] = train_teacher(lt, cfg)[0]
                teacher = teachers[key]
            _, hist = train_student(lt, teacher, cfg, test, run_dir)
            best, last = hist.best(), hist.last()
            rows.append({"method": name, "seed": seed, "best_epoch": hist.best_epoch,
                         "best_clean": best.clean_acc, "best_pgd": best.pgd_acc,
                         "best_tail_clean": best.tail_clean, "best_tail_pgd": best.tail_pgd,
                         "last_clean": last.clean_acc, "last_pgd": last.pgd_acc,
                         "last_tail_clean": last.tail_clean, "last_tail_pgd": last.tail_pgd})
            if run_dir is not None:
                write_rows(rows[-1:], run_dir / "summary.csv", COMPARISON_COLUMNS)
            log.info("%s seed %d: best pgd %.2f tail-pgd %.2f", name, seed, best.pgd_acc, best.tail_pgd)
    summary = aggregate(rows)
    if out_dir is not None:
        write_rows(summary, Path(out_dir) / "comparison.csv", list(summary[0]))
    return rows, summary


def aggregate(rows: Sequence[dict]) -> list[dict]:
    """Mean and (population) standard deviation per method, in first-seen order."""
    metrics = COMPARISON_COLUMNS[3:]
    out = []
    for method in dict.fromkeys(r["method"] for r in rows):
        sel = [r for r in rows if r["method"] == method]
        agg = {"method": method, "seeds": len(sel)}
        for m in metrics:
            vals = np.array([r[m] for r in sel], dtype=np.float64)
            agg[f"{m}_mean"] = float(vals.mean())
            agg[f"{m}_std"] = float(vals.std())
        out.append(agg)
    return out


def write_rows(rows: Sequence[dict], path, columns: Sequence[str]) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=list(columns), extrasaction="ignore", lineterminator="\n")
        w.writeheader()
        w.writerows(rows)


def flagship_config(seed: int = 0, alpha: float = 5.0) -> TrainConfig:
    """Settings for the desk-scale mixture task of ``make_flagship_task``.

    Learning rates are scaled down from the usual 0.1: with momentum 0.9 a
    64-64 MLP on 16 features diverges or oscillates at that rate.
    """
    attack = AttackConfig(epsilon=0.1, step_size=0.025, steps=10, clamp=None)
    return TrainConfig(
        model=ModelSpec("mlp", (16,), 10, hidden=(64, 64)),
        teacher=PhaseConfig(30, 64, 0.002),
        student=PhaseConfig(40, 128, 0.02),
        attack=attack,
        eval_attack=replace(attack, steps=20),
        loss=LossConfig(tau=1.0, alpha=alpha, kd_temperature=2.0),
        gamma=5.0,
        seed=seed,
    )
