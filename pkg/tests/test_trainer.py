from dataclasses import replace

import numpy as np
import pytest

from ltrobust import losses
from ltrobust.attacks import AttackConfig
from ltrobust.datasets import ImbalanceProfile, LabeledSet, make_long_tailed, sample_gaussian_mixture
from ltrobust.losses import LossConfig
from ltrobust.models import Model, ModelSpec, load_checkpoint
from ltrobust.numerics import ContractError
from ltrobust.trainer import (
    Metrics,
    PhaseConfig,
    RunHistory,
    TrainConfig,
    best_index,
    compare_methods,
    default_tail_group,
    evaluate,
    train_student,
    train_teacher,
)


@pytest.fixture(scope="module")
def task():
    base = sample_gaussian_mixture(3, 4, 2.0, 60, seed=0)
    lt = make_long_tailed(base, ImbalanceProfile(4.0), seed=1)
    test = sample_gaussian_mixture(3, 4, 2.0, 40, seed=2)
    return lt, test


def small_config(**kw):
    atk = AttackConfig(epsilon=0.1, step_size=0.05, steps=2, clamp=None)
    base = TrainConfig(model=ModelSpec("mlp", (4,), 3, hidden=(8,)),
                       teacher=PhaseConfig(2, 16, 0.01), student=PhaseConfig(3, 16, 0.02),
                       attack=atk, eval_attack=replace(atk, steps=3), gamma=2.0,
                       loss=LossConfig(1.0, 2.0, 1.0))
    return replace(base, **kw)


def test_default_tail_group():
    assert default_tail_group(10) == (9,)
    assert default_tail_group(2) == (1,)
    assert default_tail_group(100) == tuple(range(90, 100))


def test_best_epoch_rule():
    h = RunHistory(config={})
    for p in (10.0, 12.0, 11.0):
        h.epochs.append(Metrics(0.0, p, [], [], 0.0, 0.0))
    h.evaluated_epochs = [1, 2, 3]
    assert h.best_epoch == 2
    assert best_index([3.0, 5.0, 5.0]) == 1  # earliest of equal maxima


def test_constant_logit_model_scores_one_over_c():
    test = sample_gaussian_mixture(4, 4, 1.0, 25, seed=3)
    m = Model(ModelSpec("linear", (4,), 4), {"weight": np.zeros((4, 4)), "bias": np.array([0.0, 2.0, 1.0, 0.0])})
    res = evaluate(m, test, AttackConfig(epsilon=0.1, step_size=0.05, steps=2, clamp=None), (3,))
    assert res.clean_acc == pytest.approx(100 / 4)
    assert res.per_class_clean == [0.0, 100.0, 0.0, 0.0]
    assert res.tail_clean == 0.0 and res.pgd_acc == res.clean_acc


def test_perfect_memorizer():
    # well-separated one-hot features and an identity model
    x = np.repeat(np.eye(3) * 10.0, 5, axis=0)
    y = np.repeat(np.arange(3), 5)
    m = Model(ModelSpec("linear", (3,), 3), {"weight": np.eye(3), "bias": np.zeros(3)})
    res = evaluate(m, LabeledSet(x, y, 3), AttackConfig(epsilon=0.5, step_size=0.25, steps=3, clamp=None), (2,))
    assert res.clean_acc == res.pgd_acc == res.tail_pgd == 100.0


def test_metrics_consistent_with_class_counts(task):
    lt, test = task
    model, hist = train_teacher(lt, small_config(), test)
    counts = test.class_counts
    for m in hist.epochs:
        assert m.clean_acc == pytest.approx(np.dot(m.per_class_clean, counts) / counts.sum(), abs=1e-12)
        assert m.pgd_acc == pytest.approx(np.dot(m.per_class_pgd, counts) / counts.sum(), abs=1e-12)
        assert m.tail_pgd == m.per_class_pgd[2]


def test_zero_budget_eval_matches_clean(task):
    lt, test = task
    model, _ = train_teacher(lt, small_config())
    res = evaluate(model, test, AttackConfig(epsilon=0.0, clamp=None), (2,))
    assert res.pgd_acc == res.clean_acc
    assert res.per_class_pgd == res.per_class_clean


def test_teacher_is_frozen(task):
    lt, test = task
    cfg = small_config()
    teacher, _ = train_teacher(lt, cfg)
    before = {k: v.tobytes() for k, v in teacher.params.items()}
    train_student(lt, teacher, cfg, test)
    assert {k: v.tobytes() for k, v in teacher.params.items()} == before


def test_training_is_bit_reproducible(task):
    lt, test = task
    cfg = small_config()
    t1, h1 = train_teacher(lt, cfg, test)
    t2, h2 = train_teacher(lt, cfg, test)
    assert t1.checksum() == t2.checksum() and h1.step_losses == h2.step_losses
    s1, _ = train_student(lt, t1, cfg, test)
    s2, _ = train_student(lt, t2, cfg, test)
    assert s1.checksum() == s2.checksum()
    s3, _ = train_student(lt, t1, replace(cfg, seed=1), test)
    assert s3.checksum() != s1.checksum()


def test_alpha_zero_logs_balanced_softmax(task, monkeypatch):
    lt, _ = task
    cfg = small_config(loss=LossConfig(1.0, 0.0, 1.0))
    seen = []
    real = losses.balanced_softmax_loss

    def spy(logits, y, counts, tau):
        out = real(logits, y, counts, tau)
        seen.append(float(out.value))
        return out

    monkeypatch.setattr(losses, "balanced_softmax_loss", spy)
    _, hist = train_student(lt, None, cfg)
    assert len(seen) == len(hist.step_losses)
    np.testing.assert_allclose(hist.step_losses, seen, atol=1e-12, rtol=0)


def test_student_needs_teacher_when_distilling(task):
    with pytest.raises(ContractError):
        train_student(task[0], None, small_config())


def test_run_directory_layout(task, tmp_path):
    lt, test = task
    cfg = small_config()
    teacher, _ = train_teacher(lt, cfg)
    model, hist = train_student(lt, teacher, cfg, test, tmp_path)
    names = sorted(p.name for p in tmp_path.iterdir())
    assert names == ["student_best.ckpt", "student_config.json", "student_last.ckpt", "student_metrics.csv"]
    header = (tmp_path / "student_metrics.csv").read_text().splitlines()[0].split(",")
    assert header[:5] == ["epoch", "clean_acc", "pgd_acc", "tail_clean", "tail_pgd"]
    assert header[-1] == "per_class_pgd_2"
    last, _ = load_checkpoint(tmp_path / "student_last.ckpt")
    assert last.checksum() == model.checksum()
    best, extra = load_checkpoint(tmp_path / "student_best.ckpt")
    assert extra["epoch"] == hist.best_epoch


def test_compare_methods(task, tmp_path):
    lt, test = task
    cfg = small_config()
    methods = {"at-bsl": replace(cfg, loss=LossConfig(1.0, 0.0)), "ours": cfg}
    rows, summary = compare_methods(lt, test, methods, [0, 1], tmp_path)
    assert len(rows) == 4 and [s["method"] for s in summary] == ["at-bsl", "ours"]
    vals = [r["best_tail_pgd"] for r in rows if r["method"] == "ours"]
    assert summary[1]["best_tail_pgd_mean"] == pytest.approx(np.mean(vals))
    dirs = sorted(p.name for p in tmp_path.iterdir() if p.is_dir())
    assert dirs == ["at-bsl_seed0", "at-bsl_seed1", "ours_seed0", "ours_seed1"]
    assert (tmp_path / "comparison.csv").exists()
    assert all((tmp_path / d / "summary.csv").exists() for d in dirs)
