"""Command-line entry point.

    ltrobust theory --out runs/theory
    ltrobust compare --config flagship.ini --out runs/cmp --overwrite

Exit codes: 0 success, 2 configuration error, 3 runtime error.  A CSV summary
is printed to stdout; diagnostics go to stderr.
"""
from __future__ import annotations

import argparse
import io
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import theory
from .attacks import AttackConfig
from .config import MODES, ConfigError, ExperimentConfig, parse_config
from .datasets import ImbalanceProfile, load_cifar10_binary, make_flagship_task, make_long_tailed
from .losses import LossConfig
from .models import ModelSpec, load_checkpoint
from .trainer import (
    PhaseConfig,
    TrainConfig,
    compare_methods,
    evaluate,
    train_student,
    train_teacher,
    write_rows,
)

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3
SUMMARY_METRICS = ["seed", "clean_acc", "pgd_acc", "tail_clean", "tail_pgd"]


def load_data(cfg: ExperimentConfig):
    ds = cfg["dataset"]
    if ds["kind"] == "gaussian-mixture":
        return make_flagship_task(seed=ds["seed"], num_classes=ds["num_classes"], dim=ds["dim"], eta=ds["eta"],
                                  n_max=ds["n_max"], imbalance_ratio=ds["imbalance_ratio"],
                                  test_per_class=ds["test_per_class"])
    base = load_cifar10_binary(ds["path"])
    lt = make_long_tailed(base, ImbalanceProfile(ds["imbalance_ratio"]), seed=ds["seed"])
    return lt, load_cifar10_binary(ds["test_path"])


def train_config(cfg: ExperimentConfig, lt) -> TrainConfig:
    at, sc, mo, lo = cfg["attack"], cfg["schedule"], cfg["model"], cfg["loss"]
    shape = lt.features.shape[1:]
    spec = ModelSpec(mo["architecture"], shape, lt.num_classes, hidden=mo["hidden"], channels=mo["channels"])
    clamp = at["clamp"]
    if clamp is None and cfg["dataset"]["kind"] == "cifar10":
        clamp = (0.0, 1.0)
    counts = tuple(int(c) for c in lt.class_counts) if at["loss_kind"] == "balanced-softmax" else None
    common = dict(epsilon=at["epsilon"], clamp=None if clamp is None else tuple(clamp),
                  loss_kind=at["loss_kind"], counts=counts, tau=lo["tau"])
    train_attack = AttackConfig(step_size=at["step_size"], steps=at["steps"], random_start=at["random_start"], **common)
    eval_step = at["eval_step_size"] if at["eval_step_size"] is not None else at["step_size"]
    eval_attack = AttackConfig(step_size=eval_step, steps=at["eval_steps"], random_start=at["eval_random_start"],
                               **{**common, "loss_kind": "cross-entropy", "counts": None})
    return TrainConfig(
        model=spec,
        teacher=PhaseConfig(sc["teacher_epochs"], sc["teacher_batch"], sc["teacher_lr"]),
        student=PhaseConfig(sc["epochs"], sc["batch"], sc["lr"]),
        momentum=sc["momentum"], weight_decay=sc["weight_decay"],
        attack=train_attack, eval_attack=eval_attack,
        loss=LossConfig(lo["tau"], lo["alpha"], lo["kd_temperature"]),
        gamma=cfg.gamma(), lr_milestones=sc["lr_milestones"], lr_decay=sc["lr_decay"],
        tail_group=cfg["run"]["tail_group"], eval_every=sc["eval_every"],
    )


def method_configs(cfg: ExperimentConfig, base: TrainConfig) -> dict[str, TrainConfig]:
    out = {}
    for name in cfg["run"]["methods"]:
        if name == "pgd-at":
            out[name] = replace(base, loss=replace(base.loss, tau=0.0, alpha=0.0))
        elif name == "at-bsl":
            out[name] = replace(base, loss=replace(base.loss, alpha=0.0))
        else:
            for a in cfg["run"]["alphas"] or (base.loss.alpha,):
                key = name if cfg["run"]["alphas"] is None else f"{name}-a{a:g}"
                out[key] = replace(base, loss=replace(base.loss, alpha=a))
    return out


def _csv(rows, columns) -> str:
    buf = io.StringIO()
    theory.write_csv(rows, buf, columns)
    return buf.getvalue()


def _metric_row(seed, m) -> dict:
    return {"seed": seed, "clean_acc": m.clean_acc, "pgd_acc": m.pgd_acc,
            "tail_clean": m.tail_clean, "tail_pgd": m.tail_pgd}


def run(cfg: ExperimentConfig, out: Path) -> str:
    """Execute ``cfg``, writing artifacts under ``out``; return the stdout CSV summary."""
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.ini").write_text(cfg.to_text())
    mode = cfg.mode

    if mode == "theory":
        th = cfg["theory"]
        eps_list = th["epsilon"]
        grid = [theory.TheoryParams(r, n, eta, e)
                for r in th["r"]
                for e_or_f in (eps_list if eps_list is not None else th["epsilon_fraction"])
                for n in th["n"]
                for eta in th["eta"]
                for e in [e_or_f if eps_list is not None else e_or_f * eta]]
        rows = theory.validate_grid(grid, n_samples=th["mc_samples"], seed=th["mc_seed"])
        theory.write_csv(rows, out / "theory.csv", theory.THEORY_COLUMNS)
        corollary = theory.check_corollary1(grid)
        theory.write_csv(corollary, out / "corollary.csv", list(corollary[0]))
        return _csv(rows, theory.THEORY_COLUMNS)

    if mode == "logistic":
        lg = cfg["logistic"]
        rows = []
        for seed in cfg.seeds:
            rows += theory.run_logistic_experiment(lg["irs"], lg["eta"], lg["epsilon"], lg["train_size"],
                                                   lg["test_size"], seed, n_dim=lg["n_dim"], lr=lg["lr"],
                                                   max_epochs=lg["max_epochs"], tol=lg["tol"])
        columns = [c for c in theory.LOGISTIC_COLUMNS if c in rows[0]] + \
                  [c for c in rows[0] if c not in theory.LOGISTIC_COLUMNS]
        theory.write_csv(rows, out / "logistic.csv", columns)
        return _csv(rows, columns)

    lt, test = load_data(cfg)
    base = train_config(cfg, lt)

    if mode == "train-teacher":
        rows = []
        for seed in cfg.seeds:
            c = replace(base, seed=seed)
            _, hist = train_teacher(lt, c, test, out / f"seed{seed}")
            rows.append(_metric_row(seed, hist.last()))
        write_rows(rows, out / "summary.csv", SUMMARY_METRICS)
        return _csv(rows, SUMMARY_METRICS)

    if mode == "train-student":
        rows = []
        for seed in cfg.seeds:
            c = replace(base, seed=seed)
            teacher = None
            if c.loss.alpha != 0:
                if cfg["run"]["teacher_checkpoint"]:
                    teacher, _ = load_checkpoint(cfg["run"]["teacher_checkpoint"])
                else:
                    teacher, _ = train_teacher(lt, c, None, out / f"seed{seed}")
            _, hist = train_student(lt, teacher, c, test, out / f"seed{seed}")
            rows.append({**_metric_row(seed, hist.best()), "best_epoch": hist.best_epoch})
        columns = SUMMARY_METRICS + ["best_epoch"]
        write_rows(rows, out / "summary.csv", columns)
        return _csv(rows, columns)

    if mode == "compare":
        _, summary = compare_methods(lt, test, method_configs(cfg, base), cfg.seeds, out)
        return _csv(summary, list(summary[0]))

    # eval
    model, _ = load_checkpoint(cfg["run"]["checkpoint"])
    rows = []
    for seed in cfg.seeds:
        m = evaluate(model, test, base.eval_attack, base.resolved_tail_group(), seed=seed)
        rows.append(_metric_row(seed, m))
    write_rows(rows, out / "eval.csv", SUMMARY_METRICS)
    return _csv(rows, SUMMARY_METRICS)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="INI-style experiment config")
    common.add_argument("--out", type=Path, help="output directory (default: runs/<mode>)")
    common.add_argument("--seed", type=int, help="run a single seed, overriding [run] seeds")
    common.add_argument("--overwrite", action="store_true", help="allow writing into a non-empty output directory")
    parser = argparse.ArgumentParser(prog="ltrobust", description=__doc__.split("\n")[0], parents=[common])
    sub = parser.add_subparsers(dest="mode", required=True)
    for mode in MODES:
        sub.add_parser(mode, parents=[common])
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        text = args.config.read_text() if args.config else ""
        cfg = parse_config(text, mode=args.mode, base_dir=args.config.parent if args.config else None)
        if args.seed is not None:
            cfg["run"]["seeds"] = (args.seed,)
        out = args.out or Path("runs") / cfg.mode
        if out.exists() and any(out.iterdir()) and not args.overwrite:
            raise ConfigError(f"output directory {out} is not empty (pass --overwrite)")
    except (ConfigError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    logging.basicConfig(level=cfg["run"]["log_level"].upper(), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        summary = run(cfg, out)
    except Exception as exc:  # noqa: BLE001 - reported with provenance, mapped to exit 3
        tb = exc.__traceback__
        while tb is not None and tb.tb_next is not None:
            tb = tb.tb_next
        where = tb.tb_frame.f_globals.get("__name__", "?") if tb is not None else "?"
        print(f"runtime error in {where}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    sys.stdout.write(summary)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
