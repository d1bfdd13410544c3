"""Experiment configuration: flat INI sections of ``key = value`` lines.

Grammar::

    document := section*
    section  := "[" name "]" NEWLINE (key "=" value NEWLINE)*
    value    := scalar | scalar ("," scalar)*        ; lists are comma separated

Comments start with ``#`` or ``;``.  Unknown sections or keys are errors.
Every key has a default; the fully resolved document is what gets written
into the run directory.
"""
from __future__ import annotations

import configparser
import io
from dataclasses import dataclass, field
from pathlib import Path

MODES = ("theory", "logistic", "train-teacher", "train-student", "compare", "eval")


class ConfigError(ValueError):
    pass


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(t) for t in text.split(",") if t.strip())


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(t) for t in text.split(",") if t.strip())


def _words(text: str) -> tuple[str, ...]:
    return tuple(t.strip() for t in text.split(",") if t.strip())


def _optional(parse):
    def inner(text: str):
        return None if text.strip().lower() in ("", "none", "auto") else parse(text)
    return inner


def _fmt(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ", ".join(_fmt(v) for v in value)
    return str(value)


# section -> key -> (parser, default)
SCHEMA: dict[str, dict[str, tuple]] = {
    "run": {
        "mode": (str, "theory"),
        "seeds": (_ints, (0, 1, 2)),
        "methods": (_words, ("pgd-at", "at-bsl", "ours")),
        "alphas": (_optional(_floats), None),
        "tail_group": (_optional(_ints), None),
        "teacher_checkpoint": (_optional(str), None),
        "checkpoint": (_optional(str), None),
        "log_level": (str, "warning"),
    },
    "theory": {
        "r": (_floats, (1.0, 2.0, 5.0, 10.0, 50.0)),
        "n": (_ints, (2, 8)),
        "eta": (_floats, (1.0, 2.0)),
        "epsilon": (_optional(_floats), None),
        "epsilon_fraction": (_floats, (0.0, 0.25, 0.5, 0.75)),
        "mc_samples": (int, 1_000_000),
        "mc_seed": (int, 0),
    },
    "logistic": {
        "irs": (_floats, (1.0, 2.0, 5.0)),
        "eta": (float, 1.0),
        "epsilon": (float, 0.5),
        "n_dim": (int, 2),
        "train_size": (int, 10_000),
        "test_size": (int, 10_000),
        "lr": (float, 0.1),
        "max_epochs": (int, 5000),
        "tol": (float, 1e-6),
    },
    "dataset": {
        "kind": (str, "gaussian-mixture"),
        "num_classes": (int, 10),
        "dim": (int, 16),
        "eta": (float, 2.5),
        "n_max": (int, 1000),
        "imbalance_ratio": (float, 10.0),
        "test_per_class": (int, 1000),
        "seed": (int, 0),
        "path": (_optional(str), None),
        "test_path": (_optional(str), None),
    },
    "model": {
        "architecture": (str, "mlp"),
        "hidden": (_ints, (64, 64)),
        "channels": (_ints, (8, 16)),
    },
    "attack": {
        "epsilon": (float, 0.1),
        "step_size": (float, 0.025),
        "steps": (int, 10),
        "random_start": (_bool, True),
        "clamp": (_optional(_floats), None),
        "loss_kind": (str, "cross-entropy"),
        "eval_steps": (int, 20),
        "eval_step_size": (_optional(float), None),
        "eval_random_start": (_bool, True),
    },
    "loss": {
        "tau": (float, 1.0),
        "alpha": (float, 5.0),
        "kd_temperature": (float, 2.0),
    },
    "schedule": {
        "teacher_epochs": (int, 30),
        "teacher_batch": (int, 64),
        "teacher_lr": (float, 0.002),
        "epochs": (int, 40),
        "batch": (int, 128),
        "lr": (float, 0.02),
        "momentum": (float, 0.9),
        "weight_decay": (float, 5e-4),
        "gamma": (_optional(float), None),
        "lr_milestones": (_floats, (0.5, 0.75)),
        "lr_decay": (float, 0.1),
        "eval_every": (int, 1),
    },
}


@dataclass
class ExperimentConfig:
    mode: str
    sections: dict[str, dict] = field(default_factory=dict)

    def __getitem__(self, section: str) -> dict:
        return self.sections[section]

    @property
    def seeds(self) -> tuple[int, ...]:
        return self.sections["run"]["seeds"]

    def gamma(self) -> float:
        g = self.sections["schedule"]["gamma"]
        return self.sections["dataset"]["imbalance_ratio"] / 2 if g is None else g

    def to_text(self) -> str:
        """Resolved document (every key, defaults filled in)."""
        out = io.StringIO()
        for name, keys in self.sections.items():
            out.write(f"[{name}]\n")
            for key, value in keys.items():
                out.write(f"{key} = {_fmt(value)}\n")
            out.write("\n")
        return out.getvalue()


def parse_config(text: str, mode: str | None = None, base_dir: str | Path | None = None) -> ExperimentConfig:
    """Parse and validate a configuration document.

    ``mode`` (e.g. from the CLI subcommand) overrides ``[run] mode``.
    Relative paths resolve against ``base_dir``.
    """
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"),
                                       strict=True, empty_lines_in_values=False)
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    sections: dict[str, dict] = {}
    for name in parser.sections():
        if name not in SCHEMA:
            raise ConfigError(f"unknown section [{name}]")
    for name, keys in SCHEMA.items():
        given = dict(parser[name]) if parser.has_section(name) else {}
        for key in given:
            if key not in keys:
                raise ConfigError(f"unknown key {key!r} in section [{name}]")
        resolved = {}
        for key, (parse, default) in keys.items():
            if key in given:
                try:
                    resolved[key] = parse(given[key])
                except ValueError as exc:
                    raise ConfigError(f"[{name}] {key}: {exc}") from None
            else:
                resolved[key] = default
        sections[name] = resolved
    if mode is not None:
        sections["run"]["mode"] = mode
    cfg = ExperimentConfig(sections["run"]["mode"], sections)
    _validate(cfg, Path(base_dir) if base_dir else Path.cwd())
    return cfg


def _require(cond: bool, message: str):
    if not cond:
        raise ConfigError(message)


def _validate(cfg: ExperimentConfig, base: Path) -> None:
    _require(cfg.mode in MODES, f"mode must be one of {', '.join(MODES)}")
    th, lg, ds, at, sc, run = (cfg[s] for s in ("theory", "logistic", "dataset", "attack", "schedule", "run"))
    if cfg.mode == "theory":
        _require(all(r >= 1 for r in th["r"]), "invariant violated: r >= 1")
        _require(all(n >= 1 for n in th["n"]) and all(e > 0 for e in th["eta"]), "invariant violated: n >= 1, eta > 0")
        if th["epsilon"] is not None:
            _require(all(0 <= e < eta for e in th["epsilon"] for eta in th["eta"]),
                     "invariant violated: 0 <= epsilon < eta")
        else:
            _require(all(0 <= f < 1 for f in th["epsilon_fraction"]),
                     "invariant violated: 0 <= epsilon_fraction < 1 (epsilon < eta)")
        _require(th["mc_samples"] >= 1, "mc_samples must be >= 1")
    if cfg.mode == "logistic":
        _require(lg["eta"] > lg["epsilon"] >= 0, "invariant violated: eta > epsilon >= 0")
        _require(all(r >= 1 for r in lg["irs"]), "invariant violated: every IR >= 1")
    if cfg.mode in ("train-teacher", "train-student", "compare", "eval"):
        _require(ds["kind"] in ("gaussian-mixture", "cifar10"), "dataset kind must be gaussian-mixture or cifar10")
        _require(ds["imbalance_ratio"] >= 1, "invariant violated: imbalance_ratio >= 1")
        _require(cfg.gamma() > 1, "invariant violated: gamma > 1")
        _require(at["epsilon"] >= 0 and at["steps"] >= 1 and at["step_size"] > 0,
                 "invariant violated: epsilon >= 0, steps >= 1, step_size > 0")
        _require(sc["epochs"] >= 1 and sc["teacher_epochs"] >= 1 and sc["batch"] >= 1 and sc["teacher_batch"] >= 1,
                 "invariant violated: epochs >= 1 and batch >= 1")
        _require(0 <= sc["momentum"] < 1, "invariant violated: 0 <= momentum < 1")
        _require(cfg["loss"]["kd_temperature"] > 0, "invariant violated: kd_temperature > 0")
        _require(cfg["loss"]["tau"] >= 0 and cfg["loss"]["alpha"] >= 0, "invariant violated: tau >= 0, alpha >= 0")
        for section, key in (("dataset", "path"), ("dataset", "test_path"), ("run", "teacher_checkpoint"),
                             ("run", "checkpoint")):
            value = cfg[section][key]
            if value is not None:
                path = Path(value) if Path(value).is_absolute() else base / value
                _require(path.exists(), f"[{section}] {key}: file not found: {path}")
                cfg[section][key] = str(path)
        if ds["kind"] == "cifar10":
            _require(ds["path"] is not None and ds["test_path"] is not None,
                     "cifar10 needs [dataset] path and test_path")
        if cfg.mode == "eval":
            _require(run["checkpoint"] is not None, "eval needs [run] checkpoint")
        unknown = set(run["methods"]) - {"pgd-at", "at-bsl", "ours"}
        _require(not unknown, f"unknown methods: {', '.join(sorted(unknown))}")
