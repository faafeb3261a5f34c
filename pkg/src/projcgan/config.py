"""Flat ``key = value`` run configuration.

Blank lines and ``#`` comments are ignored. Lists are comma separated.
Unknown keys and bad values are collected and reported together.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields
from pathlib import Path

from .models import VARIANTS, ModelSpec
from .training import LossConfig, TrainSchedule

TASKS = ("classgen", "superres")
DATASETS = ("ring", "blobs", "cifar")


class ConfigError(ValueError):
    def __init__(self, problems: list[str]):
        self.problems = problems
        super().__init__("invalid configuration:\n  " + "\n  ".join(problems))


@dataclass
class RunConfig:
    # what to run
    task: str = "classgen"
    variant: str = "projection"
    seed: int = 0
    out_dir: str = "runs/default"
    # data
    dataset: str = "ring"
    dataset_path: str = ""
    n_classes: int = 8
    n_per_class: int = 2000
    image_size: int = 16          # blobs: image size; superres: low-res size
    blob_noise: float = 0.05
    # model
    z_dim: int = 16
    g_width: int = 64
    d_width: int = 64
    g_layers: int = 2
    d_layers: int = 3
    d_down: list = field(default_factory=lambda: [1, 1, 0])
    embed_dim: int = 64
    hidden_index: int = -2
    spectral_norm: bool = True
    sn_embedding: bool = True
    sr_factor: int = 4
    sr_skip: bool = True
    # schedule and losses
    iterations: int = 20000
    decay_start: int = 15000
    n_dis: int = 5
    batch_size: int = 64
    lr: float = 2e-4
    beta1: float = 0.0
    beta2: float = 0.9
    loss: str = "hinge"
    lam_cls: float = 1.0
    lam_aux: float = 0.0
    aux_fraction: float = 0.1
    # cadence and evaluation
    log_every: int = 100
    metric_every: int = 1000
    checkpoint_every: int = 1000
    panel_size: int = 64
    n_gen: int = 1000
    score_splits: int = 10
    classifier_steps: int = 300
    resume: bool = False
    # eval / morph / superres commands
    checkpoint: str = ""
    morph_classes: list = field(default_factory=lambda: [0, 1])
    morph_steps: int = 8
    morph_z_seeds: list = field(default_factory=lambda: [0, 1, 2, 3])
    n_mc: int = 10
    n_test: int = 64
    sr_inputs: str = ""
    metrics: bool = True
    # sweep
    sweep_lr: list = field(default_factory=lambda: [1e-4, 2e-4])
    sweep_beta1: list = field(default_factory=lambda: [0.0, 0.5])
    sweep_variants: list = field(default_factory=lambda: ["projection", "concat_hidden"])

    # -- derived views --
    def model_spec(self) -> ModelSpec:
        kind = {"classgen": "vector" if self.dataset == "ring" else "image",
                "superres": "superres"}[self.task]
        size = 32 if self.dataset == "cifar" and self.task == "classgen" else self.image_size
        return ModelSpec(kind=kind, variant=self.variant, n_classes=self.n_classes, z_dim=self.z_dim,
                         image_size=size, g_width=self.g_width, d_width=self.d_width,
                         g_layers=self.g_layers, d_layers=self.d_layers, d_down=tuple(self.d_down),
                         embed_dim=self.embed_dim, hidden_index=self.hidden_index,
                         spectral_norm=self.spectral_norm, sn_embedding=self.sn_embedding,
                         sr_factor=self.sr_factor, extras={"sr_skip": self.sr_skip})

    def schedule(self) -> TrainSchedule:
        return TrainSchedule(total=self.iterations, decay_start=min(self.decay_start, self.iterations),
                             n_dis=self.n_dis, batch_size=self.batch_size, lr=self.lr)

    def losses(self) -> LossConfig:
        return LossConfig(kind=self.loss, lam_cls=self.lam_cls, lam_aux=self.lam_aux,
                          aux_fraction=self.aux_fraction)

    def replace(self, **kw) -> "RunConfig":
        return dataclasses.replace(self, **kw)

    # -- text form --
    def dumps(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            lines.append(f"{f.name} = {_format(v)}")
        return "\n".join(lines) + "\n"

    def write(self, path) -> None:
        Path(path).write_text(self.dumps())


def _format(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, list):
        return ", ".join(_format(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _scalar(text: str, kind):
    if kind is bool:
        low = text.lower()
        if low in ("true", "yes", "1", "on"):
            return True
        if low in ("false", "no", "0", "off"):
            return False
        raise ValueError(f"not a boolean: {text!r}")
    if kind is int:
        return int(text)
    if kind is float:
        return float(text)
    return text


_LIST_ITEM = {"d_down": int, "morph_classes": int, "morph_z_seeds": int, "sweep_lr": float,
              "sweep_beta1": float, "sweep_variants": str}


def _convert(name: str, text: str, default):
    if isinstance(default, list):
        kind = _LIST_ITEM[name]
        items = [t.strip() for t in text.split(",") if t.strip()]
        return [_scalar(t, kind) for t in items]
    return _scalar(text, type(default))


def parse_config(text: str, overrides: dict | None = None) -> RunConfig:
    defaults = RunConfig()
    known = {f.name for f in fields(RunConfig)}
    values, problems, seen = {}, [], set()
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            problems.append(f"line {lineno}: expected 'key = value', got {raw.strip()!r}")
            continue
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in known:
            problems.append(f"line {lineno}: unknown key {key!r}")
            continue
        if key in seen:
            problems.append(f"line {lineno}: duplicate key {key!r}")
        seen.add(key)
        try:
            values[key] = _convert(key, val, getattr(defaults, key))
        except ValueError as e:
            problems.append(f"line {lineno}: {key}: {e}")
    values.update(overrides or {})
    cfg = RunConfig(**values)
    problems.extend(validate(cfg))
    if problems:
        raise ConfigError(problems)
    return cfg


def load_config(path, overrides: dict | None = None) -> RunConfig:
    return parse_config(Path(path).read_text(), overrides)


def validate(cfg: RunConfig) -> list[str]:
    p = []
    if cfg.task not in TASKS:
        p.append(f"task must be one of {TASKS}, got {cfg.task!r}")
    if cfg.variant not in VARIANTS:
        p.append(f"variant must be one of {VARIANTS}, got {cfg.variant!r}")
    if cfg.dataset not in DATASETS:
        p.append(f"dataset must be one of {DATASETS}, got {cfg.dataset!r}")
    if cfg.dataset == "cifar" and not cfg.dataset_path:
        p.append("dataset = cifar needs dataset_path")
    if cfg.task == "superres":
        if cfg.dataset != "blobs":
            p.append("superres runs on dataset = blobs")
        if cfg.variant not in ("projection", "concat_hidden"):
            p.append("superres supports variant projection or concat_hidden")
        if cfg.sr_factor not in (2, 4, 8):
            p.append("sr_factor must be 2, 4 or 8")
    if cfg.n_classes < 2:
        p.append("n_classes must be at least 2")
    if cfg.n_per_class < 2:
        p.append("n_per_class must be at least 2")
    for name in ("z_dim", "g_width", "d_width", "embed_dim", "batch_size", "n_dis",
                 "panel_size", "image_size", "n_test"):
        if getattr(cfg, name) < 1:
            p.append(f"{name} must be positive")
    for name in ("iterations", "decay_start", "log_every", "metric_every", "checkpoint_every",
                 "classifier_steps"):
        if getattr(cfg, name) < 0:
            p.append(f"{name} must be non-negative")
    if cfg.lr <= 0:
        p.append("lr must be positive")
    if not 0 <= cfg.beta1 < 1 or not 0 <= cfg.beta2 < 1:
        p.append("beta1 and beta2 must lie in [0, 1)")
    if cfg.loss not in ("hinge", "standard"):
        p.append("loss must be hinge or standard")
    if not 0 <= cfg.aux_fraction <= 1:
        p.append("aux_fraction must lie in [0, 1]")
    if cfg.lam_cls < 0 or cfg.lam_aux < 0:
        p.append("loss weights must be non-negative")
    if cfg.n_gen < 0:
        p.append("n_gen must be non-negative")
    if cfg.score_splits < 1:
        p.append("score_splits must be positive")
    if cfg.n_mc < 1:
        p.append("n_mc must be at least 1")
    if any(c < 0 or c >= cfg.n_classes for c in cfg.morph_classes):
        p.append("morph_classes must lie in [0, n_classes)")
    if any(v not in VARIANTS for v in cfg.sweep_variants):
        p.append(f"sweep_variants must come from {VARIANTS}")
    if any(v not in (0, 1) for v in cfg.d_down):
        p.append("d_down entries must be 0 or 1")
    return p
