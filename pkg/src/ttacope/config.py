"""Experiment configuration: INI-style ``key = value`` sections.

Parsing goes through :mod:`configparser`; every section and key must be known,
and values are converted to the type of the field's default. :func:`dumps`
writes the canonical form (fixed section/key order, shortest float repr), so
``dumps(loads(text))`` is stable under repetition.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, fields, replace
from pathlib import Path

from .adaptation import METHODS, AugmentConfig, LossWeights, PretrainConfig, TtaConfig
from .ensemble import EnsembleMode
from .errors import ConfigError
from .synth import DEFAULT_CATEGORIES, SOURCE_DOMAIN, TARGET_DOMAIN, DomainParams, StreamConfig

CATEGORY_REGISTRY = {c.name: c for c in DEFAULT_CATEGORIES}
DEFAULT_ENSEMBLE = "default"  # method's own inference ensemble


@dataclass(frozen=True)
class StreamSizes:
    source_frames: int = 300
    target_frames: int = 300
    n_points: int = 256
    instances_per_category: int = 6
    bin_count: int = 32
    categories: tuple = tuple(CATEGORY_REGISTRY)


@dataclass(frozen=True)
class ModelConfig:
    hidden: tuple = (64, 64)
    seed: int = 0


@dataclass(frozen=True)
class PretrainSection:
    epochs: int = 60
    batch_frames: int = 32
    lr: float = 3e-3
    jitter_sigma: float = 0.003
    aug_dropout: float = 0.2
    lr_milestones: tuple = (0.25, 0.5, 0.75, 0.9)
    lr_ratios: tuple = (0.6, 0.3, 0.1, 0.01)


@dataclass(frozen=True)
class TtaSection:
    gamma: float = 0.99
    rho: float = 0.05
    update_interval: int = 1
    lr: float = 1e-4
    rng_seed: int = 0
    ransac_iterations: int = 512
    ransac_sample_size: int = 4


@dataclass(frozen=True)
class ExperimentSection:
    output_dir: str = "runs"
    methods: tuple = METHODS
    ensembles: tuple = (DEFAULT_ENSEMBLE,)
    intervals: tuple = (1,)


@dataclass(frozen=True)
class ExperimentConfig:
    streams: StreamSizes = StreamSizes()
    source: DomainParams = SOURCE_DOMAIN
    target: DomainParams = TARGET_DOMAIN
    model: ModelConfig = ModelConfig()
    pretrain: PretrainSection = PretrainSection()
    loss: LossWeights = LossWeights()
    tta: TtaSection = TtaSection()
    experiment: ExperimentSection = ExperimentSection()

    def __post_init__(self):
        validate(self)

    # -- derived objects -------------------------------------------------

    def stream_configs(self) -> tuple[StreamConfig, StreamConfig]:
        s = self.streams
        cats = tuple(CATEGORY_REGISTRY[n] for n in s.categories)
        common = dict(n_points=s.n_points, instances_per_category=s.instances_per_category, categories=cats, bin_count=s.bin_count)
        return (
            StreamConfig(domain=self.source, n_frames=s.source_frames, **common),
            StreamConfig(domain=self.target, n_frames=s.target_frames, **common),
        )

    def pretrain_config(self) -> PretrainConfig:
        p = self.pretrain
        return PretrainConfig(
            epochs=p.epochs, batch_frames=p.batch_frames, lr=p.lr, seed=self.model.seed,
            weights=self.loss, augment=AugmentConfig(p.jitter_sigma, p.aug_dropout),
            lr_milestones=tuple(p.lr_milestones), lr_ratios=tuple(p.lr_ratios),
        )

    def tta_config(self, method: str, interval: int | None = None, ensemble: str | None = None) -> TtaConfig:
        t = self.tta
        ens = None if ensemble in (None, DEFAULT_ENSEMBLE) else ensemble
        return TtaConfig(
            method=method, gamma=t.gamma, rho=t.rho,
            update_interval=t.update_interval if interval is None else interval,
            lr=t.lr, rng_seed=t.rng_seed, weights=self.loss, ensemble=ens,
            ransac_iterations=t.ransac_iterations, ransac_sample_size=t.ransac_sample_size,
        )

    def with_seed(self, seed: int) -> "ExperimentConfig":
        """Re-seed every random source: model init, pretraining, streams, RANSAC.

        Source and target streams get seeds ``2 * seed`` and ``2 * seed + 1`` so
        they never coincide.
        """
        return replace(
            self,
            model=replace(self.model, seed=seed),
            source=replace(self.source, rng_seed=2 * seed),
            target=replace(self.target, rng_seed=2 * seed + 1),
            tta=replace(self.tta, rng_seed=seed),
        )


SECTIONS = {f.name: f.default for f in fields(ExperimentConfig)}


def validate(cfg: ExperimentConfig) -> None:
    s = cfg.streams
    for name in ("source_frames", "target_frames", "n_points", "instances_per_category"):
        if getattr(s, name) <= 0:
            raise ConfigError(f"streams.{name} must be positive, got {getattr(s, name)}")
    if s.n_points < 4:
        raise ConfigError("streams.n_points must be at least 4")
    if s.bin_count < 2:
        raise ConfigError("streams.bin_count must be at least 2")
    for name in s.categories:
        if name not in CATEGORY_REGISTRY:
            raise ConfigError(f"streams.categories: unknown category {name!r}")
    if not s.categories:
        raise ConfigError("streams.categories must not be empty")
    if not cfg.model.hidden or min(cfg.model.hidden) <= 0:
        raise ConfigError("model.hidden must list positive layer widths")
    p = cfg.pretrain
    if p.epochs < 0 or p.batch_frames <= 0 or not p.lr > 0:
        raise ConfigError("pretrain: epochs >= 0, batch_frames > 0 and lr > 0 required")
    if len(p.lr_milestones) != len(p.lr_ratios):
        raise ConfigError("pretrain.lr_milestones and pretrain.lr_ratios differ in length")
    e = cfg.experiment
    for m in e.methods:
        if m not in METHODS:
            raise ConfigError(f"experiment.methods: unknown method {m!r}")
    for ens in e.ensembles:
        if ens != DEFAULT_ENSEMBLE and ens not in {m.value for m in EnsembleMode}:
            raise ConfigError(f"experiment.ensembles: unknown ensemble {ens!r}")
    if not e.intervals or min(e.intervals) < 1:
        raise ConfigError("experiment.intervals must list positive integers")
    try:
        cfg.tta_config(e.methods[0] if e.methods else METHODS[0])
    except ValueError as exc:
        raise ConfigError(f"tta: {exc}") from exc


# ---------------------------------------------------------------------------
# text form


def _format(value) -> str:
    if isinstance(value, tuple):
        return ",".join(_format(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    if value is None:
        return "none"
    return str(value)


def _convert(text: str, default, where: str):
    text = text.strip()
    try:
        if isinstance(default, bool):
            if text.lower() not in ("true", "false"):
                raise ValueError(text)
            return text.lower() == "true"
        if isinstance(default, tuple):
            items = [t.strip() for t in text.split(",") if t.strip()]
            proto = default[0] if default else ""
            return tuple(_convert(t, proto, where) for t in items)
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        return text
    except ValueError:
        raise ConfigError(f"{where}: cannot parse {text!r} as {type(default).__name__}") from None


def loads(text: str) -> ExperimentConfig:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"config syntax: {exc}") from None
    if parser.defaults():
        raise ConfigError("keys outside any section are not allowed")
    sections = {}
    for name in parser.sections():
        if name not in SECTIONS:
            raise ConfigError(f"unknown section [{name}]")
        default = SECTIONS[name]
        known = {f.name: getattr(default, f.name) for f in fields(default)}
        values = {}
        for key, raw in parser.items(name):
            if key not in known:
                raise ConfigError(f"unknown key {name}.{key}")
            values[key] = _convert(raw, known[key], f"{name}.{key}")
        try:
            sections[name] = replace(default, **values)
        except ValueError as exc:
            raise ConfigError(f"[{name}] {exc}") from None
    try:
        return ExperimentConfig(**sections)
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def dumps(cfg: ExperimentConfig) -> str:
    out = []
    for name in SECTIONS:
        section = getattr(cfg, name)
        out.append(f"[{name}]")
        out += [f"{f.name} = {_format(getattr(section, f.name))}" for f in fields(section)]
        out.append("")
    return "\n".join(out)


def load(path) -> ExperimentConfig:
    # a missing or unreadable file surfaces as OSError (an I/O failure, not a config error)
    return loads(Path(path).read_text())


def save(cfg: ExperimentConfig, path) -> None:
    Path(path).write_text(dumps(cfg))
