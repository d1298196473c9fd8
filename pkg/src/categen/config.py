"""Experiment configuration: one structured YAML file, strict keys, CLI overrides."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .discriminator import DiscriminatorConfig
from .evaluation import ClassifierConfig
from .generator import GeneratorConfig, TemperatureSchedule
from .training import LossWeights, TrainingConfig


class ConfigError(ValueError):
    """Invalid, unknown, or missing configuration values."""


@dataclass
class DataSection:
    train: str = ""
    valid: str = ""
    test: str = ""
    max_len: int = 10
    min_freq: int = 1


@dataclass
class GeneratorSection:
    embed_dim: int = 64
    cat_embed_dim: int = 32
    n_encoder_layers: int = 2
    n_attn_heads: int = 2
    attn_hidden: int = 64
    ffn_hidden: int = 256
    rmc_slots: int = 2
    rmc_heads: int = 2
    rmc_head_size: int = 256
    noise_dim: int = 64


@dataclass
class DiscriminatorSection:
    embed_dim: int = 64
    n_encoder_layers: int = 2
    n_attn_heads: int = 2
    attn_hidden: int = 64
    ffn_hidden: int = 256
    gradient_penalty: float = 0.0


@dataclass
class TemperatureSection:
    kind: str = "exponential"
    start: float = 1.0
    end: float = 100.0


@dataclass
class TrainingSection:
    batch_size: int = 32
    learning_rate: float = 1e-4
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    g_steps: int = 1
    d_steps: int = 1
    pretrain_epochs_g: int = 50
    pretrain_epochs_d: int = 5
    adversarial_iterations: int = 2000
    label_flip_prob: float = 0.05
    checkpoint_every: int = 500
    early_stop_every: int = 0
    early_stop_patience: int = 3
    early_stop_min_delta: float = 0.0


@dataclass
class LossSection:
    adversarial: float = 1.0
    classification: float = 1.0


@dataclass
class ClassifierSection:
    embed_dim: int = 64
    n_layers: int = 2
    n_attn_heads: int = 2
    attn_hidden: int = 64
    ffn_hidden: int = 256
    learning_rate: float = 1e-4
    batch_size: int = 32
    train_steps: int = 500


@dataclass
class EvaluationSection:
    n_samples_per_category: int = 1000
    nll_samples: int = 1000
    nll_contexts: int = 8
    nll_batch_size: int = 32
    generation_mode: str = "sample"


@dataclass
class AugmentSection:
    n_synth_per_class: int = 100
    runs: int = 10


@dataclass
class ExperimentConfig:
    seed: int = 0
    output_dir: str = "runs/experiment"
    threads: int = 1
    data: DataSection = field(default_factory=DataSection)
    generator: GeneratorSection = field(default_factory=GeneratorSection)
    discriminator: DiscriminatorSection = field(default_factory=DiscriminatorSection)
    temperature: TemperatureSection = field(default_factory=TemperatureSection)
    training: TrainingSection = field(default_factory=TrainingSection)
    loss_weights: LossSection = field(default_factory=LossSection)
    classifier: ClassifierSection = field(default_factory=ClassifierSection)
    evaluation: EvaluationSection = field(default_factory=EvaluationSection)
    augment: AugmentSection = field(default_factory=AugmentSection)

    # --- builders for module-level configs -----------------------------------

    def generator_config(self, vocab_size: int, n_categories: int) -> GeneratorConfig:
        cfg = GeneratorConfig(
            vocab_size=vocab_size, n_categories=n_categories, max_len=self.data.max_len,
            **dataclasses.asdict(self.generator),
        )
        cfg.validate()
        return cfg

    def discriminator_config(self, vocab_size: int, n_categories: int) -> DiscriminatorConfig:
        cfg = DiscriminatorConfig(
            vocab_size=vocab_size, n_categories=n_categories, max_len=self.data.max_len,
            **dataclasses.asdict(self.discriminator),
        )
        cfg.validate()
        return cfg

    def training_config(self) -> TrainingConfig:
        cfg = TrainingConfig(seed=self.seed, **dataclasses.asdict(self.training))
        cfg.validate()
        return cfg

    def schedule(self) -> TemperatureSchedule:
        sched = TemperatureSchedule(
            kind=self.temperature.kind, start=self.temperature.start, end=self.temperature.end,
            horizon=max(1, self.training.adversarial_iterations),
        )
        sched.validate()
        return sched

    def weights(self) -> LossWeights:
        w = LossWeights(
            adversarial=self.loss_weights.adversarial,
            classification=self.loss_weights.classification,
        )
        w.validate()
        return w

    def classifier_config(self) -> ClassifierConfig:
        cfg = ClassifierConfig(**dataclasses.asdict(self.classifier))
        cfg.validate()
        return cfg

    def validate(self) -> None:
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")
        for name in ("train", "valid", "test"):
            if not getattr(self.data, name):
                raise ConfigError(f"data.{name} path is required")
        if self.data.max_len < 3:
            raise ConfigError("data.max_len must be >= 3")
        if self.evaluation.generation_mode not in ("sample", "argmax"):
            raise ConfigError("evaluation.generation_mode must be 'sample' or 'argmax'")
        try:
            self.training_config()
            self.schedule()
            self.weights()
            self.classifier_config()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc


_SECTION_TYPES = {f.name: f.type for f in dataclasses.fields(ExperimentConfig)}


def _build_section(cls, values: dict, path: str):
    known = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in values.items():
        if key not in known:
            raise ConfigError(f"unknown config key {path}.{key}" if path else f"unknown config key {key}")
        kwargs[key] = _coerce(value, known[key], f"{path}.{key}" if path else key)
    return cls(**kwargs)


def _coerce(value, field_spec, path: str):
    target = field_spec.type
    if target in ("int", int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path}: expected an integer, got {value!r}")
        return value
    if target in ("float", float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected a number, got {value!r}")
        return float(value)
    if target in ("str", str):
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected a string, got {value!r}")
        return value
    raise ConfigError(f"{path}: unsupported field type {target!r}")


def config_from_dict(raw: dict) -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a mapping")
    scalars, sections = {}, {}
    for key, value in raw.items():
        if key not in _SECTION_TYPES:
            raise ConfigError(f"unknown config key {key}")
        if isinstance(value, dict):
            sections[key] = value
        else:
            scalars[key] = value
    top_fields = {f.name: f for f in dataclasses.fields(ExperimentConfig)}
    kwargs = {}
    for key, value in scalars.items():
        if dataclasses.is_dataclass(_section_class(key)):
            raise ConfigError(f"{key} must be a mapping")
        kwargs[key] = _coerce(value, top_fields[key], key)
    for key, value in sections.items():
        cls = _section_class(key)
        if not dataclasses.is_dataclass(cls):
            raise ConfigError(f"{key} must be a scalar")
        kwargs[key] = _build_section(cls, value, key)
    return ExperimentConfig(**kwargs)


def _section_class(name: str):
    mapping = {
        "data": DataSection,
        "generator": GeneratorSection,
        "discriminator": DiscriminatorSection,
        "temperature": TemperatureSection,
        "training": TrainingSection,
        "loss_weights": LossSection,
        "classifier": ClassifierSection,
        "evaluation": EvaluationSection,
        "augment": AugmentSection,
    }
    return mapping.get(name, str)


def config_to_dict(config: ExperimentConfig) -> dict:
    return dataclasses.asdict(config)


def load_config(path: str | Path, overrides: list[str] | None = None) -> ExperimentConfig:
    try:
        raw = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML: {exc}") from exc
    if raw is None:
        raw = {}
    for override in overrides or []:
        raw = _apply_override(raw, override)
    config = config_from_dict(raw)
    config.validate()
    return config


def _apply_override(raw: dict, override: str) -> dict:
    """Apply 'section.key=value' (value parsed as YAML); flags win over the file."""
    key, sep, text = override.partition("=")
    if not sep or not key:
        raise ConfigError(f"override must look like section.key=value, got {override!r}")
    try:
        value = yaml.safe_load(text)
    except yaml.YAMLError:
        value = text
    node = raw
    parts = key.split(".")
    for part in parts[:-1]:
        nxt = node.setdefault(part, {})
        if not isinstance(nxt, dict):
            raise ConfigError(f"cannot override scalar {part!r} with a mapping")
        node = nxt
    node[parts[-1]] = value
    return raw
