"""Run configuration: flat key=value text with dotted section prefixes.

An empty file (or no file) yields the full default configuration.
Unknown keys, unparsable values, and constraint violations raise
ConfigError naming the key and, for parse-level problems, the line.
Fractions like 1/255 are accepted wherever a float is expected.

serialize_config writes every key in a fixed order with round-trippable
values, so parse(serialize(cfg)) reproduces cfg exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .attacks import AttackConfig
from .datasets import SyntheticSpec, default_shifts
from .errors import ConfigError
from .models import EncoderSpec
from .training import TrainConfig


def _parse_float(text: str) -> float:
    if "/" in text:
        num, _, den = text.partition("/")
        return float(num.strip()) / float(den.strip())
    return float(text)


def _parse_int(text: str) -> int:
    return int(text, 0)


def _parse_bool(text: str) -> bool:
    low = text.lower()
    if low in ("true", "1", "yes"):
        return True
    if low in ("false", "0", "no"):
        return False
    raise ValueError(f"expected a boolean, got '{text}'")


def _parse_int_tuple(text: str) -> tuple[int, ...]:
    text = text.strip()
    if not text or text.lower() == "none":
        return ()
    return tuple(int(part.strip()) for part in text.split(","))


def _parse_opt_int(text: str):
    return None if text.lower() == "none" else int(text, 0)


def _parse_opt_float(text: str):
    return None if text.lower() == "none" else _parse_float(text)


def _parse_str(text: str) -> str:
    return text


@dataclass
class RunConfig:
    seed: int = 42
    # synthetic data
    num_classes: int = 10
    side: int = 16
    train_per_class: int = 400
    test_per_class: int = 100
    noise_sigma: float = 0.02
    class_offset_scale: float = 0.0045
    jitter: float = 0.05
    brightness: float = 0.1
    permutation_seed: int | None = 1234
    # model geometry
    embed_dim: int = 32
    temperature: float = 10.0
    target_hidden: tuple[int, ...] = (64,)
    target_activation: str = "relu"
    proxy_hidden: tuple[int, ...] = (128, 128)
    proxy_activation: str = "tanh"
    # pretraining of the stand-ins; the proxy stops early enough that
    # white-box attacks still land on it, or cross-model transfer inverts
    pretrain_epochs: int = 200
    pretrain_lr: float = 0.003
    pretrain_proxy_epochs: int = 120
    pretrain_proxy_lr: float = 0.01
    pretrain_batch_size: int = 64
    # fine-tuning schedule; rates sit one decade below the full-scale
    # recipe, matched to the toy models' gradient magnitudes
    warmup_lr: float = 5e-4
    hpt_lr: float = 5e-3
    warmup_epochs: int = 5
    hpt_epochs: int = 5
    train_batch_size: int = 64
    gamma: float = 0.9
    beta: float = 0.5
    freeze_text: bool = False
    hpt_init: str = "vanilla"
    ard_alpha: float = 1.0
    log_eval_samples: int = 256
    # attacks
    train_epsilon: float = 1.0 / 255.0
    train_steps: int = 2
    train_step_size: float | None = None
    eval_epsilon: float = 1.0 / 255.0
    eval_steps: int = 10
    eval_step_size: float | None = None

    @property
    def input_dim(self) -> int:
        return self.side * self.side

    def synthetic_spec(self) -> SyntheticSpec:
        return SyntheticSpec(
            num_classes=self.num_classes,
            side=self.side,
            train_per_class=self.train_per_class,
            test_per_class=self.test_per_class,
            noise_sigma=self.noise_sigma,
            class_offset_scale=self.class_offset_scale,
            shifts=default_shifts(jitter=self.jitter, brightness=self.brightness,
                                  permutation_seed=self.permutation_seed),
        )

    def target_image_spec(self) -> EncoderSpec:
        return EncoderSpec(input_dim=self.input_dim, hidden_dims=self.target_hidden,
                           embed_dim=self.embed_dim, activation=self.target_activation)

    def proxy_image_spec(self) -> EncoderSpec:
        return EncoderSpec(input_dim=self.input_dim, hidden_dims=self.proxy_hidden,
                           embed_dim=self.embed_dim, activation=self.proxy_activation)

    def target_text_spec(self) -> EncoderSpec:
        # the text tower mirrors its image tower's hidden stack
        return EncoderSpec(input_dim=self.num_classes, hidden_dims=self.target_hidden,
                           embed_dim=self.embed_dim, activation=self.target_activation)

    def proxy_text_spec(self) -> EncoderSpec:
        return EncoderSpec(input_dim=self.num_classes, hidden_dims=self.proxy_hidden,
                           embed_dim=self.embed_dim, activation=self.proxy_activation)

    def train_attack(self) -> AttackConfig:
        return AttackConfig(epsilon=self.train_epsilon, steps=self.train_steps,
                            step_size=self.train_step_size)

    def eval_attack(self) -> AttackConfig:
        return AttackConfig(epsilon=self.eval_epsilon, steps=self.eval_steps,
                            step_size=self.eval_step_size)

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            warmup_lr=self.warmup_lr,
            hpt_lr=self.hpt_lr,
            warmup_epochs=self.warmup_epochs,
            hpt_epochs=self.hpt_epochs,
            batch_size=self.train_batch_size,
            gamma=self.gamma,
            beta=self.beta,
            train_attack=self.train_attack(),
            eval_attack=self.eval_attack(),
            seed=self.seed,
            freeze_text=self.freeze_text,
            hpt_init=self.hpt_init,
            ard_alpha=self.ard_alpha,
            log_eval_samples=self.log_eval_samples,
        )

    def validate(self) -> "RunConfig":
        """Constraint checks beyond type parsing; raises ConfigError."""
        if int(self.seed) != self.seed:
            raise ConfigError(f"seed must be an integer, got {self.seed}")
        for name in ("pretrain_epochs", "pretrain_proxy_epochs", "pretrain_batch_size"):
            v = getattr(self, name)
            if int(v) != v or v < 1:
                raise ConfigError(f"{name} must be a positive integer, got {v}")
        for name in ("pretrain_lr", "pretrain_proxy_lr"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0:
                raise ConfigError(f"{name} must be finite and >= 0, got {v}")
        if not np.isfinite(self.temperature) or self.temperature <= 0:
            raise ConfigError(f"temperature must be finite and positive, "
                              f"got {self.temperature}")
        # these constructors carry the detailed range checks
        self.synthetic_spec()
        self.target_image_spec()
        self.proxy_image_spec()
        self.target_text_spec()
        self.proxy_text_spec()
        self.train_config()
        return self


# key -> (RunConfig attribute, value parser)
CONFIG_KEYS: dict[str, tuple[str, callable]] = {
    "seed": ("seed", _parse_int),
    "data.num_classes": ("num_classes", _parse_int),
    "data.side": ("side", _parse_int),
    "data.train_per_class": ("train_per_class", _parse_int),
    "data.test_per_class": ("test_per_class", _parse_int),
    "data.noise_sigma": ("noise_sigma", _parse_float),
    "data.class_offset_scale": ("class_offset_scale", _parse_float),
    "data.jitter": ("jitter", _parse_float),
    "data.brightness": ("brightness", _parse_float),
    "data.permutation_seed": ("permutation_seed", _parse_opt_int),
    "model.embed_dim": ("embed_dim", _parse_int),
    "model.temperature": ("temperature", _parse_float),
    "model.target.hidden_dims": ("target_hidden", _parse_int_tuple),
    "model.target.activation": ("target_activation", _parse_str),
    "model.proxy.hidden_dims": ("proxy_hidden", _parse_int_tuple),
    "model.proxy.activation": ("proxy_activation", _parse_str),
    "pretrain.epochs": ("pretrain_epochs", _parse_int),
    "pretrain.proxy_epochs": ("pretrain_proxy_epochs", _parse_int),
    "pretrain.lr": ("pretrain_lr", _parse_float),
    "pretrain.proxy_lr": ("pretrain_proxy_lr", _parse_float),
    "pretrain.batch_size": ("pretrain_batch_size", _parse_int),
    "train.warmup_lr": ("warmup_lr", _parse_float),
    "train.hpt_lr": ("hpt_lr", _parse_float),
    "train.warmup_epochs": ("warmup_epochs", _parse_int),
    "train.hpt_epochs": ("hpt_epochs", _parse_int),
    "train.batch_size": ("train_batch_size", _parse_int),
    "train.gamma": ("gamma", _parse_float),
    "train.beta": ("beta", _parse_float),
    "train.freeze_text": ("freeze_text", _parse_bool),
    "train.hpt_init": ("hpt_init", _parse_str),
    "train.ard_alpha": ("ard_alpha", _parse_float),
    "train.log_eval_samples": ("log_eval_samples", _parse_int),
    "attack.train.epsilon": ("train_epsilon", _parse_float),
    "attack.train.steps": ("train_steps", _parse_int),
    "attack.train.step_size": ("train_step_size", _parse_opt_float),
    "attack.eval.epsilon": ("eval_epsilon", _parse_float),
    "attack.eval.steps": ("eval_steps", _parse_int),
    "attack.eval.step_size": ("eval_step_size", _parse_opt_float),
}


def parse_config_text(text: str) -> RunConfig:
    values: dict[str, object] = {}
    seen: dict[str, int] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value, got '{raw.strip()}'")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if key not in CONFIG_KEYS:
            raise ConfigError(f"line {lineno}: unknown key '{key}'")
        if key in seen:
            raise ConfigError(f"line {lineno}: duplicate key '{key}' "
                              f"(first set on line {seen[key]})")
        seen[key] = lineno
        attr, parser = CONFIG_KEYS[key]
        try:
            values[attr] = parser(value)
        except (ValueError, ZeroDivisionError) as exc:
            raise ConfigError(f"line {lineno}: bad value for '{key}': {exc}") from exc
    return RunConfig(**values).validate()


def parse_config(path) -> RunConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config_text(fh.read())


def _format_value(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value) if value else "none"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def serialize_config(cfg: RunConfig) -> str:
    lines = []
    for key, (attr, _) in CONFIG_KEYS.items():
        lines.append(f"{key} = {_format_value(getattr(cfg, attr))}")
    return "\n".join(lines) + "\n"
