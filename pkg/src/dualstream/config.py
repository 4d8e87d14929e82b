"""
Flat ``key = value`` experiment configuration.

Lines are ``key = value``; ``#`` starts a comment; blank lines are ignored.
Unknown keys, duplicate keys and values that fail validation raise
:class:`~dualstream.errors.ConfigError` naming the line and key.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Union

from .errors import ConfigError


def _opt(default, doc: str):
    return field(default=default, metadata={"doc": doc})


@dataclass(frozen=True)
class Config:
    # data
    seed: int = _opt(0, "master seed for weights and the training step stream")
    corpus_size: int = _opt(100, "number of synthetic training clips")
    corpus_seed: int = _opt(0, "seed of the synthetic corpus")
    frames: int = _opt(8, "frames per clip (L)")
    image_size: int = _opt(64, "square frame size in pixels")
    # codec
    codec_mode: str = _opt("learned", "'learned' autoencoder or 'identity' pixels")
    latent_channels: int = _opt(8, "latent channels of the learned codec")
    codec_width: int = _opt(32, "hidden width of the codec")
    codec_epochs: int = _opt(20, "codec training epochs")
    codec_lr: float = _opt(2e-3, "codec learning rate")
    codec_batch: int = _opt(32, "frames per codec batch")
    # diffusion
    T: int = _opt(50, "diffusion steps")
    beta_start: float = _opt(0.001, "noise variance at step 1")
    beta_end: float = _opt(0.2, "noise variance at step T")
    # text
    max_tokens: int = _opt(8, "prompt length after padding")
    text_dim: int = _opt(64, "text encoder width")
    text_layers: int = _opt(2, "text encoder layers")
    text_heads: int = _opt(4, "text encoder attention heads")
    # networks
    content_width: int = _opt(32, "content U-Net top-level width")
    motion_width: int = _opt(16, "motion U-Net top-level width")
    heads: int = _opt(4, "attention heads inside both U-Nets")
    exchange_dim: int = _opt(32, "inner width of the cross-stream attention")
    exchange_heads: int = _opt(4, "heads of the cross-stream attention")
    rank: int = _opt(4, "rank of the low-rank increments")
    adapter_scale: float = _opt(1.0, "strength of the low-rank increments")
    motion_reduction: int = _opt(4, "channel reduction inside the motion decomposer/combiner")
    # training
    base_steps: int = _opt(1200, "content-base pretraining steps before the joint phase")
    base_lr: float = _opt(2e-3, "content-base pretraining learning rate")
    base_batch: int = _opt(16, "frames per content-base batch, each from its own clip and step")
    steps: int = _opt(500, "joint training steps")
    batch_size: int = _opt(2, "clips per training batch")
    lr: float = _opt(1e-3, "joint-phase learning rate")
    adam_beta1: float = _opt(0.9, "Adam first-moment decay")
    adam_beta2: float = _opt(0.999, "Adam second-moment decay")
    adam_eps: float = _opt(1e-8, "Adam denominator offset")
    w_con: float = _opt(1.0, "weight of the content loss")
    w_mot: float = _opt(1.0, "weight of the motion loss")
    w_comb: float = _opt(1.0, "weight of the combiner reconstruction loss")
    comb_noise: float = _opt(0.3, "latent noise std seen by the combiner during training")
    freeze_motion_stream: bool = _opt(False, "keep the motion U-Net at its initial weights")
    # sampling and evaluation
    sample_steps: int = _opt(50, "reverse steps used by sample/ablate (<= T)")
    embedder_dim: int = _opt(32, "frame/prompt embedding width")
    embedder_corpus_size: int = _opt(400, "synthetic clips the evaluation embedder is trained on")
    embedder_epochs: int = _opt(20, "embedder training epochs")
    embedder_lr: float = _opt(2e-3, "embedder learning rate")
    embedder_temperature: float = _opt(0.1, "contrastive softmax temperature")

    def __post_init__(self):
        for f in fields(self):
            value = getattr(self, f.name)
            if f.type in ("int", "float") and isinstance(value, bool):
                raise ConfigError(f"{f.name}: expected a number, got {value!r}")
        positive = ("corpus_size", "frames", "image_size", "latent_channels", "codec_width",
                    "codec_epochs", "codec_batch", "T", "max_tokens", "text_dim", "text_layers",
                    "text_heads", "content_width", "motion_width", "heads", "exchange_dim",
                    "exchange_heads", "rank", "motion_reduction", "steps", "batch_size", "base_batch",
                    "sample_steps", "embedder_dim", "embedder_corpus_size",
                    "embedder_epochs")
        for name in positive:
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        for name in ("codec_lr", "base_lr", "lr", "embedder_lr", "embedder_temperature", "adam_eps"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be > 0, got {getattr(self, name)}")
        for name in ("base_steps",):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0, got {getattr(self, name)}")
        for name in ("adapter_scale", "w_con", "w_mot", "w_comb", "comb_noise"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0, got {getattr(self, name)}")
        for name in ("adam_beta1", "adam_beta2"):
            if not 0 <= getattr(self, name) < 1:
                raise ConfigError(f"{name} must lie in [0, 1), got {getattr(self, name)}")
        if not 0 < self.beta_start <= self.beta_end < 1:
            raise ConfigError(f"beta_start/beta_end: need 0 < start <= end < 1, got {self.beta_start}, {self.beta_end}")
        if self.codec_mode not in ("learned", "identity"):
            raise ConfigError(f"codec_mode must be 'learned' or 'identity', got {self.codec_mode!r}")
        if self.frames < 2:
            raise ConfigError(f"frames must be >= 2, got {self.frames}")
        if self.sample_steps > self.T:
            raise ConfigError(f"sample_steps ({self.sample_steps}) must not exceed T ({self.T})")
        if self.image_size % 8:
            raise ConfigError(f"image_size must be divisible by 8, got {self.image_size}")
        latent = self.latent_channels if self.codec_mode == "learned" else 3
        if latent % self.motion_reduction:
            raise ConfigError(f"motion_reduction {self.motion_reduction} must divide {latent} latent channels")

    def replace(self, **changes) -> "Config":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_json(cls, text: str) -> "Config":
        data = json.loads(text)
        unknown = set(data) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(f"unknown configuration keys {sorted(unknown)}")
        return cls(**data)

    def hash(self) -> str:
        """sha256 of the canonical JSON form."""
        return hashlib.sha256(self.to_json().encode()).hexdigest()

    @property
    def latent_channels_effective(self) -> int:
        return self.latent_channels if self.codec_mode == "learned" else 3


def _convert(raw: str, kind: str, key: str, where: str):
    try:
        if kind == "bool":
            low = raw.lower()
            if low in ("true", "yes", "1", "on"):
                return True
            if low in ("false", "no", "0", "off"):
                return False
            raise ValueError(raw)
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"{where}: key '{key}' expects {kind}, got {raw!r}") from None


def parse_config(text: str, source: str = "<config>") -> Config:
    """Parse ``key = value`` text; missing keys take their defaults."""
    kinds = {f.name: f.type for f in fields(Config)}
    values: dict = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        where = f"{source}:{lineno}"
        if "=" not in body:
            raise ConfigError(f"{where}: expected 'key = value', got {body!r}")
        key, raw = (s.strip() for s in body.split("=", 1))
        if key not in kinds:
            raise ConfigError(f"{where}: unknown key '{key}'")
        if key in values:
            raise ConfigError(f"{where}: duplicate key '{key}'")
        values[key] = _convert(raw, kinds[key], key, where)
    try:
        return Config(**values)
    except ConfigError as err:
        key = str(err).split(" ", 1)[0].rstrip(":")
        line = next((i for i, l in enumerate(text.splitlines(), 1)
                     if l.split("#", 1)[0].split("=", 1)[0].strip() == key), None)
        prefix = f"{source}:{line}: " if line else f"{source}: "
        raise ConfigError(prefix + str(err)) from None


def load_config(path: Union[str, Path, None]) -> Config:
    """Read a config file (``None`` gives the defaults)."""
    if path is None:
        return Config()
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as err:
        raise ConfigError(f"cannot read config {path}: {err}") from None
    return parse_config(text, str(path))


def render_config(config: Config) -> str:
    """The config as ``key = value`` text that :func:`parse_config` reads back."""
    lines = []
    for f in fields(Config):
        value = getattr(config, f.name)
        text = str(value).lower() if isinstance(value, bool) else repr(value) if isinstance(value, float) else str(value)
        lines.append(f"{f.name} = {text}  # {f.metadata['doc']}")
    return "\n".join(lines) + "\n"


def describe_defaults() -> str:
    """One line per key with its default, for ``--help``."""
    return "\n".join(f"  {f.name} = {f.default}  ({f.metadata['doc']})" for f in fields(Config))
