"""
Frame-wise encoder/decoder between pixel videos and content latents.

``identity`` mode passes pixels through unchanged (latent channels = 3);
``learned`` mode is a convolutional autoencoder (64x64x3 <-> 16x16x8 by
default; space-to-depth in, depth-to-space out, one strided conv between)
that must be trained with :func:`train_codec` before use and is frozen
afterwards.  The decoder output is linear; :meth:`FrameCodec.decode` clamps.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import ConfigError, DimensionError, StateError, TrainingError
from .nn import Adam, Conv2d, Module
from .tensor import Tensor


class _Encoder(Module):
    def __init__(self, latent_channels: int, width: int, rng, dtype):
        self.c1 = Conv2d(12, width, 3, rng, dtype=dtype)
        self.c2 = Conv2d(width, width, 3, rng, stride=2, dtype=dtype)
        self.c3 = Conv2d(width, width, 3, rng, dtype=dtype)
        self.c4 = Conv2d(width, latent_channels, 1, rng, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        h = T.silu(self.c1(T.space_to_depth(x, 2)))
        h = T.silu(self.c2(h))
        h = T.silu(self.c3(h))
        return self.c4(h)


class _Decoder(Module):
    def __init__(self, latent_channels: int, width: int, rng, dtype):
        self.c1 = Conv2d(latent_channels, width, 1, rng, dtype=dtype)
        self.c2 = Conv2d(width, width, 3, rng, dtype=dtype)
        self.c3 = Conv2d(width, width, 3, rng, dtype=dtype)
        self.c4 = Conv2d(width, 12, 3, rng, dtype=dtype)

    def forward(self, z: Tensor) -> Tensor:
        h = T.silu(self.c1(z))
        h = T.silu(self.c2(h))
        h = T.silu(self.c3(T.upsample_nearest(h, 2, (2, 3))))
        return T.depth_to_space(self.c4(h), 2)


class FrameCodec(Module):
    """Per-frame codec; every frame is mapped independently of the others."""

    _buffers = ("latent_scale", "trained")

    def __init__(self, mode: str = "learned", latent_channels: int = 8, image_size: int = 64,
                 width: int = 32, seed: int = 0, dtype=np.float32):
        if mode not in ("identity", "learned"):
            raise ConfigError(f"codec mode must be 'identity' or 'learned', got {mode!r}")
        if image_size % 4:
            raise ConfigError(f"image size {image_size} must be divisible by 4")
        self.mode = mode
        self.image_size = image_size
        self.latent_scale = np.array(1.0)
        if mode == "identity":
            self.latent_channels, self.latent_size = 3, image_size
            self.trained = np.array(1)
        else:
            rng = np.random.default_rng(seed)
            self.latent_channels, self.latent_size = latent_channels, image_size // 4
            self.encoder = _Encoder(latent_channels, width, rng, dtype)
            self.decoder = _Decoder(latent_channels, width, rng, dtype)
            self.trained = np.array(0)

    @property
    def latent_shape(self) -> tuple[int, int, int]:
        return self.latent_channels, self.latent_size, self.latent_size

    def _require_ready(self):
        if not int(self.trained):
            raise StateError("learned codec has not been trained; run train_codec first")

    def encode(self, video: np.ndarray, chunk: int = 64) -> np.ndarray:
        """``[B, L, 3, H, W]`` pixels -> ``[B, L, C, h, w]`` latents."""
        video = np.asarray(video, dtype=np.float32)
        if video.ndim != 5 or video.shape[2:] != (3, self.image_size, self.image_size):
            raise DimensionError(f"expected [B, L, 3, {self.image_size}, {self.image_size}], got {video.shape}")
        if self.mode == "identity":
            return video.copy()
        self._require_ready()
        frames = video.reshape((-1,) + video.shape[2:])
        with T.no_grad():
            out = np.concatenate([self.encoder(Tensor(frames[i:i + chunk])).data
                                  for i in range(0, len(frames), chunk)])
        out = out * np.float32(self.latent_scale)
        return out.reshape(video.shape[:2] + self.latent_shape)

    def decode(self, latents: np.ndarray, chunk: int = 64) -> np.ndarray:
        """``[B, L, C, h, w]`` latents -> ``[B, L, 3, H, W]`` pixels clamped to [0, 1]."""
        latents = np.asarray(latents, dtype=np.float32)
        if latents.ndim != 5 or latents.shape[2:] != self.latent_shape:
            raise DimensionError(f"expected latents [B, L, {self.latent_shape}], got {latents.shape}")
        if self.mode == "identity":
            return np.clip(latents, 0.0, 1.0)
        self._require_ready()
        frames = latents.reshape((-1,) + self.latent_shape) / np.float32(self.latent_scale)
        with T.no_grad():
            out = np.concatenate([self.decoder(Tensor(frames[i:i + chunk])).data
                                  for i in range(0, len(frames), chunk)])
        out = out.reshape(latents.shape[:2] + (3, self.image_size, self.image_size))
        return np.clip(out, 0.0, 1.0)

    def reconstruction_mse(self, video: np.ndarray) -> float:
        return float(np.mean((self.decode(self.encode(video)) - np.asarray(video)) ** 2))


@dataclass
class CodecReport:
    epoch_losses: list = field(default_factory=list)
    halted: bool = False
    reason: str = ""


def train_codec(codec: FrameCodec, videos: np.ndarray, epochs: int = 20, lr: float = 2e-3,
                batch_size: int = 32, seed: int = 0) -> CodecReport:
    """Fit the autoencoder on all frames of ``videos`` (``[N, L, 3, H, W]``) and freeze it.

    Training stops early, keeping the previous epoch's weights, if an epoch's
    mean loss fails to improve on the one before.  The latent scale is then
    set so encoded latents have unit standard deviation.
    """
    if codec.mode != "learned":
        raise ConfigError("only the learned codec mode is trainable")
    videos = np.asarray(videos, dtype=np.float32)
    if videos.size == 0:
        raise ConfigError("codec training corpus is empty")
    frames = videos.reshape((-1,) + videos.shape[2:])
    rng = np.random.default_rng(seed)
    codec.encoder.unfreeze()
    codec.decoder.unfreeze()
    codec.latent_scale = np.array(1.0)
    params = codec.encoder.parameters() + codec.decoder.parameters()
    opt = Adam(params, lr=lr)
    report = CodecReport()
    snapshot = [p.data.copy() for p in params]
    for epoch in range(epochs):
        order = rng.permutation(len(frames))
        losses = []
        for i in range(0, len(order), batch_size):
            x = Tensor(frames[order[i:i + batch_size]])
            opt.zero_grad()
            loss = T.mse(codec.decoder(codec.encoder(x)), x)
            if not np.isfinite(loss.data):
                raise TrainingError(f"codec loss is {loss.item()} at epoch {epoch}, batch {i // batch_size}")
            loss.backward()
            opt.step()
            losses.append(loss.item())
        mean_loss = float(np.mean(losses))
        if report.epoch_losses and mean_loss >= report.epoch_losses[-1]:
            for p, saved in zip(params, snapshot):
                p.data = saved
            report.halted = True
            report.reason = (f"epoch {epoch} mean loss {mean_loss:.6f} did not improve on "
                             f"{report.epoch_losses[-1]:.6f}; kept previous weights")
            break
        report.epoch_losses.append(mean_loss)
        snapshot = [p.data.copy() for p in params]
    codec.freeze()
    codec.trained = np.array(1)
    with T.no_grad():
        z = np.concatenate([codec.encoder(Tensor(frames[i:i + 64])).data for i in range(0, len(frames), 64)])
    codec.latent_scale = np.array(1.0 / max(float(z.std()), 1e-6))
    return report
