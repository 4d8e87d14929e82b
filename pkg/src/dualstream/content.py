"""
Content stream: a per-frame 2-D denoising U-Net with frozen base weights and
trainable low-rank increments on its attention projections.

Every frame is processed independently by the 2-D blocks.  The only coupling
between frames comes from the cross-stream exchange, which the U-Net exposes
by yielding its features at four exchange points (see :meth:`ContentUNet.stages`).
"""
from __future__ import annotations

from typing import Generator

import numpy as np

from . import tensor as T
from .attention import Attention
from .blocks import ResBlock, TimeEmbedding
from .errors import ConfigError, DimensionError, NumericalError, TrainingError
from .nn import Conv2d, GroupNorm, LayerNorm, Linear, Module
from .schedule import q_sample
from .tensor import Tensor
from .text import PromptEmbedding

EXCHANGE_POINTS = ("down0", "down1", "up1", "up0")


class LowRankAdapter(Module):
    """Increment ``scale * A @ B.T`` for an ``m x n`` weight; ``A`` starts at zero."""

    def __init__(self, m: int, n: int, rank: int, scale: float, rng, dtype=np.float32):
        if rank < 1 or rank >= min(m, n):
            raise ConfigError(f"adapter rank {rank} must satisfy 1 <= rank < min({m}, {n})")
        if scale < 0:
            raise ConfigError(f"adapter scale must be >= 0, got {scale}")
        self.scale = float(scale)
        self.A = Tensor(np.zeros((m, rank), dtype=dtype), requires_grad=True)
        self.B = Tensor(rng.normal(0.0, 1.0 / rank, size=(n, rank)).astype(dtype), requires_grad=True)

    @property
    def rank(self) -> int:
        return self.A.shape[1]


def apply_adapter(weight: Tensor, adapter: LowRankAdapter) -> Tensor:
    """Merged weight ``W + scale * A @ B.T``; returns ``weight`` itself when ``scale == 0``."""
    m, n = weight.shape
    if adapter.A.shape[0] != m or adapter.B.shape[0] != n:
        raise DimensionError(f"adapter factors {adapter.A.shape}, {adapter.B.shape} do not fit weight {weight.shape}")
    if adapter.rank >= min(m, n):
        raise ConfigError(f"adapter rank {adapter.rank} must be below min({m}, {n})")
    if adapter.scale == 0.0:
        return weight
    return weight + adapter.scale * T.matmul(adapter.A, T.transpose(adapter.B))


class AdaptedLinear(Module):
    """Bias-free linear layer whose frozen weight carries a low-rank increment."""

    def __init__(self, fan_in: int, fan_out: int, rank: int, scale: float, rng,
                 zero: bool = False, dtype=np.float32):
        self.base = Linear(fan_in, fan_out, rng, bias=False, zero=zero, dtype=dtype)
        self.adapter = LowRankAdapter(fan_out, fan_in, rank, scale, rng, dtype)

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.base.weight.shape[1]:
            raise DimensionError(f"expected width {self.base.weight.shape[1]}, got {x.shape}")
        return T.matmul(x, T.transpose(apply_adapter(self.base.weight, self.adapter)))


class FrameTransformer(Module):
    """Per-frame spatial transformer: self-attention, text cross-attention, MLP."""

    def __init__(self, channels: int, context_dim: int, heads: int, rank: int, scale: float,
                 rng, dtype=np.float32):
        def make_linear(fi, fo, zero):
            return AdaptedLinear(fi, fo, min(rank, min(fi, fo) - 1), scale, rng, zero, dtype)

        self.norm_in = GroupNorm(channels, dtype=dtype)
        self.norm1 = LayerNorm(channels, dtype=dtype)
        self.self_attn = Attention(channels, channels, channels, heads, rng, make_linear, dtype=dtype)
        self.norm2 = LayerNorm(channels, dtype=dtype)
        self.text_attn = Attention(channels, context_dim, channels, heads, rng, make_linear, dtype=dtype)
        self.norm3 = LayerNorm(channels, dtype=dtype)
        self.fc1 = Linear(channels, 2 * channels, rng, dtype=dtype)
        self.fc2 = Linear(2 * channels, channels, rng, dtype=dtype)

    def forward(self, x: Tensor, context: PromptEmbedding) -> Tensor:
        n, c, h, w = x.shape
        tokens = T.transpose(T.reshape(self.norm_in(x), (n, c, h * w)), (0, 2, 1))
        tokens = tokens + self.self_attn(self.norm1(tokens))
        tokens = tokens + self.text_attn(self.norm2(tokens), context.tokens, context.mask)
        tokens = tokens + self.fc2(T.silu(self.fc1(self.norm3(tokens))))
        return x + T.reshape(T.transpose(tokens, (0, 2, 1)), (n, c, h, w))


class ContentUNet(Module):
    """Two-level 2-D U-Net predicting the noise in content latents ``[B, L, C, H, W]``.

    Parameters
    ----------
    channels : int
        Latent channels ``C``.
    width : int
        Channels at the top level; the lower level uses ``2 * width``.
    context_dim : int
        Width of the prompt token vectors.
    rank, scale : int, float
        Low-rank increment rank and strength on every attention projection.
    """

    def __init__(self, channels: int, width: int = 32, context_dim: int = 64, heads: int = 4,
                 rank: int = 4, scale: float = 1.0, seed: int = 0, dtype=np.float32):
        rng = np.random.default_rng(seed)
        w0, w1 = width, 2 * width
        temb = 4 * width
        self.channels = channels
        self.widths = (w0, w1, w1, w0)
        self.time = TimeEmbedding(width, temb, rng, dtype)
        self.conv_in = Conv2d(channels, w0, 3, rng, dtype=dtype)
        self.down0 = ResBlock(w0, w0, temb, rng, dtype=dtype)
        self.attn_down0 = FrameTransformer(w0, context_dim, heads, rank, scale, rng, dtype)
        self.down1 = ResBlock(w0, w1, temb, rng, dtype=dtype)
        self.attn_down1 = FrameTransformer(w1, context_dim, heads, rank, scale, rng, dtype)
        self.mid = ResBlock(w1, w1, temb, rng, dtype=dtype)
        self.attn_mid = FrameTransformer(w1, context_dim, heads, rank, scale, rng, dtype)
        self.up1 = ResBlock(2 * w1, w1, temb, rng, dtype=dtype)
        self.attn_up1 = FrameTransformer(w1, context_dim, heads, rank, scale, rng, dtype)
        self.up0 = ResBlock(w1 + w0, w0, temb, rng, dtype=dtype)
        self.attn_up0 = FrameTransformer(w0, context_dim, heads, rank, scale, rng, dtype)
        self.norm_out = GroupNorm(w0, dtype=dtype)
        self.conv_out = Conv2d(w0, channels, 3, rng, zero=True, dtype=dtype)

    def adapters(self) -> list[LowRankAdapter]:
        return [m for _, m in self.named_modules() if isinstance(m, LowRankAdapter)]

    def adapter_parameters(self) -> list[Tensor]:
        return [p for a in self.adapters() for p in a.parameters()]

    def base_parameters(self) -> list[Tensor]:
        adapter_ids = {id(p) for p in self.adapter_parameters()}
        return [p for p in self.parameters() if id(p) not in adapter_ids]

    def set_adapter_scale(self, scale: float) -> None:
        if scale < 0:
            raise ConfigError(f"adapter scale must be >= 0, got {scale}")
        for a in self.adapters():
            a.scale = float(scale)

    def _check(self, z: Tensor):
        if z.ndim != 5 or z.shape[2] != self.channels:
            raise DimensionError(f"content U-Net expects [B, L, {self.channels}, H, W], got {z.shape}")
        if z.shape[3] % 2 or z.shape[4] % 2:
            raise DimensionError(f"spatial extents {z.shape[3:]} must be even")

    def stages(self, z, t, prompt: PromptEmbedding) -> Generator[Tensor, Tensor, Tensor]:
        """Run the U-Net, yielding ``[B, L, C', H', W']`` features at each exchange point.

        The caller sends back (possibly updated) features of the same shape;
        the generator's return value is the predicted noise, shaped like ``z``.
        """
        z = T.as_tensor(z)
        self._check(z)
        b, l = z.shape[:2]
        steps = np.broadcast_to(np.asarray(t), (b,))
        temb = self.time(np.repeat(steps, l))
        ctx = prompt.repeat(l)
        if ctx.tokens.shape[0] != b * l:
            raise DimensionError(f"{prompt.tokens.shape[0]} prompts for a batch of {b}")

        def exchange_point(h):
            out = yield T.reshape(h, (b, l) + h.shape[1:])
            return T.reshape(out, (b * l,) + out.shape[2:])

        h = self.conv_in(T.reshape(z, (b * l,) + z.shape[2:]))
        h = self.attn_down0(self.down0(h, temb), ctx)
        skip0 = h = yield from exchange_point(h)
        h = T.avg_pool(h, 2, (2, 3))
        h = self.attn_down1(self.down1(h, temb), ctx)
        skip1 = h = yield from exchange_point(h)
        h = self.attn_mid(self.mid(h, temb), ctx)
        h = self.attn_up1(self.up1(T.concat([h, skip1], axis=1), temb), ctx)
        h = yield from exchange_point(h)
        h = T.upsample_nearest(h, 2, (2, 3))
        h = self.attn_up0(self.up0(T.concat([h, skip0], axis=1), temb), ctx)
        h = yield from exchange_point(h)
        eps = self.conv_out(T.silu(self.norm_out(h)))
        return T.reshape(eps, z.shape)

    def forward(self, z, t, prompt: PromptEmbedding) -> Tensor:
        """Noise prediction with every exchange point passed through unchanged."""
        return run_alone(self.stages(z, t, prompt))


def run_alone(gen: Generator) -> Tensor:
    """Drive a stage generator, sending each yielded feature straight back."""
    try:
        feats = next(gen)
        while True:
            feats = gen.send(feats)
    except StopIteration as stop:
        return stop.value


def noise_loss(eps_hat: Tensor, eps, what: str = "noise") -> Tensor:
    """Element-mean squared error between predicted and true noise."""
    eps_hat = T.as_tensor(eps_hat)
    if eps_hat.shape != np.shape(eps):
        raise DimensionError(f"{what} prediction {eps_hat.shape} vs target {np.shape(eps)}")
    try:
        loss = T.mse(eps_hat, eps)
    except NumericalError as err:
        raise TrainingError(f"{what} loss: {err}") from err
    if not np.isfinite(loss.data):
        raise TrainingError(f"{what} loss is not finite ({loss.item()})")
    return loss


def content_loss(z0, motion_t, t, eps, schedule, predict) -> Tensor:
    """Denoising loss of the content stream.

    ``predict(z_t, t, motion_t)`` returns the predicted noise for the noised
    content latents; ``motion_t`` is the noisy motion latent it is conditioned on.
    """
    z_t = q_sample(z0, t, eps, schedule)
    return noise_loss(predict(z_t, t, motion_t), eps, "content")
