"""
Motion stream: a 3-D denoising U-Net over motion latents ``[B, L, C, H, W]``.

Residual blocks use 3x3x3 kernels with same-padding in time, so ``L`` is
preserved, and the bottleneck adds temporal self-attention so every output
frame sees every input frame.  Pooling is spatial only.
"""
from __future__ import annotations

from typing import Generator

import numpy as np

from . import tensor as T
from .attention import Attention
from .blocks import ResBlock, TimeEmbedding
from .content import noise_loss, run_alone
from .errors import DimensionError
from .nn import Conv3d, GroupNorm, LayerNorm, Module
from .schedule import q_sample
from .tensor import Tensor
from .text import PromptEmbedding


class TextCrossAttention(Module):
    """Residual cross-attention from every ``(frame, y, x)`` position to the prompt tokens."""

    def __init__(self, channels: int, context_dim: int, heads: int, rng, dtype=np.float32):
        self.norm_in = GroupNorm(channels, dtype=dtype)
        self.norm = LayerNorm(channels, dtype=dtype)
        self.attn = Attention(channels, context_dim, channels, heads, rng, dtype=dtype)

    def forward(self, x: Tensor, context: PromptEmbedding) -> Tensor:
        b, c = x.shape[:2]
        tokens = T.transpose(T.reshape(self.norm_in(x), (b, c, -1)), (0, 2, 1))
        out = self.attn(self.norm(tokens), context.tokens, context.mask)
        return x + T.reshape(T.transpose(out, (0, 2, 1)), x.shape)


class TemporalAttention(Module):
    """Residual self-attention along the frame axis at every spatial position."""

    def __init__(self, channels: int, heads: int, rng, dtype=np.float32):
        self.norm_in = GroupNorm(channels, dtype=dtype)
        self.norm = LayerNorm(channels, dtype=dtype)
        self.attn = Attention(channels, channels, channels, heads, rng, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        b, c, l, h, w = x.shape
        tokens = T.reshape(T.transpose(self.norm_in(x), (0, 3, 4, 2, 1)), (b * h * w, l, c))
        out = self.attn(self.norm(tokens))
        out = T.transpose(T.reshape(out, (b, h, w, l, c)), (0, 4, 3, 1, 2))
        return x + out


class MotionUNet(Module):
    """Two-level 3-D U-Net predicting the noise in motion latents.

    Parameters
    ----------
    channels : int
        Motion latent channels (equal to the content latent channels).
    width : int
        Top-level width; the lower level uses ``2 * width``.
    """

    def __init__(self, channels: int, width: int = 16, context_dim: int = 64, heads: int = 4,
                 seed: int = 0, dtype=np.float32):
        rng = np.random.default_rng(seed)
        w0, w1 = width, 2 * width
        temb = 4 * width
        self.channels = channels
        self.widths = (w0, w1, w1, w0)
        self.time = TimeEmbedding(width, temb, rng, dtype)
        self.conv_in = Conv3d(channels, w0, 3, rng, dtype=dtype)
        self.down0 = ResBlock(w0, w0, temb, rng, dims=3, dtype=dtype)
        self.text_down0 = TextCrossAttention(w0, context_dim, heads, rng, dtype)
        self.down1 = ResBlock(w0, w1, temb, rng, dims=3, dtype=dtype)
        self.text_down1 = TextCrossAttention(w1, context_dim, heads, rng, dtype)
        self.mid = ResBlock(w1, w1, temb, rng, dims=3, dtype=dtype)
        self.temporal_mid = TemporalAttention(w1, heads, rng, dtype)
        self.up1 = ResBlock(2 * w1, w1, temb, rng, dims=3, dtype=dtype)
        self.text_up1 = TextCrossAttention(w1, context_dim, heads, rng, dtype)
        self.up0 = ResBlock(w1 + w0, w0, temb, rng, dims=3, dtype=dtype)
        self.text_up0 = TextCrossAttention(w0, context_dim, heads, rng, dtype)
        self.norm_out = GroupNorm(w0, dtype=dtype)
        self.conv_out = Conv3d(w0, channels, 3, rng, zero=True, dtype=dtype)

    def _check(self, m: Tensor):
        if m.ndim != 5 or m.shape[2] != self.channels:
            raise DimensionError(f"motion U-Net expects [B, L, {self.channels}, H, W], got {m.shape}")
        if m.shape[3] % 2 or m.shape[4] % 2:
            raise DimensionError(f"spatial extents {m.shape[3:]} must be even")

    def stages(self, m, t, prompt: PromptEmbedding) -> Generator[Tensor, Tensor, Tensor]:
        """Same protocol as :meth:`ContentUNet.stages`; features are yielded as ``[B, L, C', H', W']``."""
        m = T.as_tensor(m)
        self._check(m)
        b = m.shape[0]
        if prompt.tokens.shape[0] != b:
            raise DimensionError(f"{prompt.tokens.shape[0]} prompts for a batch of {b}")
        temb = self.time(np.broadcast_to(np.asarray(t), (b,)))

        def exchange_point(h):
            # [B, C, L, H, W] <-> [B, L, C, H, W]
            out = yield T.swapaxes(h, 1, 2)
            return T.swapaxes(out, 1, 2)

        h = self.conv_in(T.swapaxes(m, 1, 2))
        h = self.text_down0(self.down0(h, temb), prompt)
        skip0 = h = yield from exchange_point(h)
        h = T.avg_pool(h, 2, (3, 4))
        h = self.text_down1(self.down1(h, temb), prompt)
        skip1 = h = yield from exchange_point(h)
        h = self.temporal_mid(self.mid(h, temb))
        h = self.text_up1(self.up1(T.concat([h, skip1], axis=1), temb), prompt)
        h = yield from exchange_point(h)
        h = T.upsample_nearest(h, 2, (3, 4))
        h = self.text_up0(self.up0(T.concat([h, skip0], axis=1), temb), prompt)
        h = yield from exchange_point(h)
        eps = self.conv_out(T.silu(self.norm_out(h)))
        return T.swapaxes(eps, 1, 2)

    def forward(self, m, t, prompt: PromptEmbedding) -> Tensor:
        return run_alone(self.stages(m, t, prompt))


def motion_loss(m0, content_t, t, eps, schedule, predict) -> Tensor:
    """Denoising loss of the motion stream; ``predict(m_t, t, content_t)`` mirrors :func:`content_loss`."""
    m_t = q_sample(m0, t, eps, schedule)
    return noise_loss(predict(m_t, t, content_t), eps, "motion")
