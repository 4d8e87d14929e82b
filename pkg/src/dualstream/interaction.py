"""
Bidirectional cross-attention between the content and motion streams.

The block updating one stream takes its queries from the *other* stream and
its keys and values from the stream being updated::

    content' = content + out(softmax(q(motion) k(content)^T / sqrt(d)) v(content))
    motion'  = motion  + out(softmax(q(content) k(motion)^T / sqrt(d)) v(motion))

Tokens are the ``H * W`` positions of one frame; frame ``k`` of one stream
attends only to frame ``k`` of the other.  Both updates read the features
from before the exchange, so their evaluation order does not matter.
"""
from __future__ import annotations

from typing import Optional

import numpy as np

from . import tensor as T
from .attention import attention_weights, merge_heads, split_heads
from .content import ContentUNet
from .errors import DimensionError
from .motion_stream import MotionUNet
from .nn import Linear, Module
from .tensor import Tensor
from .text import PromptEmbedding


class CrossStreamBlock(Module):
    """Projections for one direction of the exchange.

    ``query_dim`` is the width of the other stream, ``kv_dim`` the width of
    the stream being updated (and of the output).
    """

    def __init__(self, query_dim: int, kv_dim: int, inner_dim: int = 32, heads: int = 4,
                 rng: Optional[np.random.Generator] = None, zero_out: bool = True, dtype=np.float32):
        if inner_dim % heads:
            raise DimensionError(f"inner width {inner_dim} not divisible by {heads} heads")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.heads = heads
        self.to_q = Linear(query_dim, inner_dim, rng, bias=False, dtype=dtype)
        self.to_k = Linear(kv_dim, inner_dim, rng, bias=False, dtype=dtype)
        self.to_v = Linear(kv_dim, inner_dim, rng, bias=False, dtype=dtype)
        self.to_out = Linear(inner_dim, kv_dim, rng, bias=False, zero=zero_out, dtype=dtype)

    def weights(self, query_feats: Tensor, kv_feats: Tensor) -> Tensor:
        """Attention weights ``[N, heads, Tq, Tk]``; each row sums to one."""
        q = split_heads(self.to_q(query_feats), self.heads)
        k = split_heads(self.to_k(kv_feats), self.heads)
        return attention_weights(q, k)


def cross_attend(query_feats, kv_feats, block: CrossStreamBlock) -> Tensor:
    """Attend from ``query_feats`` (``[N, Tq, dq]``) over ``kv_feats`` (``[N, Tk, dk]``).

    Returns ``[N, Tq, dk]`` (the shape of ``kv_feats`` when the token counts
    agree); the residual is added by :func:`exchange`.
    """
    query_feats, kv_feats = T.as_tensor(query_feats), T.as_tensor(kv_feats)
    if query_feats.ndim != 3 or kv_feats.ndim != 3:
        raise DimensionError(f"token sequences must be [N, T, d], got {query_feats.shape}, {kv_feats.shape}")
    if query_feats.shape[0] != kv_feats.shape[0] or 0 in (query_feats.shape[1], kv_feats.shape[1]):
        raise DimensionError(f"incompatible token sequences {query_feats.shape}, {kv_feats.shape}")
    if query_feats.shape[2] != block.to_q.weight.shape[1] or kv_feats.shape[2] != block.to_k.weight.shape[1]:
        raise DimensionError(
            f"widths {query_feats.shape[2]}/{kv_feats.shape[2]} do not match block "
            f"{block.to_q.weight.shape[1]}/{block.to_k.weight.shape[1]}")
    attn = block.weights(query_feats, kv_feats)
    v = split_heads(block.to_v(kv_feats), block.heads)
    return block.to_out(merge_heads(T.matmul(attn, v)))


def _tokens(x: Tensor) -> Tensor:
    b, l, c, h, w = x.shape
    return T.transpose(T.reshape(x, (b * l, c, h * w)), (0, 2, 1))


def _untokens(tokens: Tensor, shape) -> Tensor:
    b, l, c, h, w = shape
    return T.reshape(T.transpose(tokens, (0, 2, 1)), shape)


class ExchangeBlock(Module):
    """The two directions of one exchange point."""

    def __init__(self, content_dim: int, motion_dim: int, inner_dim: int = 32, heads: int = 4,
                 rng: Optional[np.random.Generator] = None, zero_out: bool = True, dtype=np.float32):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.to_content = CrossStreamBlock(motion_dim, content_dim, inner_dim, heads, rng, zero_out, dtype)
        self.to_motion = CrossStreamBlock(content_dim, motion_dim, inner_dim, heads, rng, zero_out, dtype)


def exchange(content_feats, motion_feats, block: ExchangeBlock) -> tuple[Tensor, Tensor]:
    """Simultaneous residual update of ``[B, L, C, H, W]`` content and motion features."""
    content_feats, motion_feats = T.as_tensor(content_feats), T.as_tensor(motion_feats)
    if content_feats.ndim != 5 or motion_feats.ndim != 5:
        raise DimensionError("exchange expects [B, L, C, H, W] features for both streams")
    cs, ms = content_feats.shape, motion_feats.shape
    if cs[:2] != ms[:2] or cs[3:] != ms[3:]:
        raise DimensionError(f"stream geometries differ: content {cs} vs motion {ms}")
    ct, mt = _tokens(content_feats), _tokens(motion_feats)
    content_delta = cross_attend(mt, ct, block.to_content)
    motion_delta = cross_attend(ct, mt, block.to_motion)
    return (content_feats + _untokens(content_delta, cs),
            motion_feats + _untokens(motion_delta, ms))


class DualStreamDenoiser(Module):
    """Content U-Net, motion U-Net and one :class:`ExchangeBlock` per exchange point."""

    def __init__(self, content: ContentUNet, motion: MotionUNet, inner_dim: int = 32,
                 heads: int = 4, seed: int = 0, dtype=np.float32):
        rng = np.random.default_rng(seed)
        self.content = content
        self.motion = motion
        self.exchanges = [ExchangeBlock(cw, mw, inner_dim, heads, rng, True, dtype)
                          for cw, mw in zip(content.widths, motion.widths)]

    def forward(self, z_t, m_t, t, prompt: PromptEmbedding,
                interaction: bool = True) -> tuple[Tensor, Tensor]:
        """Predict ``(content noise, motion noise)`` for the pair of noisy latents at step ``t``.

        With ``interaction=False`` the two U-Nets run independently.
        """
        z_t, m_t = T.as_tensor(z_t), T.as_tensor(m_t)
        if z_t.shape != m_t.shape:
            raise DimensionError(f"content {z_t.shape} and motion {m_t.shape} latents differ")
        content = self.content.stages(z_t, t, prompt)
        motion = self.motion.stages(m_t, t, prompt)
        fc, fm = next(content), next(motion)
        for i in range(len(self.exchanges)):
            if interaction:
                fc, fm = exchange(fc, fm, self.exchanges[i])
            try:
                fc = content.send(fc)
            except StopIteration as stop:
                eps_c = stop.value
            try:
                fm = motion.send(fm)
            except StopIteration as stop:
                eps_m = stop.value
        return eps_c, eps_m
