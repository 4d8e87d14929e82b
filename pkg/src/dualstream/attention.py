"""Scaled dot-product multi-head attention and a projection-carrying attention layer."""
from __future__ import annotations

from typing import Callable, Optional

import numpy as np

from . import tensor as T
from .errors import DimensionError
from .nn import Linear, Module
from .tensor import Tensor

MASK_BIAS = -1e9


def split_heads(x: Tensor, heads: int) -> Tensor:
    n, t, d = x.shape
    if d % heads:
        raise DimensionError(f"width {d} not divisible by {heads} heads")
    return T.transpose(T.reshape(x, (n, t, heads, d // heads)), (0, 2, 1, 3))


def merge_heads(x: Tensor) -> Tensor:
    n, h, t, dh = x.shape
    return T.reshape(T.transpose(x, (0, 2, 1, 3)), (n, t, h * dh))


def attention_weights(q: Tensor, k: Tensor, key_mask: Optional[np.ndarray] = None) -> Tensor:
    """``softmax(q k^T / sqrt(d))`` over keys; ``q`` is ``[..., Tq, d]``, ``k`` is ``[..., Tk, d]``.

    ``key_mask`` (``[N, Tk]``, True = attend) is broadcast over heads and queries.
    """
    if q.shape[-1] != k.shape[-1]:
        raise DimensionError(f"query width {q.shape[-1]} != key width {k.shape[-1]}")
    scores = T.matmul(q, T.swapaxes(k, -1, -2)) * (1.0 / np.sqrt(q.shape[-1]))
    if key_mask is not None:
        bias = np.where(np.asarray(key_mask, dtype=bool), 0.0, MASK_BIAS).astype(q.dtype)
        bias = bias.reshape((bias.shape[0],) + (1,) * (scores.ndim - 2) + (bias.shape[-1],))
        scores = scores + bias
    return T.softmax(scores, axis=-1)


def multihead_attention(q: Tensor, k: Tensor, v: Tensor, heads: int,
                        key_mask: Optional[np.ndarray] = None) -> Tensor:
    """``q``: ``[N, Tq, d]``, ``k``/``v``: ``[N, Tk, d]`` -> ``[N, Tq, d]``."""
    if k.shape[:2] != v.shape[:2] or q.shape[0] != k.shape[0]:
        raise DimensionError(f"attention operands disagree: q{q.shape} k{k.shape} v{v.shape}")
    qh, kh, vh = split_heads(q, heads), split_heads(k, heads), split_heads(v, heads)
    return merge_heads(T.matmul(attention_weights(qh, kh, key_mask), vh))


LinearFactory = Callable[[int, int, bool], Module]


class Attention(Module):
    """Self- or cross-attention with query/key/value/output projections.

    ``make_linear(fan_in, fan_out, zero)`` builds each projection, which is how
    the content stream swaps in adapter-carrying layers.
    """

    def __init__(self, query_dim: int, context_dim: int, inner_dim: int, heads: int,
                 rng: np.random.Generator, make_linear: Optional[LinearFactory] = None,
                 zero_out: bool = False, dtype=np.float32):
        if make_linear is None:
            def make_linear(fi, fo, zero):
                return Linear(fi, fo, rng, bias=False, zero=zero, dtype=dtype)
        self.heads = heads
        self.to_q = make_linear(query_dim, inner_dim, False)
        self.to_k = make_linear(context_dim, inner_dim, False)
        self.to_v = make_linear(context_dim, inner_dim, False)
        self.to_out = make_linear(inner_dim, query_dim, zero_out)

    def forward(self, x: Tensor, context: Optional[Tensor] = None,
                key_mask: Optional[np.ndarray] = None) -> Tensor:
        context = x if context is None else context
        out = multihead_attention(self.to_q(x), self.to_k(context), self.to_v(context),
                                  self.heads, key_mask)
        return self.to_out(out)
