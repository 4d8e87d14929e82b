"""
Motion decomposer and combiner on ``[B, L, C, H, W]`` latents.

Decomposer, on features reduced from ``C`` to ``C / r`` channels by a 1x1 conv::

    m[l] = dwconv(r[l + 1]) - r[l]          for l = 1 .. L-1
    m[L] = m[L - 1]                         (length padding)
    motion = restore(m) * motion_scale      (1x1 conv back to C channels)

Combiner::

    fused[l] = left(r'[l - 1]) + right(r'[l])   with r' = reduce'(motion), left(r'[0]) = 0
    out[l]   = z[l] + restore'(fused[l])

The content term enters at full width; when ``restore' o reduce'`` is the
identity this is exactly ``restore'(left + reduce'(z) + right)``.
All spatial convolutions are depthwise 3x3 and start as Dirac kernels.
"""
from __future__ import annotations

import numpy as np

from . import tensor as T
from .errors import ConfigError, ContractError, DimensionError
from .nn import Conv2d, Module
from .tensor import Tensor


def _dirac_depthwise(channels: int, dtype) -> Tensor:
    w = np.zeros((channels, 1, 3, 3))
    w[:, 0, 1, 1] = 1.0
    return Tensor(w.astype(dtype), requires_grad=True)


def _orthonormal_rows(rows: int, cols: int, rng) -> np.ndarray:
    q, _ = np.linalg.qr(rng.normal(size=(cols, rows)))
    return q[:, :rows].T


class MotionOps(Module):
    """Weights for :func:`decompose` and :func:`combine`; reduce/restore pairs start as an orthogonal projection."""

    _buffers = ("motion_scale",)

    def __init__(self, channels: int, reduction: int = 4, seed: int = 0, dtype=np.float32):
        if reduction < 1 or channels % reduction:
            raise ConfigError(f"channels {channels} not divisible by reduction factor {reduction}")
        rng = np.random.default_rng(seed)
        self.channels, self.reduction = channels, reduction
        inner = channels // reduction
        self.motion_scale = np.array(1.0)

        def pair():
            down = Conv2d(channels, inner, 1, rng, bias=False, dtype=dtype)
            up = Conv2d(inner, channels, 1, rng, bias=False, dtype=dtype)
            rows = _orthonormal_rows(inner, channels, rng)
            down.weight.data = rows.reshape(inner, channels, 1, 1).astype(dtype)
            up.weight.data = rows.T.reshape(channels, inner, 1, 1).astype(dtype).copy()
            return down, up

        def depthwise():
            conv = Conv2d(inner, inner, 3, rng, groups=inner, bias=False, dtype=dtype)
            conv.weight = _dirac_depthwise(inner, dtype)
            return conv

        self.dec_reduce, self.dec_restore = pair()
        self.dec_diff = depthwise()
        self.comb_reduce, self.comb_restore = pair()
        self.comb_left = depthwise()
        self.comb_right = depthwise()

    @property
    def inner(self) -> int:
        return self.channels // self.reduction


def _frames(conv: Conv2d, x: Tensor) -> Tensor:
    """Apply a 2-D conv to every frame of ``[B, L, C, H, W]``."""
    b, l = x.shape[:2]
    y = conv(T.reshape(x, (b * l,) + x.shape[2:]))
    return T.reshape(y, (b, l) + y.shape[1:])


def _check(z: Tensor, ops: MotionOps, what: str):
    if z.ndim != 5:
        raise DimensionError(f"{what} expects [B, L, C, H, W], got {z.shape}")
    if z.shape[2] != ops.channels:
        raise DimensionError(f"{what}: {z.shape[2]} channels, weights built for {ops.channels}")


def decompose(z, ops: MotionOps) -> Tensor:
    """Content latents -> motion latents of the same shape."""
    z = T.as_tensor(z)
    _check(z, ops, "decompose")
    if z.shape[1] < 2:
        raise ContractError(f"decompose needs at least 2 frames, got L={z.shape[1]}")
    r = _frames(ops.dec_reduce, z)
    diff = _frames(ops.dec_diff, r[:, 1:]) - r[:, :-1]
    padded = T.concat([diff, diff[:, -1:]], axis=1)
    out = _frames(ops.dec_restore, padded)
    scale = float(ops.motion_scale)
    return out * scale if scale != 1.0 else out


def combine(z, motion, ops: MotionOps) -> Tensor:
    """Fuse content latents with motion latents; output has the content shape."""
    z, motion = T.as_tensor(z), T.as_tensor(motion)
    _check(z, ops, "combine")
    if motion.shape != z.shape:
        raise DimensionError(f"combine shapes differ: content {z.shape} vs motion {motion.shape}")
    r = _frames(ops.comb_reduce, motion)
    right = _frames(ops.comb_right, r)
    if z.shape[1] > 1:
        left = _frames(ops.comb_left, r[:, :-1])
        zero = Tensor(np.zeros((z.shape[0], 1) + left.shape[2:], dtype=left.dtype))
        fused = right + T.concat([zero, left], axis=1)
    else:
        fused = right
    return z + _frames(ops.comb_restore, fused)
