"""Residual conv blocks and the time-embedding MLP shared by both denoising U-Nets."""
from __future__ import annotations

import numpy as np

from . import tensor as T
from .nn import Conv2d, Conv3d, GroupNorm, Linear, Module, timestep_embedding
from .tensor import Tensor


class TimeEmbedding(Module):
    """Sinusoidal step features followed by a two-layer SiLU MLP."""

    def __init__(self, base_dim: int, out_dim: int, rng, dtype=np.float32):
        self.base_dim = base_dim
        self.fc1 = Linear(base_dim, out_dim, rng, dtype=dtype)
        self.fc2 = Linear(out_dim, out_dim, rng, dtype=dtype)

    def forward(self, t: np.ndarray) -> Tensor:
        dtype = self.fc1.weight.dtype
        emb = Tensor(timestep_embedding(np.asarray(t).reshape(-1), self.base_dim, dtype))
        return self.fc2(T.silu(self.fc1(emb)))


class ResBlock(Module):
    """``GN -> SiLU -> conv -> +time -> GN -> SiLU -> conv`` plus a (1x1-projected) skip.

    ``dims`` selects 2-D (``[N, C, H, W]``) or 3-D (``[N, C, L, H, W]``) kernels.
    """

    def __init__(self, cin: int, cout: int, time_dim: int, rng, dims: int = 2, dtype=np.float32):
        conv = Conv2d if dims == 2 else Conv3d
        self.norm1 = GroupNorm(cin, dtype=dtype)
        self.conv1 = conv(cin, cout, 3, rng, dtype=dtype)
        self.time = Linear(time_dim, cout, rng, dtype=dtype)
        self.norm2 = GroupNorm(cout, dtype=dtype)
        self.conv2 = conv(cout, cout, 3, rng, dtype=dtype)
        self.skip = conv(cin, cout, 1, rng, dtype=dtype) if cin != cout else None
        self.dims = dims

    def forward(self, x: Tensor, temb: Tensor) -> Tensor:
        h = self.conv1(T.silu(self.norm1(x)))
        shift = self.time(T.silu(temb))
        h = h + T.reshape(shift, shift.shape + (1,) * self.dims)
        h = self.conv2(T.silu(self.norm2(h)))
        return h + (x if self.skip is None else self.skip(x))
