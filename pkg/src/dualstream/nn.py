"""Parameter containers, layers and the Adam optimiser built on :mod:`dualstream.tensor`."""
from __future__ import annotations

from typing import Iterator, Optional

import numpy as np

from . import tensor as T
from .errors import ConfigError, DimensionError, FormatError
from .tensor import Tensor


class Module:
    """Base class: parameters are ``Tensor`` attributes, buffers are listed in ``_buffers``.

    Sub-modules are discovered through attributes holding a ``Module`` or a
    list of them, in attribute insertion order, so parameter names and order
    are deterministic.
    """

    _buffers: tuple = ()

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, val in vars(self).items():
            if isinstance(val, Tensor):
                yield prefix + name, val
            elif isinstance(val, Module):
                yield from val.named_parameters(f"{prefix}{name}.")
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{prefix}{name}.{i}.")

    def named_modules(self, prefix: str = "") -> Iterator[tuple[str, "Module"]]:
        yield prefix.rstrip("."), self
        for name, val in vars(self).items():
            if isinstance(val, Module):
                yield from val.named_modules(f"{prefix}{name}.")
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield from item.named_modules(f"{prefix}{name}.{i}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def trainable_parameters(self) -> list[Tensor]:
        return [p for p in self.parameters() if p.requires_grad]

    def state_dict(self) -> dict[str, np.ndarray]:
        state = {name: p.data for name, p in self.named_parameters()}
        for mname, mod in self.named_modules():
            for b in mod._buffers:
                state[f"{mname}.{b}" if mname else b] = np.asarray(getattr(mod, b))
        return state

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        for name, p in own.items():
            if name not in state:
                raise FormatError(f"missing parameter '{name}'")
            arr = np.asarray(state[name])
            if arr.shape != p.shape:
                raise FormatError(f"parameter '{name}' has shape {arr.shape}, expected {p.shape}")
            p.data = np.array(arr, dtype=p.dtype, order="C")
        for mname, mod in self.named_modules():
            for b in mod._buffers:
                key = f"{mname}.{b}" if mname else b
                if key not in state:
                    raise FormatError(f"missing buffer '{key}'")
                setattr(mod, b, np.array(state[key], dtype=np.asarray(getattr(mod, b)).dtype))

    def freeze(self) -> "Module":
        for p in self.parameters():
            p.requires_grad = False
            p.grad = None
        return self

    def unfreeze(self) -> "Module":
        for p in self.parameters():
            p.requires_grad = True
        return self

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def astype(self, dtype) -> "Module":
        for p in self.parameters():
            p.data = p.data.astype(dtype)
            p.grad = None
        return self

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def _param(arr: np.ndarray, dtype) -> Tensor:
    return Tensor(arr.astype(dtype), requires_grad=True)


def _uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Linear(Module):
    """``y = x @ W.T + b`` with ``W`` of shape ``(out, in)``."""

    def __init__(self, fan_in: int, fan_out: int, rng: np.random.Generator, bias: bool = True,
                 zero: bool = False, dtype=np.float32):
        w = np.zeros((fan_out, fan_in)) if zero else _uniform(rng, (fan_out, fan_in), fan_in)
        self.weight = _param(w, dtype)
        self.bias = _param(np.zeros(fan_out), dtype) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.weight.shape[1]:
            raise DimensionError(f"Linear expects width {self.weight.shape[1]}, got {x.shape}")
        y = T.matmul(x, T.transpose(self.weight))
        return y if self.bias is None else y + self.bias


class Conv2d(Module):
    def __init__(self, cin: int, cout: int, k: int, rng: np.random.Generator, stride: int = 1,
                 groups: int = 1, bias: bool = True, zero: bool = False, dtype=np.float32):
        shape = (cout, cin // groups, k, k)
        fan_in = (cin // groups) * k * k
        self.weight = _param(np.zeros(shape) if zero else _uniform(rng, shape, fan_in), dtype)
        self.bias = _param(np.zeros(cout), dtype) if bias else None
        self.stride, self.padding, self.groups = stride, (k - 1) // 2, groups

    def forward(self, x: Tensor) -> Tensor:
        return T.conv2d(x, self.weight, self.bias, self.stride, self.padding, self.groups)


class Conv3d(Module):
    def __init__(self, cin: int, cout: int, k: int, rng: np.random.Generator, bias: bool = True,
                 zero: bool = False, dtype=np.float32):
        shape = (cout, cin, k, k, k)
        self.weight = _param(np.zeros(shape) if zero else _uniform(rng, shape, cin * k ** 3), dtype)
        self.bias = _param(np.zeros(cout), dtype) if bias else None
        self.padding = (k - 1) // 2

    def forward(self, x: Tensor) -> Tensor:
        return T.conv3d(x, self.weight, self.bias, 1, self.padding)


class GroupNorm(Module):
    def __init__(self, channels: int, groups: int = 8, eps: float = 1e-5, dtype=np.float32):
        self.groups = min(groups, channels)
        while channels % self.groups:
            self.groups -= 1
        self.eps = eps
        self.weight = _param(np.ones(channels), dtype)
        self.bias = _param(np.zeros(channels), dtype)

    def forward(self, x: Tensor) -> Tensor:
        return T.group_norm(x, self.groups, self.eps, self.weight, self.bias)


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-5, dtype=np.float32):
        self.eps = eps
        self.weight = _param(np.ones(dim), dtype)
        self.bias = _param(np.zeros(dim), dtype)

    def forward(self, x: Tensor) -> Tensor:
        return T.layer_norm(x, self.eps, self.weight, self.bias)


class Embedding(Module):
    def __init__(self, count: int, dim: int, rng: np.random.Generator, dtype=np.float32):
        self.weight = _param(rng.normal(0.0, 0.02, size=(count, dim)), dtype)

    def forward(self, ids: np.ndarray) -> Tensor:
        return T.take_rows(self.weight, ids)


def timestep_embedding(t: np.ndarray, dim: int, dtype=np.float32) -> np.ndarray:
    """Sinusoidal embedding of integer steps ``t`` -> ``[len(t), dim]``."""
    t = np.asarray(t, dtype=np.float64).reshape(-1)
    half = dim // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / half)
    args = t[:, None] * freqs[None]
    emb = np.concatenate([np.cos(args), np.sin(args)], axis=1)
    if dim % 2:
        emb = np.concatenate([emb, np.zeros((len(t), 1))], axis=1)
    return emb.astype(dtype)


class Adam:
    """Adam with bias correction; moments live in numpy arrays keyed by parameter order."""

    def __init__(self, params: list[Tensor], lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8):
        if lr <= 0:
            raise ConfigError(f"learning rate must be positive, got {lr}")
        self.params = list(params)
        self.lr, self.betas, self.eps = lr, betas, eps
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.t = 0

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        self.t += 1
        b1, b2 = self.betas
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p.data = p.data - (self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(p.dtype)

    def state_dict(self) -> dict[str, np.ndarray]:
        state = {"t": np.array(self.t, dtype=np.int64)}
        for i, (m, v) in enumerate(zip(self.m, self.v)):
            state[f"m.{i}"] = m
            state[f"v.{i}"] = v
        return state

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        expected = {"t"} | {f"{k}.{i}" for i in range(len(self.params)) for k in "mv"}
        if set(state) != expected:
            missing, extra = sorted(expected - set(state)), sorted(set(state) - expected)
            raise FormatError(f"optimizer state mismatch (missing {missing[:3]}, unexpected {extra[:3]})")
        self.t = int(state["t"])
        for i, p in enumerate(self.params):
            for key, store in (("m", self.m), ("v", self.v)):
                arr = np.asarray(state[f"{key}.{i}"])
                if arr.shape != p.shape:
                    raise FormatError(f"optimizer moment '{key}.{i}' shape {arr.shape} != {p.shape}")
                store[i] = arr.astype(p.dtype).copy()
