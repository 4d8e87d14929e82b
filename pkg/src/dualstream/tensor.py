"""
Reverse-mode automatic differentiation over numpy arrays.

A :class:`Tensor` wraps a row-major ``numpy.ndarray`` (float32 for compute,
float64 for verification).  Every differentiable kernel records its parents
and a closure mapping the output gradient to parent gradients; calling
:meth:`Tensor.backward` on a scalar walks the graph once in reverse
topological order and accumulates into ``.grad`` of leaf tensors.

Kernels check operand shapes before touching data and, by default, refuse to
return NaN/Inf (see :func:`set_finite_check`).
"""
from __future__ import annotations

import itertools
from contextlib import contextmanager
from typing import Callable, Optional, Sequence, Union

import numpy as np
from scipy.special import expit

from .errors import ContractError, DimensionError, NumericalError

ArrayLike = Union["Tensor", np.ndarray, float, int, Sequence]

_GRAD_ENABLED = True
_CHECK_FINITE = True
DEFAULT_DTYPE = np.float32
_FLOAT_DTYPES = (np.dtype(np.float32), np.dtype(np.float64))


@contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def set_finite_check(enabled: bool) -> bool:
    """Toggle the NaN/Inf guard on kernel outputs; returns the previous value."""
    global _CHECK_FINITE
    prev = _CHECK_FINITE
    _CHECK_FINITE = bool(enabled)
    return prev


def is_grad_enabled() -> bool:
    return _GRAD_ENABLED


class Tensor:
    """N-dimensional array with optional gradient tracking.

    Parameters
    ----------
    data : array-like
        Values; integer input is cast to ``DEFAULT_DTYPE``.
    requires_grad : bool
        Whether gradients flow to (and accumulate in) this tensor.
    dtype : numpy dtype, optional
        float32 or float64.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_op")
    __array_priority__ = 100.0
    __array_ufunc__ = None  # make numpy defer to Tensor's reflected operators

    def __init__(self, data: ArrayLike, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data)
        if dtype is None:
            dtype = arr.dtype if arr.dtype in _FLOAT_DTYPES else DEFAULT_DTYPE
        dtype = np.dtype(dtype)
        if dtype not in _FLOAT_DTYPES:
            raise ContractError(f"unsupported dtype {dtype}; use float32 or float64")
        self.data = np.array(arr, dtype=dtype, order="C", copy=None)
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self._parents: tuple = ()
        self._backward: Optional[Callable] = None
        self._op = "leaf"

    # ------------------------------------------------------------------ info
    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return not self._parents

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag}, op={self._op})"

    def __len__(self) -> int:
        return self.shape[0]

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data, dtype=self.dtype)

    def zero_grad(self) -> None:
        self.grad = None

    # -------------------------------------------------------------- autodiff
    def backward(self) -> None:
        """Populate ``.grad`` on every ``requires_grad`` leaf reachable from this scalar.

        Gradients accumulate across calls; reset with :meth:`zero_grad`.
        """
        if self.ndim != 0:
            raise ContractError(f"backward() needs a scalar loss, got shape {self.shape}")
        if not self.requires_grad:
            raise ContractError("loss does not depend on any tensor with requires_grad=True")
        order = _topological_order(self)
        grads = {id(self): np.ones((), dtype=self.dtype)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node.is_leaf:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg

    # ------------------------------------------------------------- operators
    def __add__(self, other): return add(self, other)
    def __radd__(self, other): return add(other, self)
    def __sub__(self, other): return sub(self, other)
    def __rsub__(self, other): return sub(other, self)
    def __mul__(self, other): return mul(self, other)
    def __rmul__(self, other): return mul(other, self)
    def __truediv__(self, other): return div(self, other)
    def __rtruediv__(self, other): return div(other, self)
    def __neg__(self): return neg(self)
    def __pow__(self, p): return power(self, p)
    def __matmul__(self, other): return matmul(self, other)
    def __rmatmul__(self, other): return matmul(other, self)
    def __getitem__(self, idx): return getitem(self, idx)

    def sum(self, axis=None, keepdims=False): return tsum(self, axis, keepdims)
    def mean(self, axis=None, keepdims=False): return mean(self, axis, keepdims)
    def reshape(self, *shape): return reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], (tuple, list)) else shape)
    def transpose(self, *axes): return transpose(self, axes[0] if len(axes) == 1 and isinstance(axes[0], (tuple, list)) else (axes or None))
    def exp(self): return exp(self)
    def log(self): return log(self)


def _topological_order(root: Tensor) -> list:
    order, visited = [], set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in visited:
                stack.append((p, False))
    return order


def as_tensor(x: ArrayLike, like: Optional[Tensor] = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x), dtype=like.dtype if like is not None else None)


def _make(data: np.ndarray, parents: Sequence[Tensor], backward: Callable, op: str) -> Tensor:
    if _CHECK_FINITE and not np.isfinite(data).all():
        raise NumericalError(f"non-finite values produced by '{op}' (shape {data.shape})")
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out._op = op
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, s in enumerate(shape):
        if s == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def _binary_operands(a, b):
    if isinstance(a, Tensor) and not isinstance(b, Tensor):
        b = Tensor(np.asarray(b, dtype=a.dtype))
    elif isinstance(b, Tensor) and not isinstance(a, Tensor):
        a = Tensor(np.asarray(a, dtype=b.dtype))
    elif not isinstance(a, Tensor):
        a, b = Tensor(a), Tensor(b)
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"shapes {a.shape} and {b.shape} do not broadcast") from None
    return a, b


# ------------------------------------------------------------ elementwise

def add(a, b) -> Tensor:
    a, b = _binary_operands(a, b)
    return _make(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)), "add")


def sub(a, b) -> Tensor:
    a, b = _binary_operands(a, b)
    return _make(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)), "sub")


def mul(a, b) -> Tensor:
    a, b = _binary_operands(a, b)
    return _make(a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)), "mul")


def div(a, b) -> Tensor:
    a, b = _binary_operands(a, b)
    out = a.data / b.data

    def backward(g):
        ga = g / b.data
        return _unbroadcast(ga, a.shape), _unbroadcast(-ga * out, b.shape)
    return _make(out, (a, b), backward, "div")


def neg(a: Tensor) -> Tensor:
    return _make(-a.data, (a,), lambda g: (-g,), "neg")


def power(a: Tensor, p: float) -> Tensor:
    p = float(p)
    out = a.data ** p
    return _make(out, (a,), lambda g: (g * p * a.data ** (p - 1.0),), "pow")


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,), "exp")


def log(a: Tensor) -> Tensor:
    return _make(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def sqrt(a: Tensor) -> Tensor:
    out = np.sqrt(a.data)
    return _make(out, (a,), lambda g: (g * 0.5 / out,), "sqrt")


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return _make(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return expit(x)


def sigmoid(a: Tensor) -> Tensor:
    out = _sigmoid(a.data)
    return _make(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def silu(a: Tensor) -> Tensor:
    s = _sigmoid(a.data)
    out = a.data * s
    return _make(out, (a,), lambda g: (g * (s + out * (1.0 - s)),), "silu")


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _make(a.data * mask, (a,), lambda g: (g * mask,), "relu")


# ------------------------------------------------------------ reductions

def _norm_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(sorted(ax % ndim for ax in axis))


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axis(axis, a.ndim)
    out = a.data.sum(axis=axes, keepdims=keepdims)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, a.shape).copy(),)
    return _make(np.asarray(out), (a,), backward, "sum")


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axis(axis, a.ndim)
    count = int(np.prod([a.shape[ax] for ax in axes])) if axes else 1
    out = a.data.mean(axis=axes, keepdims=keepdims)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g / count, a.shape).copy(),)
    return _make(np.asarray(out, dtype=a.dtype), (a,), backward, "mean")


# ------------------------------------------------------------ shape ops

def reshape(a: Tensor, shape) -> Tensor:
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise DimensionError(f"cannot reshape {a.shape} into {tuple(shape)}") from None
    return _make(out, (a,), lambda g: (g.reshape(a.shape),), "reshape")


def transpose(a: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    axes = tuple(axes)
    if sorted(ax % a.ndim for ax in axes) != list(range(a.ndim)):
        raise DimensionError(f"invalid permutation {axes} for rank {a.ndim}")
    inv = np.argsort([ax % a.ndim for ax in axes])
    return _make(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),), "transpose")


def swapaxes(a: Tensor, i: int, j: int) -> Tensor:
    axes = list(range(a.ndim))
    axes[i], axes[j] = axes[j], axes[i]
    return transpose(a, axes)


def getitem(a: Tensor, idx) -> Tensor:
    out = a.data[idx]
    basic = _is_basic_index(idx)

    def backward(g):
        full = np.zeros(a.shape, dtype=a.dtype)
        if basic:
            full[idx] += g
        else:
            np.add.at(full, idx, g)
        return (full,)
    return _make(np.array(out, copy=True), (a,), backward, "getitem")


def _is_basic_index(idx) -> bool:
    items = idx if isinstance(idx, tuple) else (idx,)
    return all(isinstance(i, (int, np.integer, slice)) or i is None or i is Ellipsis for i in items)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise DimensionError("concat of an empty sequence")
    nd = tensors[0].ndim
    axis = axis % nd
    for t in tensors[1:]:
        if t.ndim != nd or any(t.shape[i] != tensors[0].shape[i] for i in range(nd) if i != axis):
            raise DimensionError(f"concat shapes disagree off axis {axis}: "
                                 f"{[t.shape for t in tensors]}")
    out = np.concatenate([t.data for t in tensors], axis=axis)
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))
    return _make(out, tensors, backward, "concat")


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    expanded = [reshape(t, t.shape[:axis % (t.ndim + 1)] + (1,) + t.shape[axis % (t.ndim + 1):])
                for t in map(as_tensor, tensors)]
    return concat(expanded, axis=axis)


def repeat(a: Tensor, repeats: int, axis: int) -> Tensor:
    """``np.repeat`` with gradient (each element repeated consecutively)."""
    axis = axis % a.ndim
    out = np.repeat(a.data, repeats, axis=axis)

    def backward(g):
        shp = a.shape[:axis] + (a.shape[axis], repeats) + a.shape[axis + 1:]
        return (g.reshape(shp).sum(axis=axis + 1),)
    return _make(out, (a,), backward, "repeat")


def upsample_nearest(a: Tensor, factor: int, axes: Sequence[int]) -> Tensor:
    out = a
    for ax in axes:
        out = repeat(out, factor, ax)
    return out


def avg_pool(a: Tensor, factor: int, axes: Sequence[int]) -> Tensor:
    """Non-overlapping mean pooling by ``factor`` along the given (trailing-order) axes."""
    axes = sorted(ax % a.ndim for ax in axes)
    shape, red = [], []
    for i, s in enumerate(a.shape):
        if i in axes:
            if s % factor:
                raise DimensionError(f"extent {s} on axis {i} not divisible by pool factor {factor}")
            shape += [s // factor, factor]
            red.append(len(shape) - 1)
        else:
            shape.append(s)
    return mean(reshape(a, tuple(shape)), axis=tuple(red))


def space_to_depth(a: Tensor, factor: int) -> Tensor:
    """``[N, C, H, W]`` -> ``[N, C*f*f, H/f, W/f]`` (inverse of :func:`depth_to_space`)."""
    n, c, h, w = a.shape
    if h % factor or w % factor:
        raise DimensionError(f"spatial extents {h}x{w} not divisible by {factor}")
    x = reshape(a, (n, c, h // factor, factor, w // factor, factor))
    return reshape(transpose(x, (0, 1, 3, 5, 2, 4)), (n, c * factor * factor, h // factor, w // factor))


def depth_to_space(a: Tensor, factor: int) -> Tensor:
    """``[N, C*f*f, H, W]`` -> ``[N, C, H*f, W*f]``."""
    n, c, h, w = a.shape
    if c % (factor * factor):
        raise DimensionError(f"channels {c} not divisible by {factor}^2")
    x = reshape(a, (n, c // (factor * factor), factor, factor, h, w))
    return reshape(transpose(x, (0, 1, 4, 2, 5, 3)), (n, c // (factor * factor), h * factor, w * factor))


def take_rows(weight: Tensor, ids: np.ndarray) -> Tensor:
    """Embedding lookup ``weight[ids]`` with scatter-add backward."""
    ids = np.asarray(ids)
    if ids.dtype.kind not in "iu":
        raise ContractError("ids must be integers")
    if ids.size and (ids.min() < 0 or ids.max() >= weight.shape[0]):
        raise ContractError(f"id out of range [0, {weight.shape[0]})")
    out = weight.data[ids]

    def backward(g):
        full = np.zeros(weight.shape, dtype=weight.dtype)
        np.add.at(full, ids, g)
        return (full,)
    return _make(out, (weight,), backward, "take_rows")


# ------------------------------------------------------------ linear algebra

def matmul(a, b) -> Tensor:
    """Batched matrix product ``[..., m, k] @ [..., k, n]`` with broadcast batch extents."""
    a, b = as_tensor(a), as_tensor(b, like=a)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul needs rank >= 2 operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul inner extents differ: {a.shape} @ {b.shape}")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise DimensionError(f"matmul batch extents do not broadcast: {a.shape} @ {b.shape}") from None
    out = np.matmul(a.data, b.data)

    def backward(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2)) if a.requires_grad else None
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g) if b.requires_grad else None
        return (None if ga is None else _unbroadcast(ga, a.shape),
                None if gb is None else _unbroadcast(gb, b.shape))
    return _make(out, (a, b), backward, "matmul")


# ------------------------------------------------------------ softmax family

def softmax(a: Tensor, axis: int = -1) -> Tensor:
    if a.ndim == 0 or a.shape[axis] == 0:
        raise DimensionError(f"softmax over an empty axis (shape {a.shape}, axis {axis})")
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)
    return _make(out, (a,), backward, "softmax")


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    if a.ndim == 0 or a.shape[axis] == 0:
        raise DimensionError(f"log_softmax over an empty axis (shape {a.shape})")
    z = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse

    def backward(g):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)
    return _make(out, (a,), backward, "log_softmax")


# ------------------------------------------------------------ normalisation

def _normalize(x: Tensor, axes: tuple, eps: float, op: str) -> Tensor:
    mu = x.data.mean(axis=axes, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=axes, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv

    def backward(g):
        gm = g.mean(axis=axes, keepdims=True)
        gxm = (g * xhat).mean(axis=axes, keepdims=True)
        return (inv * (g - gm - xhat * gxm),)
    return _make(xhat.astype(x.dtype, copy=False), (x,), backward, op)


def group_norm(x: Tensor, groups: int, eps: float = 1e-5, weight: Optional[Tensor] = None,
               bias: Optional[Tensor] = None) -> Tensor:
    """Group normalisation over ``[N, C, *spatial]`` with optional per-channel affine."""
    if x.ndim < 2:
        raise DimensionError(f"group_norm expects [N, C, ...], got {x.shape}")
    n, c = x.shape[:2]
    if groups < 1 or c % groups:
        raise DimensionError(f"channels {c} not divisible by groups {groups}")
    xg = reshape(x, (n, groups, -1))
    y = reshape(_normalize(xg, (2,), eps, "group_norm"), x.shape)
    bshape = (1, c) + (1,) * (x.ndim - 2)
    if weight is not None:
        y = y * reshape(weight, bshape)
    if bias is not None:
        y = y + reshape(bias, bshape)
    return y


def layer_norm(x: Tensor, eps: float = 1e-5, weight: Optional[Tensor] = None,
               bias: Optional[Tensor] = None) -> Tensor:
    y = _normalize(x, (x.ndim - 1,), eps, "layer_norm")
    if weight is not None:
        y = y * weight
    if bias is not None:
        y = y + bias
    return y


# ------------------------------------------------------------ convolution

def _conv_nd(x: Tensor, w: Tensor, bias: Optional[Tensor], stride: int, padding: int,
             groups: int, nsp: int, name: str) -> Tensor:
    if x.ndim != nsp + 2 or w.ndim != nsp + 2:
        raise DimensionError(f"{name}: expected rank-{nsp + 2} input and weight, got {x.shape} and {w.shape}")
    b, cin = x.shape[:2]
    cout, cg = w.shape[:2]
    ksize = w.shape[2:]
    if groups < 1 or cin % groups or cout % groups:
        raise DimensionError(f"{name}: channels in={cin}/out={cout} not divisible by groups={groups}")
    if cg != cin // groups:
        raise DimensionError(f"{name}: weight expects {cg} channels per group, input gives {cin // groups}")
    if bias is not None and bias.shape != (cout,):
        raise DimensionError(f"{name}: bias shape {bias.shape} != ({cout},)")
    if stride < 1 or padding < 0:
        raise DimensionError(f"{name}: invalid stride {stride} / padding {padding}")
    spatial = x.shape[2:]
    osz = tuple((s + 2 * padding - k) // stride + 1 for s, k in zip(spatial, ksize))
    if any(s + 2 * padding < k for s, k in zip(spatial, ksize)):
        raise DimensionError(f"{name}: kernel {ksize} larger than padded input {spatial} (+2*{padding})")

    xp = np.pad(x.data, [(0, 0), (0, 0)] + [(padding, padding)] * nsp) if padding else x.data
    offsets = list(itertools.product(*[range(k) for k in ksize]))

    def window(arr, off):
        return arr[(slice(None), slice(None)) + tuple(
            slice(o, o + stride * (n - 1) + 1, stride) for o, n in zip(off, osz))]

    depthwise = groups == cin and cout == cin
    npos = int(np.prod(osz))
    kvol = len(offsets)
    if depthwise:
        wk = w.data.reshape(cin, kvol)
        shp = (1, cin) + (1,) * nsp
        out = np.zeros((b, cout) + osz, dtype=x.dtype)
        for i, off in enumerate(offsets):
            out += window(xp, off) * wk[:, i].reshape(shp)
    else:
        # columns laid out [B, C, K, *O]: each kernel offset is one shifted-slice copy
        cols = np.empty((b, cin, kvol) + osz, dtype=x.dtype)
        for i, off in enumerate(offsets):
            cols[:, :, i] = window(xp, off)
        cols = cols.reshape(b, groups, cg * kvol, npos)
        wm = w.data.reshape(groups, cout // groups, cg * kvol)
        out = np.matmul(wm[None], cols).reshape((b, cout) + osz)
    if bias is not None:
        out = out + bias.data.reshape((1, cout) + (1,) * nsp)

    def backward(g):
        gb = g.sum(axis=(0,) + tuple(range(2, 2 + nsp))) if bias is not None else None
        gxp = np.zeros(xp.shape, dtype=x.dtype) if x.requires_grad else None
        if depthwise:
            gw = np.empty((cin, kvol), dtype=w.dtype)
            shp = (1, cin) + (1,) * nsp
            red = (0,) + tuple(range(2, 2 + nsp))
            for i, off in enumerate(offsets):
                gw[:, i] = (g * window(xp, off)).sum(axis=red)
                if gxp is not None:
                    window(gxp, off)[...] += g * wk[:, i].reshape(shp)
            gw = gw.reshape(w.shape)
        else:
            g2 = g.reshape(b, groups, cout // groups, npos)
            gw = np.matmul(g2, np.swapaxes(cols, 2, 3)).sum(axis=0).reshape(w.shape)
            if gxp is not None:
                gcols = np.matmul(np.swapaxes(wm, 1, 2)[None], g2).reshape((b, cin, kvol) + osz)
                for i, off in enumerate(offsets):
                    window(gxp, off)[...] += gcols[:, :, i]
        gx = None
        if gxp is not None:
            gx = gxp[(slice(None), slice(None)) + tuple(slice(padding, padding + s) for s in spatial)] \
                if padding else gxp
        return gx, gw, gb

    parents = (x, w) if bias is None else (x, w, bias)
    return _make(out, parents, backward, name)


def conv2d(x: Tensor, w: Tensor, bias: Optional[Tensor] = None, stride: int = 1,
           padding: int = 0, groups: int = 1) -> Tensor:
    """2-D cross-correlation of ``[B, C_in, H, W]`` with ``[C_out, C_in/groups, kh, kw]``."""
    return _conv_nd(x, w, bias, stride, padding, groups, 2, "conv2d")


def conv3d(x: Tensor, w: Tensor, bias: Optional[Tensor] = None, stride: int = 1,
           padding: int = 0, groups: int = 1) -> Tensor:
    """3-D cross-correlation of ``[B, C_in, L, H, W]`` with ``[C_out, C_in/groups, kl, kh, kw]``."""
    return _conv_nd(x, w, bias, stride, padding, groups, 3, "conv3d")


# ------------------------------------------------------------ losses

def mse(pred: Tensor, target: ArrayLike) -> Tensor:
    """Element-mean squared error."""
    target = as_tensor(target, like=pred)
    if pred.shape != target.shape:
        raise DimensionError(f"mse shapes differ: {pred.shape} vs {target.shape}")
    d = pred - target
    return mean(d * d)
