"""
Central finite-difference verification of analytic gradients.

The relative error of an analytic gradient ``a`` against a numeric one ``n``
is ``max|a - n| / max(max|a|, max|n|, 1e-12)`` over all checked entries.
All checks run in float64.
"""
from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np

from . import tensor as T
from .content import ContentUNet
from .interaction import DualStreamDenoiser
from .motion_stream import MotionUNet
from .tensor import Tensor
from .text import PromptEmbedding, TextEncoder

EPS = 1e-5
TOLERANCE = 1e-4


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    analytic, numeric = np.asarray(analytic), np.asarray(numeric)
    scale = max(np.abs(analytic).max(initial=0.0), np.abs(numeric).max(initial=0.0), 1e-12)
    return float(np.abs(analytic - numeric).max(initial=0.0) / scale)


def check_function(fn: Callable[..., Tensor], inputs: Sequence[np.ndarray], eps: float = EPS,
                   entries: Optional[int] = None, rng: Optional[np.random.Generator] = None) -> list[float]:
    """Compare autodiff and central differences for a scalar-valued ``fn(*tensors)``.

    ``entries`` limits the number of perturbed coordinates per input (chosen
    with ``rng``); ``None`` checks every coordinate.  Returns one relative
    error per input.
    """
    arrays = [np.array(x, dtype=np.float64) for x in inputs]
    tensors = [Tensor(a, requires_grad=True) for a in arrays]
    loss = fn(*tensors)
    loss.backward()
    analytic = [t.grad if t.grad is not None else np.zeros_like(t.data) for t in tensors]

    errors = []
    for i, arr in enumerate(arrays):
        flat = arr.reshape(-1)
        idx = np.arange(flat.size)
        if entries is not None and flat.size > entries:
            idx = (rng or np.random.default_rng(0)).choice(flat.size, entries, replace=False)
        num = np.empty(len(idx))
        for j, k in enumerate(idx):
            orig = flat[k]
            flat[k] = orig + eps
            fp = _evaluate(fn, arrays)
            flat[k] = orig - eps
            fm = _evaluate(fn, arrays)
            flat[k] = orig
            num[j] = (fp - fm) / (2 * eps)
        errors.append(relative_error(analytic[i].reshape(-1)[idx], num))
    return errors


def _evaluate(fn, arrays) -> float:
    with T.no_grad():
        return float(fn(*[Tensor(a) for a in arrays]).data)


def check_parameters(loss_fn: Callable[[], Tensor], params: Sequence[Tensor], eps: float = EPS,
                     entries: int = 6, rng: Optional[np.random.Generator] = None) -> float:
    """Finite-difference check on sampled coordinates of model parameters (in place)."""
    rng = rng or np.random.default_rng(0)
    for p in params:
        p.grad = None
    loss_fn().backward()
    worst_a, worst_n = [], []
    for p in params:
        flat = p.data.reshape(-1)
        analytic = (p.grad if p.grad is not None else np.zeros_like(p.data)).reshape(-1)
        idx = rng.choice(flat.size, min(entries, flat.size), replace=False)
        for k in idx:
            orig = flat[k]
            flat[k] = orig + eps
            with T.no_grad():
                fp = float(loss_fn().data)
            flat[k] = orig - eps
            with T.no_grad():
                fm = float(loss_fn().data)
            flat[k] = orig
            worst_a.append(analytic[k])
            worst_n.append((fp - fm) / (2 * eps))
    return relative_error(np.array(worst_a), np.array(worst_n))


def _projected(fn):
    """Turn a tensor-valued kernel into a scalar by a fixed random projection."""
    cache = {}

    def scalar(*ts):
        out = fn(*ts)
        if out.shape not in cache:
            cache[out.shape] = np.random.default_rng(1234).normal(size=out.shape)
        return T.tsum(out * cache[out.shape])
    return scalar


def kernel_cases(rng: np.random.Generator) -> dict[str, tuple[Callable, list[np.ndarray]]]:
    """Randomised small-shape cases for every differentiable kernel."""
    n = lambda *s: rng.normal(size=s)
    m, k, p = rng.integers(1, 5, size=3)
    c = int(rng.integers(1, 3)) * 2
    return {
        "add": (lambda a, b: a + b, [n(3, 4), n(1, 4)]),
        "sub": (lambda a, b: a - b, [n(2, 3), n(2, 1)]),
        "mul": (lambda a, b: a * b, [n(3, 4), n(4)]),
        "div": (lambda a, b: a / b, [n(3, 4), rng.uniform(0.5, 2.0, size=(3, 4))]),
        "pow": (lambda a: T.power(a, 3.0), [n(5)]),
        "exp": (T.exp, [n(4, 3)]),
        "log": (T.log, [rng.uniform(0.5, 3.0, size=(4, 3))]),
        "sqrt": (T.sqrt, [rng.uniform(0.5, 3.0, size=(6,))]),
        "tanh": (T.tanh, [n(4, 3)]),
        "sigmoid": (T.sigmoid, [n(4, 3)]),
        "silu": (T.silu, [n(4, 3)]),
        "sum": (lambda a: T.tsum(a, axis=1), [n(3, 4, 2)]),
        "mean": (lambda a: T.mean(a, axis=(0, 2), keepdims=True), [n(3, 4, 2)]),
        "reshape": (lambda a: T.reshape(a, (4, 6)), [n(2, 3, 4)]),
        "transpose": (lambda a: T.transpose(a, (2, 0, 1)), [n(2, 3, 4)]),
        "getitem": (lambda a: a[1:, ::2], [n(3, 5)]),
        "concat": (lambda a, b: T.concat([a, b], axis=1), [n(2, 3), n(2, 2)]),
        "repeat": (lambda a: T.repeat(a, 3, axis=1), [n(2, 3)]),
        "avg_pool": (lambda a: T.avg_pool(a, 2, (2, 3)), [n(1, 2, 4, 4)]),
        "space_to_depth": (lambda a: T.space_to_depth(a, 2), [n(1, 2, 4, 6)]),
        "depth_to_space": (lambda a: T.depth_to_space(a, 2), [n(1, 8, 2, 3)]),
        "take_rows": (lambda w: T.take_rows(w, np.array([[0, 2, 2], [1, 0, 3]])), [n(4, 3)]),
        "matmul": (T.matmul, [n(2, int(m), int(k)), n(int(k), int(p))]),
        "softmax": (lambda a: T.softmax(a, axis=-1), [n(3, 5)]),
        "log_softmax": (lambda a: T.log_softmax(a, axis=0), [n(4, 3)]),
        "group_norm": (lambda x, w, b: T.group_norm(x, 2, 1e-5, w, b),
                       [n(2, c, 3, 3), n(c), n(c)]),
        "layer_norm": (lambda x, w, b: T.layer_norm(x, 1e-5, w, b), [n(3, 6), n(6), n(6)]),
        "conv2d": (lambda x, w, b: T.conv2d(x, w, b, padding=1), [n(2, 3, 5, 4), n(4, 3, 3, 3), n(4)]),
        "conv2d_strided": (lambda x, w: T.conv2d(x, w, stride=2, padding=1), [n(1, 2, 6, 6), n(3, 2, 3, 3)]),
        "conv2d_grouped": (lambda x, w: T.conv2d(x, w, padding=0, groups=2), [n(1, 4, 4, 4), n(6, 2, 2, 2)]),
        "conv2d_depthwise": (lambda x, w: T.conv2d(x, w, padding=1, groups=3), [n(2, 3, 4, 4), n(3, 1, 3, 3)]),
        "conv3d": (lambda x, w, b: T.conv3d(x, w, b, padding=1), [n(1, 2, 3, 4, 4), n(3, 2, 3, 3, 3), n(3)]),
        "mse": (lambda a, b: T.mse(a, b), [n(3, 4), n(3, 4)]),
    }


def run_kernel_suite(seeds: Sequence[int] = range(20), eps: float = EPS) -> dict[str, float]:
    """Worst relative error per kernel over the given seeds."""
    worst: dict[str, float] = {}
    for seed in seeds:
        rng = np.random.default_rng(seed)
        for name, (fn, inputs) in kernel_cases(rng).items():
            err = max(check_function(_projected(fn), inputs, eps))
            worst[name] = max(worst.get(name, 0.0), err)
    return worst


def _tiny_models(seed: int = 0):
    rng = np.random.default_rng(seed)
    content = ContentUNet(4, width=8, context_dim=8, heads=2, rank=2, seed=seed, dtype=np.float64)
    motion = MotionUNet(4, width=4, context_dim=8, heads=2, seed=seed + 1, dtype=np.float64)
    model = DualStreamDenoiser(content, motion, inner_dim=8, heads=2, seed=seed + 2, dtype=np.float64)
    # zero-initialised layers (adapters, output convs, exchange outputs) would
    # hide every upstream gradient, so all weights are redrawn at random
    for p in model.parameters():
        p.data = rng.normal(0.0, 0.3, size=p.shape)
    tokens = Tensor(rng.normal(size=(1, 3, 8)))
    prompt = PromptEmbedding(tokens, np.array([[True, True, False]]))
    return model, prompt, rng


def check_networks(seed: int = 0, entries: int = 2) -> dict[str, float]:
    """Finite-difference checks of both U-Nets, the coupled denoiser and the text encoder (float64).

    Inputs are ``[1, 2, 4, 4, 4]`` latents; every parameter tensor has
    ``entries`` sampled coordinates checked, and ``entries * 8`` input
    coordinates are checked per network.
    """
    model, prompt, rng = _tiny_models(seed)
    z = rng.normal(size=(1, 2, 4, 4, 4))
    m = rng.normal(size=(1, 2, 4, 4, 4))
    t = np.array([3])
    proj_c = rng.normal(size=z.shape)
    proj_m = rng.normal(size=m.shape)
    zt, mt = Tensor(z), Tensor(m)
    results = {}

    def content_loss():
        return T.tsum(model.content(zt, t, prompt) * proj_c)

    def motion_loss():
        return T.tsum(model.motion(mt, t, prompt) * proj_m)

    def joint_loss():
        ec, em = model(zt, mt, t, prompt)
        return T.tsum(ec * proj_c) + T.tsum(em * proj_m)

    results["content_unet.params"] = check_parameters(content_loss, model.content.parameters(), entries=entries, rng=rng)
    results["motion_unet.params"] = check_parameters(motion_loss, model.motion.parameters(), entries=entries, rng=rng)
    results["dual_stream.params"] = check_parameters(joint_loss, model.parameters(), entries=1, rng=rng)
    text = TextEncoder(7, dim=8, layers=1, heads=2, max_positions=4, seed=seed, dtype=np.float64)
    ids = np.array([[2, 5, 1, 1]])
    proj_t = rng.normal(size=(1, 4, 8))
    results["text_encoder.params"] = check_parameters(
        lambda: T.tsum(text(ids).tokens * proj_t), text.parameters(), entries=entries * 2, rng=rng)
    results["content_unet.input"] = max(check_function(
        lambda x: T.tsum(model.content(x, t, prompt) * proj_c), [z], entries=entries * 8, rng=rng))
    results["motion_unet.input"] = max(check_function(
        lambda x: T.tsum(model.motion(x, t, prompt) * proj_m), [m], entries=entries * 8, rng=rng))
    return results
