"""
Synchronised ancestral sampling of both streams, motion fusion and decoding.

Random draws per sample come from ``default_rng(seed)`` in this order:

1. content prior ``z_T``, then motion prior ``m_T`` (each ``[L, C, h, w]``);
2. for every reduced step ``i = steps .. 2``: content noise, then motion noise.

The motion draws happen even when the motion stream is disabled, so an
ablated run sees exactly the content noise of the full run with the same seed.
At every step both streams are predicted from the current pair
``(z_t, m_t)`` before either is advanced.
"""
from __future__ import annotations

from contextlib import contextmanager
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional, Sequence, Union

import numpy as np

from . import tensor as T
from .errors import ConfigError
from .media import write_frames, write_manifest
from .motion import combine
from .schedule import p_step, respace
from .text import tokenize
from .trainer import TrainState

COMPONENTS = ("motion_stream", "interaction", "adapter")
Denoise = Callable[[np.ndarray, np.ndarray, int], tuple]


@dataclass
class Generation:
    prompt: str
    seed: int
    steps: int
    disabled: Optional[str]
    video: np.ndarray        # [L, 3, H, W] in [0, 1]
    content: np.ndarray      # final content latents [L, C, h, w]
    motion: np.ndarray       # final motion latents [L, C, h, w]
    fused: np.ndarray        # latents handed to the decoder

    def manifest(self, state: TrainState) -> dict:
        from . import __version__
        return {"prompt": self.prompt, "seed": self.seed, "steps": self.steps,
                "frames": int(self.video.shape[0]), "disabled": self.disabled,
                "config_hash": state.config.hash(), "config": state.config.to_dict(),
                "version": __version__}


def _check_component(disable: Optional[str]):
    if disable is not None and disable not in COMPONENTS:
        raise ConfigError(f"unknown component {disable!r}; choose from {', '.join(COMPONENTS)}")


@contextmanager
def _adapter_scale(state: TrainState, scale: float):
    content = state.model.content
    saved = [a.scale for a in content.adapters()]
    content.set_adapter_scale(scale)
    try:
        yield
    finally:
        for a, s in zip(content.adapters(), saved):
            a.scale = s


def reverse_chain(shape: tuple, denoise: Denoise, schedule, rngs: Sequence[np.random.Generator],
                  dtype=np.float32) -> tuple[np.ndarray, np.ndarray]:
    """Run both reverse chains from their priors.

    ``denoise(z_t, m_t, i)`` returns ``(eps_content, eps_motion)`` for reduced
    step ``i``; ``schedule`` is the (possibly respaced) schedule the chain
    walks.  ``rngs`` holds one generator per batch entry.
    """
    z_list, m_list = [], []
    for r in rngs:
        z_list.append(r.standard_normal(shape, dtype=dtype))
        m_list.append(r.standard_normal(shape, dtype=dtype))
    z, m = np.stack(z_list), np.stack(m_list)
    for i in range(schedule.T, 0, -1):
        eps_c, eps_m = denoise(z, m, i)
        if i > 1:
            nz, nm = [], []
            for r in rngs:
                nz.append(r.standard_normal(shape, dtype=dtype))
                nm.append(r.standard_normal(shape, dtype=dtype))
            noise_z, noise_m = np.stack(nz), np.stack(nm)
        else:
            noise_z = noise_m = None
        z = p_step(z, eps_c, i, schedule, noise_z)
        m = p_step(m, eps_m, i, schedule, noise_m)
    return z, m


def generate_batch(prompts: Sequence[str], seeds: Sequence[int], state: TrainState,
                   steps: Optional[int] = None, frames: Optional[int] = None,
                   disable: Optional[str] = None) -> list[Generation]:
    """Sample one video per ``(prompt, seed)`` pair in a single batched chain.

    Each pair owns its random stream, so its draws match :func:`generate`;
    results can still differ from a batch of one in the last float bits
    because batched matrix products round differently.
    """
    _check_component(disable)
    c = state.config
    if len(prompts) != len(seeds) or not prompts:
        raise ConfigError("need one seed per prompt and at least one prompt")
    steps = c.sample_steps if steps is None else steps
    if not isinstance(steps, (int, np.integer)) or steps < 1:
        raise ConfigError(f"steps must be a positive integer, got {steps!r}")
    frames = c.frames if frames is None else frames
    if frames < 2:
        raise ConfigError(f"need at least 2 frames, got {frames}")
    model = state.model
    schedule, kept = respace(state.schedule, int(steps))
    shape = (frames,) + state.codec.latent_shape
    ids = np.stack([tokenize(p, state.vocab, c.max_tokens) for p in prompts])
    rngs = [np.random.default_rng(int(s)) for s in seeds]
    motion_on = disable != "motion_stream"
    interaction_on = disable != "interaction"

    with T.no_grad(), _adapter_scale(state, 0.0 if disable == "adapter" else c.adapter_scale):
        prompt = model.text(ids)

        def denoise(z, m, i):
            t = np.full(len(prompts), kept[i - 1])
            if motion_on:
                eps_c, eps_m = model.denoiser(z, m, t, prompt, interaction=interaction_on)
                return eps_c.data, eps_m.data
            return model.content(z, t, prompt).data, np.zeros_like(m)

        z, m = reverse_chain(shape, denoise, schedule, rngs)
        fused = combine(z, m, model.ops).data if motion_on else z
    video = state.codec.decode(fused)
    return [Generation(p, int(s), int(steps), disable, video[k], z[k], m[k], fused[k])
            for k, (p, s) in enumerate(zip(prompts, seeds))]


def generate(prompt: str, state: TrainState, seed: int = 0, steps: Optional[int] = None,
             frames: Optional[int] = None) -> Generation:
    """Sample one video for ``prompt``; deterministic given ``seed`` and the weights."""
    return generate_batch([prompt], [seed], state, steps, frames)[0]


def ablate_generate(prompt: str, state: TrainState, disable: str, seed: int = 0,
                    steps: Optional[int] = None, frames: Optional[int] = None) -> Generation:
    """As :func:`generate` with one component bypassed.

    ``motion_stream``: content stream alone, combiner skipped.
    ``interaction``: both streams run without the exchange.
    ``adapter``: low-rank increments at strength 0.
    """
    if disable not in COMPONENTS:
        _check_component(disable)
    return generate_batch([prompt], [seed], state, steps, frames, disable)[0]


def write_generation(gen: Generation, state: TrainState, out_dir: Union[str, Path]) -> Path:
    """``frame_000.ppm`` ... plus ``manifest.json`` in ``out_dir``."""
    out_dir = Path(out_dir)
    write_frames(gen.video, out_dir)
    write_manifest(out_dir / "manifest.json", gen.manifest(state))
    return out_dir
