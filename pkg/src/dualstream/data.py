"""Captioned toy videos of moving coloured shapes."""
from __future__ import annotations

import hashlib
import itertools
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, ContractError

SHAPES = ("square", "circle")
COLORS = {"red": (1.0, 0.0, 0.0), "green": (0.0, 1.0, 0.0), "blue": (0.0, 0.0, 1.0)}
DIRECTIONS = {"right": (1, 0), "left": (-1, 0), "up": (0, -1), "down": (0, 1)}
SPEEDS = (1, 2)
TEMPLATE = "a {color} {shape} moving {direction}"


@dataclass(frozen=True)
class SceneSpec:
    shape: str
    color: str
    direction: str
    speed: int
    x: int
    y: int
    frames: int = 8
    canvas: int = 64
    size: int = 16

    @property
    def caption(self) -> str:
        return TEMPLATE.format(color=self.color, shape=self.shape, direction=self.direction)

    def position(self, k: int) -> tuple[int, int]:
        """Top-left corner of the shape's bounding box in frame ``k`` (clamped to the canvas)."""
        dx, dy = DIRECTIONS[self.direction]
        hi = self.canvas - self.size
        x = min(max(self.x + k * self.speed * dx, 0), hi)
        y = min(max(self.y + k * self.speed * dy, 0), hi)
        return x, y


def render(spec: SceneSpec) -> tuple[np.ndarray, str]:
    """Render ``[L, 3, canvas, canvas]`` float32 frames in [0, 1] plus the caption."""
    if spec.shape not in SHAPES or spec.color not in COLORS or spec.direction not in DIRECTIONS:
        raise ConfigError(f"unknown scene fields in {spec}")
    if spec.size < 1 or spec.canvas < spec.size:
        raise ConfigError(f"canvas {spec.canvas} smaller than shape size {spec.size}")
    if spec.frames < 1 or spec.speed < 0:
        raise ConfigError(f"invalid frames/speed in {spec}")
    if spec.shape == "circle":
        r = spec.size / 2.0
        yy, xx = np.mgrid[0:spec.size, 0:spec.size] + 0.5
        mask = (xx - r) ** 2 + (yy - r) ** 2 <= r * r
    else:
        mask = np.ones((spec.size, spec.size), dtype=bool)
    color = np.asarray(COLORS[spec.color], dtype=np.float32)[:, None, None]
    video = np.zeros((spec.frames, 3, spec.canvas, spec.canvas), dtype=np.float32)
    for k in range(spec.frames):
        x, y = spec.position(k)
        patch = video[k, :, y:y + spec.size, x:x + spec.size]
        patch[:] = np.where(mask[None], color, patch)
    return video, spec.caption


def parse_caption(caption: str) -> tuple[str, str, str]:
    """Recover ``(color, shape, direction)`` from a template caption."""
    words = caption.strip().lower().split()
    if len(words) != 5 or words[0] != "a" or words[3] != "moving":
        raise ContractError(f"caption does not follow the template: {caption!r}")
    color, shape, direction = words[1], words[2], words[4]
    if color not in COLORS or shape not in SHAPES or direction not in DIRECTIONS:
        raise ContractError(f"caption has unknown slot values: {caption!r}")
    return color, shape, direction


def make_specs(n: int, seed: int, frames: int = 8, canvas: int = 64, size: int = 16) -> list[SceneSpec]:
    """Seeded scene specs; every block of 24 consecutive clips covers each caption once."""
    if n < 1:
        raise ConfigError(f"corpus size must be >= 1, got {n}")
    rng = np.random.default_rng(seed)
    combos = list(itertools.product(COLORS, SHAPES, DIRECTIONS))
    specs = []
    order: list[int] = []
    for _ in range(n):
        if not order:
            order = list(rng.permutation(len(combos)))
        color, shape, direction = combos[order.pop()]
        speed = int(rng.choice(SPEEDS))
        travel = (frames - 1) * speed
        dx, dy = DIRECTIONS[direction]
        span_x = canvas - size - (travel if dx else 0)
        span_y = canvas - size - (travel if dy else 0)
        if span_x < 0 or span_y < 0:
            raise ConfigError(f"canvas {canvas} too small for size {size} moving {travel}px")
        x = int(rng.integers(0, span_x + 1)) + (travel if dx < 0 else 0)
        y = int(rng.integers(0, span_y + 1)) + (travel if dy < 0 else 0)
        specs.append(SceneSpec(shape, color, direction, speed, x, y, frames, canvas, size))
    return specs


def make_corpus(n: int, seed: int, frames: int = 8, canvas: int = 64) -> list[tuple[np.ndarray, str]]:
    return [render(s) for s in make_specs(n, seed, frames, canvas)]


HELD_OUT_SEED_OFFSET = 1000


def held_out_corpus(n: int, corpus_seed: int, frames: int = 8, canvas: int = 64) -> list[tuple[np.ndarray, str]]:
    """Clips drawn from a seed stream disjoint from the training corpus of ``corpus_seed``."""
    return make_corpus(n, corpus_seed + HELD_OUT_SEED_OFFSET, frames, canvas)


def corpus_hash(corpus: list[tuple[np.ndarray, str]]) -> str:
    h = hashlib.sha256()
    for video, caption in corpus:
        h.update(caption.encode())
        h.update(np.ascontiguousarray(video, dtype="<f4").tobytes())
    return h.hexdigest()


def stack_videos(corpus: list[tuple[np.ndarray, str]]) -> tuple[np.ndarray, list[str]]:
    return np.stack([v for v, _ in corpus]), [c for _, c in corpus]


def dump_corpus(corpus: list[tuple[np.ndarray, str]], out_dir) -> list[Path]:
    """One directory per clip holding ``frame_###.ppm`` files and ``caption.txt``."""
    from .media import write_frames

    out_dir = Path(out_dir)
    paths = []
    for i, (video, caption) in enumerate(corpus):
        clip_dir = out_dir / f"clip_{i:04d}"
        write_frames(video, clip_dir)
        (clip_dir / "caption.txt").write_text(caption + "\n")
        paths.append(clip_dir)
    return paths
