"""
Frame consistency and textual alignment measured with a small contrastive embedder.

The :class:`FrameEmbedder` maps single frames and prompts into one unit-norm
space.  It is trained separately from the generator (:func:`train_embedder`)
and frozen, so evaluation never shares weights with the model under test.
Scores are raw cosines in [-1, 1].
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import tensor as T
from .config import Config
from .data import make_corpus, stack_videos
from .errors import ConfigError, ContractError, DimensionError, StateError
from .nn import Adam, Conv2d, Linear, Module
from .tensor import Tensor
from .text import TextEncoder, Vocabulary, tokenize


def _unit(x: Tensor) -> Tensor:
    return x / T.sqrt(T.tsum(x * x, axis=-1, keepdims=True) + 1e-12)


class FrameEmbedder(Module):
    """Conv frame encoder and prompt head sharing a ``dim``-wide unit sphere."""

    _buffers = ("trained",)

    def __init__(self, vocab_size: int, dim: int = 32, image_size: int = 64, max_tokens: int = 8,
                 seed: int = 0, dtype=np.float32):
        if image_size % 8:
            raise ConfigError(f"image size {image_size} must be divisible by 8")
        rng = np.random.default_rng(seed)
        self.image_size = image_size
        self.max_tokens = max_tokens
        self.c1 = Conv2d(12, 16, 3, rng, stride=2, dtype=dtype)
        self.c2 = Conv2d(16, 32, 3, rng, stride=2, dtype=dtype)
        self.c3 = Conv2d(32, 32, 3, rng, stride=2, dtype=dtype)
        cells = (image_size // 16) ** 2
        self.frame_out = Linear(32 * cells, dim, rng, dtype=dtype)
        self.text = TextEncoder(vocab_size, 32, layers=1, heads=2, max_positions=max(32, max_tokens),
                                seed=int(rng.integers(2 ** 31)), dtype=dtype)
        self.text_out = Linear(32, dim, rng, dtype=dtype)
        self.trained = np.array(0)

    def frame_vectors(self, frames) -> Tensor:
        """``[N, 3, H, W]`` -> unit vectors ``[N, dim]``."""
        x = T.as_tensor(frames)
        if x.ndim != 4 or x.shape[1:] != (3, self.image_size, self.image_size):
            raise DimensionError(f"expected [N, 3, {self.image_size}, {self.image_size}] frames, got {x.shape}")
        h = T.silu(self.c1(T.space_to_depth(x, 2)))
        h = T.silu(self.c2(h))
        h = T.silu(self.c3(h))
        return _unit(self.frame_out(T.reshape(h, (h.shape[0], -1))))

    def prompt_vectors(self, ids) -> Tensor:
        """Token ids ``[N, n]`` -> unit vectors ``[N, dim]`` (masked mean of token features)."""
        emb = self.text(ids)
        mask = emb.mask.astype(emb.tokens.dtype)[..., None]
        pooled = T.tsum(emb.tokens * mask, axis=1) / np.maximum(mask.sum(axis=1), 1.0)
        return _unit(self.text_out(pooled))

    def embed_frames(self, frames: np.ndarray, chunk: int = 64) -> np.ndarray:
        frames = np.asarray(frames, dtype=np.float32)
        with T.no_grad():
            return np.concatenate([self.frame_vectors(frames[i:i + chunk]).data
                                   for i in range(0, len(frames), chunk)])

    def embed_prompts(self, prompts: Sequence[str], vocab: Vocabulary) -> np.ndarray:
        ids = np.stack([tokenize(p, vocab, self.max_tokens) for p in prompts])
        with T.no_grad():
            return self.prompt_vectors(ids).data


@dataclass
class EmbedderReport:
    epoch_losses: list = field(default_factory=list)


def train_embedder(embedder: FrameEmbedder, videos: np.ndarray, captions: Sequence[str],
                   vocab: Vocabulary, epochs: int = 6, lr: float = 2e-3, temperature: float = 0.1,
                   batch_size: int = 64, seed: int = 0) -> EmbedderReport:
    """Contrastive fit: each frame must pick its caption among all distinct corpus captions.

    ``videos`` is ``[N, L, 3, H, W]`` with one caption per clip.  The embedder
    is frozen and marked trained afterwards.
    """
    videos = np.asarray(videos, dtype=np.float32)
    if len(videos) != len(captions) or len(videos) == 0:
        raise ConfigError("need one caption per video and at least one video")
    classes = sorted(set(captions))
    label_of = {c: i for i, c in enumerate(classes)}
    frames = videos.reshape((-1,) + videos.shape[2:])
    labels = np.repeat([label_of[c] for c in captions], videos.shape[1])
    class_ids = np.stack([tokenize(c, vocab, embedder.max_tokens) for c in classes])
    rng = np.random.default_rng(seed)
    embedder.unfreeze()
    opt = Adam(embedder.parameters(), lr=lr)
    report = EmbedderReport()
    for _ in range(epochs):
        order = rng.permutation(len(frames))
        losses = []
        for i in range(0, len(order), batch_size):
            sel = order[i:i + batch_size]
            opt.zero_grad()
            f = embedder.frame_vectors(frames[sel])
            p = embedder.prompt_vectors(class_ids)
            logits = T.matmul(f, T.transpose(p)) * (1.0 / temperature)
            logp = T.log_softmax(logits, axis=1)
            onehot = np.zeros(logits.shape, dtype=np.float32)
            onehot[np.arange(len(sel)), labels[sel]] = 1.0
            loss = -T.tsum(logp * onehot) * (1.0 / len(sel))
            loss.backward()
            opt.step()
            losses.append(loss.item())
        report.epoch_losses.append(float(np.mean(losses)))
    embedder.freeze()
    embedder.trained = np.array(1)
    return report


def build_embedder(config: Config, vocab_size: int) -> FrameEmbedder:
    """Untrained embedder with the configured width and its own weight seed."""
    from .trainer import sub_seed
    return FrameEmbedder(vocab_size, config.embedder_dim, config.image_size, config.max_tokens,
                         seed=sub_seed(config.seed, 6))


def fit_embedder(config: Config, vocab: Vocabulary) -> tuple[FrameEmbedder, EmbedderReport]:
    """Build and train an embedder on ``embedder_corpus_size`` clips of the training seed stream."""
    videos, captions = stack_videos(make_corpus(config.embedder_corpus_size, config.corpus_seed, config.frames,
                                                config.image_size))
    emb = build_embedder(config, len(vocab))
    report = train_embedder(emb, videos, captions, vocab, config.embedder_epochs, config.embedder_lr,
                            config.embedder_temperature, seed=config.seed)
    return emb, report


def mean_pairwise_cosine(vectors: np.ndarray) -> float:
    """Mean cosine similarity over all unordered pairs of rows."""
    v = np.asarray(vectors, dtype=np.float64)
    if v.ndim != 2 or len(v) < 2:
        raise ContractError(f"need at least 2 vectors, got shape {v.shape}")
    v = v / np.linalg.norm(v, axis=1, keepdims=True)
    sims = v @ v.T
    iu = np.triu_indices(len(v), k=1)
    return float(sims[iu].mean())


def mean_cosine_to(vectors: np.ndarray, target: np.ndarray) -> float:
    """Mean cosine between each row of ``vectors`` and ``target``."""
    v = np.asarray(vectors, dtype=np.float64)
    t = np.asarray(target, dtype=np.float64).reshape(-1)
    v = v / np.linalg.norm(v, axis=1, keepdims=True)
    return float((v @ (t / np.linalg.norm(t))).mean())


def _require_trained(embedder: FrameEmbedder):
    if not int(embedder.trained):
        raise StateError("frame embedder has not been trained; run train_embedder first")


def frame_consistency(video: np.ndarray, embedder: FrameEmbedder) -> float:
    """Mean cosine between the embeddings of all ``L(L-1)/2`` frame pairs of ``[L, 3, H, W]``."""
    video = np.asarray(video)
    if video.ndim != 4 or video.shape[0] < 2:
        raise ContractError(f"frame consistency needs a [L>=2, 3, H, W] video, got {video.shape}")
    return mean_pairwise_cosine(embedder.embed_frames(video))


def textual_alignment(video: np.ndarray, prompt: str, embedder: FrameEmbedder, vocab: Vocabulary) -> float:
    """Mean cosine between each frame embedding and the prompt embedding."""
    _require_trained(embedder)
    video = np.asarray(video)
    if video.ndim != 4:
        raise DimensionError(f"expected a [L, 3, H, W] video, got {video.shape}")
    return mean_cosine_to(embedder.embed_frames(video), embedder.embed_prompts([prompt], vocab)[0])


def matched_vs_shuffled(videos: np.ndarray, captions: Sequence[str], embedder: FrameEmbedder,
                        vocab: Vocabulary, seed: int = 0) -> tuple[float, np.ndarray, np.ndarray]:
    """Fraction of clips whose own caption aligns better than a mismatched one.

    The mismatched caption of clip ``i`` is the caption of clip ``perm[i]``
    for a seeded permutation redrawn until no clip keeps its own caption text.
    Returns ``(fraction, matched_scores, shuffled_scores)``.
    """
    captions = list(captions)
    if len(set(captions)) < 2:
        raise ConfigError("need at least two distinct captions to shuffle")
    rng = np.random.default_rng(seed)
    while True:
        perm = rng.permutation(len(captions))
        if all(captions[p] != c for p, c in zip(perm, captions)):
            break
    matched = np.array([textual_alignment(v, c, embedder, vocab) for v, c in zip(videos, captions)])
    shuffled = np.array([textual_alignment(v, captions[p], embedder, vocab) for v, p in zip(videos, perm)])
    return float(np.mean(matched > shuffled)), matched, shuffled
