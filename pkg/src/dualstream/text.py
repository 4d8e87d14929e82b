"""Template vocabulary, tokenizer and a small self-attention text encoder."""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .attention import Attention
from .data import COLORS, DIRECTIONS, SHAPES
from .errors import ContractError, FormatError
from .nn import Embedding, LayerNorm, Linear, Module
from .tensor import Tensor

UNK, PAD = "<unk>", "<pad>"


class Vocabulary:
    """Dense word -> id map; ``<unk>`` is 0 and ``<pad>`` is 1."""

    def __init__(self, words):
        self.words = [UNK, PAD] + sorted(set(words) - {UNK, PAD})
        self.index = {w: i for i, w in enumerate(self.words)}

    @classmethod
    def from_templates(cls) -> "Vocabulary":
        return cls(["a", "moving", *COLORS, *SHAPES, *DIRECTIONS])

    def __len__(self) -> int:
        return len(self.words)

    @property
    def unk_id(self) -> int:
        return 0

    @property
    def pad_id(self) -> int:
        return 1

    def to_json(self) -> str:
        return json.dumps(self.words)

    @classmethod
    def from_json(cls, text: str) -> "Vocabulary":
        words = json.loads(text)
        if words[:2] != [UNK, PAD]:
            raise FormatError("vocabulary must start with <unk>, <pad>")
        vocab = cls(words[2:])
        if vocab.words != words:
            raise FormatError("vocabulary words are not in canonical order")
        return vocab


def tokenize(text: str, vocab: Vocabulary, max_len: int = 8) -> np.ndarray:
    """Lowercase, whitespace-split, map unknown words to ``<unk>``, truncate/pad to ``max_len``."""
    ids = [vocab.index.get(w, vocab.unk_id) for w in text.lower().split()][:max_len]
    ids += [vocab.pad_id] * (max_len - len(ids))
    return np.asarray(ids, dtype=np.int64)


@dataclass
class PromptEmbedding:
    """Token vectors ``[B, n, D]`` and the non-padding mask ``[B, n]``."""

    tokens: Tensor
    mask: np.ndarray

    def repeat(self, times: int) -> "PromptEmbedding":
        """Repeat each prompt ``times`` consecutively along the batch axis."""
        return PromptEmbedding(T.repeat(self.tokens, times, 0), np.repeat(self.mask, times, axis=0))


class EncoderLayer(Module):
    def __init__(self, dim: int, heads: int, rng, dtype=np.float32):
        self.norm1 = LayerNorm(dim, dtype=dtype)
        self.attn = Attention(dim, dim, dim, heads, rng, dtype=dtype)
        self.norm2 = LayerNorm(dim, dtype=dtype)
        self.fc1 = Linear(dim, 2 * dim, rng, dtype=dtype)
        self.fc2 = Linear(2 * dim, dim, rng, dtype=dtype)

    def forward(self, x: Tensor, mask: np.ndarray) -> Tensor:
        x = x + self.attn(self.norm1(x), key_mask=mask)
        return x + self.fc2(T.silu(self.fc1(self.norm2(x))))


class TextEncoder(Module):
    """Token + position embeddings followed by pre-norm self-attention layers.

    Padding positions are excluded from attention keys, so appending more
    padding leaves the outputs at content positions unchanged.
    """

    def __init__(self, vocab_size: int, dim: int = 64, layers: int = 2, heads: int = 4,
                 max_positions: int = 32, seed: int = 0, dtype=np.float32):
        rng = np.random.default_rng(seed)
        self.vocab_size = vocab_size
        self.pad_id = 1
        self.token = Embedding(vocab_size, dim, rng, dtype)
        self.position = Embedding(max_positions, dim, rng, dtype)
        self.layers = [EncoderLayer(dim, heads, rng, dtype) for _ in range(layers)]
        self.norm = LayerNorm(dim, dtype=dtype)

    @property
    def dim(self) -> int:
        return self.token.weight.shape[1]

    def forward(self, ids) -> PromptEmbedding:
        ids = np.atleast_2d(np.asarray(ids))
        if ids.dtype.kind not in "iu":
            raise ContractError("token ids must be integers")
        if ids.min() < 0 or ids.max() >= self.vocab_size:
            raise ContractError(f"token id outside [0, {self.vocab_size})")
        if ids.shape[1] > self.position.weight.shape[0]:
            raise ContractError(f"sequence of {ids.shape[1]} exceeds {self.position.weight.shape[0]} positions")
        mask = ids != self.pad_id
        x = self.token(ids) + self.position(np.arange(ids.shape[1]))
        for layer in self.layers:
            x = layer(x, mask)
        return PromptEmbedding(self.norm(x), mask)


def encode_text(ids, encoder: TextEncoder) -> PromptEmbedding:
    return encoder(ids)
