"""Paired comparison of the full sampler against a component-ablated one."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.stats import binomtest

from .errors import ConfigError
from .metrics import FrameEmbedder, frame_consistency
from .sampler import COMPONENTS, generate_batch
from .trainer import TrainState


@dataclass
class AblationResult:
    component: str
    prompts: list
    seeds: list
    full: np.ndarray        # frame consistency per (prompt, seed) pair, full model
    ablated: np.ndarray     # same pairs with the component disabled
    wins: int               # pairs where full > ablated
    ties: int
    p_value: float          # one-sided sign test, ties dropped

    @property
    def mean_difference(self) -> float:
        return float(np.mean(self.full - self.ablated))


def sign_test(a: np.ndarray, b: np.ndarray) -> tuple[int, int, float]:
    """One-sided paired sign test of ``a > b``; returns ``(wins, ties, p)``."""
    a, b = np.asarray(a), np.asarray(b)
    wins = int(np.sum(a > b))
    ties = int(np.sum(a == b))
    n = len(a) - ties
    p = binomtest(wins, n, 0.5, alternative="greater").pvalue if n else 1.0
    return wins, ties, float(p)


def ablation_study(state: TrainState, embedder: FrameEmbedder, prompts: Sequence[str],
                   seeds: Sequence[int], component: str = "motion_stream",
                   steps=None, batch: int = 8) -> AblationResult:
    """Frame consistency of full vs ablated samples over every ``prompt x seed`` pair.

    Both arms use identical seeds, so they share the content noise draws.
    """
    if component not in COMPONENTS:
        raise ConfigError(f"unknown component {component!r}")
    pairs = [(p, s) for p in prompts for s in seeds]
    scores = {None: [], component: []}
    for disable in scores:
        for i in range(0, len(pairs), batch):
            chunk = pairs[i:i + batch]
            gens = generate_batch([p for p, _ in chunk], [s for _, s in chunk], state, steps,
                                  disable=disable)
            scores[disable].extend(frame_consistency(g.video, embedder) for g in gens)
    full, ablated = np.array(scores[None]), np.array(scores[component])
    wins, ties, p = sign_test(full, ablated)
    return AblationResult(component, [p for p, _ in pairs], [s for _, s in pairs],
                          full, ablated, wins, ties, p)
