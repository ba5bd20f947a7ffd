"""Pair similarity, the similarity-to-ratio law, and hidden-state mixing.

Pairs are mixed with a ratio lambda in [0.5, beta]. In ``lh`` mode lambda
is a deterministic function of the pair's local-hierarchy similarity,

    s = 0.5 * (cos(h_i, h_j) + 1)        in [0, 1]
    lambda = -(beta - 0.5) * s**alpha + beta

so identical hierarchies mix hardest (lambda = 0.5) and unrelated ones
barely mix (lambda = beta). ``vanilla`` mode instead draws lambda from a
symmetrized Beta(a, a), landing in the comparable range [0.5, 1].

One lambda is computed per pair and shared across all hierarchy depths,
since the similarity comes from a single [CLS] pair.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

logger = logging.getLogger(__name__)

MODES = ("off", "vanilla", "lh")


@dataclass(frozen=True)
class MixupConfig:
    mode: str = "off"
    alpha: float = 1.0
    beta_cap: float = 1.0
    vanilla_concentration: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.alpha <= 0:
            raise ValueError("alpha must be > 0")
        if not 0.5 < self.beta_cap <= 1.0:
            raise ValueError("beta_cap must lie in (0.5, 1]")
        if self.vanilla_concentration <= 0:
            raise ValueError("vanilla_concentration must be > 0")


@dataclass(frozen=True)
class MixPair:
    index_i: int
    index_j: int
    lam: float
    s: float | None = None  # undefined for vanilla draws


def similarity(h_cls_i: np.ndarray, h_cls_j: np.ndarray) -> float:
    """Cosine similarity remapped to [0, 1], clamped against float drift."""
    norm_i = float(np.linalg.norm(h_cls_i))
    norm_j = float(np.linalg.norm(h_cls_j))
    if norm_i == 0.0 or norm_j == 0.0:
        raise ValueError("similarity is undefined for a zero-norm vector")
    cos = float(np.dot(h_cls_i, h_cls_j)) / (norm_i * norm_j)
    return min(max(0.5 * (cos + 1.0), 0.0), 1.0)


def mix_ratio(s: float, alpha: float, beta_cap: float) -> float:
    """lambda = -(beta - 0.5) * s**alpha + beta, clamped to [0.5, beta]."""
    if not 0.0 <= s <= 1.0:
        raise ValueError(f"similarity must lie in [0, 1], got {s}")
    lam = -(beta_cap - 0.5) * s**alpha + beta_cap
    return min(max(lam, 0.5), beta_cap)


def sample_vanilla_ratio(rng: np.random.Generator, concentration: float) -> float:
    """Beta(a, a) draw folded onto [0.5, 1] so orientation weighs index_i."""
    lam = float(rng.beta(concentration, concentration))
    return max(lam, 1.0 - lam)


def mix_hidden(lam: float, h_i: np.ndarray, h_j: np.ndarray) -> np.ndarray:
    if h_i.shape != h_j.shape:
        raise ValueError(f"shape mismatch: {h_i.shape} vs {h_j.shape}")
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"mixing ratio must lie in [0, 1], got {lam}")
    return lam * h_i + (1.0 - lam) * h_j


def pair_batch(batch_size: int, rng: np.random.Generator) -> list[tuple[int, int]]:
    """Uniformly random fixed-point-free pairing (i, pi(i)) over the batch.

    Rejection-sampling permutations keeps the law uniform over
    derangements. Batches below two members cannot be paired.
    """
    if batch_size < 2:
        logger.info("batch of %d cannot be paired; mixing skipped", batch_size)
        return []
    while True:
        perm = rng.permutation(batch_size)
        if not np.any(perm == np.arange(batch_size)):
            return [(i, int(perm[i])) for i in range(batch_size)]


def make_pairs_lh(
    h_cls_batch: list[np.ndarray],
    skeleton: list[tuple[int, int]],
    config: MixupConfig,
) -> list[MixPair]:
    """Fill pair skeletons with similarity-driven ratios.

    ``h_cls_batch`` holds the [CLS] hiddens of each batch member's
    local-hierarchy sequence, computed without gradient tracking.
    """
    pairs = []
    for i, j in skeleton:
        s = similarity(h_cls_batch[i], h_cls_batch[j])
        lam = mix_ratio(s, config.alpha, config.beta_cap)
        pairs.append(MixPair(index_i=i, index_j=j, lam=lam, s=s))
    return pairs


def make_pairs_vanilla(
    skeleton: list[tuple[int, int]], config: MixupConfig, rng: np.random.Generator
) -> list[MixPair]:
    return [
        MixPair(
            index_i=i,
            index_j=j,
            lam=sample_vanilla_ratio(rng, config.vanilla_concentration),
            s=None,
        )
        for i, j in skeleton
    ]
