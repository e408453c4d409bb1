"""Training-time stochastic masks and the inference mask bank.

A mask is a length-d uint8 vector; bit j = 1 hides feature j. The
deterministic bank enumerates every mask with 1..r bits set, ordered
lexicographically by the masked feature-index combination, so bank layout
is identical across runs and platforms. The random bank redraws all-zero
masks (a no-op mask carries no reconstruction signal).
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations
from math import comb

import numpy as np


@dataclass(frozen=True)
class MaskBank:
    masks: np.ndarray  # (m, d) uint8
    kind: str          # "deterministic" or "random"

    @property
    def m(self) -> int:
        return self.masks.shape[0]

    @property
    def d(self) -> int:
        return self.masks.shape[1]


def sample_training_mask(d: int, p_mask: float, rng: np.random.Generator) -> np.ndarray:
    """Independent Bernoulli(p_mask) bit per feature."""
    if not 0.0 < p_mask < 1.0:
        raise ValueError(f"p_mask must lie in (0, 1), got {p_mask}")
    return (rng.random(d) < p_mask).astype(np.uint8)


def sample_training_masks(n: int, d: int, p_mask: float, rng: np.random.Generator) -> np.ndarray:
    """n independent training masks as an (n, d) array."""
    if not 0.0 < p_mask < 1.0:
        raise ValueError(f"p_mask must lie in (0, 1), got {p_mask}")
    return (rng.random((n, d)) < p_mask).astype(np.uint8)


def deterministic_bank_size(d: int, r: int) -> int:
    return sum(comb(d, k) for k in range(1, r + 1))


def build_deterministic_bank(d: int, r: int) -> MaskBank:
    """Every mask with 1..r bits set, in lexicographic combination order."""
    if not 1 <= r <= d:
        raise ValueError(f"need 1 <= r <= d, got r={r}, d={d}")
    masks = np.zeros((deterministic_bank_size(d, r), d), dtype=np.uint8)
    row = 0
    for k in range(1, r + 1):
        for combo in combinations(range(d), k):
            masks[row, list(combo)] = 1
            row += 1
    return MaskBank(masks=masks, kind="deterministic")


def build_random_bank(d: int, count: int, p_mask: float, seed: int) -> MaskBank:
    """``count`` Bernoulli(p_mask) masks; all-zero draws are rejected and redrawn."""
    if count < 1:
        raise ValueError("random bank needs count >= 1")
    rng = np.random.default_rng(seed)
    masks = np.zeros((count, d), dtype=np.uint8)
    for i in range(count):
        mask = sample_training_mask(d, p_mask, rng)
        while not mask.any():
            mask = sample_training_mask(d, p_mask, rng)
        masks[i] = mask
    return MaskBank(masks=masks, kind="random")


def force_unmasked_subset(masks: np.ndarray, fraction: float,
                          rng: np.random.Generator) -> np.ndarray:
    """Zero the masks of a random ``fraction`` of rows (at least one).

    Guarantees every training batch contains fully-unmasked samples, so the
    retrieval candidate pool sees encodings like the unmasked ones it will
    see at inference time.
    """
    if not 0.0 <= fraction < 1.0:
        raise ValueError(f"unmasked fraction must lie in [0, 1), got {fraction}")
    out = masks.copy()
    n = masks.shape[0]
    n_forced = max(1, int(round(fraction * n)))
    forced = rng.choice(n, size=min(n_forced, n), replace=False)
    out[forced] = 0
    return out
