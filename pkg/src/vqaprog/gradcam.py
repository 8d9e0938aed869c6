"""Cross-attention relevance maps and the patch-sampling numerics behind
`query` and `get_pos`.

The map for token i is row i of C ⊙ ReLU(G), where C is the cross-attention
matrix and G the gradient of the image-text matching score with respect to
it. `query` averages the maps of all (non-special) question tokens; `get_pos`
averages the maps of the target text tokens and takes the argmax cell.
"""

from __future__ import annotations

import random
from dataclasses import dataclass

import numpy as np

from .core import CoordinateFrame
from .proglang import Pos


@dataclass(frozen=True)
class CrossAttention:
    """One layer's cross-attention map C and its gradient G, both T×P where
    P = grid_h·grid_w patches."""

    attention: np.ndarray
    gradient: np.ndarray
    token_texts: tuple
    grid: tuple
    layer: int = 6

    def __post_init__(self):
        attention = np.asarray(self.attention, dtype=float)
        gradient = np.asarray(self.gradient, dtype=float)
        object.__setattr__(self, "attention", attention)
        object.__setattr__(self, "gradient", gradient)
        if attention.ndim != 2:
            raise ValueError(f"attention must be 2-d, got shape {attention.shape}")
        if attention.shape != gradient.shape:
            raise ValueError(
                f"attention shape {attention.shape} != gradient shape {gradient.shape}"
            )
        if (attention < 0).any():
            raise ValueError("attention entries must be nonnegative")
        if len(self.token_texts) != attention.shape[0]:
            raise ValueError(
                f"{len(self.token_texts)} token texts for {attention.shape[0]} attention rows"
            )
        grid_h, grid_w = self.grid
        if grid_h * grid_w != attention.shape[1]:
            raise ValueError(
                f"grid {grid_h}x{grid_w} does not cover {attention.shape[1]} patches"
            )

    @property
    def num_tokens(self) -> int:
        return self.attention.shape[0]


@dataclass(frozen=True)
class GradCamMap:
    """Per-patch relevance values over a (grid_h, grid_w) grid, flattened
    row-major."""

    values: np.ndarray
    grid: tuple

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "values", values)
        grid_h, grid_w = self.grid
        if values.shape != (grid_h * grid_w,):
            raise ValueError(f"expected {grid_h * grid_w} values, got shape {values.shape}")


def token_gradcam(ca: CrossAttention, i: int) -> GradCamMap:
    """Relevance map for a single token: C[i] ⊙ ReLU(G[i])."""
    if not 0 <= i < ca.num_tokens:
        raise IndexError(f"token index {i} out of range for {ca.num_tokens} tokens")
    values = ca.attention[i] * np.maximum(ca.gradient[i], 0.0)
    return GradCamMap(values=values, grid=ca.grid)


def averaged_gradcam(ca: CrossAttention, token_indices) -> GradCamMap:
    """Arithmetic mean of token_gradcam over the given token indices."""
    indices = list(token_indices)
    if not indices:
        raise ValueError("token_indices must be non-empty")
    stacked = np.stack([token_gradcam(ca, i).values for i in indices])
    return GradCamMap(values=stacked.mean(axis=0), grid=ca.grid)


def sample_patches(map: GradCamMap, n: int, rng: random.Random) -> list:
    """Draw n patch indices with replacement, proportional to raw map values.

    An all-zero map degrades to uniform sampling rather than failing; the
    draw order is deterministic given the rng state.
    """
    if n < 1:
        raise ValueError("must sample at least one patch")
    weights = map.values.tolist()
    total = sum(weights)
    if total <= 0.0:
        return [rng.randrange(len(weights)) for _ in range(n)]
    return rng.choices(range(len(weights)), weights=weights, k=n)


def argmax_position(map: GradCamMap, frame: CoordinateFrame) -> Pos:
    """Center of the highest-valued grid cell in frame coordinates.

    Ties break to the lowest flat index. The y-axis has its origin at the
    frame's bottom while grid rows run top-down, so row 0 lands near `top`.
    """
    grid_h, grid_w = map.grid
    flat = int(np.argmax(map.values))
    row, col = divmod(flat, grid_w)
    x = frame.left + (col + 0.5) * (frame.right - frame.left) / grid_w
    y = frame.bottom + (grid_h - row - 0.5) * (frame.top - frame.bottom) / grid_h
    return Pos(x, y)


__all__ = [
    "CrossAttention",
    "GradCamMap",
    "argmax_position",
    "averaged_gradcam",
    "sample_patches",
    "token_gradcam",
]
