# embed.py
# Patch embeddings and the stride-2 query path

import logging
from dataclasses import dataclass
from typing import Tuple

import numpy as np

from errors import ShapeError
from numcore import Conv2d, LayerNorm, Module, Parameter, Tensor
from numcore import functional as F

logger = logging.getLogger(__name__)


@dataclass
class PatchEmbeds:
    """tokens: (B, gh*gw, D_p), row-major over the patch grid"""
    tokens: Tensor
    grid: Tuple[int, int]
    patch_size: int

    @property
    def length(self) -> int:
        return self.grid[0] * self.grid[1]


def tokens_to_map(tokens, grid: Tuple[int, int]) -> Tensor:
    """(B, gh*gw, D) -> (B, D, gh, gw)"""
    b, _, d = tokens.shape
    return F.transpose(F.reshape(tokens, (b, grid[0], grid[1], d)), (0, 3, 1, 2))


def map_to_tokens(fmap) -> Tensor:
    b, d, h, w = fmap.shape
    return F.reshape(F.transpose(fmap, (0, 2, 3, 1)), (b, h * w, d))


class PatchEmbed(Module):
    """Non-overlapping p x p patches -> D_p (strided conv, no bias) plus a learned position table"""

    def __init__(self, in_channels: int, patch_size: int, dim: int, grid: Tuple[int, int],
                 rng: np.random.Generator):
        super().__init__()
        self.patch_size = patch_size
        self.grid = grid
        self.proj = Conv2d(in_channels, dim, patch_size, rng, stride=patch_size, bias=False)
        self.pos = Parameter(rng.normal(scale=0.02, size=(grid[0] * grid[1], dim)))

    def forward(self, image) -> PatchEmbeds:
        return patch_embed(image, self)


def patch_embed(image, embed: PatchEmbed) -> PatchEmbeds:
    """image: (B, C, H, W)"""
    p = embed.patch_size
    h, w = image.shape[-2:]
    if h % p or w % p:
        raise ShapeError(f"patch_embed: patch size {p} does not divide {h}x{w}")
    grid = (h // p, w // p)
    if grid != embed.grid:
        raise ShapeError(f"patch_embed: grid {grid} differs from the positional table grid {embed.grid}")
    tokens = map_to_tokens(embed.proj(image)) + embed.pos
    return PatchEmbeds(tokens=tokens, grid=grid, patch_size=p)


class QueryDownsample(Module):
    """LayerNorm -> patch grid -> reflect pad 1 -> 3x3 stride-2 conv D_p -> D"""

    def __init__(self, patch_dim: int, dim: int, rng: np.random.Generator):
        super().__init__()
        self.norm = LayerNorm(patch_dim)
        self.conv = Conv2d(patch_dim, dim, 3, rng, stride=2)

    def forward(self, embeds: PatchEmbeds) -> Tuple[Tensor, Tuple[int, int]]:
        return query_downsample(embeds, self)


def query_downsample(embeds: PatchEmbeds, block: QueryDownsample) -> Tuple[Tensor, Tuple[int, int]]:
    """Returns Q' (B, L_q, D) and the query grid"""
    gh, gw = embeds.grid
    if gh % 2 or gw % 2:
        raise ShapeError(f"query_downsample: patch grid {gh}x{gw} must have even extents")
    fmap = tokens_to_map(block.norm(embeds.tokens), embeds.grid)
    q = block.conv(F.pad2d(fmap, 1, mode="reflect"))
    return map_to_tokens(q), (gh // 2, gw // 2)
