# encoder.py
# Cross-scale encoder: image + wavelet tokens -> global embedding Z

import logging
from typing import Optional, Tuple

import numpy as np

from config import ModelConfig
from cste.attention import CrossAttention, LocalRefine, VisionEncoder
from cste.embed import PatchEmbed, PatchEmbeds, QueryDownsample, map_to_tokens, tokens_to_map
from errors import ShapeError
from hwm.branch import TokenSeq2D
from numcore import Linear, Module, Tensor
from numcore import functional as F
from rftg.film import FilmLayer

logger = logging.getLogger(__name__)


def fuse_and_encode(attended, query_grid: Tuple[int, int], embeds: PatchEmbeds, fuse: Linear,
                    encoder: VisionEncoder, head: Linear, film: FilmLayer, d) -> Tensor:
    """
    A (B, L_q, D) -> nearest 2x upsample on the query grid -> D -> D_p -> + E -> ViT
    -> mean over tokens -> D_p -> D -> FiLM(d) = Z (B, D)
    """
    up = map_to_tokens(F.upsample_nearest2d(tokens_to_map(attended, query_grid), 2))
    if up.shape[1] != embeds.length:
        raise ShapeError(f"fuse_and_encode: upsampled length {up.shape[1]} != patch tokens {embeds.length}")
    fused = embeds.tokens + fuse(up)
    pooled = F.mean(encoder(fused), axis=1)
    return film(head(pooled), d)


class CrossScaleEncoder(Module):
    def __init__(self, cfg: ModelConfig, in_channels: int, rng: np.random.Generator):
        super().__init__()
        grid = (cfg.height // cfg.patch_size, cfg.width // cfg.patch_size)
        self.embed = PatchEmbed(in_channels, cfg.patch_size, cfg.patch_dim, grid, rng)
        self.query = QueryDownsample(cfg.patch_dim, cfg.token_dim, rng)
        self.refine = LocalRefine(cfg.token_dim, rng)
        self.attend = CrossAttention(cfg.token_dim, rng)
        self.fuse = Linear(cfg.token_dim, cfg.patch_dim, rng, bias=False)
        self.encoder = VisionEncoder(cfg.patch_dim, cfg.vit_layers, cfg.vit_heads, cfg.ffn_expansion, rng)
        self.head = Linear(cfg.patch_dim, cfg.token_dim, rng)
        self.film = FilmLayer(cfg.token_dim, cfg.film_hidden, rng)

    def forward(self, image, wavelet: Optional[TokenSeq2D], d) -> Tensor:
        """wavelet=None drops the wavelet stream: the attention output is zero"""
        embeds = self.embed(image)
        q, query_grid = self.query(embeds)
        if wavelet is None:
            attended = Tensor(np.zeros(q.shape))
        else:
            attended = self.attend(q, self.refine(wavelet.tokens, wavelet.slots))
        return fuse_and_encode(attended, query_grid, embeds, self.fuse, self.encoder, self.head, self.film, d)
