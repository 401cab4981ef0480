# branch.py
# Hierarchical wavelet-scan branch: pyramid -> token sequence -> four gated scans -> ConvFFN -> merge

import logging
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from errors import ShapeError
from hwm.scan import SelectiveScan
from hwm.wavelet import WaveletPyramid, multiscale_decompose
from numcore import Conv2d, Linear, Module, Parameter, Tensor
from numcore import functional as F
from rftg.film import FilmLayer

logger = logging.getLogger(__name__)

STREAMS = 4


@dataclass(frozen=True)
class LevelSlot:
    level: int  # 1-based pyramid level
    offset: int
    height: int
    width: int

    @property
    def length(self) -> int:
        return self.height * self.width


@dataclass
class TokenSeq2D:
    """
    tokens: (B, L, D), level-major then row-major.
    provenance[i] = (level, row, col): token i fuses the four subbands of that level at (row, col).
    """
    tokens: Tensor
    provenance: Optional[np.ndarray]
    slots: Optional[List[LevelSlot]]

    @property
    def length(self) -> int:
        return self.tokens.shape[1]

    def with_tokens(self, tokens: Tensor) -> "TokenSeq2D":
        return TokenSeq2D(tokens=tokens, provenance=self.provenance, slots=self.slots)


def level_slots(height: int, width: int, levels: int) -> List[LevelSlot]:
    slots, offset = [], 0
    for s in range(1, levels + 1):
        h, w = height >> s, width >> s
        slots.append(LevelSlot(level=s, offset=offset, height=h, width=w))
        offset += h * w
    return slots


def provenance_table(slots: List[LevelSlot]) -> np.ndarray:
    rows = []
    for slot in slots:
        r, c = np.divmod(np.arange(slot.length), slot.width)
        rows.append(np.stack([np.full(slot.length, slot.level), r, c], axis=1))
    return np.concatenate(rows).astype(np.int64)


def tokens_to_grid(tokens, slot: LevelSlot) -> Tensor:
    """(B, L, D) slice of one level -> (B, D, h, w)"""
    part = tokens[:, slot.offset:slot.offset + slot.length, :]
    grid = F.reshape(part, (tokens.shape[0], slot.height, slot.width, tokens.shape[2]))
    return F.transpose(grid, (0, 3, 1, 2))


def grid_to_tokens(grid) -> Tensor:
    """(B, D, h, w) -> (B, h*w, D)"""
    b, d, h, w = grid.shape
    return F.reshape(F.transpose(grid, (0, 2, 3, 1)), (b, h * w, d))


# ====== Flatten / split ======

def flatten_concat(pyramid: WaveletPyramid, projections: List[Conv2d]) -> TokenSeq2D:
    """
    Per level: concat (LL, LH, HL, HH) on channels (4C), 1x1 projection to D,
    raster flatten; levels concatenated in order. Subbands are (B, C, h, w).
    """
    if len(projections) != pyramid.depth:
        raise ShapeError(f"flatten_concat: {len(projections)} projections for a {pyramid.depth}-level pyramid")
    parts, slots, offset = [], [], 0
    for s, (bands, proj) in enumerate(zip(pyramid.levels, projections), start=1):
        stacked = F.concat(list(bands), axis=1)
        projected = proj(stacked)
        h, w = projected.shape[-2:]
        slots.append(LevelSlot(level=s, offset=offset, height=h, width=w))
        offset += h * w
        parts.append(grid_to_tokens(projected))
    tokens = F.concat(parts, axis=1)
    return TokenSeq2D(tokens=tokens, provenance=provenance_table(slots), slots=slots)


def split_subsequences(seq: TokenSeq2D, projection: Linear) -> Tuple[Tensor, ...]:
    """Learned D -> 4D map, cut channel-wise into four (B, L, D) streams"""
    dim = seq.tokens.shape[-1]
    if projection.weight.shape != (dim, STREAMS * dim):
        raise ShapeError(f"split_subsequences: projection {projection.weight.shape} does not map {dim} -> {STREAMS * dim}")
    wide = projection(seq.tokens)
    return tuple(wide[..., i * dim:(i + 1) * dim] for i in range(STREAMS))


def identity_split(dim: int, rng: np.random.Generator) -> Linear:
    """Projection that starts by replicating its input into every stream"""
    layer = Linear(dim, STREAMS * dim, rng)
    layer.weight = Parameter(np.tile(np.eye(dim), (1, STREAMS)))
    return layer


# ====== ConvFFN ======

class ConvFFN(Module):
    """Depthwise 3x3 on every level grid, then pointwise relu FFN; both sublayers residual"""

    def __init__(self, dim: int, expansion: int, rng: np.random.Generator):
        super().__init__()
        self.depthwise = Conv2d(dim, dim, 3, rng, padding=1, groups=dim)
        self.fc1 = Linear(dim, expansion * dim, rng)
        self.fc2 = Linear(expansion * dim, dim, rng)

    def forward(self, tokens, slots: Optional[List[LevelSlot]]) -> Tensor:
        return conv_ffn(tokens, slots, self)


def conv_ffn(tokens, slots: Optional[List[LevelSlot]], block: ConvFFN) -> Tensor:
    if not slots:
        raise ShapeError("conv_ffn: token provenance is missing; cannot rebuild level grids")
    if sum(s.length for s in slots) != tokens.shape[1]:
        raise ShapeError(f"conv_ffn: provenance covers {sum(s.length for s in slots)} tokens, "
                         f"sequence has {tokens.shape[1]}")
    mixed = F.concat([grid_to_tokens(block.depthwise(tokens_to_grid(tokens, slot))) for slot in slots], axis=1)
    hidden = tokens + mixed
    return hidden + block.fc2(F.relu(block.fc1(hidden)))


# ====== Branch ======

class HwmBranch(Module):
    """
    (B, C, H, W) feature map -> F_final (B, L, D) plus provenance.
    H, W must already be multiples of 2^levels.
    """

    def __init__(self, in_channels: int, dim: int, levels: int, state_size: int, expansion: int,
                 film_hidden: int, rng: np.random.Generator):
        super().__init__()
        self.levels = levels
        self.dim = dim
        self.projections = [Conv2d(STREAMS * in_channels, dim, 1, rng) for _ in range(levels)]
        self.split = identity_split(dim, rng)
        self.scans = [SelectiveScan(dim, state_size, rng) for _ in range(STREAMS)]
        self.ffns = [ConvFFN(dim, expansion, rng) for _ in range(STREAMS)]
        self.merge = Parameter(np.full(STREAMS, 1.0 / STREAMS))
        self.film = FilmLayer(dim, film_hidden, rng)

    def forward(self, x, d) -> TokenSeq2D:
        pyramid = multiscale_decompose(x, self.levels, axes=(-2, -1))
        seq = flatten_concat(pyramid, self.projections)
        streams = split_subsequences(seq, self.split)
        merged = None
        for i, (stream, scan, ffn) in enumerate(zip(streams, self.scans, self.ffns)):
            out = ffn(scan(stream), seq.slots) * self.merge[i]
            merged = out if merged is None else merged + out
        return seq.with_tokens(self.film(merged, d))
