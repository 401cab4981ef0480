# wavelet.py
# Orthonormal 2D Haar analysis / synthesis, recursive on the LL subband

import logging
from dataclasses import dataclass
from typing import List, NamedTuple, Sequence, Tuple

import numpy as np

from errors import ShapeError
from numcore import Tensor
from numcore import functional as F

logger = logging.getLogger(__name__)


class HaarSubbands(NamedTuple):
    ll: object
    lh: object
    hl: object
    hh: object


@dataclass
class WaveletPyramid:
    """levels[s - 1] holds the four subbands of level s; levels[s].ll feeds level s + 1"""
    levels: List[HaarSubbands]
    axes: Tuple[int, int]

    @property
    def depth(self) -> int:
        return len(self.levels)


def _block(x, axes: Tuple[int, int], row: int, col: int):
    ndim = len(x.shape)
    index = [slice(None)] * ndim
    index[axes[0] % ndim] = slice(row, None, 2)
    index[axes[1] % ndim] = slice(col, None, 2)
    return x[tuple(index)]


def haar_dwt_level(img, axes: Tuple[int, int] = (0, 1)) -> HaarSubbands:
    """
    One analysis step on the two spatial axes. For each 2x2 block [a b; c d]:
        LL=(a+b+c+d)/2  LH=(a-b+c-d)/2  HL=(a+b-c-d)/2  HH=(a-b-c+d)/2
    Works on ndarrays and on tape tensors.
    """
    h, w = img.shape[axes[0]], img.shape[axes[1]]
    if h % 2 or w % 2:
        raise ShapeError(f"haar_dwt_level: extents {h}x{w} must be even (pad to a multiple of 2^N first)")
    a = _block(img, axes, 0, 0)
    b = _block(img, axes, 0, 1)
    c = _block(img, axes, 1, 0)
    d = _block(img, axes, 1, 1)
    return HaarSubbands(
        ll=(a + b + c + d) * 0.5,
        lh=(a - b + c - d) * 0.5,
        hl=(a + b - c - d) * 0.5,
        hh=(a - b - c + d) * 0.5,
    )


def haar_idwt_level(bands: HaarSubbands, axes: Tuple[int, int] = (0, 1)) -> np.ndarray:
    """Synthesis (transpose of the analysis matrix); ndarray only"""
    ll, lh, hl, hh = (np.asarray(b.data if isinstance(b, Tensor) else b) for b in bands)
    a = (ll + lh + hl + hh) * 0.5
    b = (ll - lh + hl - hh) * 0.5
    c = (ll + lh - hl - hh) * 0.5
    d = (ll - lh - hl + hh) * 0.5
    shape = list(ll.shape)
    ax0, ax1 = axes[0] % ll.ndim, axes[1] % ll.ndim
    shape[ax0] *= 2
    shape[ax1] *= 2
    out = np.empty(shape, dtype=np.float64)
    for block, (r, q) in ((a, (0, 0)), (b, (0, 1)), (c, (1, 0)), (d, (1, 1))):
        index = [slice(None)] * ll.ndim
        index[ax0] = slice(r, None, 2)
        index[ax1] = slice(q, None, 2)
        out[tuple(index)] = block
    return out


def multiscale_decompose(x, levels: int, axes: Tuple[int, int] = (0, 1)) -> WaveletPyramid:
    scale = 2 ** levels
    h, w = x.shape[axes[0]], x.shape[axes[1]]
    if h % scale or w % scale:
        need_h, need_w = (-h) % scale, (-w) % scale
        raise ShapeError(f"multiscale_decompose: {h}x{w} is not divisible by 2^{levels}={scale}; "
                         f"pad by {need_h} rows and {need_w} columns")
    bands: List[HaarSubbands] = []
    current = x
    for _ in range(levels):
        level = haar_dwt_level(current, axes)
        bands.append(level)
        current = level.ll
    return WaveletPyramid(levels=bands, axes=axes)


def reconstruct(pyramid: WaveletPyramid) -> np.ndarray:
    """Inverse of multiscale_decompose from the deepest LL and every detail subband"""
    deepest = pyramid.levels[-1]
    current = haar_idwt_level(deepest, pyramid.axes)
    for level in reversed(pyramid.levels[:-1]):
        current = haar_idwt_level(HaarSubbands(current, level.lh, level.hl, level.hh), pyramid.axes)
    return current


def pyramid_energy(pyramid: WaveletPyramid) -> float:
    """Energy of the deepest LL plus every retained detail subband"""
    def energy(b):
        arr = b.data if isinstance(b, Tensor) else np.asarray(b)
        return float(np.sum(arr * arr))

    total = energy(pyramid.levels[-1].ll)
    for level in pyramid.levels:
        total += energy(level.lh) + energy(level.hl) + energy(level.hh)
    return total


# ====== Padding to multiples of 2^N ======

def padding_for(h: int, w: int, levels: int) -> Tuple[int, int, int, int]:
    """(top, bottom, left, right) symmetric-reflect widths reaching a multiple of 2^levels"""
    scale = 2 ** levels
    extra_h, extra_w = (-h) % scale, (-w) % scale
    return extra_h // 2, extra_h - extra_h // 2, extra_w // 2, extra_w - extra_w // 2


def pad_for_levels(x: Tensor, levels: int) -> Tuple[Tensor, Tuple[int, int, int, int]]:
    """x: (B, C, H, W) tensor"""
    pads = padding_for(x.shape[-2], x.shape[-1], levels)
    return F.pad2d(x, pads, mode="symmetric"), pads


def crop(x: np.ndarray, pads: Sequence[int]) -> np.ndarray:
    top, bottom, left, right = pads
    h, w = x.shape[-2:]
    return x[..., top:h - bottom, left:w - right]
