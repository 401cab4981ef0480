# layout.py
# Fixed rectangular atlas tiling: even ROIs on the left half, odd ROIs on the right half

import json
import logging
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Dict, List

import numpy as np

from errors import LayoutError

logger = logging.getLogger(__name__)

N_ROIS = 116

DEFAULT_LAYOUT_FILE = Path(__file__).resolve().parent.parent / "docs" / "atlas_layout.json"


@dataclass(frozen=True)
class Tile:
    roi: int
    row: int
    col: int
    height: int
    width: int


@dataclass
class AtlasLayout:
    height: int
    width: int
    tiles: List[Tile]

    def __post_init__(self):
        self._label_map = self._build_label_map()

    def _build_label_map(self) -> np.ndarray:
        label = np.full((self.height, self.width), -1, dtype=np.int64)
        seen = set()
        for tile in self.tiles:
            if not 0 <= tile.roi < N_ROIS or tile.roi in seen:
                raise LayoutError(f"tile for ROI {tile.roi} is out of range or duplicated")
            seen.add(tile.roi)
            if tile.height <= 0 or tile.width <= 0 or tile.row < 0 or tile.col < 0 \
                    or tile.row + tile.height > self.height or tile.col + tile.width > self.width:
                raise LayoutError(f"tile {tile} does not fit a {self.height}x{self.width} map")
            region = label[tile.row:tile.row + tile.height, tile.col:tile.col + tile.width]
            if np.any(region >= 0):
                other = int(region[region >= 0][0])
                raise LayoutError(f"tiles of ROI {tile.roi} and ROI {other} overlap")
            region[...] = tile.roi
            right_half = tile.col >= self.width // 2
            if tile.roi % 2 == 1 and not right_half or tile.roi % 2 == 0 and tile.col + tile.width > self.width // 2:
                raise LayoutError(f"ROI {tile.roi} placed in the wrong hemisphere")
        if len(seen) != N_ROIS:
            raise LayoutError(f"layout covers {len(seen)} ROIs, expected {N_ROIS}")
        if np.any(label < 0):
            raise LayoutError(f"{int(np.sum(label < 0))} pixels are not assigned to any ROI")
        return label

    @property
    def label_map(self) -> np.ndarray:
        """(H, W) ROI index per pixel"""
        return self._label_map

    def tile_of(self, roi: int) -> Tile:
        for tile in self.tiles:
            if tile.roi == roi:
                return tile
        raise LayoutError(f"no tile for ROI {roi}")

    def roi_at(self, row: int, col: int) -> int:
        return int(self._label_map[row, col])

    def to_dict(self) -> Dict:
        return {"height": self.height, "width": self.width, "tiles": [asdict(t) for t in self.tiles]}

    @classmethod
    def from_dict(cls, data: Dict) -> "AtlasLayout":
        try:
            tiles = [Tile(**t) for t in data["tiles"]]
            return cls(height=int(data["height"]), width=int(data["width"]), tiles=tiles)
        except (KeyError, TypeError) as e:
            raise LayoutError(f"malformed layout description: {e}") from e


def load_layout(path: Path = DEFAULT_LAYOUT_FILE) -> AtlasLayout:
    path = Path(path)
    if not path.is_file():
        raise LayoutError(f"layout file not found: {path}")
    layout = AtlasLayout.from_dict(json.loads(path.read_text(encoding="utf-8")))
    logger.info(f"Atlas layout {layout.height}x{layout.width} loaded from {path}")
    return layout


def _sizes(total: int, parts: int) -> List[int]:
    """np.array_split sizes: the first total % parts chunks get one extra"""
    base, extra = divmod(total, parts)
    return [base + 1 if i < extra else base for i in range(parts)]


def build_default_layout(height: int = 64, width: int = 64) -> AtlasLayout:
    """
    Each hemisphere (W/2 columns) holds 58 ROIs in ascending index order,
    row-major, with rows = round(sqrt(58 * H / (W/2))).
    """
    if width % 2:
        raise LayoutError(f"map width {width} must be even to split hemispheres")
    half = width // 2
    per_side = N_ROIS // 2
    n_rows = min(height, int(np.floor(np.sqrt(per_side * height / half) + 0.5)))
    row_heights = _sizes(height, n_rows)
    row_counts = _sizes(per_side, n_rows)
    if max(row_counts) > half:
        raise LayoutError(f"a {height}x{width} map is too small for {N_ROIS} tiles")

    tiles: List[Tile] = []
    for side in (0, 1):
        rois = iter(range(side, N_ROIS, 2))
        top = 0
        for r_height, count in zip(row_heights, row_counts):
            left = side * half
            for w in _sizes(half, count):
                tiles.append(Tile(roi=next(rois), row=top, col=left, height=r_height, width=w))
                left += w
            top += r_height
    tiles.sort(key=lambda t: t.roi)
    return AtlasLayout(height=height, width=width, tiles=tiles)
