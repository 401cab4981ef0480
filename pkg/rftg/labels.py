# labels.py
# AAL-116 label table shipped with the repo

import logging
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Dict, List

import pandas as pd

from errors import ReportError

logger = logging.getLogger(__name__)

LABELS_FILE = Path(__file__).resolve().parent.parent / "docs" / "aal116_labels.tsv"

HEMISPHERE_TITLES = {"L": "Left hemisphere", "R": "Right hemisphere", "V": "Vermis"}


@dataclass(frozen=True)
class RoiLabel:
    index: int
    label: str       # atlas label, e.g. Precentral_L
    name: str        # English name used in reports
    hemisphere: str  # L, R or V


@lru_cache(maxsize=4)
def load_labels(path: Path = LABELS_FILE) -> List[RoiLabel]:
    path = Path(path)
    if not path.is_file():
        raise ReportError(f"label table not found: {path}")
    table = pd.read_csv(path, sep="\t", dtype={"index": int, "label": str, "name": str, "hemisphere": str})
    labels = [RoiLabel(int(idx), label, name, hemi)
              for idx, label, name, hemi in table[["index", "label", "name", "hemisphere"]].itertuples(index=False, name=None)]
    if [lab.index for lab in labels] != list(range(116)):
        raise ReportError(f"{path}: expected indices 0..115 in order")
    bad = {lab.hemisphere for lab in labels} - set(HEMISPHERE_TITLES)
    if bad:
        raise ReportError(f"{path}: unknown hemisphere codes {sorted(bad)}")
    logger.info(f"✅ Loaded {len(labels)} ROI labels from {path.name}")
    return labels


def names_by_index() -> Dict[int, str]:
    return {lab.index: lab.name for lab in load_labels()}
