# features.py
# Regional measures, percentage signal change and the three-channel feature map

import logging
from dataclasses import dataclass
from typing import Tuple

import numpy as np

from errors import DataError, LayoutError
from synthgen.cohort import Subject
from synthgen.layout import N_ROIS, AtlasLayout
from synthgen.measures import compute_alff, compute_falff, compute_reho

logger = logging.getLogger(__name__)

CHANNELS: Tuple[str, str, str] = ("ALFF", "fALFF", "ReHo")


@dataclass
class FeatureMap:
    data: np.ndarray  # (H, W, 3)
    channels: Tuple[str, str, str] = CHANNELS

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]


def roi_measures(subject: Subject) -> np.ndarray:
    """(116, 3) table of voxel-averaged ALFF, voxel-averaged fALFF and ROI ReHo, before z-scoring"""
    fs = subject.sampling_rate_hz
    series = subject.roi_series
    alff = compute_alff(series, fs).mean(axis=1)
    falff = compute_falff(series, fs).mean(axis=1)
    reho = compute_reho(series)
    return np.stack([alff, falff, reho], axis=1)


def roi_delta_bold(subject: Subject) -> np.ndarray:
    """
    v_i = 100 * (mean_t of ROI-i spatial mean - g) / g,
    g = mean over all ROIs and timepoints.
    """
    roi_means = subject.roi_series.mean(axis=(1, 2))
    g = float(subject.roi_series.mean())
    if g <= 0:
        raise DataError(f"{subject.subject_id}: global mean signal {g} is not positive")
    return 100.0 * (roi_means - g) / g


def zscore_rois(values: np.ndarray) -> np.ndarray:
    """Per-channel z-score across ROIs; a constant channel is only centered"""
    centered = values - values.mean(axis=0, keepdims=True)
    std = values.std(axis=0, keepdims=True)
    return np.divide(centered, std, out=np.zeros_like(centered), where=std > 0)


def paint_tiles(values: np.ndarray, layout: AtlasLayout) -> np.ndarray:
    """Fills tile k with row k of a (116, C) table"""
    if values.shape[0] != N_ROIS:
        raise LayoutError(f"expected {N_ROIS} ROI rows, got {values.shape}")
    return values[layout.label_map]


def render_feature_map(subject: Subject, layout: AtlasLayout) -> FeatureMap:
    return FeatureMap(data=paint_tiles(zscore_rois(roi_measures(subject)), layout))
