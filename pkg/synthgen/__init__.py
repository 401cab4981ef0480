from synthgen.cohort import STRENGTHS, CohortSpec, Subject, generate_cohort, strength_bins
from synthgen.features import (
    CHANNELS,
    FeatureMap,
    paint_tiles,
    render_feature_map,
    roi_delta_bold,
    roi_measures,
    zscore_rois,
)
from synthgen.layout import N_ROIS, AtlasLayout, Tile, build_default_layout, load_layout
from synthgen.measures import BAND, bandpass_filter, compute_alff, compute_falff, compute_reho
