from hwm.wavelet import (
    HaarSubbands,
    WaveletPyramid,
    crop,
    haar_dwt_level,
    haar_idwt_level,
    multiscale_decompose,
    pad_for_levels,
    padding_for,
    pyramid_energy,
    reconstruct,
)
from hwm.scan import SelectiveScan, scan_recurrence, selective_scan
from hwm.branch import (
    STREAMS,
    ConvFFN,
    HwmBranch,
    LevelSlot,
    TokenSeq2D,
    conv_ffn,
    flatten_concat,
    grid_to_tokens,
    identity_split,
    level_slots,
    provenance_table,
    split_subsequences,
    tokens_to_grid,
)
