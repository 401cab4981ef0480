# data.py
# Per-subject features and the per-fold arrays fed to the model

import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence

import numpy as np

from asam import TextEmbedder, embed_batch
from config import ModelConfig
from errors import LayoutError
from rftg import AgeStats, RoiTokenSeq, Thresholds, demographic_vector, discretize, serialize_tokens
from synthgen import AtlasLayout, Subject, render_feature_map, roi_delta_bold

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SubjectFeatures:
    """Everything a fold needs from one subject; nothing here depends on other subjects"""
    subject_id: str
    image: np.ndarray          # (3, H, W)
    delta_bold: np.ndarray     # (116,)
    age_years: float
    gender: str
    label: int                 # 1 patient, 0 control
    site_id: int
    strength_truth: np.ndarray


def extract_features(subjects: Sequence[Subject], layout: AtlasLayout,
                     model_cfg: ModelConfig) -> Dict[str, SubjectFeatures]:
    if (layout.height, layout.width) != (model_cfg.height, model_cfg.width):
        raise LayoutError(f"layout {layout.height}x{layout.width} does not match the model map "
                          f"{model_cfg.height}x{model_cfg.width}")
    out = {}
    for s in subjects:
        out[s.subject_id] = SubjectFeatures(
            subject_id=s.subject_id,
            image=render_feature_map(s, layout).data.transpose(2, 0, 1).copy(),
            delta_bold=roi_delta_bold(s),
            age_years=s.age_years,
            gender=s.gender,
            label=int(s.is_patient),
            site_id=s.site_id,
            strength_truth=s.strength_truth,
        )
    logger.info(f"Features extracted for {len(out)} subjects")
    return out


@dataclass
class FoldArrays:
    ids: List[str]
    images: np.ndarray   # (n, 3, H, W)
    demo: np.ndarray     # (n, 3)
    text: np.ndarray     # (n, D_t)
    labels: np.ndarray   # (n,)
    tokens: List[RoiTokenSeq]

    def __len__(self) -> int:
        return len(self.ids)

    def take(self, index: Sequence[int]) -> "FoldArrays":
        index = list(index)
        return FoldArrays(ids=[self.ids[i] for i in index], images=self.images[index], demo=self.demo[index],
                          text=self.text[index], labels=self.labels[index],
                          tokens=[self.tokens[i] for i in index])


def build_arrays(features: Sequence[SubjectFeatures], age_stats: AgeStats, thresholds: Thresholds,
                 embedder: Optional[TextEmbedder]) -> FoldArrays:
    """age_stats must come from the fold's training subjects"""
    demos = [demographic_vector(f.age_years, f.gender, age_stats.mean, age_stats.std) for f in features]
    tokens = [serialize_tokens(discretize(f.delta_bold, thresholds), d) for f, d in zip(features, demos)]
    text = embed_batch(tokens, embedder) if embedder is not None else np.zeros((len(features), 0))
    return FoldArrays(
        ids=[f.subject_id for f in features],
        images=np.stack([f.image for f in features]),
        demo=np.stack([d.as_array() for d in demos]),
        text=text,
        labels=np.array([f.label for f in features], dtype=np.int64),
        tokens=tokens,
    )
