# model.py
# Full classifier: wavelet branch -> cross-scale encoder -> alignment head

import logging
from typing import Dict, List, Optional, Tuple

import numpy as np

from asam import AlignHead, LossWeights, loss_terms
from config import ModelConfig, TrainConfig
from cste import CrossScaleEncoder
from hwm import HwmBranch, pad_for_levels
from numcore import GradCheckReport, Module, Parameter, Tensor, as_tensor, grad_check
from numcore import functional as F

logger = logging.getLogger(__name__)

IMAGE_CHANNELS = 3
HEAD_GROUP = "head"
BACKBONE_GROUP = "backbone"


class RtgmffModel(Module):
    """
    forward(images (B, 3, H, W), demo (B, 3), text (B, D_t)) -> (logits (B, 2), Z (B, D)).
    The variant picks the modules: without the cross-scale encoder Z is the mean of the wavelet
    tokens, without the wavelet branch the encoder attends to nothing, without alignment the
    classifier sees the visual projection only.
    """

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        super().__init__()
        self.cfg = cfg
        self.hwm = None
        self.cste = None
        if cfg.use_hwm:
            self.hwm = HwmBranch(IMAGE_CHANNELS, cfg.token_dim, cfg.levels, cfg.state_size,
                                 cfg.ffn_expansion, cfg.film_hidden, rng)
        if cfg.use_cste:
            self.cste = CrossScaleEncoder(cfg, IMAGE_CHANNELS, rng)
        self.head = AlignHead(cfg.token_dim, cfg.text_dim, cfg.align_dim, cfg.classifier_hidden, rng,
                              use_text=cfg.use_text)

    def forward(self, images, demo, text=None) -> Tuple[Tensor, Tensor]:
        images, demo = as_tensor(images), as_tensor(demo)
        wavelet = None
        if self.hwm is not None:
            padded, _ = pad_for_levels(images, self.cfg.levels)
            wavelet = self.hwm(padded, demo)
        if self.cste is None:
            z = F.mean(wavelet.tokens, axis=1)
        else:
            z = self.cste(images, wavelet, demo)
        text = as_tensor(text) if text is not None and self.head.use_text else None
        return self.head(z, text), z

    def param_groups(self) -> Dict[str, List[Parameter]]:
        """head: alignment head, classifier and both FiLM layers; backbone: everything else"""
        groups: Dict[str, List[Parameter]] = {BACKBONE_GROUP: [], HEAD_GROUP: []}
        for name, p in self.named_parameters():
            in_head = name.startswith("head.") or ".film." in name
            groups[HEAD_GROUP if in_head else BACKBONE_GROUP].append(p)
        return groups

    def set_backbone_trainable(self, flag: bool):
        for p in self.param_groups()[BACKBONE_GROUP]:
            p.requires_grad = flag


def build_model(cfg: ModelConfig, seed: int) -> RtgmffModel:
    model = RtgmffModel(cfg, np.random.default_rng(seed))
    logger.info(f"Model built: variant={cfg.variant}, {sum(p.size for p in model.parameters())} parameters")
    return model


def loss_weights_for(cfg: TrainConfig, alpha: Optional[float] = None, beta: Optional[float] = None) -> LossWeights:
    """The visual-only variant has no text projection to align, so both auxiliary terms are off"""
    if not cfg.model.use_text:
        return LossWeights(alpha=0.0, beta=0.0)
    return LossWeights(alpha=cfg.alpha if alpha is None else alpha, beta=cfg.beta if beta is None else beta)


def model_grad_check(cfg: ModelConfig, seed: int = 0, batch: int = 4, weights: Optional[LossWeights] = None,
                     max_entries: Optional[int] = None, tol: float = 1e-4) -> GradCheckReport:
    """Finite differences of the full training loss against every parameter, on random inputs"""
    rng = np.random.default_rng(seed)
    model = build_model(cfg, seed)
    model.train()
    images = rng.normal(size=(batch, IMAGE_CHANNELS, cfg.height, cfg.width))
    ages = rng.uniform(8.0, 18.0, size=batch)
    demo = np.stack([(ages - ages.mean()) / ages.std(), np.arange(batch) % 2, 1 - np.arange(batch) % 2], axis=1)
    text = rng.normal(size=(batch, cfg.text_dim))
    labels = np.arange(batch) % 2
    weights = weights or LossWeights()
    if not model.head.use_text:
        weights = LossWeights(alpha=0.0, beta=0.0)

    def loss():
        logits, z = model(images, demo, text)
        return loss_terms(logits, labels, z, text, model.head, weights).total

    leaves = {name: p for name, p in model.named_parameters() if p.requires_grad}
    return grad_check(loss, leaves, tol=tol, max_entries=max_entries, seed=seed)
