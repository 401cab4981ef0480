# embedder.py
# Frozen text embedder for ROI token streams: hash-seeded table + mean pooling

import hashlib
import logging
from typing import Dict, Iterable, List, Optional, Sequence, Union

import numpy as np

from errors import TokenError
from rftg.tokens import RoiTokenSeq, vocabulary

logger = logging.getLogger(__name__)


def token_seed(token: str) -> int:
    """Stable across processes and platforms (unlike hash())"""
    return int.from_bytes(hashlib.sha256(token.encode("utf-8")).digest()[:8], "little")


class TextEmbedder:
    """
    token -> R^{D_t} row drawn from default_rng(sha256(token)), scaled by 1/sqrt(D_t).
    Not a Module: the table is regenerated from the vocabulary, never trained or checkpointed.
    """

    def __init__(self, dim: int, tokens: Optional[Iterable[str]] = None):
        self.dim = dim
        self.tokens: List[str] = list(tokens if tokens is not None else vocabulary())
        self.index: Dict[str, int] = {tok: i for i, tok in enumerate(self.tokens)}
        scale = 1.0 / np.sqrt(dim)
        self.table = np.stack([np.random.default_rng(token_seed(tok)).normal(size=dim) * scale
                               for tok in self.tokens])
        self.table.setflags(write=False)
        logger.info(f"TextEmbedder: {len(self.tokens)} tokens x {dim} dims")

    def row(self, token: str) -> np.ndarray:
        return self.table[self.index[token]]

    def __call__(self, seq: Union[RoiTokenSeq, Sequence[str]]) -> np.ndarray:
        return embed_tokens(seq, self)


def embed_tokens(seq: Union[RoiTokenSeq, Sequence[str]], embedder: TextEmbedder) -> np.ndarray:
    """T_emb: mean of the token rows"""
    tokens = seq.tokens if isinstance(seq, RoiTokenSeq) else list(seq)
    if not tokens:
        raise TokenError("embed_tokens: empty token stream")
    unknown = [tok for tok in tokens if tok not in embedder.index]
    if unknown:
        raise TokenError(f"embed_tokens: out-of-vocabulary tokens {unknown[:5]}")
    rows = embedder.table[[embedder.index[tok] for tok in tokens]]
    return rows.mean(axis=0)


def embed_batch(streams: Sequence[Union[RoiTokenSeq, Sequence[str]]], embedder: TextEmbedder) -> np.ndarray:
    return np.stack([embed_tokens(s, embedder) for s in streams])
