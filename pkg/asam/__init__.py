from asam.embedder import TextEmbedder, embed_batch, embed_tokens, token_seed
from asam.align import (
    N_CLASSES,
    AlignHead,
    LossTerms,
    LossWeights,
    align_loss,
    classifier_input,
    classify,
    cross_entropy,
    loss_terms,
    project,
    reg_loss,
    total_loss,
)
