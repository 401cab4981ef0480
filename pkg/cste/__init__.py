from cste.embed import (
    PatchEmbed,
    PatchEmbeds,
    QueryDownsample,
    map_to_tokens,
    patch_embed,
    query_downsample,
    tokens_to_map,
)
from cste.attention import (
    CrossAttention,
    EncoderLayer,
    LocalRefine,
    SelfAttention,
    VisionEncoder,
    cross_attention,
    local_refine,
)
from cste.encoder import CrossScaleEncoder, fuse_and_encode
