import numpy as np
import pytest

from cste import (
    CrossScaleEncoder,
    LocalRefine,
    PatchEmbed,
    PatchEmbeds,
    QueryDownsample,
    VisionEncoder,
    cross_attention,
    fuse_and_encode,
    local_refine,
    patch_embed,
    query_downsample,
)
from errors import ShapeError
from hwm import HwmBranch, LevelSlot
from numcore import Linear, Tensor, grad_check
from numcore import functional as F
from rftg import FilmLayer


def softmax_rows(x):
    e = np.exp(x - x.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def demographics(batch):
    return Tensor(np.tile([[0.4, 1.0, 0.0]], (batch, 1)))


# ====== Patch embedding / queries ======

def test_patch_embed_token_count():
    rng = np.random.default_rng(0)
    embed = PatchEmbed(3, 8, 32, (8, 8), rng)
    out = patch_embed(Tensor(rng.normal(size=(1, 3, 64, 64))), embed)
    assert out.tokens.shape == (1, 64, 32) and out.grid == (8, 8)


def test_patch_embed_is_linear_and_permutes_with_patches():
    rng = np.random.default_rng(1)
    embed = PatchEmbed(3, 4, 6, (4, 4), rng)
    embed.pos.data[:] = 0.0
    np.testing.assert_array_equal(embed(Tensor(np.zeros((1, 3, 16, 16)))).tokens.data, 0.0)

    img = rng.normal(size=(1, 3, 16, 16))
    swapped = img.copy()
    swapped[..., 0:4, 0:4], swapped[..., 4:8, 8:12] = img[..., 4:8, 8:12], img[..., 0:4, 0:4]
    a, b = embed(Tensor(img)).tokens.data[0], embed(Tensor(swapped)).tokens.data[0]
    order = np.arange(16)
    order[0], order[6] = 6, 0
    np.testing.assert_allclose(b, a[order], atol=1e-12)


def test_patch_embed_divisibility():
    rng = np.random.default_rng(2)
    with pytest.raises(ShapeError):
        patch_embed(Tensor(np.zeros((1, 3, 16, 15))), PatchEmbed(3, 4, 6, (4, 4), rng))


def test_query_downsample_length_and_constant_field():
    rng = np.random.default_rng(3)
    block = QueryDownsample(6, 5, rng)
    embeds = PatchEmbeds(Tensor(np.tile(rng.normal(size=6), (1, 64, 1))), (8, 8), 8)
    q, grid = query_downsample(embeds, block)
    assert q.shape == (1, 16, 5) and grid == (4, 4)
    np.testing.assert_allclose(q.data[0], np.tile(q.data[0, :1], (16, 1)), atol=1e-12)


def test_query_downsample_odd_grid():
    block = QueryDownsample(4, 4, np.random.default_rng(4))
    with pytest.raises(ShapeError):
        query_downsample(PatchEmbeds(Tensor(np.zeros((1, 12, 4))), (3, 4), 4), block)


def test_query_downsample_gradient():
    rng = np.random.default_rng(5)
    block = QueryDownsample(4, 3, rng)
    tokens = Tensor(rng.normal(size=(2, 16, 4)), requires_grad=True)
    w = Tensor(rng.normal(size=(2, 4, 3)))
    report = grad_check(lambda: F.sum(query_downsample(PatchEmbeds(tokens, (4, 4), 2), block)[0] * w),
                        {"tokens": tokens, **dict(block.named_parameters())})
    assert report.passed, report.summary()


# ====== Local refinement ======

SLOTS = [LevelSlot(1, 0, 8, 8), LevelSlot(2, 64, 4, 4)]


def test_local_refine_relu_kill():
    rng = np.random.default_rng(6)
    block = LocalRefine(3, rng)
    block.norm.bias.data[:] = -100.0
    out = local_refine(Tensor(rng.normal(size=(2, 80, 3))), SLOTS, block)
    assert out.shape == (2, 4, 3)
    np.testing.assert_array_equal(out.data, 0.0)


def test_avg_pool_of_constant():
    out = F.avg_pool2d(Tensor(np.full((1, 2, 4, 6), 1.75)), 2)
    np.testing.assert_array_equal(out.data, 1.75)


def test_local_refine_matches_scripted_composition():
    rng = np.random.default_rng(7)
    block = LocalRefine(3, rng)
    tokens = rng.normal(size=(2, 80, 3))
    mean, var = block.norm.running_mean.copy(), block.norm.running_var.copy()
    grid = tokens[:, 64:, :].reshape(2, 4, 4, 3).transpose(0, 3, 1, 2)
    x = F.conv2d(grid, block.compress.weight, block.compress.bias)
    x = F.conv2d(x, block.smooth.weight, block.smooth.bias, padding=1)
    x = F.batch_norm(x, block.norm.weight, block.norm.bias, mean, var, training=True)
    x = F.avg_pool2d(F.relu(x), 2)
    expected = x.data.transpose(0, 2, 3, 1).reshape(2, 4, 3)
    np.testing.assert_allclose(local_refine(Tensor(tokens), SLOTS, block).data, expected, rtol=0, atol=1e-12)


def test_local_refine_requires_provenance():
    with pytest.raises(ShapeError):
        local_refine(Tensor(np.zeros((1, 16, 3))), [], LocalRefine(3, np.random.default_rng(0)))


# ====== Cross-scale attention ======

def test_single_key_returns_value_row():
    rng = np.random.default_rng(8)
    q, f = rng.normal(size=(1, 3, 4)), rng.normal(size=(1, 1, 4))
    wk, wv = rng.normal(size=(4, 4)), rng.normal(size=(4, 4))
    out = cross_attention(Tensor(q), Tensor(f), Tensor(wk), Tensor(wv))
    np.testing.assert_allclose(out.data[0], np.tile(f[0] @ wv, (3, 1)), atol=1e-12)


def test_zero_logits_average_values():
    rng = np.random.default_rng(9)
    f, wk, wv = rng.normal(size=(1, 5, 4)), rng.normal(size=(4, 4)), rng.normal(size=(4, 4))
    out = cross_attention(Tensor(np.zeros((1, 3, 4))), Tensor(f), Tensor(wk), Tensor(wv))
    np.testing.assert_allclose(out.data[0], np.tile((f[0] @ wv).mean(axis=0), (3, 1)), atol=1e-12)


def test_cross_attention_matches_row_loop():
    rng = np.random.default_rng(10)
    for _ in range(50):
        q, f = rng.normal(size=(1, 3, 4)), rng.normal(size=(1, 5, 4))
        wk, wv = rng.normal(size=(4, 4)), rng.normal(size=(4, 4))
        out = cross_attention(Tensor(q), Tensor(f), Tensor(wk), Tensor(wv)).data[0]
        k, v = f[0] @ wk, f[0] @ wv
        for i in range(3):
            logits = np.array([q[0, i] @ k[j] / 2.0 for j in range(5)])
            weights = softmax_rows(logits)
            assert abs(weights.sum() - 1.0) <= 1e-12
            np.testing.assert_allclose(out[i], weights @ v, rtol=0, atol=1e-12)
            assert np.all(out[i] >= v.min(axis=0) - 1e-12) and np.all(out[i] <= v.max(axis=0) + 1e-12)


def test_cross_attention_shape_mismatch():
    with pytest.raises(ShapeError):
        cross_attention(Tensor(np.zeros((1, 2, 4))), Tensor(np.zeros((1, 3, 5))),
                        Tensor(np.zeros((4, 4))), Tensor(np.zeros((4, 4))))


# ====== Fusion / ViT ======

def test_vit_mean_is_permutation_invariant():
    rng = np.random.default_rng(11)
    vit = VisionEncoder(8, 2, 2, 2, rng)
    tokens = rng.normal(size=(1, 9, 8))
    perm = rng.permutation(9)
    a = F.mean(vit(Tensor(tokens)), axis=1).data
    b = F.mean(vit(Tensor(tokens[:, perm])), axis=1).data
    np.testing.assert_allclose(a, b, atol=1e-12)


def test_zero_attention_fuses_to_patch_embeddings(toy_model_config):
    rng = np.random.default_rng(12)
    enc = CrossScaleEncoder(toy_model_config, 3, rng)
    image = Tensor(rng.normal(size=(2, 3, 16, 16)))
    z1 = enc(image, None, demographics(2))
    z2 = enc(image, None, demographics(2))
    assert z1.shape == (2, toy_model_config.token_dim)
    assert np.all(np.isfinite(z1.data))
    np.testing.assert_array_equal(z1.data, z2.data)
    embeds = enc.embed(image)
    expected = enc.film(enc.head(F.mean(enc.encoder(embeds.tokens), axis=1)), demographics(2))
    np.testing.assert_array_equal(z1.data, expected.data)


def test_fuse_length_mismatch():
    rng = np.random.default_rng(13)
    embeds = PatchEmbeds(Tensor(np.zeros((1, 16, 4))), (4, 4), 4)
    with pytest.raises(ShapeError):
        fuse_and_encode(Tensor(np.zeros((1, 9, 4))), (3, 3), embeds, Linear(4, 4, rng, bias=False),
                        VisionEncoder(4, 1, 2, 2, rng), Linear(4, 4, rng), FilmLayer(4, 2, rng),
                        demographics(1))


def test_image_to_embedding_gradient(toy_model_config):
    cfg = toy_model_config
    rng = np.random.default_rng(14)
    branch = HwmBranch(3, cfg.token_dim, cfg.levels, cfg.state_size, cfg.ffn_expansion, cfg.film_hidden, rng)
    enc = CrossScaleEncoder(cfg, 3, rng)
    image = Tensor(rng.normal(size=(2, 3, 16, 16)), requires_grad=True)
    d = demographics(2)
    w = Tensor(rng.normal(size=(2, cfg.token_dim)))

    def build():
        return F.sum(enc(image, branch(image, d), d) * w)

    leaves = {"image": image, **{f"cste.{k}": v for k, v in enc.named_parameters()}}
    report = grad_check(build, leaves, max_entries=6)
    assert report.passed, report.summary()
