import numpy as np
import pytest

from config import ModelConfig
from numcore import reset_tape


@pytest.fixture(autouse=True)
def clean_tape():
    reset_tape()
    yield
    reset_tape()


@pytest.fixture
def rng():
    return np.random.default_rng(42)


@pytest.fixture
def toy_model_config():
    """16x16 maps, 2 wavelet levels, tiny widths: small enough for exhaustive finite differences"""
    return ModelConfig(height=16, width=16, levels=2, token_dim=8, patch_size=4, patch_dim=8,
                       align_dim=4, text_dim=8, state_size=2, vit_layers=2, vit_heads=2,
                       ffn_expansion=2, film_hidden=4, classifier_hidden=6)
