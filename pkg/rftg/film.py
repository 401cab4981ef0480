# film.py
# Feature-wise linear modulation conditioned on the demographic vector

import logging
from typing import Tuple

import numpy as np

from errors import ShapeError
from numcore import Linear, Module, Parameter, Tensor
from numcore import functional as F

logger = logging.getLogger(__name__)

DEMOGRAPHIC_DIM = 3


class FilmLayer(Module):
    """
    Two-layer generator d -> (gamma, beta) in R^H x R^H:
        out = gamma(d) * h + beta(d)
    The output layer starts at W = 0, b = [1..1, 0..0], i.e. the identity map.
    """

    def __init__(self, feature_dim: int, hidden_dim: int, rng: np.random.Generator):
        super().__init__()
        self.feature_dim = feature_dim
        self.hidden = Linear(DEMOGRAPHIC_DIM, hidden_dim, rng)
        self.out = Linear(hidden_dim, 2 * feature_dim, rng)
        self.out.weight = Parameter(np.zeros((hidden_dim, 2 * feature_dim)))
        self.out.bias = Parameter(np.concatenate([np.ones(feature_dim), np.zeros(feature_dim)]))

    def coefficients(self, d) -> Tuple[Tensor, Tensor]:
        """d: (B, 3) -> gamma, beta each (B, H)"""
        params = self.out(F.relu(self.hidden(d)))
        return params[..., :self.feature_dim], params[..., self.feature_dim:]

    def forward(self, h, d) -> Tensor:
        return film_modulate(h, d, self)


def film_modulate(h, d, layer: FilmLayer) -> Tensor:
    """h: (B, H) or (B, L, H); d: (B, 3)"""
    h = h if isinstance(h, Tensor) else Tensor(h)
    d = d if isinstance(d, Tensor) else Tensor(d)
    if h.shape[-1] != layer.feature_dim:
        raise ShapeError(f"film_modulate: features {h.shape} do not match layer width {layer.feature_dim}")
    if d.ndim != 2 or d.shape[1] != DEMOGRAPHIC_DIM or d.shape[0] != h.shape[0]:
        raise ShapeError(f"film_modulate: conditioning {d.shape} does not match batch of {h.shape}")
    gamma, beta = layer.coefficients(d)
    if h.ndim == 3:
        gamma = F.reshape(gamma, (gamma.shape[0], 1, gamma.shape[1]))
        beta = F.reshape(beta, (beta.shape[0], 1, beta.shape[1]))
    return gamma * h + beta
