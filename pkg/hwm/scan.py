# scan.py
# Input-dependent diagonal state-space recurrence with sigmoid token gating

import logging
from typing import Tuple

import numpy as np

from errors import NonFiniteError, ShapeError
from numcore import Linear, Module, Parameter, Tensor, apply_op, as_tensor
from numcore import functional as F

logger = logging.getLogger(__name__)


def scan_recurrence(u, delta, A, B, C) -> Tensor:
    """
    Causal recurrence over the token axis, per channel d and state slot k:
        x_t[d, k] = exp(delta_t[d] * A[d, k]) * x_{t-1}[d, k] + delta_t[d] * B_t[k] * u_t[d]
        y_t[d]    = sum_k C_t[k] * x_t[d, k]
    u, delta: (Bt, L, D); A: (D, n); B, C: (Bt, L, n). Fused op with a hand-written backward.
    """
    u, delta, A, B, C = (as_tensor(t) for t in (u, delta, A, B, C))
    bt, length, dim = u.shape
    n = A.shape[1]
    if delta.shape != u.shape or A.shape != (dim, n) or B.shape != (bt, length, n) or C.shape != B.shape:
        raise ShapeError(f"scan_recurrence: u {u.shape}, delta {delta.shape}, A {A.shape}, "
                         f"B {B.shape}, C {C.shape} do not conform")

    dA = np.exp(delta.data[..., None] * A.data)                       # (Bt, L, D, n)
    dBu = delta.data[..., None] * B.data[:, :, None, :] * u.data[..., None]
    states = np.empty_like(dA)
    x = np.zeros((bt, dim, n))
    for t in range(length):
        x = dA[:, t] * x + dBu[:, t]
        states[:, t] = x
    if not np.all(np.isfinite(states)):
        raise NonFiniteError("scan_recurrence: state overflow (discretization step blew up)")
    y = np.einsum("bldn,bln->bld", states, C.data)

    def _backward(gy):
        g_states_from_y = gy[..., None] * C.data[:, :, None, :]          # (Bt, L, D, n)
        gC = np.einsum("bld,bldn->bln", gy, states)
        g_dA = np.zeros_like(dA)
        g_dBu = np.empty_like(dBu)
        carry = np.zeros((bt, dim, n))
        for t in reversed(range(length)):
            carry = g_states_from_y[:, t] + carry
            g_dBu[:, t] = carry
            if t > 0:
                g_dA[:, t] = carry * states[:, t - 1]
            carry = carry * dA[:, t]
        g_exp = g_dA * dA
        g_delta = (g_exp * A.data).sum(axis=-1) + (g_dBu * B.data[:, :, None, :]).sum(axis=-1) * u.data
        gA = np.einsum("bldn,bld->dn", g_exp, delta.data)
        gB = np.einsum("bldn,bld->bln", g_dBu, delta.data * u.data)
        gu = (g_dBu * B.data[:, :, None, :]).sum(axis=-1) * delta.data
        return gu, g_delta, gA, gB, gC

    return apply_op("selective_scan", y, (u, delta, A, B, C), _backward)


class SelectiveScan(Module):
    """
    Per-stream block parameters:
      delta = softplus(x W_delta + b_delta) > 0
      A = -exp(A_log), initialised log-spaced in [-1, -1e-3]
      B_t = x W_B, C_t = x W_C, skip D (per channel), gate = sigmoid(x W_g + b_g)
    """

    def __init__(self, dim: int, state_size: int, rng: np.random.Generator):
        super().__init__()
        self.dim = dim
        self.state_size = state_size
        self.delta_proj = Linear(dim, dim, rng)
        # step sizes start log-uniform in [1e-3, 1e-1]
        dt = np.exp(rng.uniform(np.log(1e-3), np.log(1e-1), size=dim))
        self.delta_proj.bias = Parameter(np.log(np.expm1(dt)))
        self.A_log = Parameter(np.tile(np.log(np.logspace(-3, 0, state_size)), (dim, 1)))
        self.B_proj = Linear(dim, state_size, rng, bias=False)
        self.C_proj = Linear(dim, state_size, rng, bias=False)
        self.D = Parameter(np.ones(dim))
        self.gate = Linear(dim, dim, rng)

    def discretization(self, x) -> Tuple[Tensor, Tensor]:
        return F.softplus(self.delta_proj(x)), F.neg(F.exp(self.A_log))

    def forward(self, x) -> Tensor:
        return selective_scan(x, self)


def selective_scan(tokens, params: SelectiveScan) -> Tensor:
    """tokens: (Bt, L, D) -> (Bt, L, D), causal in token order"""
    if tokens.shape[-1] != params.dim:
        raise ShapeError(f"selective_scan: tokens {tokens.shape} do not match width {params.dim}")
    delta, A = params.discretization(tokens)
    y = scan_recurrence(tokens, delta, A, params.B_proj(tokens), params.C_proj(tokens))
    y = y + tokens * params.D
    return y * F.sigmoid(params.gate(tokens))
