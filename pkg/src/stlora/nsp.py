"""Node-specific predictor: temporal-conv stem, residual NALL stack, horizon head."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import tensor as T
from .errors import ConfigError, DimensionError
from .nall import NallConfig, Variant, nall_forward, nall_init, nall_param_count
from .nn import (
    LinearParams,
    ParamGroup,
    RmsNormParams,
    TemporalConvParams,
    dropout_forward,
    linear_forward,
    rmsnorm_forward,
    temporal_conv_forward,
)
from .tensor import Tensor


@dataclass
class NspConfig:
    in_len: int = 12
    horizon: int = 12
    d_in: int = 1
    d_out: int = 1
    hidden_dim: int = 32
    num_layers: int = 4
    rank: int = 16
    k_t: int = 3
    dropout_p: float = 0.3
    alpha: float = 1.0
    alpha_learnable: bool = True
    variant: Variant = Variant.SHARED_FACTORS_NODE_CORE

    def __post_init__(self):
        self.variant = Variant(self.variant)
        if self.num_layers < 1:
            raise ConfigError(f"an NSP needs at least one NALL layer, got L={self.num_layers}")
        if min(self.in_len, self.horizon, self.d_in, self.d_out, self.hidden_dim) < 1:
            raise ConfigError(f"NSP sizes must be positive: {self}")

    def nall_config(self, num_nodes: int) -> NallConfig:
        return NallConfig(
            d_in=self.hidden_dim, d_out=self.hidden_dim, rank=self.rank, num_nodes=num_nodes,
            alpha=self.alpha, alpha_learnable=self.alpha_learnable, variant=self.variant,
            dropout_p=self.dropout_p,
        )


@dataclass(eq=False)
class NspParams(ParamGroup):
    stem: TemporalConvParams
    layers: list
    norms: list
    head: LinearParams
    horizon: int
    d_out: int
    dropout_p: float = 0.3

    @property
    def num_nodes(self) -> int:
        return self.layers[0].num_nodes

    @property
    def alphas(self) -> list:
        return [layer.alpha for layer in self.layers]


def nsp_init(cfg: NspConfig, num_nodes: int, rng: np.random.Generator) -> NspParams:
    """Fresh predictor whose residual stack is the identity.

    Each NALL sits on a frozen zero base, so with ``B = 0`` its output is
    exactly zero and ``H^L = H^0``; only the per-node low-rank factors
    (plus stem, norms and head) are trainable.
    """
    stem = TemporalConvParams.create(cfg.d_in, cfg.hidden_dim, cfg.k_t, rng)
    ncfg = cfg.nall_config(num_nodes)
    layers = []
    for _ in range(cfg.num_layers):
        base = LinearParams.create(cfg.hidden_dim, cfg.hidden_dim, frozen=True, zero=True)
        layers.append(nall_init(ncfg, base, rng))
    norms = [RmsNormParams.create(cfg.hidden_dim) for _ in range(cfg.num_layers)]
    head = LinearParams.create(cfg.in_len * cfg.hidden_dim, cfg.horizon * cfg.d_out, rng)
    return NspParams(stem, layers, norms, head, cfg.horizon, cfg.d_out, cfg.dropout_p)


def nsp_activation(p: NspParams, norm: RmsNormParams, h: Tensor, training: bool,
                   rng: Optional[np.random.Generator]) -> Tensor:
    return dropout_forward(T.leaky_relu(rmsnorm_forward(norm, h)), p.dropout_p, training, rng)


def nsp_hidden(p: NspParams, X: Tensor, training: bool = False,
               rng: Optional[np.random.Generator] = None) -> tuple:
    """Return ``(H^0, H^L)`` for input ``[B, T, N, D]``."""
    h0 = temporal_conv_forward(p.stem, X)
    h = h0
    for layer, norm in zip(p.layers, p.norms):
        h = T.add(h, nall_forward(layer, nsp_activation(p, norm, h, training, rng), training, rng))
    return h0, h


def nsp_forward(p: NspParams, X: Tensor, training: bool = False,
                rng: Optional[np.random.Generator] = None) -> Tensor:
    """Map ``[(B,) T, N, D]`` to ``[(B,) T', N, D_out]``."""
    squeeze = X.ndim == 3
    if squeeze:
        X = T.reshape(X, (1,) + X.shape)
    if X.ndim != 4 or X.shape[2] != p.num_nodes:
        raise DimensionError(f"NSP expects input (B, T, {p.num_nodes}, D), got {X.shape}")
    b, t_len, n, _ = X.shape
    _, h = nsp_hidden(p, X, training, rng)
    hidden = h.shape[-1]
    if t_len * hidden != p.head.d_in:
        raise DimensionError(f"NSP head expects T*D_h = {p.head.d_in}, got {t_len}*{hidden}")
    flat = T.reshape(T.transpose(h, (0, 2, 1, 3)), (b, n, t_len * hidden))
    y = linear_forward(p.head, flat)
    y = T.transpose(T.reshape(y, (b, n, p.horizon, p.d_out)), (0, 2, 1, 3))
    if squeeze:
        y = T.reshape(y, y.shape[1:])
    return y


def nsp_param_count(cfg: NspConfig, num_nodes: int) -> int:
    """Closed-form trainable count; NALL bases are frozen and excluded."""
    stem = cfg.hidden_dim * cfg.d_in * cfg.k_t + cfg.hidden_dim
    nalls = cfg.num_layers * nall_param_count(cfg.nall_config(num_nodes))["adaptation"]
    norms = cfg.num_layers * cfg.hidden_dim
    head = cfg.in_len * cfg.hidden_dim * cfg.horizon * cfg.d_out + cfg.horizon * cfg.d_out
    return stem + nalls + norms + head
