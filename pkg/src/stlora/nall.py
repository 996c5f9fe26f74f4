"""Node-adaptive low-rank layer.

A frozen shared linear map ``W x + b`` is corrected per node by a
low-rank delta scaled by ``alpha / r``.  Two factorizations are offered:

``literal``
    ``dW_i = B @ A_i`` with a full ``r x d_in`` factor per node.
``shared``
    ``dW_i = B @ E_i @ A`` with shared outer factors and an ``r x r`` core
    per node, costing ``r (d_in + d_out) + N r^2`` adaptation parameters.

The forward pass applies the factors one at a time and never forms a
``d_out x d_in`` delta.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Optional

import numpy as np

from . import tensor as T
from .errors import ConfigError, DimensionError
from .nn import LinearParams, ParamGroup, dropout_forward, kaiming_init
from .tensor import Tensor


class Variant(str, Enum):
    LITERAL_PER_NODE_A = "literal"
    SHARED_FACTORS_NODE_CORE = "shared"


@dataclass
class NallConfig:
    d_in: int
    d_out: int
    rank: int
    num_nodes: int
    alpha: float = 1.0
    alpha_learnable: bool = True
    variant: Variant = Variant.SHARED_FACTORS_NODE_CORE
    dropout_p: float = 0.3
    zero_init_b: bool = True

    def __post_init__(self):
        self.variant = Variant(self.variant)
        if min(self.d_in, self.d_out, self.rank, self.num_nodes) < 1:
            raise ConfigError(f"NALL sizes must be positive: {self}")
        if self.rank > min(self.d_in, self.d_out):
            raise ConfigError(f"rank {self.rank} exceeds min(d_in={self.d_in}, d_out={self.d_out})")
        if self.alpha < 0:
            raise ConfigError(f"alpha must be >= 0, got {self.alpha}")


@dataclass(eq=False)
class NallParams(ParamGroup):
    base: LinearParams
    B: Tensor
    A: Tensor
    E: Optional[Tensor]
    alpha: Tensor
    variant: Variant
    dropout_p: float = 0.3

    @property
    def rank(self) -> int:
        return self.B.shape[1]

    @property
    def num_nodes(self) -> int:
        return self.E.shape[0] if self.variant is Variant.SHARED_FACTORS_NODE_CORE else self.A.shape[0]


def nall_init(cfg: NallConfig, base: LinearParams, rng: np.random.Generator) -> NallParams:
    if base.W.shape != (cfg.d_out, cfg.d_in):
        raise ConfigError(f"base weight {base.W.shape} does not match ({cfg.d_out}, {cfg.d_in})")
    r, n = cfg.rank, cfg.num_nodes
    if cfg.variant is Variant.LITERAL_PER_NODE_A:
        A = Tensor(kaiming_init((n, r, cfg.d_in), cfg.d_in, rng), requires_grad=True)
        E = None
    else:
        A = Tensor(kaiming_init((r, cfg.d_in), cfg.d_in, rng), requires_grad=True)
        E = Tensor(kaiming_init((n, r, r), r, rng), requires_grad=True)
    if cfg.zero_init_b:
        B = np.zeros((cfg.d_out, r))
    else:
        B = kaiming_init((cfg.d_out, r), r, rng)
    base.freeze()
    return NallParams(
        base=base,
        B=Tensor(B, requires_grad=True),
        A=A,
        E=E,
        alpha=Tensor(cfg.alpha, requires_grad=cfg.alpha_learnable),
        variant=cfg.variant,
        dropout_p=cfg.dropout_p,
    )


def _low_rank_branch(p: NallParams, x: Tensor) -> Tensor:
    # x: [M, N, d_in] -> [M, N, d_out], factor by factor
    if p.variant is Variant.LITERAL_PER_NODE_A:
        u = T.einsum("mni,nri->mnr", x, p.A)
    else:
        u = T.linear(x, p.A)
        u = T.einsum("mnr,nqr->mnq", u, p.E)
    v = T.linear(u, p.B)
    return T.mul(v, T.mul(p.alpha, 1.0 / p.rank))


def nall_forward(p: NallParams, x: Tensor, training: bool = False,
                 rng: Optional[np.random.Generator] = None) -> Tensor:
    """Apply ``LeakyReLU(W x_i + dW_i x_i + b)`` independently for every node ``i``.

    ``x`` has shape ``[..., N, d_in]``.  Dropout (training only) hits the
    input of the low-rank branch, not the frozen base path.
    """
    n = p.num_nodes
    if x.ndim < 2 or x.shape[-2] != n:
        raise DimensionError(f"NALL expects node axis of extent {n} at position -2, got input {x.shape}")
    lead = x.shape[:-2]
    d_in = x.shape[-1]
    x3 = T.reshape(x, (-1, n, d_in))
    base = T.linear(x3, p.base.W, p.base.b)
    xd = dropout_forward(x3, p.dropout_p, training, rng)
    pre = T.add(base, _low_rank_branch(p, xd))
    y = T.leaky_relu(pre)
    return T.reshape(y, lead + (n, p.base.d_out))


def nall_materialize_delta(p: NallParams, node: int) -> np.ndarray:
    """Dense ``d_out x d_in`` delta of one node, including the ``alpha / r`` factor."""
    n = p.num_nodes
    if not 0 <= node < n:
        raise IndexError(f"node {node} out of range for {n} nodes")
    scale = float(p.alpha.data) / p.rank
    if p.variant is Variant.LITERAL_PER_NODE_A:
        return p.B.data @ p.A.data[node] * scale
    return p.B.data @ p.E.data[node] @ p.A.data * scale


def nall_param_count(cfg: NallConfig) -> dict:
    """Closed-form parameter counts for a NALL configuration."""
    r, n, d_in, d_out = cfg.rank, cfg.num_nodes, cfg.d_in, cfg.d_out
    if cfg.variant is Variant.LITERAL_PER_NODE_A:
        adaptation = d_out * r + n * r * d_in
    else:
        adaptation = r * (d_in + d_out) + n * r * r
    if cfg.alpha_learnable:
        adaptation += 1
    return {
        "full_per_node": n * d_in * d_out,
        "adaptation": adaptation,
        "base": d_out * d_in + d_out,
    }


def nall_enumerated_count(p: NallParams) -> int:
    """Trainable parameter count by walking the stored tensors."""
    return sum(t.size for t in p.trainable())
