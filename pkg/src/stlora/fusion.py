"""Gated blending of a frozen backbone with K node-specific predictor blocks."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import tensor as T
from .backbones import BackboneModel
from .errors import ConfigError, DimensionError
from .nn import LinearParams, linear_forward
from .nsp import NspConfig, NspParams, nsp_forward, nsp_init, nsp_param_count
from .tensor import Tensor


@dataclass
class LossConfig:
    lam: float = 0.0
    horizon: int = 12

    def __post_init__(self):
        if self.lam < 0:
            raise ConfigError(f"lambda must be >= 0, got {self.lam}")


@dataclass(eq=False)
class StLoraModel:
    backbone: BackboneModel
    blocks: list
    fusion: LinearParams
    nsp_config: NspConfig
    gate_bias: float = 0.0

    @property
    def num_blocks(self) -> int:
        return len(self.blocks)

    @property
    def in_len(self) -> int:
        return self.backbone.in_len

    @property
    def horizon(self) -> int:
        return self.backbone.horizon

    def named_parameters(self) -> list:
        out = self.backbone.named_parameters()
        for k, block in enumerate(self.blocks):
            out.extend(block.named_tensors(f"blocks.{k}."))
        out.extend(self.fusion.named_tensors("fusion."))
        return out

    def parameters(self) -> list:
        return [t for _, t in self.named_parameters()]

    def trainable(self) -> list:
        return [t for t in self.parameters() if t.requires_grad]

    def adaptation_parameters(self) -> list:
        out = []
        for block in self.blocks:
            out.extend(block.trainable())
        out.extend(self.fusion.trainable())
        return out

    @property
    def alphas(self) -> list:
        return [a for block in self.blocks for a in block.alphas]

    def forward(self, X: Tensor, training: bool = False, rng=None, y_base: Optional[Tensor] = None) -> Tensor:
        return stlora_forward(self, X, training, rng, y_base)["prediction"]


def build_stlora(backbone: BackboneModel, nsp_cfg: NspConfig, num_nodes: int, rng: np.random.Generator,
                 num_blocks: int = 1, gate_bias: float = 0.0) -> StLoraModel:
    """Wrap ``backbone`` and freeze it.

    The input length must equal the horizon, because later blocks
    concatenate the raw history with the previous block's forecast.
    """
    if num_blocks < 1:
        raise ConfigError(f"need at least one NSP block, got K={num_blocks}")
    if backbone.in_len != backbone.horizon:
        raise ConfigError(
            f"input length {backbone.in_len} must equal horizon {backbone.horizon} for feature concatenation")
    d = backbone.num_features
    blocks = []
    for k in range(num_blocks):
        cfg = NspConfig(**{**nsp_cfg.__dict__, "in_len": backbone.horizon, "horizon": backbone.horizon,
                           "d_in": d if k == 0 else 2 * d, "d_out": d})
        blocks.append(nsp_init(cfg, num_nodes, rng))
    fusion = LinearParams.create(2 * d, d, rng)
    fusion.b.assign(np.full(d, float(gate_bias)))
    model = StLoraModel(backbone, blocks, fusion, nsp_cfg, gate_bias)
    freeze_backbone(model)
    return model


def freeze_backbone(m: StLoraModel) -> None:
    m.backbone.freeze()


def stlora_forward(m: StLoraModel, X: Tensor, training: bool = False,
                   rng: Optional[np.random.Generator] = None, y_base: Optional[Tensor] = None) -> dict:
    """Return the blended ``prediction``, the ``backbone`` forecast, the ``gate`` and ``blocks_mean`` for ``X``.

    ``y_base`` may carry precomputed backbone predictions for ``X``; the
    backbone is frozen, so this only saves work.
    """
    if y_base is None:
        y_base = m.backbone.forward(X, training=False)
    z = nsp_forward(m.blocks[0], T.relu(y_base), training, rng)
    zs = [z]
    for block in m.blocks[1:]:
        z = nsp_forward(block, T.relu(T.concat_features(X, z)), training, rng)
        zs.append(z)
    z_mean = T.reduce_mean(zs)
    if z_mean.shape != y_base.shape:
        raise DimensionError(f"NSP output {z_mean.shape} does not match backbone output {y_base.shape}")
    gate = T.sigmoid(linear_forward(m.fusion, T.concat_features(X, z_mean)))
    y_final = T.add(z_mean, T.mul(gate, T.sub(y_base, z_mean)))
    return {"prediction": y_final, "backbone": y_base, "gate": gate, "blocks_mean": z_mean}


def stlora_loss(pred: Tensor, target: Tensor, alphas: Sequence[Tensor], cfg: LossConfig) -> Tensor:
    """Horizon-averaged MAE plus ``lam`` times the Euclidean norm of the alphas."""
    if pred.shape != target.shape:
        raise DimensionError(f"loss: prediction {pred.shape} and target {target.shape} differ")
    # equal step sizes make the horizon average of per-step means the global mean
    loss = T.tmean(T.tabs(T.sub(target, pred)))
    if cfg.lam > 0 and alphas:
        sq = T.square(alphas[0])
        for a in alphas[1:]:
            sq = T.add(sq, T.square(a))
        loss = T.add(loss, T.mul(T.tsqrt(sq), cfg.lam))
    return loss


def adaptation_param_count(m: StLoraModel, num_nodes: int) -> int:
    """Closed-form count of the adaptation parameters of ``m``."""
    d = m.backbone.num_features
    total = 0
    for k in range(m.num_blocks):
        cfg = NspConfig(**{**m.nsp_config.__dict__, "in_len": m.horizon, "horizon": m.horizon,
                           "d_in": d if k == 0 else 2 * d, "d_out": d})
        total += nsp_param_count(cfg, num_nodes)
    return total + (2 * d * d + d)
