"""Two small node-shared forecasters used as pretrained backbones."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Sequence

import numpy as np

from . import tensor as T
from .errors import ConfigError, DataFormatError, DimensionError
from .nn import LinearParams, ParamGroup, kaiming_init, linear_forward
from .tensor import Tensor


class BackboneKind(str, Enum):
    SHARED_MLP = "shared-mlp"
    GRAPH_CONV = "graph-conv"


def normalize_adjacency(edges: Sequence[tuple], num_nodes: int) -> np.ndarray:
    """Row-normalized ``A + I`` from a weighted edge list."""
    adj = np.zeros((num_nodes, num_nodes))
    for src, dst, weight in edges:
        src, dst = int(src), int(dst)
        if not (0 <= src < num_nodes and 0 <= dst < num_nodes):
            raise DataFormatError(f"edge ({src}, {dst}) out of range for {num_nodes} nodes")
        if weight < 0:
            raise DataFormatError(f"edge ({src}, {dst}) has negative weight {weight}")
        adj[src, dst] += float(weight)
    adj += np.eye(num_nodes)
    return adj / adj.sum(axis=1, keepdims=True)


@dataclass(eq=False)
class SharedMlpParams(ParamGroup):
    hidden: LinearParams
    out: LinearParams


@dataclass(eq=False)
class GraphConvParams(ParamGroup):
    W1: Tensor
    hidden: LinearParams
    out: LinearParams


@dataclass(eq=False)
class BackboneModel:
    kind: BackboneKind
    params: ParamGroup
    in_len: int
    horizon: int
    num_features: int
    hidden: int
    adjacency: Optional[np.ndarray] = field(default=None, repr=False)

    prefix = "backbone."

    def named_parameters(self):
        return list(self.params.named_tensors(self.prefix))

    def parameters(self) -> list:
        return self.params.tensors()

    def trainable(self) -> list:
        return self.params.trainable()

    def freeze(self) -> None:
        self.params.freeze()

    def describe(self) -> dict:
        out = {"kind": self.kind.value, "in_len": self.in_len, "horizon": self.horizon,
               "num_features": self.num_features, "hidden": self.hidden}
        if self.kind is BackboneKind.GRAPH_CONV:
            out["graph_channels"] = self.params.W1.shape[0]
        return out

    def forward(self, X: Tensor, training: bool = False, rng=None) -> Tensor:
        squeeze = X.ndim == 3
        if squeeze:
            X = T.reshape(X, (1,) + X.shape)
        if X.ndim != 4 or X.shape[1] != self.in_len or X.shape[3] != self.num_features:
            raise DimensionError(
                f"backbone expects (B, {self.in_len}, N, {self.num_features}), got {X.shape}")
        if self.kind is BackboneKind.GRAPH_CONV:
            n = X.shape[2]
            if self.adjacency is None or self.adjacency.shape != (n, n):
                raise ConfigError(f"graph-conv adjacency does not match {n} nodes")
            X = T.einsum("nm,bsmd->bsnd", Tensor._from_array(self.adjacency), X)
            X = T.relu(T.linear(X, self.params.W1))
        y = _temporal_head(self.params, X, self.horizon, self.num_features)
        if squeeze:
            y = T.reshape(y, y.shape[1:])
        return y


def _temporal_head(params, X: Tensor, horizon: int, d: int) -> Tensor:
    b, s, n, c = X.shape
    flat = T.reshape(T.transpose(X, (0, 2, 1, 3)), (b, n, s * c))
    hid = T.relu(linear_forward(params.hidden, flat))
    y = T.reshape(linear_forward(params.out, hid), (b, n, horizon, d))
    return T.transpose(y, (0, 2, 1, 3))


def build_shared_mlp(in_len: int, horizon: int, num_features: int, hidden: int,
                     rng: np.random.Generator) -> BackboneModel:
    if min(in_len, horizon, num_features, hidden) < 1:
        raise ConfigError("backbone dimensions must be positive")
    params = SharedMlpParams(
        hidden=LinearParams.create(in_len * num_features, hidden, rng),
        out=LinearParams.create(hidden, horizon * num_features, rng),
    )
    return BackboneModel(BackboneKind.SHARED_MLP, params, in_len, horizon, num_features, hidden)


def build_graphconv(in_len: int, horizon: int, num_features: int, hidden: int,
                    adjacency: np.ndarray, rng: np.random.Generator,
                    graph_channels: int = 8) -> BackboneModel:
    """One propagation hop ``ReLU(A X W1)`` per time step, then the shared MLP head."""
    if min(in_len, horizon, num_features, hidden, graph_channels) < 1:
        raise ConfigError("backbone dimensions must be positive")
    adjacency = np.asarray(adjacency, dtype=np.float64)
    if adjacency.ndim != 2 or adjacency.shape[0] != adjacency.shape[1]:
        raise ConfigError(f"adjacency must be square, got {adjacency.shape}")
    params = GraphConvParams(
        W1=Tensor(kaiming_init((graph_channels, num_features), num_features, rng), requires_grad=True),
        hidden=LinearParams.create(in_len * graph_channels, hidden, rng),
        out=LinearParams.create(hidden, horizon * num_features, rng),
    )
    return BackboneModel(BackboneKind.GRAPH_CONV, params, in_len, horizon, num_features, hidden, adjacency)


def build_backbone(desc: dict, rng: np.random.Generator, adjacency: Optional[np.ndarray] = None) -> BackboneModel:
    """Rebuild a backbone from :meth:`BackboneModel.describe` output."""
    kind = BackboneKind(desc["kind"])
    if kind is BackboneKind.SHARED_MLP:
        return build_shared_mlp(desc["in_len"], desc["horizon"], desc["num_features"], desc["hidden"], rng)
    if adjacency is None:
        raise ConfigError("graph-conv backbone needs an adjacency matrix")
    return build_graphconv(desc["in_len"], desc["horizon"], desc["num_features"], desc["hidden"],
                           adjacency, rng, desc.get("graph_channels", 8))


def backbone_param_count(kind: BackboneKind, in_len: int, horizon: int, num_features: int,
                         hidden: int, graph_channels: int = 8) -> int:
    kind = BackboneKind(kind)
    c = num_features if kind is BackboneKind.SHARED_MLP else graph_channels
    count = in_len * c * hidden + hidden + hidden * horizon * num_features + horizon * num_features
    if kind is BackboneKind.GRAPH_CONV:
        count += graph_channels * num_features
    return count
