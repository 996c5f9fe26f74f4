"""Standard layers: linear, temporal convolution, RMSNorm, dropout, Kaiming init."""

from __future__ import annotations

from dataclasses import dataclass, fields
from typing import Iterator, Optional

import numpy as np

from . import tensor as T
from .errors import ArgumentError, DimensionError
from .tensor import Tensor


class ParamGroup:
    """Mixin for dataclasses whose fields hold tensors or nested groups.

    ``named_tensors`` walks fields in declaration order, giving every
    stored tensor a dotted name; the order is stable and drives both
    checkpoints and parameter counting.
    """

    def named_tensors(self, prefix: str = "") -> Iterator[tuple]:
        for f in fields(self):
            value = getattr(self, f.name)
            yield from _walk(value, f"{prefix}{f.name}")

    def tensors(self) -> list:
        return [t for _, t in self.named_tensors()]

    def trainable(self) -> list:
        return [t for t in self.tensors() if t.requires_grad]

    def freeze(self) -> None:
        for t in self.tensors():
            t.requires_grad = False
        _set_frozen(self)


def _walk(value, name: str):
    if isinstance(value, Tensor):
        yield name, value
    elif isinstance(value, ParamGroup):
        yield from value.named_tensors(name + ".")
    elif isinstance(value, (list, tuple)):
        for i, item in enumerate(value):
            yield from _walk(item, f"{name}.{i}")


def _set_frozen(value) -> None:
    if isinstance(value, ParamGroup):
        if hasattr(value, "frozen"):
            value.frozen = True
        for f in fields(value):
            _set_frozen(getattr(value, f.name))
    elif isinstance(value, (list, tuple)):
        for item in value:
            _set_frozen(item)


def count_trainable(group: ParamGroup) -> int:
    return sum(t.size for t in group.trainable())


# ---------------------------------------------------------------------------
# initialization
# ---------------------------------------------------------------------------

def kaiming_init(shape, fan_in: int, rng: np.random.Generator) -> np.ndarray:
    """Zero-mean normal draws with variance ``2 / fan_in``."""
    if fan_in < 1:
        raise ArgumentError(f"fan_in must be >= 1, got {fan_in}")
    return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=tuple(shape))


# ---------------------------------------------------------------------------
# linear
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class LinearParams(ParamGroup):
    W: Tensor
    b: Tensor
    frozen: bool = False

    def __post_init__(self):
        if self.W.ndim != 2 or self.b.shape != (self.W.shape[0],):
            raise DimensionError(f"linear params: W {self.W.shape} and b {self.b.shape} are inconsistent")
        if self.frozen:
            self.freeze()

    @property
    def d_in(self) -> int:
        return self.W.shape[1]

    @property
    def d_out(self) -> int:
        return self.W.shape[0]

    @classmethod
    def create(cls, d_in: int, d_out: int, rng: Optional[np.random.Generator] = None,
               frozen: bool = False, zero: bool = False) -> "LinearParams":
        if zero or rng is None:
            w = np.zeros((d_out, d_in))
        else:
            w = kaiming_init((d_out, d_in), d_in, rng)
        return cls(Tensor(w, requires_grad=not frozen), Tensor(np.zeros(d_out), requires_grad=not frozen), frozen)


def linear_forward(p: LinearParams, x: Tensor) -> Tensor:
    return T.linear(x, p.W, p.b)


# ---------------------------------------------------------------------------
# temporal convolution
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class TemporalConvParams(ParamGroup):
    kernel: Tensor
    bias: Tensor

    def __post_init__(self):
        if self.kernel.ndim != 3 or self.kernel.shape[2] % 2 != 1:
            raise DimensionError(f"temporal kernel must be (d_out, d_in, odd k_t), got {self.kernel.shape}")
        if self.bias.shape != (self.kernel.shape[0],):
            raise DimensionError(f"temporal bias {self.bias.shape} does not match kernel {self.kernel.shape}")

    @property
    def k_t(self) -> int:
        return self.kernel.shape[2]

    @classmethod
    def create(cls, d_in: int, d_out: int, k_t: int, rng: np.random.Generator) -> "TemporalConvParams":
        if k_t < 1 or k_t % 2 == 0:
            raise ArgumentError(f"k_t must be an odd positive integer, got {k_t}")
        kernel = kaiming_init((d_out, d_in, k_t), d_in * k_t, rng)
        return cls(Tensor(kernel, requires_grad=True), Tensor(np.zeros(d_out), requires_grad=True))


def temporal_conv_forward(p: TemporalConvParams, x: Tensor) -> Tensor:
    """Convolve the time axis of ``[..., T, N, d_in]``; nodes are never mixed."""
    return T.conv_time(x, p.kernel, p.bias)


# ---------------------------------------------------------------------------
# RMSNorm / dropout
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class RmsNormParams(ParamGroup):
    gain: Tensor
    epsilon: float = 1e-8

    @classmethod
    def create(cls, d: int, epsilon: float = 1e-8) -> "RmsNormParams":
        if epsilon <= 0:
            raise ArgumentError(f"RMSNorm epsilon must be positive, got {epsilon}")
        return cls(Tensor(np.ones(d), requires_grad=True), epsilon)


def rmsnorm_forward(p: RmsNormParams, x: Tensor) -> Tensor:
    return T.rms_norm(x, p.gain, p.epsilon)


def dropout_forward(x: Tensor, p: float, training: bool, rng: Optional[np.random.Generator]) -> Tensor:
    """Inverted dropout: survivors are rescaled by ``1 / (1 - p)`` at train time."""
    if not 0.0 <= p < 1.0:
        raise ArgumentError(f"dropout probability must lie in [0, 1), got {p}")
    if not training or p == 0.0:
        return x
    if rng is None:
        raise ArgumentError("training-mode dropout needs an explicit rng")
    keep = rng.random(x.shape) >= p
    return T.mul(x, Tensor._from_array(keep / (1.0 - p)))
