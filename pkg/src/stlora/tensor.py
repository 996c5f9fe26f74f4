"""Dense float64 tensors with tape-based reverse-mode differentiation.

Every operation on tensors that require gradients records a node holding
its parents and a backward closure.  ``backward`` replays those nodes in
reverse topological order, accumulates gradients into the leaves and then
releases the tape, so each forward pass can be differentiated exactly once.

Broadcasting is deliberately limited to scalar-with-tensor; every other
binary operation needs identical shapes.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterator, Optional, Sequence, Union

import numpy as np

from .errors import ArgumentError, DimensionError, TapeStateError

LEAKY_SLOPE = 0.01

Scalar = Union[int, float]
BackwardFn = Callable[[np.ndarray, tuple], Sequence[Optional[np.ndarray]]]

_grad_enabled = True


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Run a block without recording anything on the tape."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def is_grad_enabled() -> bool:
    return _grad_enabled


class _Node:
    __slots__ = ("parents", "backward_fn", "consumed", "op")

    def __init__(self, op: str, parents: tuple, backward_fn: BackwardFn):
        self.op = op
        self.parents = parents
        self.backward_fn = backward_fn
        self.consumed = False


class Tensor:
    """Row-major float64 array that can take part in differentiation.

    ``data`` is read-only; optimizers replace it wholesale between steps
    rather than writing into it.
    """

    __slots__ = ("data", "requires_grad", "_node", "name", "__weakref__")

    def __init__(self, values, requires_grad: bool = False, name: Optional[str] = None):
        arr = np.array(values, dtype=np.float64)
        arr.setflags(write=False)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self._node: Optional[_Node] = None
        self.name = name

    @classmethod
    def _from_array(cls, arr: np.ndarray, node: Optional[_Node] = None) -> "Tensor":
        out = cls.__new__(cls)
        if arr.dtype != np.float64:
            arr = arr.astype(np.float64)
        arr.setflags(write=False)
        out.data = arr
        out.requires_grad = node is not None
        out._node = node
        out.name = None
        return out

    # -- inspection -------------------------------------------------------
    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self._node is None

    def numpy(self) -> np.ndarray:
        return np.array(self.data)

    def item(self) -> float:
        if self.data.size != 1:
            raise ArgumentError(f"item() needs a single element, tensor has shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor._from_array(self.data)

    def assign(self, values) -> None:
        """Replace the stored values of a leaf (optimizer / checkpoint use)."""
        if self._node is not None:
            raise TapeStateError("cannot assign into a non-leaf tensor")
        arr = np.array(values, dtype=np.float64)
        if arr.shape != self.data.shape:
            raise DimensionError(f"assign shape {arr.shape} does not match tensor shape {self.shape}")
        arr.setflags(write=False)
        self.data = arr

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # -- operators --------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return add(neg(self), other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise ArgumentError("division is only supported by a Python scalar")
        return mul(self, 1.0 / float(other))

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None):
        return tsum(self, axis)

    def mean(self, axis=None):
        return tmean(self, axis)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes)


class GradientMap(dict):
    """Maps each trainable leaf tensor (by identity) to its gradient tensor."""

    def array(self, param: Tensor) -> np.ndarray:
        return self[param].data


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _record(op: str, out: np.ndarray, parents: tuple, backward_fn: BackwardFn) -> Tensor:
    if _grad_enabled and any(p.requires_grad for p in parents):
        return Tensor._from_array(out, _Node(op, parents, backward_fn))
    return Tensor._from_array(out)


# ---------------------------------------------------------------------------
# elementwise
# ---------------------------------------------------------------------------

def _scalar_or_same(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape and a.size != 1 and b.size != 1:
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} differ and neither is a scalar")


def _reduce_to(g: np.ndarray, t: Tensor) -> np.ndarray:
    if g.shape == t.shape:
        return g
    return np.full(t.shape, g.sum())


def _out_shape(a: Tensor, b: Tensor) -> tuple:
    if a.shape == b.shape:
        return a.shape
    return a.shape if b.size == 1 else b.shape


def _scalar_view(t: Tensor, shape: tuple) -> np.ndarray:
    # broadcasting a size-1 operand against the other operand only
    return t.data if t.shape == shape else t.data.reshape(())


def add(a, b) -> Tensor:
    if not isinstance(b, Tensor):
        b = float(b)
        return _record("add", a.data + b, (a,), lambda g, needs: (g,))
    _scalar_or_same("add", a, b)
    shape = _out_shape(a, b)
    out = _scalar_view(a, shape) + _scalar_view(b, shape)
    return _record("add", np.asarray(out), (a, b), lambda g, needs: (_reduce_to(g, a), _reduce_to(g, b)))


def neg(a: Tensor) -> Tensor:
    return _record("neg", -a.data, (a,), lambda g, needs: (-g,))


def sub(a, b) -> Tensor:
    if not isinstance(b, Tensor):
        return add(a, -float(b))
    _scalar_or_same("sub", a, b)
    shape = _out_shape(a, b)
    out = _scalar_view(a, shape) - _scalar_view(b, shape)
    return _record("sub", np.asarray(out), (a, b), lambda g, needs: (_reduce_to(g, a), _reduce_to(-g, b)))


def mul(a, b) -> Tensor:
    if not isinstance(b, Tensor):
        c = float(b)
        return _record("scale", a.data * c, (a,), lambda g, needs: (g * c,))
    _scalar_or_same("hadamard", a, b)
    shape = _out_shape(a, b)
    av, bv = _scalar_view(a, shape), _scalar_view(b, shape)

    def backward(g, needs):
        ga = _reduce_to(g * bv, a) if needs[0] else None
        gb = _reduce_to(g * av, b) if needs[1] else None
        return ga, gb

    return _record("hadamard", np.asarray(av * bv), (a, b), backward)


def relu(a: Tensor) -> Tensor:
    out = np.maximum(a.data, 0.0)
    return _record("relu", out, (a,), lambda g, needs: (g * (out > 0),))


def leaky_relu(a: Tensor, slope: float = LEAKY_SLOPE) -> Tensor:
    pos = a.data > 0
    out = np.where(pos, a.data, slope * a.data)
    return _record("leaky_relu", out, (a,), lambda g, needs: (np.where(pos, g, slope * g),))


def sigmoid(a: Tensor) -> Tensor:
    s = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return _record("sigmoid", s, (a,), lambda g, needs: (g * s * (1.0 - s),))


def tabs(a: Tensor) -> Tensor:
    sign = np.sign(a.data)
    return _record("abs", np.abs(a.data), (a,), lambda g, needs: (g * sign,))


def square(a: Tensor) -> Tensor:
    return _record("square", a.data * a.data, (a,), lambda g, needs: (2.0 * g * a.data,))


def tsqrt(a: Tensor) -> Tensor:
    root = np.sqrt(a.data)

    def backward(g, needs):
        # subgradient 0 at the origin keeps ||0|| differentiable in practice
        with np.errstate(divide="ignore", invalid="ignore"):
            d = np.where(root > 0, 0.5 / root, 0.0)
        return (g * d,)

    return _record("sqrt", root, (a,), backward)


_UNARY = {"leaky_relu": leaky_relu, "relu": relu, "sigmoid": sigmoid, "abs": tabs}
_BINARY = {"add": add, "sub": sub, "hadamard": mul}


def elementwise(op: str, a: Tensor, b=None) -> Tensor:
    """Dispatch one of the named pointwise operations."""
    if op in _UNARY:
        if b is not None:
            raise ArgumentError(f"{op} takes a single operand")
        return _UNARY[op](a)
    if op in _BINARY:
        if b is None:
            raise ArgumentError(f"{op} needs a second operand")
        return _BINARY[op](a, b)
    if op == "scale":
        if b is None:
            raise ArgumentError("scale needs a scalar factor")
        if isinstance(b, Tensor) and b.size != 1:
            raise DimensionError(f"scale factor must be a scalar, got shape {b.shape}")
        return mul(a, b)
    raise ArgumentError(f"unknown elementwise op {op!r}")


# ---------------------------------------------------------------------------
# shape manipulation and reductions
# ---------------------------------------------------------------------------

def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(int(s) for s in shape)
    try:
        out = a.data.reshape(shape)
    except ValueError as exc:
        raise DimensionError(f"cannot reshape {a.shape} into {shape}") from exc
    src = a.shape
    return _record("reshape", out, (a,), lambda g, needs: (g.reshape(src),))


def transpose(a: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    if sorted(axes) != list(range(a.ndim)):
        raise DimensionError(f"axes {axes} are not a permutation for shape {a.shape}")
    inverse = tuple(np.argsort(axes))
    return _record("transpose", np.transpose(a.data, axes), (a,), lambda g, needs: (np.transpose(g, inverse),))


def tsum(a: Tensor, axis=None) -> Tensor:
    out = np.sum(a.data, axis=axis)
    src = a.shape

    def backward(g, needs):
        if axis is None:
            return (np.broadcast_to(g, src).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), src).copy(),)

    return _record("sum", np.asarray(out), (a,), backward)


def tmean(a: Tensor, axis=None) -> Tensor:
    if axis is None:
        count = a.size
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        count = int(np.prod([a.shape[ax] for ax in axes]))
    return mul(tsum(a, axis), 1.0 / count)


def concat_features(a: Tensor, b: Tensor) -> Tensor:
    """Concatenate along the trailing (feature) axis, ``a`` first."""
    if a.ndim != b.ndim or a.shape[:-1] != b.shape[:-1]:
        raise DimensionError(f"concat_features: leading extents of {a.shape} and {b.shape} differ")
    da = a.shape[-1]
    out = np.concatenate([a.data, b.data], axis=-1)
    return _record("concat", out, (a, b), lambda g, needs: (g[..., :da], g[..., da:]))


def reduce_mean(xs: Sequence[Tensor]) -> Tensor:
    """Pointwise arithmetic mean of equal-shaped tensors."""
    xs = tuple(xs)
    if not xs:
        raise ArgumentError("reduce_mean needs at least one tensor")
    shape = xs[0].shape
    for x in xs[1:]:
        if x.shape != shape:
            raise DimensionError(f"reduce_mean: shapes {shape} and {x.shape} differ")
    k = len(xs)
    out = sum(x.data for x in xs) / k if k > 1 else xs[0].data.copy()
    return _record("reduce_mean", np.asarray(out), xs, lambda g, needs: tuple(g / k for _ in xs))


# ---------------------------------------------------------------------------
# products
# ---------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Plain 2-D matrix product."""
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")

    def backward(g, needs):
        ga = g @ b.data.T if needs[0] else None
        gb = a.data.T @ g if needs[1] else None
        return ga, gb

    return _record("matmul", a.data @ b.data, (a, b), backward)


def linear(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """``x @ weight.T + bias`` along the trailing axis of ``x``."""
    d_out, d_in = weight.shape
    if x.shape[-1] != d_in:
        raise DimensionError(f"linear: input trailing extent {x.shape[-1]} != d_in {d_in} (weight {weight.shape})")
    if bias is not None and bias.shape != (d_out,):
        raise DimensionError(f"linear: bias shape {bias.shape} != ({d_out},)")
    lead = x.shape[:-1]
    x2 = x.data.reshape(-1, d_in)
    y = x2 @ weight.data.T
    if bias is not None:
        y = y + bias.data
    parents = (x, weight) if bias is None else (x, weight, bias)

    def backward(g, needs):
        g2 = g.reshape(-1, d_out)
        gx = (g2 @ weight.data).reshape(lead + (d_in,)) if needs[0] else None
        gw = g2.T @ x2 if needs[1] else None
        if bias is None:
            return gx, gw
        gb = g2.sum(axis=0) if needs[2] else None
        return gx, gw, gb

    return _record("linear", y.reshape(lead + (d_out,)), parents, backward)


def _einsum_check(subscripts: str):
    lhs, out = subscripts.replace(" ", "").split("->")
    sa, sb = lhs.split(",")
    for own, other in ((sa, sb), (sb, sa)):
        missing = set(own) - set(other) - set(out)
        if missing:
            raise ArgumentError(f"einsum {subscripts!r}: indices {sorted(missing)} are summed within one operand")
    return sa, sb, out


def einsum(subscripts: str, a: Tensor, b: Tensor) -> Tensor:
    """Two-operand einsum with explicit index letters on every axis."""
    sa, sb, so = _einsum_check(subscripts)
    try:
        out = np.einsum(f"{sa},{sb}->{so}", a.data, b.data, optimize=True)
    except ValueError as exc:
        raise DimensionError(f"einsum {subscripts!r}: operands {a.shape} and {b.shape} do not fit") from exc

    def backward(g, needs):
        ga = np.einsum(f"{so},{sb}->{sa}", g, b.data, optimize=True) if needs[0] else None
        gb = np.einsum(f"{so},{sa}->{sb}", g, a.data, optimize=True) if needs[1] else None
        return ga, gb

    return _record("einsum", np.asarray(out), (a, b), backward)


# ---------------------------------------------------------------------------
# layer kernels with dedicated backward rules
# ---------------------------------------------------------------------------

def conv_time(x: Tensor, kernel: Tensor, bias: Tensor) -> Tensor:
    """Zero same-padded 1-D cross-correlation over axis -3 of ``[..., T, N, C_in]``.

    ``kernel`` has shape ``(C_out, C_in, k)`` with odd ``k``; every node is
    convolved independently with the same kernel.
    """
    c_out, c_in, k = kernel.shape
    if k % 2 != 1:
        raise DimensionError(f"temporal kernel width must be odd, got {k}")
    if x.ndim < 3 or x.shape[-1] != c_in:
        raise DimensionError(f"conv_time: input {x.shape} does not end in (T, N, {c_in})")
    if bias.shape != (c_out,):
        raise DimensionError(f"conv_time: bias shape {bias.shape} != ({c_out},)")
    lead = x.shape[:-3]
    t_len, n, _ = x.shape[-3:]
    pad = (k - 1) // 2
    xm = x.data.reshape((-1, t_len, n, c_in))
    xp = np.pad(xm, ((0, 0), (pad, pad), (0, 0), (0, 0)))
    cols = np.stack([xp[:, j:j + t_len] for j in range(k)], axis=-1)  # [M, T, N, C_in, k]
    cols2 = cols.reshape(-1, c_in * k)
    w2 = kernel.data.reshape(c_out, c_in * k)
    y = cols2 @ w2.T + bias.data
    out_shape = lead + (t_len, n, c_out)

    def backward(g, needs):
        g2 = g.reshape(-1, c_out)
        gx = gk = gb = None
        if needs[0]:
            gcols = (g2 @ w2).reshape(cols.shape)
            gxp = np.zeros_like(xp)
            for j in range(k):
                gxp[:, j:j + t_len] += gcols[..., j]
            gx = gxp[:, pad:pad + t_len].reshape(x.shape)
        if needs[1]:
            gk = (g2.T @ cols2).reshape(kernel.shape)
        if needs[2]:
            gb = g2.sum(axis=0)
        return gx, gk, gb

    return _record("conv_time", y.reshape(out_shape), (x, kernel, bias), backward)


def rms_norm(x: Tensor, gain: Tensor, eps: float) -> Tensor:
    """``gain * x / sqrt(mean(x**2) + eps)`` over the trailing axis."""
    d = x.shape[-1]
    if gain.shape != (d,):
        raise DimensionError(f"rms_norm: gain shape {gain.shape} != ({d},)")
    rms = np.sqrt(np.mean(x.data * x.data, axis=-1, keepdims=True) + eps)
    normed = x.data / rms

    def backward(g, needs):
        gx = gg = None
        if needs[0]:
            gn = g * gain.data
            gx = gn / rms - x.data * np.sum(gn * x.data, axis=-1, keepdims=True) / (d * rms ** 3)
        if needs[1]:
            gg = np.sum((g * normed).reshape(-1, d), axis=0)
        return gx, gg

    return _record("rms_norm", normed * gain.data, (x, gain), backward)


# ---------------------------------------------------------------------------
# reverse sweep
# ---------------------------------------------------------------------------

def _topological(root: Tensor) -> list:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        t, expanded = stack.pop()
        node = t._node
        if node is None:
            continue
        if expanded:
            order.append(t)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((t, True))
        for p in node.parents:
            if p._node is not None and id(p._node) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> GradientMap:
    """Differentiate a scalar loss with respect to every trainable leaf.

    The recorded tape is released afterwards; differentiating the same
    forward pass again raises :class:`TapeStateError`.
    """
    if loss.size != 1:
        raise ArgumentError(f"backward needs a scalar loss, got shape {loss.shape}")
    node = loss._node
    if node is None:
        raise TapeStateError("loss has no recorded operations; nothing to differentiate")
    if node.consumed:
        raise TapeStateError("this tape was already differentiated")

    order = _topological(loss)
    grads = {id(loss): np.ones(loss.shape)}
    leaves: dict = {}
    for t in reversed(order):
        g = grads.pop(id(t), None)
        node = t._node
        node.consumed = True
        if g is None:
            continue
        needs = tuple(p.requires_grad for p in node.parents)
        contributions = node.backward_fn(g, needs)
        for p, gp, need in zip(node.parents, contributions, needs):
            if not need or gp is None:
                continue
            key = id(p)
            if p._node is None:
                if key in leaves:
                    leaves[key][1] += gp
                else:
                    leaves[key] = [p, np.array(gp, dtype=np.float64).reshape(p.shape)]
            elif key in grads:
                grads[key] = grads[key] + gp
            else:
                grads[key] = gp
    for t in order:
        # free the tape; a second backward over these nodes is a state error
        t._node.parents = ()
        t._node.backward_fn = None
    out = GradientMap()
    for p, g in leaves.values():
        out[p] = Tensor._from_array(g)
    return out
