"""Central-difference verification of the analytic gradients."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from . import tensor as T
from .backbones import build_shared_mlp
from .errors import NumericError
from .fusion import LossConfig, build_stlora, stlora_forward, stlora_loss
from .nall import NallConfig, Variant, nall_forward, nall_init
from .nn import (
    LinearParams,
    RmsNormParams,
    TemporalConvParams,
    linear_forward,
    rmsnorm_forward,
    temporal_conv_forward,
)
from .nsp import NspConfig, nsp_forward, nsp_init
from .tensor import Tensor

TOLERANCE = 1e-4


def _label(p: Tensor, i: int) -> str:
    return p.name or f"param #{i} {p.shape}"


def finite_difference_check(f: Callable[[], Tensor], params: Sequence[Tensor], step: float = 1e-5) -> float:
    """Largest ``|analytic - central| / max(1, |central|)`` over all coordinates.

    ``f`` rebuilds the scalar objective from the current parameter values;
    it must be deterministic (no dropout).
    """
    if step <= 0:
        raise ValueError(f"step must be positive, got {step}")
    grads = T.backward(f())
    worst = 0.0
    for i, p in enumerate(params):
        analytic = grads[p].data if p in grads else np.zeros(p.shape)
        if not np.all(np.isfinite(analytic)):
            raise NumericError(f"analytic gradient of {_label(p, i)} contains NaN/inf")
        base = p.data.copy()
        flat_a = analytic.reshape(-1)
        try:
            for j in range(base.size):
                bumped = base.copy()
                bumped.flat[j] += step
                p.assign(bumped)
                with T.no_grad():
                    up = f().item()
                bumped.flat[j] = base.flat[j] - step
                p.assign(bumped)
                with T.no_grad():
                    down = f().item()
                central = (up - down) / (2.0 * step)
                if not np.isfinite(central):
                    raise NumericError(f"finite difference of {_label(p, i)} at index {j} is not finite")
                worst = max(worst, abs(flat_a[j] - central) / max(1.0, abs(central)))
        finally:
            p.assign(base)
    return worst


# ---------------------------------------------------------------------------
# component fixtures used by the grad-check command
# ---------------------------------------------------------------------------

def _weights(rng, shape) -> Tensor:
    return Tensor(rng.normal(size=shape))


def _objective(out_fn, weights):
    return lambda: T.tsum(T.mul(out_fn(), weights))


def _leaf(rng, shape, name):
    return Tensor(rng.normal(size=shape), requires_grad=True, name=name)


def check_linear(rng, n=3, d=4, r=2, s=4):
    p = LinearParams.create(d, d + 1, rng)
    p.b.assign(rng.normal(size=d + 1))
    x = _leaf(rng, (s, n, d), "x")
    w = _weights(rng, (s, n, d + 1))
    return _objective(lambda: linear_forward(p, x), w), [p.W, p.b, x]


def check_conv(rng, n=3, d=4, r=2, s=4):
    p = TemporalConvParams.create(d, d - 1, 3, rng)
    p.bias.assign(rng.normal(size=d - 1))
    x = _leaf(rng, (2, s, n, d), "x")
    w = _weights(rng, (2, s, n, d - 1))
    return _objective(lambda: temporal_conv_forward(p, x), w), [p.kernel, p.bias, x]


def check_rmsnorm(rng, n=3, d=4, r=2, s=4):
    p = RmsNormParams.create(d)
    p.gain.assign(rng.normal(size=d))
    x = _leaf(rng, (s, n, d), "x")
    w = _weights(rng, (s, n, d))
    return _objective(lambda: rmsnorm_forward(p, x), w), [p.gain, x]


def _nall(variant):
    def build(rng, n=3, d=4, r=2, s=4):
        cfg = NallConfig(d, d, r, n, alpha=0.7, variant=variant, zero_init_b=False)
        base = LinearParams.create(d, d, rng)
        base.b.assign(rng.normal(size=d))
        p = nall_init(cfg, base, rng)
        x = _leaf(rng, (s, n, d), "x")
        w = _weights(rng, (s, n, d))
        params = [t for t in (p.B, p.A, p.E, p.alpha) if t is not None] + [x]
        return _objective(lambda: nall_forward(p, x), w), params
    return build


def _randomize_adapters(blocks, rng):
    # a zero stem bias on ReLU'd inputs puts rows exactly on the LeakyReLU kink
    for block in blocks:
        block.stem.bias.assign(rng.normal(size=block.stem.bias.shape))
        for layer in block.layers:
            layer.B.assign(rng.normal(scale=0.5, size=layer.B.shape))
        for norm in block.norms:
            norm.gain.assign(1.0 + 0.1 * rng.normal(size=norm.gain.shape))


def check_nsp(rng, n=3, d=4, r=2, s=4):
    cfg = NspConfig(in_len=s, horizon=s, d_in=1, d_out=1, hidden_dim=d, num_layers=2, rank=r)
    p = nsp_init(cfg, n, rng)
    _randomize_adapters([p], rng)
    x = Tensor(rng.normal(size=(2, s, n, 1)))
    w = _weights(rng, (2, s, n, 1))
    return _objective(lambda: nsp_forward(p, x), w), p.trainable()


def check_fusion(rng, n=3, d=4, r=2, s=4):
    backbone = build_shared_mlp(s, s, 1, 5, rng)
    model = build_stlora(backbone, NspConfig(hidden_dim=d, num_layers=2, rank=r), n, rng, num_blocks=1)
    _randomize_adapters(model.blocks, rng)
    model.fusion.b.assign(rng.normal(size=1))
    x = Tensor(rng.normal(size=(2, s, n, 1)))
    y = Tensor(rng.normal(size=(2, s, n, 1)))
    cfg = LossConfig(lam=0.1, horizon=s)

    def f():
        out = stlora_forward(model, x)
        return stlora_loss(out["prediction"], y, model.alphas, cfg)

    return f, model.trainable()


COMPONENTS = {
    "linear": check_linear,
    "temporal-conv": check_conv,
    "rmsnorm": check_rmsnorm,
    "nall-literal": _nall(Variant.LITERAL_PER_NODE_A),
    "nall-shared": _nall(Variant.SHARED_FACTORS_NODE_CORE),
    "nsp-2layer": check_nsp,
    "fusion-k1": check_fusion,
}


def run_grad_checks(seed: int = 0, sizes: dict = None, step: float = 1e-5) -> list:
    """Return ``(component, max_rel_error, passed)`` rows for every registered component."""
    sizes = sizes or {}
    rows = []
    for name, build in COMPONENTS.items():
        rng = np.random.default_rng([seed, len(rows)])
        f, params = build(rng, **sizes)
        err = finite_difference_check(f, params, step)
        rows.append((name, err, err <= TOLERANCE))
    return rows
