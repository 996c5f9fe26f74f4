import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stlora import tensor as T
from stlora.errors import ConfigError, DimensionError
from stlora.gradcheck import finite_difference_check
from stlora.nall import (
    NallConfig,
    Variant,
    nall_enumerated_count,
    nall_forward,
    nall_init,
    nall_materialize_delta,
    nall_param_count,
)
from stlora.nn import LinearParams
from stlora.tensor import Tensor

LITERAL, SHARED = Variant.LITERAL_PER_NODE_A, Variant.SHARED_FACTORS_NODE_CORE


def leaky(z):
    return np.where(z > 0, z, 0.01 * z)


def make(variant, n=3, d_in=4, d_out=4, r=2, alpha=0.7, zero_b=False, seed=0):
    rng = np.random.default_rng(seed)
    cfg = NallConfig(d_in, d_out, r, n, alpha=alpha, variant=variant, zero_init_b=zero_b)
    base = LinearParams.create(d_in, d_out, rng)
    base.b.assign(rng.normal(size=d_out))
    return nall_init(cfg, base, rng), rng


def dense_delta(p, i):
    """Rank-one sum, written independently of the library's matrix products."""
    B, A = p.B.data, p.A.data
    d_out, r = B.shape
    d_in = A.shape[-1]
    delta = np.zeros((d_out, d_in))
    for a in range(r):
        if p.variant is LITERAL:
            row = A[i, a]
        else:
            row = sum(p.E.data[i, a, c] * A[c] for c in range(r))
        delta += np.outer(B[:, a], row)
    return delta * float(p.alpha.data) / r


def dense_forward(p, x):
    out = np.empty(x.shape[:-1] + (p.base.d_out,))
    W, b = p.base.W.data, p.base.b.data
    for i in range(x.shape[-2]):
        out[..., i, :] = leaky(x[..., i, :] @ (W + dense_delta(p, i)).T + b)
    return out


@pytest.mark.parametrize("variant", [LITERAL, SHARED])
def test_fresh_init_equals_base(variant):
    p, rng = make(variant, zero_b=True)
    x = rng.normal(size=(5, 3, 4))
    base = leaky(x @ p.base.W.data.T + p.base.b.data)
    np.testing.assert_array_equal(nall_forward(p, Tensor(x)).data, base)
    assert not p.base.W.requires_grad and p.base.frozen


@pytest.mark.parametrize("variant", [LITERAL, SHARED])
def test_alpha_zero_annihilates_delta(variant):
    p, rng = make(variant, alpha=0.0)
    x = rng.normal(size=(2, 3, 4))
    np.testing.assert_allclose(nall_forward(p, Tensor(x)).data,
                               leaky(x @ p.base.W.data.T + p.base.b.data), atol=0)


@pytest.mark.parametrize("variant", [LITERAL, SHARED])
def test_factored_matches_dense_oracle(variant):
    p, rng = make(variant)
    x = rng.normal(size=(6, 3, 4))
    np.testing.assert_allclose(nall_forward(p, Tensor(x)).data, dense_forward(p, x), atol=1e-10)


@pytest.mark.parametrize("variant", [LITERAL, SHARED])
def test_materialized_delta_consistency(variant):
    p, rng = make(variant, d_in=5, d_out=3, r=2)
    x = rng.normal(size=(4, 3, 5))
    out = nall_forward(p, Tensor(x)).data
    for i in range(3):
        W = p.base.W.data + nall_materialize_delta(p, i)
        np.testing.assert_allclose(out[:, i], leaky(x[:, i] @ W.T + p.base.b.data), atol=1e-10)
        np.testing.assert_allclose(nall_materialize_delta(p, i), dense_delta(p, i), atol=1e-12)


def test_materialize_hand_outer_product():
    cfg = NallConfig(2, 2, 1, 1, alpha=1.0, variant=LITERAL)
    p = nall_init(cfg, LinearParams.create(2, 2), np.random.default_rng(0))
    p.B.assign([[1.0], [0.0]])
    p.A.assign([[[1.0, 2.0]]])
    np.testing.assert_array_equal(nall_materialize_delta(p, 0), [[1.0, 2.0], [0.0, 0.0]])


def test_materialize_zero_and_range():
    p, _ = make(SHARED, zero_b=True)
    np.testing.assert_array_equal(nall_materialize_delta(p, 0), 0)
    with pytest.raises(IndexError):
        nall_materialize_delta(p, 3)


def test_node_axis_mismatch():
    p, _ = make(SHARED)
    with pytest.raises(DimensionError):
        nall_forward(p, Tensor(np.ones((2, 4, 4))))


def test_rank_above_width_is_config_error():
    with pytest.raises(ConfigError):
        NallConfig(4, 3, 4, 2)


def test_base_shape_checked():
    with pytest.raises(ConfigError):
        nall_init(NallConfig(4, 4, 2, 2), LinearParams.create(3, 4), np.random.default_rng(0))


def test_init_shapes_and_zero_b():
    p, _ = make(SHARED, n=5, d_in=6, d_out=4, r=3, zero_b=True)
    assert p.B.shape == (4, 3) and p.A.shape == (3, 6) and p.E.shape == (5, 3, 3)
    assert np.all(p.B.data == 0)
    q, _ = make(LITERAL, n=5, d_in=6, d_out=4, r=3, zero_b=True)
    assert q.A.shape == (5, 3, 6) and q.E is None


# -- parameter accounting -----------------------------------------------------

def test_large_layer_counts():
    shared = NallConfig(64, 64, 16, 307, alpha_learnable=False, variant=SHARED)
    literal = NallConfig(64, 64, 16, 307, alpha_learnable=False, variant=LITERAL)
    assert nall_param_count(shared)["adaptation"] == 80_640
    assert nall_param_count(literal)["adaptation"] == 315_392
    assert nall_param_count(shared)["full_per_node"] == 1_257_472
    assert nall_param_count(shared)["base"] == 64 * 64 + 64
    learnable = NallConfig(64, 64, 16, 307, variant=SHARED)
    assert nall_param_count(learnable)["adaptation"] == 80_641


def test_minimal_literal_count():
    assert nall_param_count(NallConfig(1, 1, 1, 1, alpha_learnable=False, variant=LITERAL))["adaptation"] == 2


@pytest.mark.parametrize("variant", [LITERAL, SHARED])
@pytest.mark.parametrize("learnable", [False, True])
def test_closed_form_matches_enumeration(variant, learnable):
    cfg = NallConfig(64, 64, 16, 307, alpha_learnable=learnable, variant=variant)
    p = nall_init(cfg, LinearParams.create(64, 64, frozen=True, zero=True), np.random.default_rng(0))
    assert nall_enumerated_count(p) == nall_param_count(cfg)["adaptation"]


@settings(max_examples=40, deadline=None)
@given(d=st.integers(2, 16), r=st.integers(1, 8), n=st.integers(1, 30),
       variant=st.sampled_from([LITERAL, SHARED]))
def test_counts_strictly_monotone(d, r, n, variant):
    r = min(r, d - 1)
    here = nall_param_count(NallConfig(d, d, r, n, variant=variant))["adaptation"]
    more_rank = nall_param_count(NallConfig(d, d, r + 1, n, variant=variant))["adaptation"]
    more_nodes = nall_param_count(NallConfig(d, d, r, n + 1, variant=variant))["adaptation"]
    assert more_rank > here and more_nodes > here
    shared = nall_param_count(NallConfig(d, d, r, n, variant=SHARED))["adaptation"]
    literal = nall_param_count(NallConfig(d, d, r, n, variant=LITERAL))["adaptation"]
    # the shared core wins exactly when the per-node rows outweigh the extra A
    assert (shared < literal) == (n * (d - r) > d)


def test_shared_cheaper_at_realistic_sizes():
    for n, d, r in [(307, 64, 16), (20, 8, 4), (2, 64, 16)]:
        shared = nall_param_count(NallConfig(d, d, r, n, variant=SHARED))["adaptation"]
        literal = nall_param_count(NallConfig(d, d, r, n, variant=LITERAL))["adaptation"]
        assert shared < literal


# -- properties ----------------------------------------------------------------

@settings(max_examples=30, deadline=None)
@given(n=st.integers(1, 5), d=st.integers(1, 8), r=st.integers(1, 4), seed=st.integers(0, 10_000),
       variant=st.sampled_from([LITERAL, SHARED]))
def test_factored_equals_dense_property(n, d, r, seed, variant):
    r = min(r, d)
    p, rng = make(variant, n=n, d_in=d, d_out=d, r=r, seed=seed)
    x = rng.normal(size=(2, n, d))
    np.testing.assert_allclose(nall_forward(p, Tensor(x)).data, dense_forward(p, x), atol=1e-10)


@settings(max_examples=20, deadline=None)
@given(c=st.floats(0.01, 100.0), seed=st.integers(0, 10_000))
def test_alpha_scaling_is_neutral_at_init(c, seed):
    p, rng = make(SHARED, zero_b=True, seed=seed)
    x = Tensor(rng.normal(size=(3, 3, 4)))
    before = nall_forward(p, x).data
    p.alpha.assign(np.asarray(float(p.alpha.data) * c))
    np.testing.assert_array_equal(nall_forward(p, x).data, before)


@pytest.mark.parametrize("variant", [LITERAL, SHARED])
def test_gradients(variant):
    p, rng = make(variant)
    x = Tensor(rng.normal(size=(4, 3, 4)))
    w = Tensor(rng.normal(size=(4, 3, 4)))
    params = [t for t in (p.B, p.A, p.E, p.alpha) if t is not None]
    assert finite_difference_check(lambda: T.tsum(T.mul(nall_forward(p, x), w)), params) <= 1e-4


def test_dropout_only_touches_low_rank_branch():
    p, rng = make(SHARED, zero_b=True)
    x = Tensor(rng.normal(size=(3, 3, 4)))
    # with B = 0 the branch is silent, so training-mode output equals eval
    np.testing.assert_array_equal(nall_forward(p, x, True, np.random.default_rng(0)).data,
                                  nall_forward(p, x).data)
