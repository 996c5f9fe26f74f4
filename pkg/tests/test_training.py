import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stlora import tensor as T
from stlora.backbones import build_shared_mlp
from stlora.data import SplitSpec, WindowSet, ZScoreStats, generate_synthetic, prepare
from stlora.errors import ConfigError, DivergenceError
from stlora.fusion import adaptation_param_count, build_stlora
from stlora.nsp import NspConfig
from stlora.tensor import Tensor
from stlora.training import (
    LrSchedule,
    OptimizerState,
    TrainConfig,
    adam_step,
    compute_metrics,
    delta_csv,
    evaluate,
    horizon_csv,
    initial_log_row,
    lr_at,
    param_report,
    report_csv,
    train,
)


@pytest.fixture(scope="module")
def small_data():
    ds = generate_synthetic(4, 400, 2, 0.1, 1)
    return prepare(ds, SplitSpec(), 6, 6)


def small_backbone(seed=0):
    return build_shared_mlp(6, 6, 1, 16, np.random.default_rng(seed))


def small_stlora(seed=0):
    bb = small_backbone(seed)
    return build_stlora(bb, NspConfig(hidden_dim=4, num_layers=2, rank=2), 4, np.random.default_rng(seed + 1))


def param_bytes(model):
    return [t.data.tobytes() for t in model.parameters()]


# -- adam -----------------------------------------------------------------------

def test_first_adam_step_moves_by_lr():
    p = Tensor(np.zeros((1, 1)), requires_grad=True)
    state = OptimizerState([p], lr=1e-3, weight_decay=0.0)
    grads = T.backward(T.tsum(T.mul(p, 1.0)))
    adam_step(state, grads)
    assert p.item() == pytest.approx(-1e-3, rel=1e-6)


def test_adam_matches_reference_recurrence():
    rng = np.random.default_rng(0)
    w0 = rng.normal(size=(2, 3))
    p = Tensor(w0, requires_grad=True)
    state = OptimizerState([p], lr=0.01, weight_decay=0.1)
    w, m, v = w0.copy(), np.zeros_like(w0), np.zeros_like(w0)
    for step in range(1, 6):
        target = rng.normal(size=(2, 3))
        grads = T.backward(T.tsum(T.square(T.sub(p, Tensor(target)))))
        g = 2 * (w - target)
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        w = w - 0.01 * (m / (1 - 0.9 ** step)) / (np.sqrt(v / (1 - 0.999 ** step)) + 1e-8) - 0.01 * 0.1 * w
        adam_step(state, grads)
        np.testing.assert_allclose(p.data, w, atol=1e-12)


def test_zero_gradient_is_fixed_point():
    p = Tensor(np.ones((2, 2)), requires_grad=True)
    state = OptimizerState([p], weight_decay=0.0)
    adam_step(state, T.GradientMap())
    np.testing.assert_array_equal(p.data, 1.0)


def test_weight_decay_skips_vectors():
    W = Tensor(np.ones((2, 2)), requires_grad=True)
    b = Tensor(np.ones(2), requires_grad=True)
    state = OptimizerState([W, b], lr=0.1, weight_decay=0.5)
    adam_step(state, T.GradientMap())
    np.testing.assert_allclose(W.data, 1.0 - 0.1 * 0.5)
    np.testing.assert_array_equal(b.data, 1.0)


def test_frozen_parameters_are_excluded():
    frozen = Tensor(np.ones((2, 2)))
    live = Tensor(np.ones((2, 2)), requires_grad=True)
    state = OptimizerState([frozen, live])
    assert state.params == [live]
    adam_step(state, T.GradientMap())
    np.testing.assert_array_equal(frozen.data, 1.0)


# -- lr schedule ----------------------------------------------------------------

def test_step_schedule_exact_values():
    s = LrSchedule(1e-3, 10, 0.1)
    assert all(lr_at(s, e) == 1e-3 for e in range(10))
    assert lr_at(s, 9) == 1e-3 and lr_at(s, 10) == 1e-4 and lr_at(s, 25) == 1e-5


@settings(max_examples=50, deadline=None)
@given(e=st.integers(0, 200), step=st.integers(1, 20), gamma=st.floats(0.01, 1.0))
def test_schedule_non_increasing(e, step, gamma):
    s = LrSchedule(1e-3, step, gamma)
    assert lr_at(s, e + 1) <= lr_at(s, e)
    assert lr_at(s, e) == pytest.approx(1e-3 * gamma ** (e // step), rel=1e-12)


# -- metrics --------------------------------------------------------------------

def test_metric_hand_fixture():
    m = compute_metrics(np.array([0.0, 0.0]), np.array([3.0, 4.0]))
    assert m.mae == pytest.approx(3.5, abs=1e-12)
    assert m.rmse == pytest.approx(math.sqrt(12.5), abs=1e-12)
    assert m.mape == pytest.approx(100.0, abs=1e-12)


def test_perfect_prediction():
    y = np.array([1.0, 2.0, 3.0])
    m = compute_metrics(y, y)
    assert (m.mae, m.rmse, m.mape) == (0.0, 0.0, 0.0)


def test_mape_masking():
    m = compute_metrics(np.array([1.0, 2.0]), np.array([0.0, 4.0]))
    assert m.mape == pytest.approx(50.0)
    assert compute_metrics(np.array([1.0]), np.array([0.0])).mape is None


def test_metrics_match_loop_oracle():
    rng = np.random.default_rng(1)
    pred, true = rng.normal(size=50), rng.normal(5.0, 2.0, size=50)
    true[3] = 1e-4
    mae = sum(abs(p - t) for p, t in zip(pred, true)) / 50
    rmse = math.sqrt(sum((p - t) ** 2 for p, t in zip(pred, true)) / 50)
    kept = [(p, t) for p, t in zip(pred, true) if abs(t) >= 1e-3]
    mape = 100 * sum(abs(p - t) / abs(t) for p, t in kept) / len(kept)
    m = compute_metrics(pred, true)
    assert m.mae == pytest.approx(mae, abs=1e-9)
    assert m.rmse == pytest.approx(rmse, abs=1e-9)
    assert m.mape == pytest.approx(mape, abs=1e-9)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 10_000), n=st.integers(1, 40))
def test_rmse_dominates_mae(seed, n):
    rng = np.random.default_rng(seed)
    m = compute_metrics(rng.normal(size=n), rng.normal(size=n))
    assert m.rmse >= m.mae - 1e-12 and m.mae >= 0


def test_evaluate_denormalizes(small_data):
    bb = small_backbone()
    rep = evaluate(bb, small_data.test, small_data.stats)
    assert len(rep.steps) == 6
    assert [name for name, _ in rep.highlighted()] == ["step3", "step6", "average"]
    pred = bb.forward(Tensor(small_data.test.inputs)).data
    true = small_data.stats.invert(small_data.test.targets)
    assert rep.average.mae == pytest.approx(np.mean(np.abs(small_data.stats.invert(pred) - true)), abs=1e-12)


def test_report_rows_for_twelve_steps():
    rng = np.random.default_rng(2)
    w = WindowSet(rng.normal(size=(5, 12, 2, 1)), rng.normal(size=(5, 12, 2, 1)))
    bb = build_shared_mlp(12, 12, 1, 4, rng)
    rep = evaluate(bb, w, ZScoreStats(np.zeros(1), np.ones(1)))
    lines = report_csv(rep).splitlines()
    assert lines[0] == "row,mae,rmse,mape"
    assert [line.split(",")[0] for line in lines[1:]] == ["step3", "step6", "step12", "average"]
    assert len(horizon_csv({"m": rep}).splitlines()) == 1 + 13


def test_delta_rows_are_adapted_minus_frozen():
    rng = np.random.default_rng(3)
    w = WindowSet(rng.normal(size=(5, 12, 2, 1)), rng.normal(size=(5, 12, 2, 1)))
    stats = ZScoreStats(np.zeros(1), np.ones(1))
    a = evaluate(build_shared_mlp(12, 12, 1, 4, rng), w, stats)
    b = evaluate(build_shared_mlp(12, 12, 1, 4, rng), w, stats)
    rows = [line.split(",") for line in delta_csv(a, b).splitlines()[1:]]
    delta = {r[1]: r for r in rows if r[0] == "delta"}
    assert float(delta["average"][2]) == pytest.approx(b.average.mae - a.average.mae, abs=1e-9)
    assert len(rows) == 12


# -- parameter report -----------------------------------------------------------

def test_backbone_only_report():
    rep = param_report(small_backbone())
    assert rep.adaptation == 0 and rep.overhead_percent == 0.0
    assert rep.backbone == (6 * 16 + 16) + (16 * 6 + 6)


def test_stlora_report_matches_closed_form():
    m = small_stlora()
    rep = param_report(m)
    assert rep.adaptation == adaptation_param_count(m, 4)
    assert rep.overhead_percent == pytest.approx(100.0 * rep.adaptation / rep.backbone)


# -- training -------------------------------------------------------------------

def test_zero_epochs_is_noop(small_data):
    bb = small_backbone()
    before = param_bytes(bb)
    log = train(bb, small_data, TrainConfig(epochs=0))
    assert log.rows == [] and param_bytes(bb) == before
    row = initial_log_row(bb, small_data, TrainConfig(epochs=0))
    assert row[0] == 0 and row[3] == 1e-3


def test_pretrain_descends_and_logs(small_data):
    bb = small_backbone()
    log = train(bb, small_data, TrainConfig(epochs=3, seed=0))
    assert [r[0] for r in log.rows] == [0, 1, 2, 3]
    assert log.rows[-1][2] < log.rows[0][2]
    assert log.to_csv().splitlines()[0] == "epoch,train_loss,val_mae,lr"
    # best epoch weights are restored
    assert evaluate(bb, small_data.val, small_data.stats).average.mae == pytest.approx(log.best_val_mae, rel=1e-12)


def test_single_step_descends_on_linear_toy():
    rng = np.random.default_rng(4)
    x = Tensor(rng.normal(size=(8, 3)))
    y = Tensor(rng.normal(size=(8, 2)))
    W = Tensor(rng.normal(size=(2, 3)), requires_grad=True)
    loss = lambda: T.tmean(T.tabs(T.sub(y, T.linear(x, W))))
    before = loss().item()
    adam_step(OptimizerState([W], lr=1e-3, weight_decay=0.0), T.backward(loss()))
    assert loss().item() < before


def test_training_is_reproducible(small_data):
    a, b = small_backbone(), small_backbone()
    la = train(a, small_data, TrainConfig(epochs=2, seed=5))
    lb = train(b, small_data, TrainConfig(epochs=2, seed=5))
    assert la.to_csv() == lb.to_csv()
    assert param_bytes(a) == param_bytes(b)


def test_adaptation_leaves_backbone_untouched(small_data):
    m = small_stlora()
    before = [t.data.tobytes() for t in m.backbone.parameters()]
    train(m, small_data, TrainConfig(epochs=2, phase="adapt", lam=1e-4))
    assert [t.data.tobytes() for t in m.backbone.parameters()] == before


def test_adapt_phase_requirements(small_data):
    with pytest.raises(ConfigError):
        train(small_backbone(), small_data, TrainConfig(epochs=1, phase="adapt"))
    m = small_stlora()
    m.backbone.params.out.b.requires_grad = True
    with pytest.raises(ConfigError):
        train(m, small_data, TrainConfig(epochs=1, phase="adapt"))
    with pytest.raises(ConfigError):
        TrainConfig(phase="finetune")


def test_divergence_names_epoch(small_data):
    bb = small_backbone()
    bb.params.out.W.assign(np.full(bb.params.out.W.shape, np.inf))
    with pytest.raises(DivergenceError) as info:
        with np.errstate(all="ignore"):
            train(bb, small_data, TrainConfig(epochs=2))
    assert info.value.epoch == 1 and "epoch 1" in str(info.value)
