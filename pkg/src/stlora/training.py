"""Adam, step learning-rate decay, training loops, metrics and parameter accounting."""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field
from decimal import Decimal
from typing import Optional, Sequence

import numpy as np

from . import tensor as T
from .backbones import BackboneModel
from .data import PreparedData, WindowSet, ZScoreStats
from .errors import ArgumentError, ConfigError, DivergenceError, TapeStateError
from .fusion import LossConfig, StLoraModel, stlora_loss
from .tensor import GradientMap, Tensor

logger = logging.getLogger(__name__)

MAPE_THRESHOLD = 1e-3
HIGHLIGHT_STEPS = (3, 6, 12)


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class OptimizerState:
    params: list
    lr: float = 1e-3
    weight_decay: float = 5e-4
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def __post_init__(self):
        self.params = [p for p in self.params if p.requires_grad]
        for p in self.params:
            self.m[id(p)] = np.zeros(p.shape)
            self.v[id(p)] = np.zeros(p.shape)


def adam_step(state: OptimizerState, grads: GradientMap) -> None:
    """One bias-corrected Adam update with decoupled weight decay.

    Weight decay only touches parameters with two or more axes; gains,
    biases and scalars are left alone.  Trainable parameters missing from
    ``grads`` did not influence the loss and get a zero gradient.
    """
    state.step += 1
    b1, b2 = state.betas
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for p in state.params:
        if not p.requires_grad:
            continue
        g = grads[p].data if p in grads else np.zeros(p.shape)
        if g.shape != p.shape:
            raise TapeStateError(f"gradient shape {g.shape} does not match parameter shape {p.shape}")
        m = state.m[id(p)] = b1 * state.m[id(p)] + (1.0 - b1) * g
        v = state.v[id(p)] = b2 * state.v[id(p)] + (1.0 - b2) * g * g
        update = (m / c1) / (np.sqrt(v / c2) + state.eps)
        new = p.data - state.lr * update
        if state.weight_decay and p.ndim >= 2:
            new = new - state.lr * state.weight_decay * p.data
        p.assign(new)


@dataclass(frozen=True)
class LrSchedule:
    lr0: float = 1e-3
    step_size: int = 10
    gamma: float = 0.1


def lr_at(schedule: LrSchedule, epoch: int) -> float:
    """``lr0 * gamma ** floor(epoch / step_size)``, evaluated in decimal so 1e-3 -> 1e-4 is exact."""
    if epoch < 0:
        raise ArgumentError(f"epoch must be >= 0, got {epoch}")
    k = epoch // schedule.step_size
    return float(Decimal(repr(schedule.lr0)) * Decimal(repr(schedule.gamma)) ** k)


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------

@dataclass
class StepMetrics:
    mae: float
    rmse: float
    mape: Optional[float]  # percent; None when no target is large enough


def compute_metrics(pred: np.ndarray, true: np.ndarray, mape_threshold: float = MAPE_THRESHOLD) -> StepMetrics:
    pred = np.asarray(pred, dtype=np.float64)
    true = np.asarray(true, dtype=np.float64)
    err = pred - true
    mae = float(np.mean(np.abs(err)))
    rmse = float(np.sqrt(np.mean(err * err)))
    mask = np.abs(true) >= mape_threshold
    mape = float(np.mean(np.abs(err[mask]) / np.abs(true[mask])) * 100.0) if mask.any() else None
    return StepMetrics(mae, rmse, mape)


@dataclass
class MetricsReport:
    steps: list            # StepMetrics per horizon step, step 1 first
    average: StepMetrics   # pooled over every step
    backbone_params: Optional[int] = None
    adaptation_params: Optional[int] = None
    overhead_percent: Optional[float] = None

    def step(self, k: int) -> StepMetrics:
        return self.steps[k - 1]

    def highlighted(self) -> list:
        rows = [(f"step{k}", self.step(k)) for k in HIGHLIGHT_STEPS if k <= len(self.steps)]
        rows.append(("average", self.average))
        return rows


def fmt_value(x: Optional[float]) -> str:
    return "NA" if x is None else format(x, ".10g")


def report_csv(report: MetricsReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["row", "mae", "rmse", "mape"])
    for name, m in report.highlighted():
        w.writerow([name, fmt_value(m.mae), fmt_value(m.rmse), fmt_value(m.mape)])
    return buf.getvalue()


def horizon_csv(reports: dict) -> str:
    """Every horizon step for one or more named reports."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["model", "step", "mae", "rmse", "mape"])
    for name, rep in reports.items():
        for k, m in enumerate(rep.steps, 1):
            w.writerow([name, k, fmt_value(m.mae), fmt_value(m.rmse), fmt_value(m.mape)])
        w.writerow([name, "average", fmt_value(rep.average.mae), fmt_value(rep.average.rmse), fmt_value(rep.average.mape)])
    return buf.getvalue()


def delta_csv(frozen: MetricsReport, adapted: MetricsReport) -> str:
    """Adapted minus frozen for each highlighted row; negative is an improvement."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["model", "row", "mae", "rmse", "mape"])
    pairs = list(zip(frozen.highlighted(), adapted.highlighted()))
    for label, pick in (("backbone", 0), ("stlora", 1)):
        for pair in pairs:
            name, m = pair[pick]
            w.writerow([label, name, fmt_value(m.mae), fmt_value(m.rmse), fmt_value(m.mape)])
    for (name, f), (_, a) in pairs:
        dm = None if f.mape is None or a.mape is None else a.mape - f.mape
        w.writerow(["delta", name, fmt_value(a.mae - f.mae), fmt_value(a.rmse - f.rmse), fmt_value(dm)])
    return buf.getvalue()


def predict(model, inputs: np.ndarray, batch_size: int = 256) -> np.ndarray:
    outs = []
    with T.no_grad():
        for start in range(0, inputs.shape[0], batch_size):
            outs.append(model.forward(Tensor._from_array(inputs[start:start + batch_size].copy())).data)
    return np.concatenate(outs, axis=0)


def evaluate(model, windows: WindowSet, stats: ZScoreStats) -> MetricsReport:
    """Metrics on de-normalized predictions, per horizon step and pooled."""
    if len(windows) == 0:
        raise ArgumentError("cannot evaluate on an empty window set")
    pred = stats.invert(predict(model, windows.inputs))
    true = stats.invert(windows.targets)
    steps = [compute_metrics(pred[:, k], true[:, k]) for k in range(pred.shape[1])]
    report = MetricsReport(steps, compute_metrics(pred, true))
    report.backbone_params, report.adaptation_params, report.overhead_percent = _param_numbers(model)
    return report


# ---------------------------------------------------------------------------
# parameter accounting
# ---------------------------------------------------------------------------

def _param_numbers(model) -> tuple:
    if isinstance(model, StLoraModel):
        backbone = sum(t.size for t in model.backbone.parameters())
        adaptation = sum(t.size for t in model.adaptation_parameters())
    else:
        backbone = sum(t.size for t in model.parameters())
        adaptation = 0
    overhead = 100.0 * adaptation / backbone if backbone else 0.0
    return backbone, adaptation, overhead


@dataclass
class ParamReport:
    backbone: int
    adaptation: int
    overhead_percent: float


def param_report(model) -> ParamReport:
    """Exact counts from the stored tensors; overhead is relative to the backbone."""
    return ParamReport(*_param_numbers(model))


def param_report_csv(rep: ParamReport) -> str:
    return ("backbone_params,adaptation_params,overhead_percent\n"
            f"{rep.backbone},{rep.adaptation},{fmt_value(rep.overhead_percent)}\n")


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------

@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 16
    seed: int = 0
    phase: str = "pretrain"
    lr: float = 1e-3
    weight_decay: float = 5e-4
    step_size: int = 10
    gamma: float = 0.1
    lam: float = 0.0

    def __post_init__(self):
        if self.phase not in ("pretrain", "adapt"):
            raise ConfigError(f"phase must be 'pretrain' or 'adapt', got {self.phase!r}")
        if self.epochs < 0 or self.batch_size < 1:
            raise ConfigError(f"invalid epochs/batch_size: {self.epochs}/{self.batch_size}")


@dataclass
class TrainLog:
    rows: list = field(default_factory=list)  # (epoch, train_loss, val_mae, lr)
    best_epoch: int = 0
    best_val_mae: float = float("inf")

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["epoch", "train_loss", "val_mae", "lr"])
        for epoch, loss, val, lr in self.rows:
            w.writerow([epoch, fmt_value(loss), fmt_value(val), fmt_value(lr)])
        return buf.getvalue()


def _tensor(arr: np.ndarray) -> Tensor:
    return Tensor._from_array(np.array(arr))


def _forward(model, X: Tensor, training: bool, rng, y_base: Optional[np.ndarray]) -> Tensor:
    if y_base is None:
        return model.forward(X, training=training, rng=rng)
    return model.forward(X, training=training, rng=rng, y_base=_tensor(y_base))


def _loss(model, cfg: TrainConfig, pred: Tensor, Y: Tensor) -> Tensor:
    if cfg.phase == "adapt":
        return stlora_loss(pred, Y, model.alphas, LossConfig(cfg.lam, Y.shape[1]))
    return T.tmean(T.tabs(T.sub(Y, pred)))


def _predict_cached(model, windows: WindowSet, y_base: Optional[np.ndarray], batch_size: int = 256) -> np.ndarray:
    outs = []
    with T.no_grad():
        for start in range(0, len(windows), batch_size):
            sl = slice(start, start + batch_size)
            yb = None if y_base is None else y_base[sl]
            outs.append(_forward(model, _tensor(windows.inputs[sl]), False, None, yb).data)
    return np.concatenate(outs, axis=0)


def _eval_loss(model, cfg: TrainConfig, windows: WindowSet, y_base: Optional[np.ndarray]) -> float:
    pred = _predict_cached(model, windows, y_base)
    with T.no_grad():
        return _loss(model, cfg, Tensor._from_array(pred), _tensor(windows.targets)).item()


def _val_mae(model, windows: WindowSet, stats: ZScoreStats, y_base: Optional[np.ndarray]) -> float:
    pred = stats.invert(_predict_cached(model, windows, y_base))
    return float(np.mean(np.abs(pred - stats.invert(windows.targets))))


def _backbone_cache(model, data: PreparedData, cfg: TrainConfig) -> tuple:
    if len(data.train) == 0:
        raise ArgumentError("no training windows")
    if cfg.phase != "adapt":
        return None, None
    if not isinstance(model, StLoraModel):
        raise ConfigError("adapt phase needs an adapted model wrapping a frozen backbone")
    if any(t.requires_grad for t in model.backbone.parameters()):
        raise ConfigError("adapt phase needs a frozen backbone")
    return predict(model.backbone, data.train.inputs), predict(model.backbone, data.val.inputs)


def _initial_row(model, data, cfg, ybase_train, ybase_val) -> tuple:
    val = _val_mae(model, data.val, data.stats, ybase_val)
    return 0, _eval_loss(model, cfg, data.train, ybase_train), val, lr_at(LrSchedule(cfg.lr, cfg.step_size, cfg.gamma), 0)


def initial_log_row(model, data: PreparedData, cfg: TrainConfig) -> tuple:
    """The ``(0, train_loss, val_mae, lr)`` row of the untouched model."""
    return _initial_row(model, data, cfg, *_backbone_cache(model, data, cfg))


def train(model, data: PreparedData, cfg: TrainConfig) -> TrainLog:
    """Mini-batch training with best-validation-MAE model selection.

    With ``epochs > 0`` the log's first row (epoch 0) evaluates the
    untouched model; ``epochs == 0`` returns an empty log.  On return
    the trainable parameters hold the values from the best epoch.  In the
    adapt phase the frozen backbone's predictions are computed once up
    front.
    """
    log = TrainLog()
    if cfg.epochs == 0:
        return log
    ybase_train, ybase_val = _backbone_cache(model, data, cfg)
    params = model.trainable()
    opt = OptimizerState(params, lr=cfg.lr, weight_decay=cfg.weight_decay)
    schedule = LrSchedule(cfg.lr, cfg.step_size, cfg.gamma)
    order_seq, drop_seq = np.random.SeedSequence(cfg.seed).spawn(2)
    order_rng = np.random.default_rng(order_seq)
    drop_rng = np.random.default_rng(drop_seq)

    def snapshot():
        return [p.data for p in params]

    log.rows.append(_initial_row(model, data, cfg, ybase_train, ybase_val))
    log.best_val_mae, best = log.rows[0][2], snapshot()

    n = len(data.train)
    for epoch in range(cfg.epochs):
        opt.lr = lr_at(schedule, epoch)
        perm = order_rng.permutation(n)
        running = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = perm[start:start + cfg.batch_size]
            yb = None if ybase_train is None else ybase_train[idx]
            pred = _forward(model, Tensor._from_array(data.train.inputs[idx]), True, drop_rng, yb)
            loss = _loss(model, cfg, pred, Tensor._from_array(data.train.targets[idx]))
            value = loss.item()
            if not np.isfinite(value):
                raise DivergenceError(epoch + 1, f"non-finite training loss {value} in epoch {epoch + 1}")
            adam_step(opt, T.backward(loss))
            running += value * len(idx)
        val = _val_mae(model, data.val, data.stats, ybase_val)
        if not np.isfinite(val):
            raise DivergenceError(epoch + 1, f"non-finite validation MAE in epoch {epoch + 1}")
        log.rows.append((epoch + 1, running / n, val, opt.lr))
        logger.info("epoch %d train_loss %.5f val_mae %.5f lr %g", epoch + 1, running / n, val, opt.lr)
        if val < log.best_val_mae:
            log.best_val_mae, log.best_epoch, best = val, epoch + 1, snapshot()
    for p, values in zip(params, best):
        p.assign(values)
    return log
