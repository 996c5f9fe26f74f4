"""``stlora`` command line: data generation, pretraining, adaptation, evaluation and sweeps.

Every run directory receives ``config.json``, the fully resolved flat
configuration; passing it back through ``--config`` reproduces the run.
"""

from __future__ import annotations

import argparse
import csv
import io
import itertools
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from .backbones import BackboneKind, BackboneModel, build_backbone, build_graphconv, build_shared_mlp, normalize_adjacency
from .checkpoint import load_checkpoint, save_checkpoint
from .data import SplitSpec, generate_synthetic, load_dataset, prepare, save_dataset
from .errors import (
    ArgumentError,
    CheckpointError,
    ConfigError,
    DataFormatError,
    DimensionError,
    DivergenceError,
    StLoraError,
)
from .fusion import StLoraModel, build_stlora
from .gradcheck import TOLERANCE, run_grad_checks
from .nall import NallConfig, Variant, nall_enumerated_count, nall_init, nall_param_count
from .nn import LinearParams
from .nsp import NspConfig
from .training import (
    TrainConfig,
    delta_csv,
    evaluate,
    fmt_value,
    horizon_csv,
    initial_log_row,
    param_report,
    param_report_csv,
    report_csv,
    train,
)

logger = logging.getLogger("stlora")

EXIT_OK, EXIT_FAIL, EXIT_ARGS, EXIT_IO, EXIT_DIVERGED, EXIT_MISMATCH = 0, 1, 2, 3, 4, 5

DEFAULT_HIDDEN = {BackboneKind.SHARED_MLP: 2048, BackboneKind.GRAPH_CONV: 512}

# name -> (type, default, help); None defaults are resolved later
KNOBS = {
    "data": (str, None, "dataset file or directory"),
    "nodes": (int, 20, "number of graph nodes"),
    "frames": (int, 4000, "number of time frames"),
    "regimes": (int, 4, "number of temporal regimes"),
    "noise": (float, 0.1, "observation noise standard deviation"),
    "split": (str, "6:2:2", "train:val:test ratios"),
    "s": (int, 12, "input window length"),
    "h": (int, 12, "forecast horizon"),
    "backbone": (str, "shared-mlp", "backbone kind: shared-mlp or graph-conv"),
    "backbone_hidden": (int, None, "backbone hidden width (2048 shared-mlp, 512 graph-conv)"),
    "graph_channels": (int, 8, "graph-conv channels per node"),
    "K": (int, 1, "number of node-specific predictor blocks"),
    "L": (int, 4, "adaptive layers per block"),
    "rank": (int, 16, "low-rank dimension"),
    "variant": (str, "shared", "low-rank factorization: shared or literal"),
    "nsp_hidden": (int, None, "predictor hidden width (defaults to the rank)"),
    "alpha": (float, 1.0, "initial scale of the low-rank update"),
    "lambda": (float, 1e-4, "penalty weight on the scale norm"),
    "dropout_p": (float, 0.3, "dropout probability"),
    "gate_bias": (float, 0.0, "initial bias of the blending gate"),
    "lr": (float, 1e-3, "initial learning rate"),
    "weight_decay": (float, 5e-4, "decoupled weight decay"),
    "step_size": (int, 10, "epochs between learning-rate decays"),
    "gamma": (float, 0.1, "learning-rate decay factor"),
    "epochs": (int, 30, "training epochs"),
    "batch_size": (int, 16, "windows per batch"),
    "seed": (int, None, "random seed (falls back to STLORA_SEED, then 0)"),
}

COMMAND_KNOBS = {
    "gen-data": ["nodes", "frames", "regimes", "noise", "seed"],
    "pretrain": ["data", "split", "s", "h", "backbone", "backbone_hidden", "graph_channels", "lr",
                 "weight_decay", "step_size", "gamma", "epochs", "batch_size", "seed"],
    "adapt": ["data", "split", "K", "L", "rank", "variant", "nsp_hidden", "alpha", "lambda", "dropout_p",
              "gate_bias", "lr", "weight_decay", "step_size", "gamma", "epochs", "batch_size", "seed"],
    "eval": ["data", "split"],
    "sweep": ["data", "split", "K", "variant", "nsp_hidden", "alpha", "lambda", "dropout_p", "gate_bias",
              "lr", "weight_decay", "step_size", "gamma", "epochs", "batch_size"],
}

_FLAG_ALIASES = {"lambda": "--lambda", "K": "--K", "L": "--L"}


class UsageError(StLoraError):
    """Bad command-line input; exits with status 2."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

def _flag(name: str) -> str:
    return _FLAG_ALIASES.get(name, "--" + name.replace("_", "-"))


def resolve_config(command: str, args: argparse.Namespace) -> dict:
    """Defaults, then the ``--config`` file, then explicit flags."""
    names = COMMAND_KNOBS[command]
    cfg = {name: KNOBS[name][1] for name in names}
    if getattr(args, "config", None):
        try:
            loaded = json.loads(Path(args.config).read_text())
        except json.JSONDecodeError as exc:
            raise UsageError(f"config {args.config}: invalid JSON ({exc})") from exc
        if not isinstance(loaded, dict):
            raise UsageError(f"config {args.config}: expected a flat JSON object")
        unknown = sorted(set(loaded) - set(KNOBS))
        if unknown:
            raise UsageError(f"config {args.config}: unknown keys {', '.join(unknown)}")
        for key, value in loaded.items():
            if key in cfg:
                cfg[key] = value
    for name in names:
        value = getattr(args, name, None)
        if value is not None:
            cfg[name] = value
    if "seed" in cfg and cfg["seed"] is None:
        env = os.environ.get("STLORA_SEED")
        try:
            cfg["seed"] = int(env) if env not in (None, "") else 0
        except ValueError as exc:
            raise UsageError(f"STLORA_SEED must be an integer, got {env!r}") from exc
    for name in names:
        kind = KNOBS[name][0]
        if cfg[name] is not None and not isinstance(cfg[name], kind):
            try:
                if kind is int and (isinstance(cfg[name], bool) or float(cfg[name]) != int(cfg[name])):
                    raise ValueError
                cfg[name] = kind(cfg[name])
            except (TypeError, ValueError) as exc:
                raise UsageError(f"{name} must be {kind.__name__}, got {cfg[name]!r}") from exc
    return cfg


def _write(out: Path, name: str, text: str) -> None:
    (out / name).write_text(text)


def _echo_config(out: Path, cfg: dict, extra: dict = None) -> None:
    out.mkdir(parents=True, exist_ok=True)
    doc = dict(cfg)
    doc.update(extra or {})
    _write(out, "config.json", json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _train_config(cfg: dict, phase: str, seed: int) -> TrainConfig:
    return TrainConfig(epochs=cfg["epochs"], batch_size=cfg["batch_size"], seed=seed, phase=phase,
                       lr=cfg["lr"], weight_decay=cfg["weight_decay"], step_size=cfg["step_size"],
                       gamma=cfg["gamma"], lam=cfg.get("lambda", 0.0))


def _train_logged(model, data, cfg: TrainConfig):
    """Train, always logging the epoch-0 evaluation even when no epoch runs."""
    log = train(model, data, cfg)
    if cfg.epochs == 0:
        log.rows.append(initial_log_row(model, data, cfg))
        log.best_val_mae = log.rows[0][2]
    return log


def _require(cfg: dict, key: str):
    if cfg.get(key) is None:
        raise UsageError(f"{_flag(key)} is required")
    return cfg[key]


# ---------------------------------------------------------------------------
# model files: STCK checkpoint plus a JSON description alongside it
# ---------------------------------------------------------------------------

def _sidecar(ckpt: Path) -> Path:
    return ckpt.with_suffix(".json")


def _save_model(model, ckpt: Path, desc: dict) -> None:
    save_checkpoint(model, ckpt)
    _sidecar(ckpt).write_text(json.dumps(desc, indent=2, sort_keys=True) + "\n")


def _backbone_desc(bb: BackboneModel, num_nodes: int) -> dict:
    return {"model": "backbone", "backbone": bb.describe(), "num_nodes": num_nodes}


def _stlora_desc(m: StLoraModel, num_nodes: int) -> dict:
    nsp = m.nsp_config
    return {
        "model": "stlora", "backbone": m.backbone.describe(), "num_nodes": num_nodes,
        "num_blocks": m.num_blocks, "gate_bias": m.gate_bias,
        "nsp": {"hidden_dim": nsp.hidden_dim, "num_layers": nsp.num_layers, "rank": nsp.rank,
                "k_t": nsp.k_t, "dropout_p": nsp.dropout_p, "alpha": nsp.alpha,
                "alpha_learnable": nsp.alpha_learnable, "variant": nsp.variant.value},
    }


def _read_desc(ckpt: Path) -> dict:
    side = _sidecar(ckpt)
    if not ckpt.is_file():
        raise FileNotFoundError(f"checkpoint {ckpt} not found")
    if not side.is_file():
        raise CheckpointError(f"model description {side} not found next to the checkpoint")
    try:
        desc = json.loads(side.read_text())
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"model description {side} is not valid JSON") from exc
    if desc.get("model") not in ("backbone", "stlora"):
        raise CheckpointError(f"{side}: unknown model type {desc.get('model')!r}")
    return desc


def load_model(ckpt: Path, data, rng_seed: int = 0):
    """Rebuild the model described next to ``ckpt`` and fill it from the checkpoint."""
    desc = _read_desc(ckpt)
    if desc.get("num_nodes") != data.num_nodes:
        raise CheckpointError(f"checkpoint was built for {desc.get('num_nodes')} nodes, data has {data.num_nodes}")
    rng = np.random.default_rng(rng_seed)
    try:
        adjacency = normalize_adjacency(data.edges, data.num_nodes)
        bb = build_backbone(desc["backbone"], rng, adjacency)
        if desc["model"] == "backbone":
            model = bb
        else:
            nsp = NspConfig(**desc["nsp"])
            model = build_stlora(bb, nsp, data.num_nodes, rng, desc["num_blocks"], desc["gate_bias"])
    except (KeyError, TypeError, ConfigError) as exc:
        raise CheckpointError(f"{_sidecar(ckpt)}: cannot rebuild model ({exc})") from exc
    load_checkpoint(ckpt, model, strict=True)
    return model


def _dims_check(model, data) -> None:
    bb = model.backbone if isinstance(model, StLoraModel) else model
    s, h = data.test.s, data.test.h
    if (bb.in_len, bb.horizon) != (s, h) or data.test.inputs.shape[-1] != bb.num_features:
        raise CheckpointError(f"model expects s={bb.in_len}, h={bb.horizon}, D={bb.num_features}; "
                              f"data gives s={s}, h={h}, D={data.test.inputs.shape[-1]}")


def _prepared(cfg: dict, s: int = None, h: int = None):
    ds = load_dataset(_require(cfg, "data"))
    try:
        split = SplitSpec.parse(cfg["split"])
    except (ValueError, ArgumentError) as exc:
        raise UsageError(f"--split: {exc}") from exc
    return prepare(ds, split, s or cfg.get("s", 12), h or cfg.get("h", 12))


def _backbone_shape(ckpt: Path) -> tuple:
    b = _read_desc(ckpt)["backbone"]
    return b["in_len"], b["horizon"]


def _nsp_config(cfg: dict, rank: int, layers: int, hidden: int = None) -> NspConfig:
    return NspConfig(hidden_dim=hidden or cfg["nsp_hidden"] or rank, num_layers=layers, rank=rank,
                     dropout_p=cfg["dropout_p"], alpha=cfg["alpha"], variant=cfg["variant"])


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_gen_data(args) -> int:
    cfg = resolve_config("gen-data", args)
    try:
        ds = generate_synthetic(cfg["nodes"], cfg["frames"], cfg["regimes"], cfg["noise"], cfg["seed"])
    except ArgumentError as exc:
        raise UsageError(str(exc)) from exc
    out = Path(args.out)
    path = save_dataset(ds, out)
    _echo_config(path.parent, cfg)
    print(f"wrote {path} ({ds.num_frames} frames, {ds.num_nodes} nodes, {len(ds.edges)} edges)")
    return EXIT_OK


def cmd_pretrain(args) -> int:
    cfg = resolve_config("pretrain", args)
    data = _prepared(cfg)
    try:
        kind = BackboneKind(cfg["backbone"])
    except ValueError as exc:
        raise UsageError(f"--backbone must be shared-mlp or graph-conv, got {cfg['backbone']!r}") from exc
    cfg["backbone_hidden"] = cfg["backbone_hidden"] or DEFAULT_HIDDEN[kind]
    rng = np.random.default_rng(cfg["seed"])
    d = data.train.inputs.shape[-1]
    if kind is BackboneKind.SHARED_MLP:
        bb = build_shared_mlp(cfg["s"], cfg["h"], d, cfg["backbone_hidden"], rng)
    else:
        adjacency = normalize_adjacency(data.edges, data.num_nodes)
        bb = build_graphconv(cfg["s"], cfg["h"], d, cfg["backbone_hidden"], adjacency, rng,
                             cfg["graph_channels"])
    out = Path(args.out)
    _echo_config(out, cfg)
    log = _train_logged(bb, data, _train_config(cfg, "pretrain", cfg["seed"]))
    _write(out, "log.csv", log.to_csv())
    _save_model(bb, out / "backbone.stck", _backbone_desc(bb, data.num_nodes))
    report = evaluate(bb, data.test, data.stats)
    _write(out, "report.csv", report_csv(report))
    _write(out, "horizon.csv", horizon_csv({"backbone": report}))
    _write(out, "params.csv", param_report_csv(param_report(bb)))
    print(report_csv(report), end="")
    return EXIT_OK


def _adapt_once(bb_ckpt: Path, data, cfg: dict, rank: int, layers: int, seed: int, hidden: int = None):
    bb = load_model(bb_ckpt, data)
    if not isinstance(bb, BackboneModel):
        raise CheckpointError(f"{bb_ckpt} holds an adapted model, expected a backbone")
    _dims_check(bb, data)
    nsp = _nsp_config(cfg, rank, layers, hidden)
    model = build_stlora(bb, nsp, data.num_nodes, np.random.default_rng(seed + 1), cfg["K"], cfg["gate_bias"])
    log = _train_logged(model, data, _train_config(cfg, "adapt", seed))
    return model, log


def cmd_adapt(args) -> int:
    cfg = resolve_config("adapt", args)
    bb_ckpt = Path(args.backbone_ckpt)
    s, h = _backbone_shape(bb_ckpt)
    data = _prepared(cfg, s, h)
    out = Path(args.out)
    _echo_config(out, cfg, {"backbone_ckpt": str(bb_ckpt)})
    try:
        model, log = _adapt_once(bb_ckpt, data, cfg, cfg["rank"], cfg["L"], cfg["seed"])
    except ConfigError as exc:
        raise UsageError(str(exc)) from exc
    _write(out, "log.csv", log.to_csv())
    _save_model(model, out / "stlora.stck", _stlora_desc(model, data.num_nodes))
    frozen = evaluate(model.backbone, data.test, data.stats)
    adapted = evaluate(model, data.test, data.stats)
    _write(out, "report.csv", report_csv(adapted))
    _write(out, "horizon.csv", horizon_csv({"backbone": frozen, "stlora": adapted}))
    _write(out, "delta.csv", delta_csv(frozen, adapted))
    _write(out, "params.csv", param_report_csv(param_report(model)))
    print(delta_csv(frozen, adapted), end="")
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = resolve_config("eval", args)
    ckpt = Path(args.ckpt)
    s, h = _backbone_shape(ckpt)
    data = _prepared(cfg, s, h)
    model = load_model(ckpt, data)
    _dims_check(model, data)
    report = evaluate(model, data.test, data.stats)
    text = report_csv(report)
    if args.out:
        out = Path(args.out)
        _echo_config(out, cfg, {"ckpt": str(ckpt)})
        _write(out, "report.csv", text)
        _write(out, "horizon.csv", horizon_csv({"model": report}))
        _write(out, "params.csv", param_report_csv(param_report(model)))
    print(text, end="")
    return EXIT_OK


def _int_list(text: str, flag: str) -> list:
    try:
        values = [int(v) for v in str(text).split(",") if v.strip()]
    except ValueError as exc:
        raise UsageError(f"{flag} expects comma-separated integers, got {text!r}") from exc
    if not values:
        raise UsageError(f"{flag} is empty")
    return values


SWEEP_HEADER = ["r", "L", "seed", "avg_mae", "avg_rmse", "adaptation_params", "wall_seconds", "status"]


def cmd_sweep(args) -> int:
    cfg = resolve_config("sweep", args)
    ranks = _int_list(args.ranks, "--ranks")
    layers = _int_list(args.layers, "--layers")
    seeds = _int_list(args.seeds, "--seeds")
    bb_ckpt = Path(args.backbone_ckpt)
    s, h = _backbone_shape(bb_ckpt)
    data = _prepared(cfg, s, h)
    # one width for the whole grid so cells differ only in rank and depth
    hidden = max([cfg["nsp_hidden"] or 0] + ranks)
    out = Path(args.out)
    _echo_config(out, cfg, {"backbone_ckpt": str(bb_ckpt), "ranks": ranks, "layers": layers,
                            "seeds": seeds, "sweep_hidden": hidden})
    failures = 0
    # rows are flushed as cells finish so an interrupted sweep keeps its results
    with open(out / "sweep.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SWEEP_HEADER)
        fh.flush()
        for seed, L, r in itertools.product(seeds, layers, ranks):
            start = time.perf_counter()
            try:
                model, _ = _adapt_once(bb_ckpt, data, cfg, r, L, seed, hidden)
                rep = evaluate(model, data.test, data.stats)
                row = [fmt_value(rep.average.mae), fmt_value(rep.average.rmse), rep.adaptation_params, "ok"]
            except (StLoraError, FloatingPointError) as exc:
                failures += 1
                logger.warning("sweep cell r=%d L=%d seed=%d failed: %s", r, L, seed, exc)
                row = ["NA", "NA", "NA", f"error: {exc}"]
            took = time.perf_counter() - start
            w.writerow([r, L, seed] + row[:3] + [f"{took:.3f}", row[3]])
            fh.flush()
            logger.info("sweep cell r=%d L=%d seed=%d done in %.1fs", r, L, seed, took)
    print((out / "sweep.csv").read_text(), end="")
    return EXIT_OK if failures == 0 else EXIT_FAIL


def cmd_grad_check(args) -> int:
    sizes = {}
    if args.sizes:
        for part in args.sizes.split(","):
            key, sep, value = part.partition("=")
            if not sep or key.strip() not in ("n", "d", "r", "s"):
                raise UsageError(f"--sizes expects n=,d=,r=,s= items, got {part!r}")
            try:
                sizes[key.strip()] = int(value)
            except ValueError as exc:
                raise UsageError(f"--sizes: {value!r} is not an integer") from exc
    seed = args.seed if args.seed is not None else int(os.environ.get("STLORA_SEED") or 0)
    try:
        rows = run_grad_checks(seed, sizes, args.step)
    except ConfigError as exc:
        raise UsageError(str(exc)) from exc
    print(f"{'component':<16}{'max_rel_error':>16}  result")
    for name, err, ok in rows:
        print(f"{name:<16}{err:>16.3e}  {'PASS' if ok else 'FAIL'}")
    passed = all(ok for _, _, ok in rows)
    print(f"tolerance {TOLERANCE:g}: {'all passed' if passed else 'FAILED'}")
    return EXIT_OK if passed else EXIT_FAIL


def param_rows(d: int, rank: int, nodes: int, learnable_alpha: bool = False) -> list:
    """``(variant, closed_form, enumerated, full_per_node)`` for both factorizations."""
    rows = []
    for variant in (Variant.SHARED_FACTORS_NODE_CORE, Variant.LITERAL_PER_NODE_A):
        cfg = NallConfig(d, d, rank, nodes, alpha_learnable=learnable_alpha, variant=variant)
        counts = nall_param_count(cfg)
        base = LinearParams.create(d, d, frozen=True, zero=True)
        enumerated = nall_enumerated_count(nall_init(cfg, base, np.random.default_rng(0)))
        rows.append((variant.value, counts["adaptation"], enumerated, counts["full_per_node"]))
    return rows


def cmd_params(args) -> int:
    try:
        rows = param_rows(args.d, args.rank, args.nodes, args.learnable_alpha)
    except ConfigError as exc:
        raise UsageError(str(exc)) from exc
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["variant", "adaptation_closed_form", "adaptation_enumerated", "full_per_node"])
    w.writerows(rows)
    print(buf.getvalue(), end="")
    return EXIT_OK if all(a == b for _, a, b, _ in rows) else EXIT_FAIL


# ---------------------------------------------------------------------------
# parser and entry point
# ---------------------------------------------------------------------------

def _add_knobs(sub: argparse.ArgumentParser, command: str) -> None:
    sub.add_argument("--config", help="flat JSON file of configuration values")
    for name in COMMAND_KNOBS[command]:
        kind, default, text = KNOBS[name]
        suffix = "" if default is None else f" (default {default})"
        sub.add_argument(_flag(name), dest=name, type=kind, default=None, help=text + suffix)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="stlora", description="Node-adaptive low-rank adaptation of spatio-temporal forecasters.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress to stderr")
    subs = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = subs.add_parser("gen-data", help="generate the synthetic heterogeneous dataset")
    _add_knobs(p, "gen-data")
    p.add_argument("--out", required=True, help="output directory or .stsd path")
    p.set_defaults(func=cmd_gen_data)

    p = subs.add_parser("pretrain", help="train a node-shared backbone")
    _add_knobs(p, "pretrain")
    p.add_argument("--out", required=True, help="run directory")
    p.set_defaults(func=cmd_pretrain)

    p = subs.add_parser("adapt", help="freeze a backbone and train the node-specific adaptation")
    _add_knobs(p, "adapt")
    p.add_argument("--backbone-ckpt", required=True, help="backbone checkpoint from pretrain")
    p.add_argument("--out", required=True, help="run directory")
    p.set_defaults(func=cmd_adapt)

    p = subs.add_parser("eval", help="score a checkpoint on the test split")
    _add_knobs(p, "eval")
    p.add_argument("--ckpt", required=True, help="backbone or adapted checkpoint")
    p.add_argument("--out", help="directory for report files")
    p.set_defaults(func=cmd_eval)

    p = subs.add_parser("sweep", help="adapt over a grid of ranks and depths")
    _add_knobs(p, "sweep")
    p.add_argument("--backbone-ckpt", required=True)
    p.add_argument("--ranks", default="2,4,8,16,32")
    p.add_argument("--layers", default="1,2,4,8")
    p.add_argument("--seeds", default="0")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sweep)

    p = subs.add_parser("grad-check", help="compare analytic and finite-difference gradients")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--sizes", help="comma list such as n=3,d=4,r=2,s=4")
    p.add_argument("--step", type=float, default=1e-5)
    p.set_defaults(func=cmd_grad_check)

    p = subs.add_parser("params", help="closed-form and enumerated adaptation parameter counts")
    p.add_argument("--d", type=int, default=64, help="layer width")
    p.add_argument("--rank", type=int, default=16)
    p.add_argument("--nodes", type=int, default=307)
    p.add_argument("--learnable-alpha", action="store_true", help="count the scale as a parameter")
    p.set_defaults(func=cmd_params)
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"stlora: error: {exc}", file=sys.stderr)
        return EXIT_ARGS
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    if args.verbose:
        logging.basicConfig(level=logging.INFO, format="%(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except UsageError as exc:
        code, exc_ = EXIT_ARGS, exc
    except DivergenceError as exc:
        code, exc_ = EXIT_DIVERGED, exc
    except (CheckpointError, DimensionError) as exc:
        code, exc_ = EXIT_MISMATCH, exc
    except (OSError, DataFormatError) as exc:
        code, exc_ = EXIT_IO, exc
    except (ArgumentError, ConfigError) as exc:
        code, exc_ = EXIT_ARGS, exc
    print(f"stlora: error: {exc_}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
