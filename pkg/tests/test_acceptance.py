"""End-to-end acceptance checks, one marked group per criterion.

The shared-MLP and graph-conv runs on the default synthetic dataset take
about two minutes each; the sweep uses a smaller dataset so its 20 cells
finish in a comparable time.
"""

import csv
import io
import json
import time
from pathlib import Path

import numpy as np
import pytest

from stlora.backbones import build_backbone, normalize_adjacency
from stlora.checkpoint import load_checkpoint
from stlora.cli import load_model, main, param_rows
from stlora.data import SplitSpec, chronological_split, load_dataset, make_windows, prepare
from stlora.fusion import build_stlora, stlora_forward
from stlora.gradcheck import COMPONENTS, run_grad_checks
from stlora.nsp import NspConfig, nsp_hidden
from stlora.tensor import Tensor, no_grad
from stlora.training import LrSchedule, compute_metrics, lr_at

criterion = pytest.mark.criterion


def cli(*argv):
    code = main([str(a) for a in argv])
    assert code == 0, f"stlora {' '.join(map(str, argv))} exited {code}"


def table(path):
    return list(csv.DictReader(io.StringIO(Path(path).read_text())))


def average_mae(run_dir):
    return next(float(r["mae"]) for r in table(run_dir / "report.csv") if r["row"] == "average")


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    return tmp_path_factory.mktemp("acceptance")


@pytest.fixture(scope="module")
def default_data(workdir):
    out = workdir / "data"
    cli("gen-data", "--nodes", 20, "--frames", 4000, "--regimes", 4, "--noise", 0.1, "--seed", 7, "--out", out)
    return out


_runs = {}


@pytest.fixture(scope="module")
def heterogeneity_run(workdir, default_data):
    """Pretrain 30 epochs then adapt 30 epochs with K=1, L=4, r=8; cached per backbone kind."""

    def get(kind):
        if kind not in _runs:
            pre, ad = workdir / f"{kind}-pre", workdir / f"{kind}-adapt"
            start = time.perf_counter()
            cli("pretrain", "--data", default_data, "--backbone", kind, "--epochs", 30, "--split", "6:2:2",
                "--out", pre)
            cli("adapt", "--data", default_data, "--backbone-ckpt", pre / "backbone.stck", "--K", 1, "--L", 4,
                "--rank", 8, "--lambda", 1e-4, "--epochs", 30, "--out", ad)
            _runs[kind] = (pre, ad, time.perf_counter() - start)
        return _runs[kind]

    return get


# -- 1 ----------------------------------------------------------------------------

@criterion(1, "gradient fidelity")
def test_gradient_fidelity():
    start = time.perf_counter()
    rows = run_grad_checks(0, {"n": 3, "d": 4, "r": 2, "s": 4}, 1e-5)
    took = time.perf_counter() - start
    for name, err, _ in rows:
        print(f"{name:<16} max relative error {err:.3e}")
    assert [name for name, _, _ in rows] == list(COMPONENTS)
    assert {"linear", "temporal-conv", "rmsnorm", "nall-literal", "nall-shared", "nsp-2layer",
            "fusion-k1"} <= set(COMPONENTS)
    assert max(err for _, err, _ in rows) <= 1e-4
    assert took < 60


@criterion(1, "gradient fidelity")
def test_gradient_fidelity_command(capsys):
    assert main(["grad-check", "--sizes", "n=3,d=4,r=2,s=4", "--step", "1e-5"]) == 0
    assert "all passed" in capsys.readouterr().out


# -- 2 ----------------------------------------------------------------------------

@criterion(2, "zero-delta identity")
def test_zero_delta_identity(default_data, heterogeneity_run):
    pre, _, _ = heterogeneity_run("shared-mlp")
    ds = load_dataset(default_data)
    data = prepare(ds, SplitSpec())
    desc = json.loads((pre / "backbone.json").read_text())
    bb = build_backbone(desc["backbone"], np.random.default_rng(0), normalize_adjacency(ds.edges, ds.num_nodes))
    load_checkpoint(pre / "backbone.stck", bb, strict=True)
    for K in (1, 2):
        model = build_stlora(bb, NspConfig(hidden_dim=8, num_layers=4, rank=8), ds.num_nodes,
                             np.random.default_rng(1), num_blocks=K, gate_bias=30.0)
        # R = sigmoid(30) differs from 1 by under 1e-13
        model.fusion.W.assign(np.zeros(model.fusion.W.shape))
        x = Tensor(data.test.inputs)
        with no_grad():
            out = stlora_forward(model, x)
            gap = np.max(np.abs(out["prediction"].data - out["backbone"].data))
            h0, hl = nsp_hidden(model.blocks[0], Tensor(np.maximum(out["backbone"].data, 0.0)))
        print(f"K={K}: max |prediction - backbone| = {gap:.3e}")
        assert gap <= 1e-9
        assert np.array_equal(hl.data, h0.data)


# -- 3 ----------------------------------------------------------------------------

@criterion(3, "parameter accounting")
def test_parameter_accounting(capsys):
    rows = {variant: (closed, enumerated, full) for variant, closed, enumerated, full in param_rows(64, 16, 307)}
    assert rows["shared"] == (80_640, 80_640, 1_257_472)
    assert rows["literal"] == (315_392, 315_392, 1_257_472)
    assert main(["params", "--d", "64", "--rank", "16", "--nodes", "307"]) == 0
    printed = capsys.readouterr().out
    assert "shared,80640,80640,1257472" in printed and "literal,315392,315392,1257472" in printed


# -- 4 ----------------------------------------------------------------------------

@criterion(4, "heterogeneity improvement")
@pytest.mark.parametrize("kind", ["shared-mlp", "graph-conv"])
def test_heterogeneity_improvement(kind, heterogeneity_run):
    pre, ad, took = heterogeneity_run(kind)
    frozen, adapted = average_mae(pre), average_mae(ad)
    gain = 100.0 * (frozen - adapted) / frozen
    params = table(ad / "params.csv")[0]
    overhead = 100.0 * int(params["adaptation_params"]) / int(params["backbone_params"])
    print(f"{kind}: frozen MAE {frozen:.4f}, adapted MAE {adapted:.4f}, gain {gain:.2f}%, "
          f"overhead {overhead:.2f}%, runtime {took:.0f}s")
    assert gain >= 10.0
    assert overhead <= 15.0
    assert took < 600


# -- 5 ----------------------------------------------------------------------------

@criterion(5, "gate contract")
@pytest.mark.parametrize("kind", ["shared-mlp", "graph-conv"])
def test_gate_contract(kind, default_data, heterogeneity_run):
    _, ad, _ = heterogeneity_run(kind)
    data = prepare(load_dataset(default_data), SplitSpec())
    model = load_model(ad / "stlora.stck", data)
    with no_grad():
        out = stlora_forward(model, Tensor(data.test.inputs))
    r, yb, z, y = (out[k].data for k in ("gate", "backbone", "blocks_mean", "prediction"))
    assert r.shape[0] == len(data.test)
    assert np.all(r > 0) and np.all(r < 1)
    assert np.all(y >= np.minimum(yb, z)) and np.all(y <= np.maximum(yb, z))


# -- 6 ----------------------------------------------------------------------------

@criterion(6, "metric oracle")
def test_metric_fixture():
    m = compute_metrics(np.array([0.0, 0.0]), np.array([3.0, 4.0]))
    assert abs(m.mae - 3.5) <= 1e-5
    assert abs(m.rmse - 3.53553) <= 1e-5
    assert abs(m.mape - 100.0) <= 1e-5


@criterion(6, "metric oracle")
def test_rmse_dominates_mae_in_reports(heterogeneity_run):
    checked = 0
    for kind in ("shared-mlp", "graph-conv"):
        for run_dir in heterogeneity_run(kind)[:2]:
            for name in ("report.csv", "horizon.csv"):
                for row in table(run_dir / name):
                    assert float(row["rmse"]) >= float(row["mae"])
                    checked += 1
    assert checked > 0


# -- 7 ----------------------------------------------------------------------------

@criterion(7, "protocol arithmetic")
def test_protocol_arithmetic():
    tr, va, te = chronological_split(16992, SplitSpec.parse("6:2:2"))
    assert (tr.stop - tr.start, va.stop - va.start, te.stop - te.start) == (10195, 3398, 3399)
    assert len(make_windows(np.zeros((26, 1, 1)), 12, 12)) == 3
    schedule = LrSchedule(1e-3, 10, 0.1)
    assert (lr_at(schedule, 9), lr_at(schedule, 10), lr_at(schedule, 25)) == (1e-3, 1e-4, 1e-5)


# -- 8 ----------------------------------------------------------------------------

@criterion(8, "reproducibility")
def test_reproducibility(workdir, default_data):
    dirs = []
    for trial in ("one", "two"):
        pre = workdir / f"repro-{trial}-pre"
        cli("pretrain", "--data", default_data, "--epochs", 2, "--seed", 3, "--out", pre)
        dirs.append(pre)
    for trial in ("one", "two"):
        ad = workdir / f"repro-{trial}-adapt"
        cli("adapt", "--data", default_data, "--backbone-ckpt", dirs[0] / "backbone.stck", "--rank", 8,
            "--epochs", 2, "--seed", 3, "--out", ad)
        dirs.append(ad)
    for a, b in ((dirs[0], dirs[1]), (dirs[2], dirs[3])):
        names = sorted(p.name for p in a.iterdir())
        assert names == sorted(p.name for p in b.iterdir())
        assert any(n.endswith(".stck") for n in names) and any(n.endswith(".csv") for n in names)
        for name in names:
            assert (a / name).read_bytes() == (b / name).read_bytes(), name


# -- 9 ----------------------------------------------------------------------------

@criterion(9, "sweep integrity")
def test_sweep_integrity(workdir):
    data, pre, out = workdir / "sweep-data", workdir / "sweep-pre", workdir / "sweep"
    cli("gen-data", "--nodes", 6, "--frames", 600, "--regimes", 3, "--seed", 7, "--out", data)
    cli("pretrain", "--data", data, "--epochs", 5, "--out", pre)
    start = time.perf_counter()
    cli("sweep", "--data", data, "--backbone-ckpt", pre / "backbone.stck", "--ranks", "2,4,8,16,32",
        "--layers", "1,2,4,8", "--seeds", "0", "--epochs", 5, "--out", out)
    print(f"sweep took {time.perf_counter() - start:.0f}s")
    rows = table(out / "sweep.csv")
    assert len(rows) == 20
    assert all(r["status"] == "ok" for r in rows)
    assert {(int(r["r"]), int(r["L"])) for r in rows} == {(r, L) for r in (2, 4, 8, 16, 32) for L in (1, 2, 4, 8)}
    for L in (1, 2, 4, 8):
        counts = [int(r["adaptation_params"]) for r in sorted(rows, key=lambda r: int(r["r"])) if int(r["L"]) == L]
        assert all(a < b for a, b in zip(counts, counts[1:])), counts
