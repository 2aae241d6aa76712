"""Acceptance criteria, one test each, at the stated tolerances and time limits.

Each test is tagged with ``@pytest.mark.acceptance(number, title)``; the
conftest prints a PASS/FAIL line per criterion at the end of the run.
"""

import math
import time
from pathlib import Path

import numpy as np
import pytest

from cases import gradient_check, random_spec, random_svr_problem
from oracles import qp_primal
from rcnn_svr import neural_net as nn
from rcnn_svr.cli import main
from rcnn_svr.dataio import (
    Dataset,
    SplitSpec,
    dataset_to_csv_text,
    generate_synthetic,
    load_csv,
    load_model,
    read_csv_text,
    read_table,
    save_csv,
    save_model,
    split,
)
from rcnn_svr.errors import CorruptFileError, VersionMismatchError, ZeroTargetError
from rcnn_svr.metrics import cv_rmse, evaluate, mape, mse
from rcnn_svr.pipeline import build_rcnn_spec, build_rcnn_svr_spec, fit_pipeline, predict_pipeline
from rcnn_svr.svr import SvrHyperparams, fit_svr, kkt_violation, svr_objective
from rcnn_svr.tensor import ConvGeometry, conv_output_shape, pool_output_shape

DATA = Path(__file__).parent / "data"
REFERENCE = DATA / "compare_reference"
COMPARE_CFG = DATA / "compare.cfg"


@pytest.fixture(scope="module")
def synthetic_split():
    return split(generate_synthetic(62, seed=7, noise_sd=0.05), SplitSpec(50, 12))


@pytest.mark.acceptance(1, "shape-formula fidelity")
def test_criterion_1_shapes(record_property):
    start = time.perf_counter()
    got = [
        conv_output_shape(ConvGeometry(8, 1, 0, 1, 25)),
        pool_output_shape(8, 2, 25),
        conv_output_shape(ConvGeometry(4, 1, 0, 1, 25)),
        pool_output_shape(4, 2, 25),
    ]
    rcnn_features = build_rcnn_spec(8).feature_count(5)
    dropout_features = build_rcnn_svr_spec(8).feature_count(8)
    elapsed = time.perf_counter() - start
    record_property("detail", f"{got}, pre-FC {rcnn_features}, dropout {dropout_features}, "
                              f"{elapsed:.3f} s")
    assert got == [(8, 25), (4, 25), (4, 25), (2, 25)]
    assert rcnn_features == 50 and dropout_features == 50
    assert elapsed < 1.0


@pytest.mark.acceptance(2, "gradient suite vs central differences (h=1e-5)")
def test_criterion_2_gradients(record_property):
    start = time.perf_counter()
    kinds, worst = set(), 0.0
    n_specs = 25
    for i in range(n_specs):
        seed = 2000 + i
        spec = random_spec(np.random.default_rng(seed))
        kinds |= {layer.kind for layer in spec.layers}
        worst = max(worst, gradient_check(spec, seed))
    elapsed = time.perf_counter() - start
    record_property("detail", f"{n_specs} specs, {len(kinds)} layer kinds, "
                              f"max rel err {worst:.2e}, {elapsed:.1f} s")
    assert kinds == set(nn.LayerKind)
    assert worst < 1e-4
    assert elapsed < 60


@pytest.mark.acceptance(3, "SVR oracle equivalence and KKT")
def test_criterion_3_svr_oracle(record_property):
    start = time.perf_counter()
    n_problems, worst_rel, worst_kkt = 120, 0.0, 0.0
    for i in range(n_problems):
        X, y, C, eps = random_svr_problem(np.random.default_rng(3000 + i))
        assert X.shape[0] <= 8 and X.shape[1] <= 3
        hp = SvrHyperparams(C=C, epsilon=eps)
        model = fit_svr(X, y, hp)
        oracle = qp_primal(X, y, C, eps)[0]
        primal = svr_objective(model, X, y, hp)[0]
        # optima of exactly zero are reached by both sides only up to rounding
        worst_rel = max(worst_rel, abs(primal - oracle) / max(abs(oracle), 1e-6))
        worst_kkt = max(worst_kkt, kkt_violation(model, X, y, hp))
    elapsed = time.perf_counter() - start
    record_property("detail", f"{n_problems} problems, max rel err {worst_rel:.2e}, "
                              f"max KKT violation {worst_kkt:.2e}, {elapsed:.1f} s")
    assert worst_rel < 1e-4 and worst_kkt < 1e-5
    assert elapsed < 60


@pytest.mark.acceptance(4, "metrics exactness")
def test_criterion_4_metrics(record_property):
    y, yhat = [2.0, 4.0], [1.0, 5.0]
    cv_expected = 100 * math.sqrt(0.15625) / 3
    values = (mse(y, yhat), mape(y, yhat), cv_rmse(y, yhat))
    record_property("detail", f"MSE {values[0]!r}, MAPE {values[1]!r}%, CV-RMSE {values[2]!r}%")
    assert abs(values[0] - 1.0) <= 1e-9
    assert abs(values[1] - 37.5) <= 1e-9
    assert abs(values[2] - cv_expected) <= 1e-9
    assert abs(mse([5.0], [2.0]) - 9.0) <= 1e-9
    perfect = evaluate([1.0, 2.0, 3.0], [1.0, 2.0, 3.0])
    assert (perfect.mse, perfect.mape_percent, perfect.cv_rmse_percent) == (0.0, 0.0, 0.0)
    for f in (mape, cv_rmse):
        with pytest.raises(ZeroTargetError):
            f([0.0, 1.0], [1.0, 1.0])


@pytest.mark.acceptance(5, "end-to-end learning on synthetic data")
def test_criterion_5_learning(record_property, synthetic_split):
    train, test = synthetic_split
    start = time.perf_counter()
    fitted = {kind: fit_pipeline(kind, train, nn.TrainConfig(seed=7))
              for kind in ("rcnn", "svr", "rcnn-svr")}
    elapsed = time.perf_counter() - start
    history = fitted["rcnn"].train_report.mse_per_epoch
    ratio = history[-1] / history[0]
    record_property("detail", f"RCNN train MSE {history[0]:.4f} -> {history[-1]:.4f} "
                              f"(ratio {ratio:.4f}) in {len(history)} epochs, {elapsed:.1f} s")
    for p in fitted.values():
        assert np.all(np.isfinite(predict_pipeline(p, test.factors)))
    assert len(history) <= 500 and ratio <= 0.1
    assert elapsed < 120


@pytest.mark.acceptance(6, "frozen-reference determinism of compare")
def test_criterion_6_compare_reference(record_property, tmp_path, capsys):
    outputs = []
    for run in ("a", "b"):
        out = tmp_path / run
        assert main(["compare", "--config", str(COMPARE_CFG), "--out", str(out)]) == 0
        outputs.append(out)
    capsys.readouterr()
    checked = []
    for name in ("comparison.csv", "predictions.csv"):
        first, second = (outputs[0] / name).read_bytes(), (outputs[1] / name).read_bytes()
        reference = (REFERENCE / name).read_bytes()
        assert first == second
        assert first == reference, f"{name} differs from the frozen reference"
        checked.append(name)
    header, rows = read_table(REFERENCE / "comparison.csv")
    mses = {r[0]: r[2] for r in rows}
    record_property("detail", f"byte-identical {', '.join(checked)}; test MSE "
                    + ", ".join(f"{k} {v:.4g}" for k, v in mses.items()))
    assert len(rows) == 3


@pytest.mark.acceptance(7, "layer-sweep report")
def test_criterion_7_layer_sweep(record_property, tmp_path, capsys):
    start = time.perf_counter()
    tables = []
    for run in ("a", "b"):
        out = tmp_path / f"sweep_{run}.csv"
        assert main(["layer-sweep", "--config", str(COMPARE_CFG), "--out", str(out)]) == 0
        tables.append(out.read_bytes())
    elapsed = (time.perf_counter() - start) / 2
    capsys.readouterr()
    header, rows = read_table(tmp_path / "sweep_a.csv")
    curve = ", ".join(f"{r[1]} {r[2]:.3g}" for r in rows)
    record_property("detail", f"{len(rows)} rows ({curve}), {elapsed:.1f} s per sweep")
    assert header == ["layer_index", "layer_name", "mse"] and len(rows) == 9
    assert all(math.isfinite(r[2]) and r[2] >= 0 for r in rows)
    assert tables[0] == tables[1]
    assert elapsed < 120


@pytest.mark.acceptance(8, "persistence and I/O round-trips")
def test_criterion_8_round_trips(record_property, tmp_path, synthetic_split):
    train, test = synthetic_split
    probe = np.vstack([test.factors, np.random.default_rng(8).normal(50, 30, size=(20, 8))])
    for kind in ("rcnn", "svr", "rcnn-svr"):
        p = fit_pipeline(kind, train, nn.TrainConfig(max_epochs=30, seed=8))
        path = tmp_path / f"{kind}.rcnnsvr"
        save_model(p, path)
        assert predict_pipeline(load_model(path), probe).tobytes() == \
            predict_pipeline(p, probe).tobytes()

    full = generate_synthetic(62, seed=7)
    save_csv(full, tmp_path / "d.csv")
    assert load_csv(tmp_path / "d.csv") == full
    rng = np.random.default_rng(8)
    awkward = Dataset(["a", "b"], rng.normal(size=(6, 2)) * 10.0 ** rng.integers(-300, 300, (6, 2)),
                      rng.normal(size=6) * 1e-17, [f"m{i}" for i in range(6)])
    assert read_csv_text(dataset_to_csv_text(awkward)) == awkward

    good = (tmp_path / "svr.rcnnsvr").read_bytes()
    rejected = 0
    for name, data in [("truncated", good[: len(good) - 80]),
                       ("cut-checksum", good[: good.rindex(b"sha256")]),
                       ("flipped", good.replace(b"\"bias\": ", b"\"bias\": 1", 1)),
                       ("empty", b"")]:
        (tmp_path / name).write_bytes(data)
        with pytest.raises(CorruptFileError):
            load_model(tmp_path / name)
        rejected += 1
    (tmp_path / "newer").write_bytes(good.replace(b"format-version: 1", b"format-version: 7", 1))
    with pytest.raises(VersionMismatchError, match="7"):
        load_model(tmp_path / "newer")
    rejected += 1
    record_property("detail", f"3 pipelines bit-exact, 2 CSV round-trips, {rejected} bad files "
                              "rejected")
