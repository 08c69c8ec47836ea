import csv
import json
import math

import pytest

from mongegap import cli

TINY = {
    "dataset": {"kind": "gaussian", "d": 2, "n_train": 128, "n_test": 256},
    "train": {"iterations": 12, "batch_size": 16, "hidden": [8, 8]},
    "eval_max_points": 128,
}


def _write(tmp_path, cfg, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return str(path)


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_print_config_round_trips(tmp_path, capsys):
    assert cli.main(["print-config"]) == 0
    printed = json.loads(capsys.readouterr().out)
    assert printed == cli.default_config()
    assert cli.main(["print-config", "--config", _write(tmp_path, printed), "--seed", "5"]) == 0
    assert json.loads(capsys.readouterr().out)["seed"] == 5


def test_unknown_keys_and_missing_files_fail(tmp_path, capsys):
    bad = _write(tmp_path, {"train": {"lr": 1}})
    assert cli.main(["train", "--config", bad, "--out", str(tmp_path / "o")]) == 2
    assert "unknown config key" in capsys.readouterr().err
    assert cli.main(["train", "--config", str(tmp_path / "none.json"), "--out", str(tmp_path)]) == 2


def test_train_outputs_and_determinism(tmp_path):
    cfg = _write(tmp_path, {**TINY, "snapshot_every": 5, "snapshot_points": 10})
    for run in ("a", "b"):
        assert cli.main(["train", "--config", cfg, "--out", str(tmp_path / run), "--seed", "3"]) == 0
    a, b = tmp_path / "a", tmp_path / "b"
    assert (a / "metrics.json").read_bytes() == (b / "metrics.json").read_bytes()
    metrics = json.loads((a / "metrics.json").read_text())
    assert "l2_uv" in metrics["metrics"] and metrics["seed"] == 3
    log = (a / "train_log.jsonl").read_text().splitlines()
    assert len(log) == 12 and json.loads(log[-1])["step"] == 11
    assert (a / "checkpoint.json").exists()
    snaps = sorted(p.name for p in (a / "snapshots").iterdir())
    assert snaps == ["step_0.csv", "step_10.csv", "step_12.csv", "step_5.csv"]
    rows = _rows(a / "snapshots" / "step_0.csv")
    assert len(rows) == 10 and list(rows[0]) == ["x0", "x1", "t0", "t1"]
    assert not list(tmp_path.glob("a/.*"))


def test_no_snapshots_when_disabled(tmp_path):
    assert cli.main(["train", "--config", _write(tmp_path, TINY), "--out", str(tmp_path / "o")]) == 0
    assert not (tmp_path / "o" / "snapshots").exists()


def test_external_reference_pool(tmp_path):
    ref = tmp_path / "ref.csv"
    ref.write_text("x0,x1\n" + "".join(f"{i / 10},{-i / 10}\n" for i in range(20)))
    cfg = {**TINY, "train": {**TINY["train"], "reference": str(ref)}}
    assert cli.main(["train", "--config", _write(tmp_path, cfg), "--out", str(tmp_path / "o")]) == 0
    cfg["train"]["reference"] = str(tmp_path / "missing.csv")
    assert cli.main(["train", "--config", _write(tmp_path, cfg), "--out", str(tmp_path / "p")]) == 2


def test_sweep_grid_and_cross_command_consistency(tmp_path):
    cfg = {**TINY, "sweep": {"lambda_mg": [0.0, 1.0], "lambda_cons": [0.0, 0.01], "replicates": 1}}
    path = _write(tmp_path, cfg)
    assert cli.main(["sweep", "--config", path, "--out", str(tmp_path / "s"), "--seed", "7"]) == 0
    rows = _rows(tmp_path / "s" / "heatmap.csv")
    assert len(rows) == 4
    assert list(rows[0]) == list(cli.HEATMAP_COLUMNS)
    zero = next(r for r in rows if float(r["lambda_mg"]) == 0 and float(r["lambda_cons"]) == 0)
    seed = int(zero["seed"])
    assert seed == cli.derive_seed(7, 0)
    cfg0 = {**TINY, "train": {**TINY["train"], "lambda_mg": 0.0, "lambda_cons": 0.0}}
    assert cli.main(["train", "--config", _write(tmp_path, cfg0, "zero.json"),
                     "--out", str(tmp_path / "t"), "--seed", str(seed)]) == 0
    m = json.loads((tmp_path / "t" / "metrics.json").read_text())["metrics"]
    assert abs(float(zero["l2_uv"]) - m["l2_uv"]) <= 1e-12
    assert abs(float(zero["sinkhorn_div"]) - m["sinkhorn_div"]) <= 1e-12


def test_sweep_parallel_matches_serial(tmp_path):
    cfg = {**TINY, "sweep": {"lambda_mg": [0.0, 1.0], "lambda_cons": [0.0], "replicates": 1}}
    path = _write(tmp_path, cfg)
    assert cli.main(["sweep", "--config", path, "--out", str(tmp_path / "a")]) == 0
    assert cli.main(["sweep", "--config", path, "--out", str(tmp_path / "b"), "--workers", "2"]) == 0
    assert (tmp_path / "a" / "heatmap.csv").read_bytes() == (tmp_path / "b" / "heatmap.csv").read_bytes()


def test_sweep_records_failed_cells(tmp_path):
    cfg = {**TINY, "sweep": {"lambda_mg": [0.0, -1.0], "lambda_cons": [0.0], "replicates": 1}}
    assert cli.main(["sweep", "--config", _write(tmp_path, cfg), "--out", str(tmp_path / "s")]) == 1
    rows = _rows(tmp_path / "s" / "heatmap.csv")
    assert len(rows) == 2
    assert math.isnan(float(rows[1]["l2_uv"])) and not math.isnan(float(rows[0]["l2_uv"]))
    failures = (tmp_path / "s" / "failures.jsonl").read_text().splitlines()
    assert len(failures) == 1 and json.loads(failures[0])["lambda_mg"] == -1.0


def test_bench_rows_and_baseline_ordering(tmp_path):
    cfg = {**TINY, "dataset": {**TINY["dataset"], "n_train": 512, "n_test": 2048},
           "eval_max_points": 256,
           "bench": {"dims": [2], "estimators": ["constant", "entropic_map"], "replicates": 2}}
    assert cli.main(["bench", "--config", _write(tmp_path, cfg), "--out", str(tmp_path / "b")]) == 0
    rows = _rows(tmp_path / "b" / "bench.csv")
    assert list(rows[0]) == list(cli.BENCH_COLUMNS)
    assert len(rows) == 4
    for r in rows:
        if r["estimator"] == "constant":
            assert 90.0 < float(r["l2_uv"]) < 110.0
    by_seed = {}
    for r in rows:
        by_seed.setdefault(r["seed"], {})[r["estimator"]] = float(r["l2_uv"])
    for est in by_seed.values():
        assert est["entropic_map"] < est["constant"]


def test_bench_single_cell_and_bad_estimator(tmp_path):
    cfg = {**TINY, "bench": {"dims": [2], "estimators": ["unregularized"], "replicates": 1}}
    assert cli.main(["bench", "--config", _write(tmp_path, cfg), "--out", str(tmp_path / "b")]) == 0
    assert len(_rows(tmp_path / "b" / "bench.csv")) == 1
    cfg["bench"]["estimators"] = ["magic"]
    assert cli.main(["bench", "--config", _write(tmp_path, cfg, "x.json"),
                     "--out", str(tmp_path / "c")]) == 2


def test_csv_formatting_is_locale_free():
    text = cli._csv_text(["a", "b", "c"], [[0.5, 3, float("nan")]])
    assert text == "a,b,c\n0.5,3,nan\n"
