"""Experiment harness: ``train``, ``sweep``, ``bench`` and ``print-config``.

Configs are JSON documents; any key left out takes the default shown by
``mongegap print-config``. The top-level ``seed`` (or ``--seed``) drives
both the dataset draw and training.

Seeds for sweep and bench replicates are derived from the master seed with
``numpy.random.SeedSequence([master, replicate])``; every grid cell of one
replicate shares that seed, so cells are paired comparisons and outputs do
not depend on the order in which workers finish.

Output files:

* ``train_log.jsonl``: one loss record per step.
* ``metrics.json``: held-out evaluation (sorted keys, byte-stable).
* ``checkpoint.json``: final network, see :func:`mongegap.nn.save_checkpoint`.
* ``snapshots/step_<k>.csv``: columns ``x0..x{d-1}, t0..t{d-1}`` on a fixed
  probe set, every ``snapshot_every`` steps (0 disables).
* ``heatmap.csv``: ``lambda_mg, lambda_cons, sinkhorn_div, l2_uv, seed``.
* ``bench.csv``: ``d, estimator, seed, sinkhorn_div, l2_uv``.
* ``failures.jsonl``: one record per failed sweep or bench run, if any.

The conservativity penalty is reported as the mean over points and probes
(the double sum divided by ``n * m``), so ``lambda_cons`` values carry over
between batch sizes.
"""

from __future__ import annotations

import argparse
import copy
import csv
import io
import json
import logging
import math
import os
import sys
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import nn
from .datasets import DatasetSpec, sample
from .ot import entropic_map
from .training import TrainConfig, build_model, constant_baseline, evaluate, train

log = logging.getLogger("mongegap")

ESTIMATORS = ("regularized", "unregularized", "entropic_map", "constant")
HEATMAP_COLUMNS = ("lambda_mg", "lambda_cons", "sinkhorn_div", "l2_uv", "seed")
BENCH_COLUMNS = ("d", "estimator", "seed", "sinkhorn_div", "l2_uv")


class ConfigError(ValueError):
    pass


def default_config() -> dict:
    return {
        "seed": 0,
        "dataset": {k: v for k, v in DatasetSpec().to_dict().items() if k != "seed"},
        "train": TrainConfig().to_dict(),
        "snapshot_every": 0,
        "snapshot_points": 256,
        "eval_max_points": 2048,
        "sweep": {"lambda_mg": [0.0, 1.0], "lambda_cons": [0.0, 0.01], "replicates": 1},
        "bench": {"dims": [2, 4], "estimators": list(ESTIMATORS), "replicates": 1},
    }


def _merge(base: dict, override: dict, where: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, val in override.items():
        if key not in base:
            raise ConfigError(f"unknown config key {where}{key!r}")
        if isinstance(base[key], dict):
            if not isinstance(val, dict):
                raise ConfigError(f"config key {where}{key!r} must be an object")
            out[key] = _merge(base[key], val, f"{where}{key}.")
        else:
            out[key] = val
    return out


def load_config(path, seed=None) -> dict:
    cfg = default_config()
    if path is not None:
        try:
            with open(path, encoding="utf-8") as fh:
                user = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(user, dict):
            raise ConfigError("config must be a JSON object")
        cfg = _merge(cfg, user)
    if seed is not None:
        cfg["seed"] = int(seed)
    return cfg


def derive_seed(master: int, replicate: int) -> int:
    return int(np.random.SeedSequence([int(master), int(replicate)]).generate_state(1)[0])


def _train_config(section: dict, seed: int, **overrides) -> TrainConfig:
    names = {f.name for f in fields(TrainConfig)}
    kwargs = {k: v for k, v in section.items() if k in names}
    kwargs.update(overrides)
    kwargs["seed"] = seed
    try:
        return TrainConfig(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad train config: {exc}") from exc


def _dataset(section: dict, seed: int, **overrides) -> DatasetSpec:
    try:
        return DatasetSpec(**{**section, **overrides, "seed": seed})
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad dataset config: {exc}") from exc


def _reference_pool(tcfg: TrainConfig):
    if tcfg.reference == "source":
        return None
    try:
        R = np.loadtxt(tcfg.reference, delimiter=",", skiprows=1, ndmin=2)
    except OSError as exc:
        raise ConfigError(f"cannot read reference pool: {exc}") from exc
    return R


# ---------------------------------------------------------------- output --

def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def _json_text(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2, allow_nan=True) + "\n"


def _clean(v):
    if isinstance(v, dict):
        return {k: _clean(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_clean(x) for x in v]
    if isinstance(v, np.generic):
        return v.item()
    return v


# ------------------------------------------------------------------ train --

def run_training(cfg: dict, out: Path | None):
    """One full train + evaluate run; writes outputs when ``out`` is given."""
    seed = int(cfg["seed"])
    tcfg = _train_config(cfg["train"], seed)
    data = sample(_dataset(cfg["dataset"], seed))
    R = _reference_pool(tcfg)
    if R is not None and R.shape[1] != data.X_train.shape[1]:
        raise ConfigError("reference pool dimension does not match the data")
    every = int(cfg["snapshot_every"])
    if every < 0:
        raise ConfigError("snapshot_every must be >= 0")
    probes = data.X_test[:int(cfg["snapshot_points"])]
    log_lines = []

    def snapshot(step, model):
        if out is None or every == 0:
            return
        T = nn.apply_map(model, probes)
        d = probes.shape[1]
        header = [f"x{k}" for k in range(d)] + [f"t{k}" for k in range(d)]
        _atomic_write(out / "snapshots" / f"step_{step}.csv",
                      _csv_text(header, np.hstack([probes, T]).tolist()))

    def callback(step, model, bd):
        log_lines.append(json.dumps(_clean(bd.to_dict()), sort_keys=True))
        if every and (step % every == 0 or step == tcfg.iterations):
            snapshot(step, model)

    model = build_model(tcfg, data.X_train, data.Y_train)
    snapshot(0, model)
    model, history = train(tcfg, data.X_train, data.Y_train, R, model=model, callback=callback)
    metrics = evaluate(model, data.X_test, data.Y_test, data.ground_truth,
                       max_points=cfg["eval_max_points"])
    record = {
        "metrics": metrics,
        "final_loss": history[-1].to_dict() if history else None,
        "aborted_steps": sum(b.aborted for b in history),
        "unconverged_steps": sum(not b.converged for b in history),
        "seed": seed,
        "dataset": _dataset(cfg["dataset"], seed).to_dict(),
        "train": tcfg.to_dict(),
    }
    if out is not None:
        _atomic_write(out / "train_log.jsonl", "".join(line + "\n" for line in log_lines))
        _atomic_write(out / "metrics.json", _json_text(_clean(record)))
        tmp = out / ".checkpoint.json.tmp"
        nn.save_checkpoint(tmp, model)
        os.replace(tmp, out / "checkpoint.json")
    return model, record


def cmd_train(args) -> int:
    cfg = load_config(args.config, args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _, record = run_training(cfg, out)
    log.info("metrics: %s", record["metrics"])
    return 0


# ------------------------------------------------------------ sweep/bench --

def _sweep_cell(job):
    cfg, lm, lc, seed = job
    cfg = copy.deepcopy(cfg)
    cfg["seed"] = seed
    cfg["snapshot_every"] = 0
    cfg["train"] = {**cfg["train"], "lambda_mg": lm, "lambda_cons": lc}
    try:
        _, rec = run_training(cfg, None)
        m = rec["metrics"]
        return (lm, lc, m["sinkhorn_div"], m.get("l2_uv", math.nan), seed), None
    except Exception as exc:  # recorded per cell, the sweep goes on
        return (lm, lc, math.nan, math.nan, seed), f"{type(exc).__name__}: {exc}"


def _bench_cell(job):
    cfg, d, estimator, seed = job
    try:
        spec = _dataset(cfg["dataset"], seed, kind="gaussian", d=d)
        data = sample(spec)
        if estimator == "constant":
            fn = constant_baseline(data.Y_train)
        elif estimator == "entropic_map":
            fn = entropic_map(data.X_train, data.Y_train)
        elif estimator == "regularized":
            fn = train(_train_config(cfg["train"], seed), data.X_train, data.Y_train)[0]
        elif estimator == "unregularized":
            tcfg = _train_config(cfg["train"], seed, lambda_mg=0.0, lambda_cons=0.0,
                                 parameterization=nn.DIRECT, init="random")
            fn = train(tcfg, data.X_train, data.Y_train)[0]
        else:
            raise ConfigError(f"unknown estimator {estimator!r}")
        m = evaluate(fn, data.X_test, data.Y_test, data.ground_truth,
                     max_points=cfg["eval_max_points"])
        return (d, estimator, seed, m["sinkhorn_div"], m["l2_uv"]), None
    except Exception as exc:
        return (d, estimator, seed, math.nan, math.nan), f"{type(exc).__name__}: {exc}"


def _run_jobs(fn, jobs, workers):
    if workers <= 1 or len(jobs) <= 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, jobs))


def _finish(out: Path, name, header, results, describe) -> int:
    rows = [r for r, _ in results]
    _atomic_write(out / name, _csv_text(header, rows))
    failures = [{**describe(r), "error": err} for r, err in results if err is not None]
    if failures:
        _atomic_write(out / "failures.jsonl",
                      "".join(json.dumps(_clean(f), sort_keys=True) + "\n" for f in failures))
        for f in failures:
            log.error("run failed: %s", f)
        return 1
    return 0


def cmd_sweep(args) -> int:
    cfg = load_config(args.config, args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    sw = cfg["sweep"]
    jobs = [(cfg, float(lm), float(lc), derive_seed(cfg["seed"], r))
            for r in range(int(sw["replicates"]))
            for lm in sw["lambda_mg"] for lc in sw["lambda_cons"]]
    results = _run_jobs(_sweep_cell, jobs, args.workers)
    return _finish(out, "heatmap.csv", HEATMAP_COLUMNS, results,
                   lambda r: {"lambda_mg": r[0], "lambda_cons": r[1], "seed": r[4]})


def cmd_bench(args) -> int:
    cfg = load_config(args.config, args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    b = cfg["bench"]
    bad = [e for e in b["estimators"] if e not in ESTIMATORS]
    if bad:
        raise ConfigError(f"unknown estimators {bad}; choose from {ESTIMATORS}")
    jobs = [(cfg, int(d), e, derive_seed(cfg["seed"], r))
            for r in range(int(b["replicates"])) for d in b["dims"] for e in b["estimators"]]
    results = _run_jobs(_bench_cell, jobs, args.workers)
    return _finish(out, "bench.csv", BENCH_COLUMNS, results,
                   lambda r: {"d": r[0], "estimator": r[1], "seed": r[2]})


def cmd_print_config(args) -> int:
    cfg = load_config(args.config, args.seed)
    sys.stdout.write(_json_text(cfg))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mongegap", description=__doc__.split("\n\n")[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    for name, fn, needs_out in [("train", cmd_train, True), ("sweep", cmd_sweep, True),
                                ("bench", cmd_bench, True), ("print-config", cmd_print_config, False)]:
        s = sub.add_parser(name)
        s.add_argument("--config", default=None, help="JSON config (defaults: print-config)")
        s.add_argument("--seed", type=int, default=None, help="override the master seed")
        if needs_out:
            s.add_argument("--out", required=True, help="output directory")
            s.add_argument("--workers", type=int, default=1, help="parallel runs for sweep/bench")
        s.set_defaults(func=fn)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, OSError) as exc:
        print(f"mongegap: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
