"""Experiment driver: ``tabattr validate | run | plotdata``.

Output layout of ``run``::

    <out>/manifest.json
    <out>/<dataset>/model.txt
    <out>/<dataset>/attributions/<method>__<baseline>.csv
    <out>/<dataset>/curves/<method>__<baseline>.csv
    <out>/<dataset>/curves/random_control.csv
    <out>/plotdata/<dataset>.csv
    <out>/plotdata/aggregate.csv

Every seed derives from ``master_seed`` through :meth:`Rng.split` with a label
naming the stage, dataset and cell, so adding a baseline or method to the
config leaves the other cells' numbers unchanged. All cells of a dataset share
one masking-noise stream.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import platform
import sys
import time
import traceback
from collections import defaultdict
from pathlib import Path

import numpy as np

from . import __version__
from .ablation import ablation_curve, area_under_curve, AblationCurve, random_control_curve
from .attribution import attribute_rows
from .config import ConfigError, DatasetConfig, ExperimentConfig, load_config, validate
from .data import (drop_high_missing, load_csv, load_schema, split_train_test,
                   stratified_sample, synth_dataset)
from .model import TrainConfig, save_model, train
from .numerics import Rng

log = logging.getLogger("tabattr")

EXIT_OK, EXIT_CONFIG, EXIT_PARTIAL = 0, 1, 2
MANIFEST = "manifest.json"
CURVE_COLUMNS = ["dataset", "attribution_method", "baseline_method", "k_percent", "f1_mean", "f1_std", "seed"]
AGGREGATE_COLUMNS = ["attribution_method", "baseline_method", "k_percent", "f1_mean", "f1_std",
                     "f1_drop_mean", "f1_drop_std", "n_datasets"]
CONTROL = "random"


class MissingArtifactError(FileNotFoundError):
    pass


def fmt(v) -> str:
    """Shortest round-tripping decimal; byte-stable across runs."""
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def _write_csv(path: Path, header, rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with tmp.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    os.replace(tmp, path)


def _read_csv(path: Path) -> list[dict]:
    with path.open(newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def build_dataset(ds: DatasetConfig, rng: Rng):
    """Load or synthesise one dataset; returns ``(dataset, missingness_report_or_None)``."""
    if ds.synthetic is not None:
        s = ds.synthetic
        return synth_dataset(int(s["n"]), int(s["features"]), s["informative"], rng,
                             ds.train_fraction, name=ds.name), None
    schema = load_schema(ds.schema)
    table = load_csv(ds.csv, schema, ds.missing_token)
    if ds.subsample is not None and table.n_rows > ds.subsample:
        keep = np.sort(rng.split("subsample").choice(table.n_rows, ds.subsample))
        table = table.take(keep)
    report = None
    if ds.missing_threshold is not None:
        table, report = drop_high_missing(table, ds.missing_threshold)
    return split_train_test(table, ds.train_fraction, rng.split("split"), name=ds.name), report


def curve_rows(curve: AblationCurve, dataset: str, method: str, baseline: str, seed: int):
    return [[dataset, method, baseline, fmt(k), fmt(m), fmt(s), str(seed)]
            for k, m, s in zip(curve.k_grid, curve.f1_values, curve.f1_std)]


def _run_dataset(cfg: ExperimentConfig, ds_cfg: DatasetConfig, root: Rng, out: Path, record: dict):
    seeds = record["seeds"]
    t0 = time.perf_counter()
    data_rng = root.split("data", ds_cfg.name)
    seeds["data"] = data_rng.seed
    dataset, missing = build_dataset(ds_cfg, data_rng)
    if missing is not None:
        record["missingness"] = {n: {"missing": c, "dropped": d}
                                 for n, c, d in zip(missing.names, missing.missing, missing.dropped)}
    record["shape"] = {"rows": int(len(dataset.labels)), "features": dataset.n_features,
                       "classes": dataset.n_classes, "train": int(len(dataset.train_idx)),
                       "test": int(len(dataset.test_idx))}
    record["timing"]["data"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    model_seed = root.split("model", ds_cfg.name).seed
    seeds["model"] = model_seed
    tc = cfg.model
    model = train(dataset, TrainConfig(tc.hidden_units, tc.learning_rate, tc.epochs, tc.batch_size, model_seed))
    out.mkdir(parents=True, exist_ok=True)
    save_model(model, out / "model.txt")
    record["timing"]["train"] = time.perf_counter() - t0
    record["train_loss"] = [model.loss_history[0], model.loss_history[-1]]

    rows = dataset.test_idx
    if ds_cfg.eval_rows is not None and ds_cfg.eval_rows < len(rows):
        rows = stratified_sample(dataset, ds_cfg.eval_rows, root.split("eval", ds_cfg.name))
    kshap_rows = rows
    if dataset.n_features > cfg.kshap_max_features and len(rows) > cfg.kshap_subsample:
        kshap_rows = stratified_sample(dataset, cfg.kshap_subsample, root.split("kshap-rows", ds_cfg.name))

    mask_rng = root.split("mask", ds_cfg.name)
    seeds["mask"] = mask_rng.seed
    abl = cfg.ablation
    unmasked_f1 = None

    for method in cfg.methods:
        for bname, spec in cfg.baselines:
            cell = f"{method}__{bname}"
            t0 = time.perf_counter()
            written = []
            try:
                cell_rows = kshap_rows if method == "kernel_shap" else rows
                attr_rng = root.split("attr", ds_cfg.name, method, bname)
                A, targets, _ = attribute_rows(method, model, dataset.features[cell_rows], spec,
                                               dataset, cfg.attribution, attr_rng)
                dump = out / "attributions" / f"{cell}.csv"
                _write_csv(dump, ["row_id", "target_class"] + [f"feature_{j}" for j in range(A.shape[1])],
                           [[str(int(r)), str(int(c))] + [fmt(v) for v in a]
                            for r, c, a in zip(cell_rows, targets, A)])
                written.append(dump)
                curve = ablation_curve(model, dataset, A, abl.k_grid, mask_rng, abl.repeats,
                                       rows=cell_rows, mode=abl.ranking)
                if unmasked_f1 is None and cell_rows is rows:
                    unmasked_f1 = curve.f1_values[0]
                path = out / "curves" / f"{cell}.csv"
                _write_csv(path, CURVE_COLUMNS, curve_rows(curve, ds_cfg.name, method, bname, cfg.master_seed))
                written.append(path)
                record["cells"][cell] = {"status": "ok", "seed": attr_rng.seed,
                                         "rows": int(len(cell_rows)), "auc": area_under_curve(curve)}
            except Exception as exc:  # one failed cell must not stop the matrix
                for p in written:
                    p.unlink(missing_ok=True)
                log.error("%s/%s failed: %s", ds_cfg.name, cell, exc)
                record["cells"][cell] = {"status": "failed", "error": f"{type(exc).__name__}: {exc}",
                                         "traceback": traceback.format_exc()}
            record["timing"][cell] = time.perf_counter() - t0
            log.info("%s/%s done in %.2fs", ds_cfg.name, cell, record["timing"][cell])

    t0 = time.perf_counter()
    control = random_control_curve(model, dataset, abl.k_grid, mask_rng, abl.repeats, rows=rows)
    _write_csv(out / "curves" / "random_control.csv", CURVE_COLUMNS,
               curve_rows(control, ds_cfg.name, CONTROL, CONTROL, cfg.master_seed))
    record["cells"]["random_control"] = {"status": "ok", "rows": int(len(rows)), "auc": area_under_curve(control)}
    record["timing"]["random_control"] = time.perf_counter() - t0
    record["unmasked_f1"] = unmasked_f1 if unmasked_f1 is not None else control.f1_values[0]


def _file_list(out: Path) -> list[dict]:
    files = []
    for p in sorted(out.rglob("*")):
        if p.is_file() and p.name != MANIFEST and not p.name.endswith(".tmp"):
            files.append({"path": p.relative_to(out).as_posix(), "sha256": _sha256(p)})
    return files


def _write_manifest(out: Path, manifest: dict) -> None:
    manifest["files"] = _file_list(out)
    (out / MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True), encoding="utf-8")


def run(config_path, out_dir=None, seed=None) -> int:
    """Run the whole matrix; returns the process exit code."""
    try:
        cfg, report = load_config(config_path)
    except ConfigError as exc:
        for e in exc.errors:
            log.error("config: %s", e)
        return EXIT_CONFIG
    for w in report.warnings:
        log.warning("config: %s", w)
    if seed is not None:
        cfg = _replace_seed(cfg, seed)
    out = Path(out_dir).resolve() if out_dir is not None else cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)

    root = Rng(cfg.master_seed)
    manifest = {
        "config": cfg.snapshot(),
        "versions": {"tabattr": __version__, "numpy": np.__version__, "python": platform.python_version()},
        "datasets": {},
    }
    failed = False
    for ds_cfg in cfg.datasets:
        record = {"seeds": {}, "timing": {}, "cells": {}, "status": "ok"}
        manifest["datasets"][ds_cfg.name] = record
        t0 = time.perf_counter()
        try:
            _run_dataset(cfg, ds_cfg, root, out / ds_cfg.name, record)
        except Exception as exc:
            log.error("dataset %s failed: %s", ds_cfg.name, exc)
            record["status"] = "failed"
            record["error"] = f"{type(exc).__name__}: {exc}"
            record["traceback"] = traceback.format_exc()
        record["timing"]["total"] = time.perf_counter() - t0
        if record["status"] != "ok" or any(c["status"] != "ok" for c in record["cells"].values()):
            failed = True

    _write_manifest(out, manifest)
    try:
        emit_plotdata(out)
    except MissingArtifactError as exc:
        log.error("plotdata: %s", exc)
        failed = True
    for line in auc_report_lines(out):
        log.debug("%s", line)
    return EXIT_PARTIAL if failed else EXIT_OK


def _replace_seed(cfg: ExperimentConfig, seed: int) -> ExperimentConfig:
    from dataclasses import replace
    return replace(cfg, master_seed=int(seed))


def _load_manifest(run_dir: Path) -> dict:
    path = run_dir / MANIFEST
    if not path.is_file():
        raise MissingArtifactError(f"{run_dir} has no {MANIFEST}; is it a completed run?")
    return json.loads(path.read_text(encoding="utf-8"))


def emit_plotdata(run_dir) -> dict[str, Path]:
    """Write one long-format CSV per dataset and one cross-dataset aggregate.

    Aggregate rows hold, per (method, baseline, K), the mean and population
    std over datasets of F1 and of the F1 drop relative to K=0. The random
    control is kept in the per-dataset files only.
    """
    run_dir = Path(run_dir)
    manifest = _load_manifest(run_dir)
    written = {}
    per_cell = defaultdict(dict)  # (method, baseline) -> dataset -> rows
    for ds_name, record in manifest["datasets"].items():
        if record.get("status") != "ok":
            continue
        rows = []
        for cell, info in record["cells"].items():
            if info["status"] != "ok":
                continue
            path = run_dir / ds_name / "curves" / f"{cell}.csv"
            if not path.is_file():
                raise MissingArtifactError(f"curve file missing: {path}")
            data = _read_csv(path)
            rows.extend(data)
            if cell != "random_control":
                per_cell[(data[0]["attribution_method"], data[0]["baseline_method"])][ds_name] = data
        target = run_dir / "plotdata" / f"{ds_name}.csv"
        _write_csv(target, CURVE_COLUMNS, [[r[c] for c in CURVE_COLUMNS] for r in rows])
        written[ds_name] = target

    agg_rows = []
    for (method, baseline), by_ds in per_cell.items():
        curves = list(by_ds.values())
        ks = [r["k_percent"] for r in curves[0]]
        F = np.array([[float(r["f1_mean"]) for r in c] for c in curves])
        drops = F[:, :1] - F
        for j, k in enumerate(ks):
            agg_rows.append([method, baseline, k, fmt(F[:, j].mean()), fmt(F[:, j].std()),
                             fmt(drops[:, j].mean()), fmt(drops[:, j].std()), str(len(curves))])
    target = run_dir / "plotdata" / "aggregate.csv"
    _write_csv(target, AGGREGATE_COLUMNS, agg_rows)
    written["aggregate"] = target
    _write_manifest(run_dir, manifest)
    return written


def auc_report(run_dir) -> list[dict]:
    """Area under each ablation curve next to its dataset's random control."""
    run_dir = Path(run_dir)
    manifest = _load_manifest(run_dir)
    rows = []
    for ds_name, record in manifest["datasets"].items():
        cells = record.get("cells", {})
        control = cells.get("random_control", {}).get("auc")
        for cell, info in cells.items():
            if cell == "random_control" or info["status"] != "ok":
                continue
            method, baseline = cell.split("__", 1)
            rows.append({"dataset": ds_name, "method": method, "baseline": baseline,
                         "auc": info["auc"], "control_auc": control,
                         "beats_control": control is not None and info["auc"] < control})
    return rows


def auc_report_lines(run_dir) -> list[str]:
    rows = auc_report(run_dir)
    if not rows:
        return []
    by_baseline = defaultdict(list)
    for r in rows:
        by_baseline[r["baseline"]].append(r)
    lines = ["baseline        mean AUC  mean control AUC  beats control"]
    ranked = sorted(by_baseline.items(), key=lambda kv: np.mean([r["auc"] for r in kv[1]]))
    for name, rs in ranked:
        lines.append(f"{name:<14} {np.mean([r['auc'] for r in rs]):9.4f} "
                     f"{np.mean([r['control_auc'] for r in rs]):17.4f} "
                     f"{sum(r['beats_control'] for r in rs):>7d}/{len(rs)}")
    return lines


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="tabattr", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    p_val = sub.add_parser("validate", help="check a config file")
    p_val.add_argument("config")
    p_run = sub.add_parser("run", help="run the experiment matrix")
    p_run.add_argument("config")
    p_run.add_argument("--out", default=None, help="output directory (overrides the config)")
    p_run.add_argument("--seed", type=int, default=None, help="master seed (overrides the config)")
    p_plot = sub.add_parser("plotdata", help="(re)write the figure CSVs of a finished run")
    p_plot.add_argument("run_dir")
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")

    if args.command == "validate":
        try:
            report = validate(args.config)
        except OSError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        for w in report.warnings:
            print(f"warning: {w}")
        for e in report.errors:
            print(f"error: {e}")
        return EXIT_OK if report.ok else EXIT_CONFIG
    if args.command == "run":
        try:
            code = run(args.config, args.out, args.seed)
        except OSError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        if code != EXIT_CONFIG:
            out = Path(args.out) if args.out else load_config(args.config)[0].output_dir
            print("\n".join(auc_report_lines(out)))
        return code
    try:
        for name, path in emit_plotdata(args.run_dir).items():
            print(f"{name}: {path}")
    except MissingArtifactError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARTIAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
