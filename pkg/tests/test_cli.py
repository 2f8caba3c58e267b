import json
from pathlib import Path

import numpy as np
import pytest
import yaml

from tabattr.cli import (EXIT_CONFIG, EXIT_OK, EXIT_PARTIAL, MissingArtifactError, _read_csv, _sha256,
                         emit_plotdata, main, run)
from tabattr.config import ConfigError, load_config, validate

SYNTH = {"name": "synth", "synthetic": {"n": 300, "features": 6, "informative": [0, 1]}}


def write_config(tmp_path: Path, **overrides) -> Path:
    doc = {
        "master_seed": 3,
        "output_dir": "out",
        "datasets": [SYNTH],
        "model": {"hidden_units": 8, "epochs": 5},
        "baselines": [{"method": "constant", "value": 0.0}],
        "attribution": {"methods": ["ig"], "ig_steps": 20},
        "ablation": {"k_grid": [0, 50, 100], "repeats": 2},
    }
    doc.update(overrides)
    path = tmp_path / "config.yaml"
    path.write_text(yaml.safe_dump(doc))
    return path


def write_categorical_csv(tmp_path: Path):
    g = np.random.default_rng(0)
    lines = ["age,colour,y"]
    for _ in range(120):
        age = g.normal(40, 10)
        colour = g.choice(["red", "green", "blue"])
        lines.append(f"{age:.3f},{colour},{int(age > 40)}")
    (tmp_path / "cat.csv").write_text("\n".join(lines) + "\n")
    (tmp_path / "cat.yaml").write_text(yaml.safe_dump({"features": [
        {"name": "age", "kind": "continuous"},
        {"name": "colour", "kind": "categorical"},
        {"name": "y", "label": True, "categories": ["0", "1"]},
    ]}))
    return {"name": "cat", "csv": "cat.csv", "schema": "cat.yaml"}


def files_under(root: Path):
    return sorted(p.relative_to(root).as_posix() for p in root.rglob("*") if p.is_file())


def test_minimal_run_census(tmp_path):
    assert run(write_config(tmp_path)) == EXIT_OK
    out = tmp_path / "out"
    files = files_under(out)
    assert [f for f in files if f.endswith("model.txt")] == ["synth/model.txt"]
    assert [f for f in files if "/attributions/" in f] == ["synth/attributions/ig__constant.csv"]
    assert [f for f in files if "/curves/" in f] == ["synth/curves/ig__constant.csv",
                                                      "synth/curves/random_control.csv"]
    assert files.count("manifest.json") == 1


def test_run_is_byte_deterministic(tmp_path):
    cfg = write_config(tmp_path)
    assert run(cfg, tmp_path / "a") == EXIT_OK
    assert run(cfg, tmp_path / "b") == EXIT_OK
    csvs = [f for f in files_under(tmp_path / "a") if f.endswith(".csv") or f.endswith(".txt")]
    assert csvs
    for f in csvs:
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes(), f


def test_seed_override_changes_output(tmp_path):
    cfg = write_config(tmp_path)
    run(cfg, tmp_path / "a")
    run(cfg, tmp_path / "b", seed=4)
    f = "synth/attributions/ig__constant.csv"
    assert (tmp_path / "a" / f).read_bytes() != (tmp_path / "b" / f).read_bytes()


def test_missing_csv_fails_before_training(tmp_path):
    cfg = write_config(tmp_path, datasets=[{"name": "x", "csv": "nope.csv", "schema": "nope.yaml"}])
    report = validate(cfg)
    assert any("file not found" in e for e in report.errors)
    assert run(cfg) == EXIT_CONFIG
    assert not (tmp_path / "out").exists()
    with pytest.raises(ConfigError):
        load_config(cfg)


def test_validate_examples(tmp_path):
    assert validate(write_config(tmp_path)).errors == []
    bad = validate(write_config(tmp_path, ablation={"k_grid": [10, 20]}))
    assert any("k_grid" in e for e in bad.errors)
    ds = write_categorical_csv(tmp_path)
    report = validate(write_config(tmp_path, datasets=[ds], baselines=[{"method": "gaussian", "sigma": 1.0}]))
    assert report.errors == []
    assert any("gaussian" in w and "colour" in w for w in report.warnings)


def test_validate_unreadable_file(tmp_path):
    with pytest.raises(OSError):
        validate(tmp_path / "missing.yaml")
    assert main(["validate", str(tmp_path / "missing.yaml")]) == EXIT_CONFIG


@pytest.mark.parametrize("overrides,needle", [
    ({"baselines": []}, "baseline"),
    ({"attribution": {"methods": []}}, "attribution method"),
    ({"attribution": {"methods": ["lime"]}}, "lime"),
    ({"datasets": []}, "dataset"),
    ({"baselines": [{"method": "constant"}, {"method": "constant"}]}, "unique"),
    ({"surprise": 1}, "unknown top-level"),
    ({"baselines": [{"method": "blurred", "radius": -1}]}, "baselines[0]"),
])
def test_validate_structural_errors(tmp_path, overrides, needle):
    errors = validate(write_config(tmp_path, **overrides)).errors
    assert any(needle in e for e in errors), errors


def test_plotdata_census_and_recompute(tmp_path):
    cfg = write_config(tmp_path, datasets=[SYNTH, dict(SYNTH, name="synth2")],
                       baselines=[{"method": "constant"}, {"method": "uniform"}])
    assert run(cfg) == EXIT_OK
    out = tmp_path / "out"
    written = emit_plotdata(out)
    rows = _read_csv(written["synth"])
    groups = {(r["attribution_method"], r["baseline_method"]) for r in rows}
    assert groups == {("ig", "constant"), ("ig", "uniform"), ("random", "random")}
    agg = _read_csv(written["aggregate"])
    assert len(agg) == 3 * 1 * 2
    per_ds = {name: _read_csv(written[name]) for name in ("synth", "synth2")}
    for r in agg:
        vals = [float(x["f1_mean"]) for rs in per_ds.values() for x in rs
                if (x["attribution_method"], x["baseline_method"], x["k_percent"])
                == (r["attribution_method"], r["baseline_method"], r["k_percent"])]
        assert len(vals) == 2
        assert abs(float(r["f1_mean"]) - np.mean(vals)) <= 1e-12
        assert abs(float(r["f1_std"]) - np.std(vals)) <= 1e-12
        assert int(r["n_datasets"]) == 2


def test_plotdata_on_incomplete_run(tmp_path):
    with pytest.raises(MissingArtifactError):
        emit_plotdata(tmp_path)
    assert main(["plotdata", str(tmp_path)]) == EXIT_PARTIAL
    assert run(write_config(tmp_path)) == EXIT_OK
    (tmp_path / "out" / "synth" / "curves" / "ig__constant.csv").unlink()
    with pytest.raises(MissingArtifactError):
        emit_plotdata(tmp_path / "out")


def test_manifest_lists_every_file(tmp_path):
    assert run(write_config(tmp_path)) == EXIT_OK
    out = tmp_path / "out"
    manifest = json.loads((out / "manifest.json").read_text())
    listed = {f["path"]: f["sha256"] for f in manifest["files"]}
    assert set(listed) == set(files_under(out)) - {"manifest.json"}
    for path, digest in listed.items():
        assert _sha256(out / path) == digest
    record = manifest["datasets"]["synth"]
    assert {"data", "model", "mask"} <= set(record["seeds"])
    assert "train" in record["timing"]
    assert manifest["config"]["master_seed"] == 3
    assert "numpy" in manifest["versions"]


def test_crash_isolation(tmp_path):
    # too few coalition samples for 6 features: every KernelSHAP cell fails
    bad = {"methods": ["ig", "kernel_shap"], "ig_steps": 20, "kshap_exhaustive_threshold": 1,
           "kshap_samples": 3}
    assert run(write_config(tmp_path, attribution=bad), tmp_path / "mixed") == EXIT_PARTIAL
    assert run(write_config(tmp_path), tmp_path / "clean") == EXIT_OK
    manifest = json.loads((tmp_path / "mixed" / "manifest.json").read_text())
    cells = manifest["datasets"]["synth"]["cells"]
    assert cells["kernel_shap__constant"]["status"] == "failed"
    assert "ParameterError" in cells["kernel_shap__constant"]["error"]
    assert cells["ig__constant"]["status"] == "ok"
    assert not (tmp_path / "mixed" / "synth" / "curves" / "kernel_shap__constant.csv").exists()
    # the surviving cell matches a run that never had the failing one
    for f in ("synth/curves/ig__constant.csv", "synth/attributions/ig__constant.csv"):
        assert (tmp_path / "mixed" / f).read_bytes() == (tmp_path / "clean" / f).read_bytes()


def test_adding_a_baseline_leaves_other_cells_unchanged(tmp_path):
    run(write_config(tmp_path), tmp_path / "one")
    run(write_config(tmp_path, baselines=[{"method": "constant"}, {"method": "gaussian"}]), tmp_path / "two")
    f = "synth/curves/ig__constant.csv"
    assert (tmp_path / "one" / f).read_bytes() == (tmp_path / "two" / f).read_bytes()


def test_categorical_csv_run(tmp_path):
    ds = write_categorical_csv(tmp_path)
    cfg = write_config(tmp_path, datasets=[ds], baselines=[{"method": "expectation", "sample_size": 20}],
                       attribution={"methods": ["deep_shap", "kernel_shap"]})
    assert run(cfg) == EXIT_OK
    dump = _read_csv(tmp_path / "out" / "cat" / "attributions" / "kernel_shap__expectation.csv")
    assert len(dump) == 24 and set(dump[0]) == {"row_id", "target_class", "feature_0", "feature_1"}


def test_main_run_verb(tmp_path, capsys):
    cfg = write_config(tmp_path)
    assert main(["run", str(cfg), "--out", str(tmp_path / "o"), "--seed", "9"]) == EXIT_OK
    assert "baseline" in capsys.readouterr().out
    manifest = json.loads((tmp_path / "o" / "manifest.json").read_text())
    assert manifest["config"]["master_seed"] == 9
    assert main(["validate", str(cfg)]) == EXIT_OK
    assert main(["plotdata", str(tmp_path / "o")]) == EXIT_OK
