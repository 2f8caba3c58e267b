"""Experiment configuration: a YAML file describing the full run matrix.

Relative paths inside the file (``output_dir``, dataset ``csv`` and
``schema``) resolve against the directory holding the config file. The key
set is documented in the README.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from pathlib import Path

import yaml

from .ablation import DEFAULT_K_GRID, check_k_grid
from .attribution import METHODS as ATTRIBUTION_METHODS
from .attribution import AttributionConfig
from .baselines import BaselineSpec
from .data import CATEGORICAL, load_schema
from .model import TrainConfig
from .numerics import ParameterError

# noise-based baselines assume continuous features
CONTINUITY_BASELINES = ("blurred", "gaussian", "uniform")


class ConfigError(ValueError):
    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


@dataclass(frozen=True)
class DatasetConfig:
    name: str
    csv: Path | None = None
    schema: Path | None = None
    synthetic: dict | None = None
    train_fraction: float = 0.8
    missing_token: str = "NA"
    missing_threshold: int | None = None
    subsample: int | None = None
    eval_rows: int | None = None


@dataclass(frozen=True)
class AblationConfig:
    k_grid: tuple[float, ...] = DEFAULT_K_GRID
    ranking: str = "signed"
    repeats: int = 10


@dataclass(frozen=True)
class ExperimentConfig:
    datasets: tuple[DatasetConfig, ...]
    baselines: tuple[tuple[str, BaselineSpec], ...]
    methods: tuple[str, ...]
    model: TrainConfig = TrainConfig()
    attribution: AttributionConfig = AttributionConfig()
    ablation: AblationConfig = AblationConfig()
    master_seed: int = 0
    output_dir: Path = Path("runs/default")
    kshap_max_features: int = 60
    kshap_subsample: int = 400
    source: dict = field(default_factory=dict, compare=False, repr=False)

    def snapshot(self) -> dict:
        """JSON-ready description of the resolved config."""
        return {
            "master_seed": self.master_seed,
            "output_dir": str(self.output_dir),
            "datasets": [{k: (str(v) if isinstance(v, Path) else v) for k, v in asdict(d).items()}
                         for d in self.datasets],
            "model": asdict(self.model),
            "baselines": [dict(spec.to_dict(), name=name) for name, spec in self.baselines],
            "attribution": dict(asdict(self.attribution), methods=list(self.methods),
                                kshap_max_features=self.kshap_max_features,
                                kshap_subsample=self.kshap_subsample),
            "ablation": dict(asdict(self.ablation), k_grid=list(self.ablation.k_grid)),
        }


@dataclass
class ValidationReport:
    errors: list[str] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.errors


_DATASET_KEYS = {f for f in DatasetConfig.__dataclass_fields__}
_TOP_KEYS = {"master_seed", "output_dir", "datasets", "model", "baselines", "attribution", "ablation"}


def _parse(doc, base: Path, report: ValidationReport):
    if not isinstance(doc, dict):
        report.errors.append("config must be a YAML mapping")
        return None
    unknown = set(doc) - _TOP_KEYS
    if unknown:
        report.errors.append(f"unknown top-level keys {sorted(unknown)}")

    datasets = []
    for k, entry in enumerate(doc.get("datasets") or []):
        where = f"datasets[{k}]"
        if not isinstance(entry, dict) or "name" not in entry:
            report.errors.append(f"{where}: needs a mapping with a 'name'")
            continue
        bad = set(entry) - _DATASET_KEYS
        if bad:
            report.errors.append(f"{where}: unknown keys {sorted(bad)}")
            continue
        entry = dict(entry)
        for key in ("csv", "schema"):
            if entry.get(key) is not None:
                entry[key] = (base / entry[key]).resolve()
        ds = DatasetConfig(**entry)
        if (ds.csv is None) == (ds.synthetic is None):
            report.errors.append(f"{where}: give exactly one of 'csv' or 'synthetic'")
        if ds.csv is not None:
            if ds.schema is None:
                report.errors.append(f"{where}: a csv dataset needs a 'schema'")
            for path in (ds.csv, ds.schema):
                if path is not None and not path.is_file():
                    report.errors.append(f"{where}: file not found: {path}")
        if ds.synthetic is not None:
            missing = {"n", "features", "informative"} - set(ds.synthetic)
            if missing:
                report.errors.append(f"{where}: synthetic block lacks {sorted(missing)}")
        if not 0 < ds.train_fraction < 1:
            report.errors.append(f"{where}: train_fraction must lie in (0, 1)")
        datasets.append(ds)
    if not datasets and not report.errors:
        report.errors.append("at least one dataset is required")
    names = [d.name for d in datasets]
    if len(set(names)) != len(names):
        report.errors.append("dataset names must be unique")

    baselines = []
    for k, entry in enumerate(doc.get("baselines") or []):
        entry = dict(entry) if isinstance(entry, dict) else {"method": entry}
        name = str(entry.pop("name", entry.get("method")))
        try:
            baselines.append((name, BaselineSpec.from_dict(entry)))
        except (ParameterError, TypeError) as exc:
            report.errors.append(f"baselines[{k}]: {exc}")
    if not baselines and not any(e.startswith("baselines") for e in report.errors):
        report.errors.append("at least one baseline is required")
    bnames = [n for n, _ in baselines]
    if len(set(bnames)) != len(bnames):
        report.errors.append("baseline names must be unique (add 'name:' to repeated methods)")

    attr = dict(doc.get("attribution") or {})
    methods = tuple(attr.pop("methods", ()) or ())
    for m in methods:
        if m not in ATTRIBUTION_METHODS:
            report.errors.append(f"unknown attribution method {m!r}; choose from {ATTRIBUTION_METHODS}")
    if not methods:
        report.errors.append("at least one attribution method is required")
    kshap_max = attr.pop("kshap_max_features", 60)
    kshap_sub = attr.pop("kshap_subsample", 400)
    try:
        attribution = AttributionConfig(**attr)
    except (ParameterError, TypeError) as exc:
        report.errors.append(f"attribution: {exc}")
        attribution = AttributionConfig()

    try:
        model = TrainConfig(**(doc.get("model") or {}))
    except (ParameterError, TypeError) as exc:
        report.errors.append(f"model: {exc}")
        model = TrainConfig()

    abl = dict(doc.get("ablation") or {})
    try:
        ablation = AblationConfig(
            k_grid=tuple(abl.pop("k_grid", DEFAULT_K_GRID)),
            ranking=abl.pop("ranking", "signed"),
            repeats=int(abl.pop("repeats", 10)),
        )
        check_k_grid(ablation.k_grid)
        if ablation.ranking not in ("signed", "absolute"):
            raise ParameterError("ranking must be 'signed' or 'absolute'")
        if ablation.repeats < 1:
            raise ParameterError("repeats must be at least 1")
        if abl:
            raise ParameterError(f"unknown keys {sorted(abl)}")
    except (ParameterError, TypeError) as exc:
        report.errors.append(f"ablation: {exc}")
        ablation = AblationConfig()

    seed = doc.get("master_seed", 0)
    if not isinstance(seed, int) or not 0 <= seed < 2**64:
        report.errors.append("master_seed must be a non-negative 64-bit integer")
        seed = 0

    # caveat: noise baselines on categorical features, kept as integer codes
    for ds in datasets:
        if ds.schema is None or not ds.schema.is_file():
            continue
        try:
            schema = load_schema(ds.schema)
        except Exception as exc:  # surfaced as a validation error, not a crash
            report.errors.append(f"dataset {ds.name!r}: bad schema: {exc}")
            continue
        cats = [f.name for f in schema.features if f.kind == CATEGORICAL]
        for name, spec in baselines:
            if cats and spec.method in CONTINUITY_BASELINES:
                report.warnings.append(
                    f"dataset {ds.name!r}: baseline {name!r} treats categorical features "
                    f"{cats} as numeric codes"
                )

    if report.errors:
        return None
    return ExperimentConfig(
        datasets=tuple(datasets),
        baselines=tuple(baselines),
        methods=methods,
        model=model,
        attribution=attribution,
        ablation=ablation,
        master_seed=seed,
        output_dir=(base / doc.get("output_dir", "runs/default")).resolve(),
        kshap_max_features=int(kshap_max),
        kshap_subsample=int(kshap_sub),
        source=doc,
    )


def validate(config_path) -> ValidationReport:
    report = ValidationReport()
    path = Path(config_path)
    with path.open(encoding="utf-8") as fh:  # unreadable file -> OSError
        try:
            doc = yaml.safe_load(fh)
        except yaml.YAMLError as exc:
            report.errors.append(f"YAML syntax: {exc}")
            return report
    _parse(doc, path.resolve().parent, report)
    return report


def load_config(config_path) -> tuple[ExperimentConfig, ValidationReport]:
    report = ValidationReport()
    path = Path(config_path)
    with path.open(encoding="utf-8") as fh:
        try:
            doc = yaml.safe_load(fh)
        except yaml.YAMLError as exc:
            raise ConfigError([f"YAML syntax: {exc}"]) from None
    config = _parse(doc, path.resolve().parent, report)
    if config is None:
        raise ConfigError(report.errors)
    return config, report
