"""CSV ingestion, preprocessing and train/test splitting for tabular data.

The pipeline is::

    schema = load_schema("compas.schema.yaml")
    table = load_csv("compas.csv", schema)
    table, report = drop_high_missing(table, threshold=1000)
    dataset = split_train_test(table, 0.8, Rng(0))

``split_train_test`` fits every statistic on the training rows only: the
imputation values, the categorical integer codes and the standardisation
(population standard deviation; zero-variance columns keep std 1).
"""
from __future__ import annotations

import csv
import math
from collections import Counter
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import yaml

from .numerics import ParameterError, Rng

CONTINUOUS = "continuous"
CATEGORICAL = "categorical"


class SchemaError(ValueError):
    pass


class IngestionError(ValueError):
    pass


class EncodingError(ValueError):
    pass


class EmptyDatasetError(ValueError):
    pass


@dataclass(frozen=True)
class FeatureSpec:
    name: str
    kind: str = CONTINUOUS
    valid_range: tuple[float, float] | None = None
    categories: tuple[str, ...] | None = None

    def __post_init__(self):
        if self.kind not in (CONTINUOUS, CATEGORICAL):
            raise SchemaError(f"feature {self.name!r}: unknown kind {self.kind!r}")
        if self.valid_range is not None:
            lo, hi = self.valid_range
            if not lo <= hi:
                raise SchemaError(f"feature {self.name!r}: range [{lo}, {hi}] is empty")
        if self.categories is not None and len(self.categories) == 0:
            raise SchemaError(f"feature {self.name!r}: empty category set")


@dataclass(frozen=True)
class FeatureSchema:
    features: tuple[FeatureSpec, ...]
    label: str
    label_categories: tuple[str, ...] | None = None

    def __post_init__(self):
        names = [f.name for f in self.features]
        if len(set(names)) != len(names):
            raise SchemaError("feature names must be unique")
        if self.label in names:
            raise SchemaError(f"label column {self.label!r} is also listed as a feature")
        if not names:
            raise SchemaError("schema has no features")

    @property
    def names(self) -> list[str]:
        return [f.name for f in self.features]

    @property
    def kinds(self) -> list[str]:
        return [f.kind for f in self.features]

    @property
    def categorical_mask(self) -> np.ndarray:
        return np.array([f.kind == CATEGORICAL for f in self.features])

    def subset(self, names) -> "FeatureSchema":
        keep = set(names)
        return replace(self, features=tuple(f for f in self.features if f.name in keep))

    @classmethod
    def all_continuous(cls, m: int, label: str = "label") -> "FeatureSchema":
        return cls(tuple(FeatureSpec(f"x{j}") for j in range(m)), label)


def _spec_from_mapping(entry: dict) -> FeatureSpec:
    rng = entry.get("range")
    cats = entry.get("categories")
    return FeatureSpec(
        name=str(entry["name"]),
        kind=entry.get("kind", CONTINUOUS),
        valid_range=None if rng is None else (float(rng[0]), float(rng[1])),
        categories=None if cats is None else tuple(str(c) for c in cats),
    )


def parse_schema(doc: dict) -> FeatureSchema:
    """Build a schema from its YAML document form.

    Every feature entry carries ``name`` and optionally ``kind``,
    ``range: [lo, hi]``, ``categories: [...]`` and ``label: true``. Exactly
    one entry must be flagged as the label.
    """
    entries = doc.get("features") if isinstance(doc, dict) else None
    if not entries:
        raise SchemaError("schema document needs a non-empty 'features' list")
    labels = [e for e in entries if e.get("label")]
    if len(labels) != 1:
        raise SchemaError(f"exactly one feature must have 'label: true', found {len(labels)}")
    label = labels[0]
    cats = label.get("categories")
    return FeatureSchema(
        features=tuple(_spec_from_mapping(e) for e in entries if not e.get("label")),
        label=str(label["name"]),
        label_categories=None if cats is None else tuple(str(c) for c in cats),
    )


def load_schema(path) -> FeatureSchema:
    with open(path, encoding="utf-8") as fh:
        return parse_schema(yaml.safe_load(fh))


def schema_to_doc(schema: FeatureSchema) -> dict:
    entries = []
    for f in schema.features:
        e = {"name": f.name, "kind": f.kind}
        if f.valid_range is not None:
            e["range"] = list(f.valid_range)
        if f.categories is not None:
            e["categories"] = list(f.categories)
        entries.append(e)
    lab = {"name": schema.label, "kind": CATEGORICAL, "label": True}
    if schema.label_categories is not None:
        lab["categories"] = list(schema.label_categories)
    entries.append(lab)
    return {"features": entries}


@dataclass
class RawTable:
    """Parsed cells before splitting.

    Continuous columns are float arrays with NaN for missing cells; categorical
    columns are object arrays of strings with None for missing cells until
    :func:`encode_categoricals` turns them into float codes.
    """

    schema: FeatureSchema
    columns: list[np.ndarray]
    labels: np.ndarray
    encoded: bool = False

    @property
    def n_rows(self) -> int:
        return len(self.labels)

    def missing_mask(self, j: int) -> np.ndarray:
        col = self.columns[j]
        if col.dtype == object:
            return np.array([v is None for v in col], dtype=bool)
        return np.isnan(col)

    def missing_cells(self) -> list[tuple[int, str]]:
        """(0-based data row, column name) for every missing cell, row-major."""
        cells = []
        masks = [self.missing_mask(j) for j in range(len(self.columns))]
        for i in range(self.n_rows):
            for j, name in enumerate(self.schema.names):
                if masks[j][i]:
                    cells.append((i, name))
        return cells

    def take(self, rows) -> "RawTable":
        rows = np.asarray(rows)
        return RawTable(self.schema, [c[rows] for c in self.columns], self.labels[rows], self.encoded)


def load_csv(path, schema: FeatureSchema, missing_token: str = "NA") -> RawTable:
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise SchemaError(f"{path}: empty file") from None
        expected = set(schema.names) | {schema.label}
        if set(header) != expected or len(header) != len(expected):
            missing = sorted(expected - set(header))
            extra = sorted(set(header) - expected)
            raise SchemaError(f"{path}: header mismatch (missing {missing}, unexpected {extra})")
        pos = {name: k for k, name in enumerate(header)}
        raw_cols: list[list] = [[] for _ in schema.features]
        labels = []
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise IngestionError(f"{path}:{line_no}: expected {len(header)} cells, got {len(row)}")
            for j, f in enumerate(schema.features):
                cell = row[pos[f.name]].strip()
                if cell == missing_token or cell == "":
                    raw_cols[j].append(None)
                elif f.kind == CONTINUOUS:
                    try:
                        value = float(cell)
                    except ValueError:
                        value = math.nan
                    if not math.isfinite(value):
                        raise IngestionError(
                            f"{path}:{line_no}: column {f.name!r}: cannot parse {cell!r} as a number"
                        )
                    raw_cols[j].append(value)
                else:
                    if f.categories is not None and cell not in f.categories:
                        raise IngestionError(
                            f"{path}:{line_no}: column {f.name!r}: {cell!r} not in declared categories"
                        )
                    raw_cols[j].append(cell)
            lab = row[pos[schema.label]].strip()
            if lab == missing_token or lab == "":
                raise IngestionError(f"{path}:{line_no}: missing label")
            labels.append(lab)
    columns = []
    for f, vals in zip(schema.features, raw_cols):
        if f.kind == CONTINUOUS:
            columns.append(np.array([math.nan if v is None else v for v in vals], dtype=float))
        else:
            columns.append(np.array(vals, dtype=object))
    return RawTable(schema, columns, np.array(labels, dtype=object))


@dataclass(frozen=True)
class MissingnessReport:
    names: tuple[str, ...]
    missing: tuple[int, ...]
    total: int
    dropped: tuple[bool, ...]
    threshold: int

    def kept(self) -> list[str]:
        return [n for n, d in zip(self.names, self.dropped) if not d]


def drop_high_missing(table: RawTable, threshold: int) -> tuple[RawTable, MissingnessReport]:
    """Remove features with more than ``threshold`` missing cells.

    Cells left missing in surviving features are imputed later, by
    :func:`split_train_test`, from training-row statistics.
    """
    if threshold < 0:
        raise ParameterError("missing-value threshold must be non-negative")
    counts = [int(table.missing_mask(j).sum()) for j in range(len(table.columns))]
    dropped = [c > threshold for c in counts]
    report = MissingnessReport(
        tuple(table.schema.names), tuple(counts), table.n_rows, tuple(dropped), int(threshold)
    )
    if all(dropped):
        raise EmptyDatasetError(f"every feature has more than {threshold} missing values")
    keep = [j for j, d in enumerate(dropped) if not d]
    schema = table.schema.subset(report.kept())
    return RawTable(schema, [table.columns[j] for j in keep], table.labels, table.encoded), report


def encode_categoricals(table: RawTable, fit_rows=None, category_maps=None):
    """Map categorical strings to integer codes.

    Codes follow first appearance over ``fit_rows`` (all rows by default);
    categories the schema declares but the fit rows never show are appended
    in schema order. Passing ``category_maps`` applies existing maps instead
    of fitting. Returns ``(encoded_table, category_maps)``.
    """
    if table.encoded:
        raise EncodingError("table is already encoded")
    fit_rows = np.arange(table.n_rows) if fit_rows is None else np.asarray(fit_rows)
    maps = {} if category_maps is None else dict(category_maps)
    columns = []
    for f, col in zip(table.schema.features, table.columns):
        if f.kind != CATEGORICAL:
            columns.append(col)
            continue
        if category_maps is None:
            mapping: dict[str, int] = {}
            for v in col[fit_rows]:
                if v is not None and v not in mapping:
                    mapping[v] = len(mapping)
            for v in f.categories or ():
                mapping.setdefault(v, len(mapping))
            if not mapping:
                mapping = {"": 0}
            maps[f.name] = mapping
        mapping = maps[f.name]
        codes = np.empty(len(col), dtype=float)
        for i, v in enumerate(col):
            if v is None:
                codes[i] = math.nan
            elif v in mapping:
                codes[i] = mapping[v]
            else:
                raise EncodingError(
                    f"column {f.name!r}: category {v!r} unseen when the encoding was fitted"
                )
        columns.append(codes)
    return RawTable(table.schema, columns, table.labels, encoded=True), maps


def _label_map(labels: np.ndarray, declared) -> dict[str, int]:
    if declared is not None:
        mapping = {str(c): k for k, c in enumerate(declared)}
    else:
        values = sorted(set(labels))
        try:
            values = sorted(values, key=float)
        except ValueError:
            pass
        mapping = {v: k for k, v in enumerate(values)}
    unknown = set(labels) - set(mapping)
    if unknown:
        raise EncodingError(f"labels {sorted(unknown)} are not among the declared classes")
    return mapping


@dataclass(frozen=True)
class PreprocessStats:
    means: dict[str, float]
    stds: dict[str, float]
    impute: dict[str, float]
    category_maps: dict[str, dict[str, int]]
    label_map: dict[str, int]


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    schema: FeatureSchema
    train_idx: np.ndarray
    test_idx: np.ndarray
    stats: PreprocessStats
    valid_ranges: np.ndarray = field(repr=False)
    name: str = "dataset"

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    @property
    def n_classes(self) -> int:
        return len(self.stats.label_map)

    @property
    def X_train(self) -> np.ndarray:
        return self.features[self.train_idx]

    @property
    def y_train(self) -> np.ndarray:
        return self.labels[self.train_idx]

    @property
    def X_test(self) -> np.ndarray:
        return self.features[self.test_idx]

    @property
    def y_test(self) -> np.ndarray:
        return self.labels[self.test_idx]

    @property
    def categorical_mask(self) -> np.ndarray:
        return self.schema.categorical_mask

    @property
    def category_counts(self) -> np.ndarray:
        """Number of integer codes per feature (0 for continuous features)."""
        return np.array(
            [len(self.stats.category_maps[f.name]) if f.kind == CATEGORICAL else 0
             for f in self.schema.features]
        )


def split_train_test(table: RawTable, train_fraction: float, rng: Rng, name: str = "dataset") -> Dataset:
    n = table.n_rows
    if not 0 < train_fraction < 1:
        raise ParameterError(f"train_fraction must lie in (0, 1), got {train_fraction}")
    n_train = int(math.floor(n * train_fraction))
    if n_train == 0 or n_train == n:
        raise ParameterError(f"a {train_fraction} split of {n} rows leaves one side empty")
    perm = rng.permutation(n)
    train_idx = np.sort(perm[:n_train])
    test_idx = np.sort(perm[n_train:])
    return preprocess(table, train_idx, test_idx, name=name)


def preprocess(table: RawTable, train_idx, test_idx, name: str = "dataset",
               category_maps=None) -> Dataset:
    """Impute, encode and standardise ``table`` with statistics from ``train_idx``."""
    train_idx = np.asarray(train_idx, dtype=int)
    test_idx = np.asarray(test_idx, dtype=int)
    if table.encoded:
        if category_maps is None and table.schema.categorical_mask.any():
            raise EncodingError("an encoded table needs the category maps it was encoded with")
        encoded, maps = table, dict(category_maps or {})
    else:
        encoded, maps = encode_categoricals(table, fit_rows=train_idx)
    schema = table.schema

    X = np.column_stack(encoded.columns).astype(float)
    means, stds, impute = {}, {}, {}
    ranges = np.zeros((X.shape[1], 2))
    for j, f in enumerate(schema.features):
        col = X[:, j]
        train_col = col[train_idx]
        observed = train_col[~np.isnan(train_col)]
        if f.kind == CONTINUOUS:
            fill = float(observed.mean()) if observed.size else 0.0
        else:
            fill = 0.0
            if observed.size:
                # ties go to the lowest code, i.e. the category seen first
                counts = Counter(observed.tolist())
                top = max(counts.values())
                fill = float(min(c for c, k in counts.items() if k == top))
        impute[f.name] = fill
        col = np.where(np.isnan(col), fill, col)
        if f.kind == CONTINUOUS:
            mu = float(col[train_idx].mean())
            sd = float(col[train_idx].std())
            if sd == 0.0:
                sd = 1.0
            means[f.name], stds[f.name] = mu, sd
            col = (col - mu) / sd
            if f.valid_range is not None:
                ranges[j] = [(f.valid_range[0] - mu) / sd, (f.valid_range[1] - mu) / sd]
            else:
                ranges[j] = [col[train_idx].min(), col[train_idx].max()]
        else:
            ranges[j] = [0.0, float(len(maps[f.name]) - 1)]
        X[:, j] = col

    label_map = _label_map(table.labels, schema.label_categories)
    y = np.array([label_map[v] for v in table.labels], dtype=int)
    stats = PreprocessStats(means, stds, impute, maps, label_map)
    return Dataset(X, y, schema, train_idx, test_idx, stats, ranges, name)


def write_csv(dataset: Dataset, path) -> None:
    """Write the preprocessed features with original category and label strings."""
    inv_maps = {k: {code: cat for cat, code in m.items()} for k, m in dataset.stats.category_maps.items()}
    inv_labels = {code: lab for lab, code in dataset.stats.label_map.items()}
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(dataset.schema.names + [dataset.schema.label])
        for row, lab in zip(dataset.features, dataset.labels):
            cells = []
            for f, v in zip(dataset.schema.features, row):
                cells.append(inv_maps[f.name][int(v)] if f.kind == CATEGORICAL else repr(float(v)))
            w.writerow(cells + [inv_labels[int(lab)]])


def stratified_sample(dataset: Dataset, n: int, rng: Rng) -> np.ndarray:
    """Draw ``n`` test-split row indices with class-proportional counts.

    Per-class quotas use largest-remainder rounding (ties to the lower class
    index), so the total is exactly ``n``.
    """
    pool = dataset.test_idx
    if not 0 <= n <= len(pool):
        raise ParameterError(f"cannot draw {n} rows from a test split of {len(pool)}")
    labels = dataset.labels[pool]
    classes = np.unique(labels)
    counts = np.array([(labels == c).sum() for c in classes])
    exact = n * counts / counts.sum()
    quota = np.floor(exact).astype(int)
    rest = n - quota.sum()
    order = sorted(range(len(classes)), key=lambda k: (-(exact[k] - quota[k]), k))
    for k in order[:rest]:
        quota[k] += 1
    picked = []
    for c, q in zip(classes, quota):
        members = pool[labels == c]
        picked.append(members[rng.choice(len(members), int(q))])
    return np.sort(np.concatenate(picked))


def synth_labels(X: np.ndarray, informative) -> np.ndarray:
    return (np.asarray(X)[:, list(informative)].sum(axis=1) > 0).astype(int)


def synth_dataset(n: int, m: int, informative, rng: Rng, train_fraction: float = 0.8,
                  name: str = "synthetic") -> Dataset:
    """Gaussian features whose label is the sign of the informative-feature sum."""
    informative = sorted(set(int(i) for i in informative))
    if not informative or informative[0] < 0 or informative[-1] >= m:
        raise ParameterError(f"informative set {informative} must be a non-empty subset of 0..{m - 1}")
    if n < 2 or m < 1:
        raise ParameterError("need n >= 2 and m >= 1")
    X = rng.split("features").normal(0.0, 1.0, size=(n, m))
    y = synth_labels(X, informative)
    # both classes are declared so a degenerate draw still yields two classes
    schema = replace(FeatureSchema.all_continuous(m), label_categories=("0", "1"))
    table = RawTable(schema, [X[:, j].copy() for j in range(m)], np.array([str(v) for v in y], dtype=object))
    return split_train_test(table, train_fraction, rng.split("split"), name=name)
