"""Baseline (reference input) generators and their taxonomy.

A baseline method may be *static* (one baseline for every observation) or
*dynamic*, and *deterministic* (repeat calls agree) or *stochastic*. Each
method declares its label in :data:`TAXONOMY`; :func:`check_static` and
:func:`check_deterministic` test the declaration empirically.

Randomness is drawn in two places. Draws shared by every observation of one
call (the expectation reference sample, the blurred permutations) come from
``rng.split("reference")`` / ``rng.split("permutations")``. Per-observation
draws (gaussian and uniform noise) come from ``rng.split("row", i)`` for the
i-th observation of the call.
"""
from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from .numerics import ParameterError, Rng

METHODS = ("constant", "max_distance", "blurred", "gaussian", "uniform", "expectation")

STATIC, DYNAMIC = "static", "dynamic"
DETERMINISTIC, STOCHASTIC = "deterministic", "stochastic"


class DataError(ValueError):
    pass


@dataclass(frozen=True)
class TaxonomyLabel:
    spatial: str
    variability: str

    def __post_init__(self):
        if self.spatial not in (STATIC, DYNAMIC) or self.variability not in (DETERMINISTIC, STOCHASTIC):
            raise ParameterError(f"invalid taxonomy label {self}")


TAXONOMY = {
    "constant": TaxonomyLabel(STATIC, DETERMINISTIC),
    "max_distance": TaxonomyLabel(DYNAMIC, DETERMINISTIC),
    "blurred": TaxonomyLabel(DYNAMIC, STOCHASTIC),
    "gaussian": TaxonomyLabel(DYNAMIC, STOCHASTIC),
    "uniform": TaxonomyLabel(DYNAMIC, STOCHASTIC),
    "expectation": TaxonomyLabel(STATIC, STOCHASTIC),
}

# config keys accepted per method (besides "method")
_KEYS = {
    "constant": {"value"},
    "max_distance": set(),
    "blurred": {"blur_sigma", "radius", "permutations"},
    "gaussian": {"sigma"},
    "uniform": {"ranges"},
    "expectation": {"sample_size"},
}


@dataclass(frozen=True)
class BaselineSpec:
    method: str
    value: float | tuple[float, ...] = 0.0
    blur_sigma: float = 1.0
    radius: int = 2
    permutations: int = 1000
    sigma: float = 1.0
    ranges: tuple[tuple[float, float], ...] | None = None
    sample_size: int = 100

    def __post_init__(self):
        if self.method not in METHODS:
            raise ParameterError(f"unknown baseline method {self.method!r}; choose from {METHODS}")
        if self.blur_sigma < 0 or self.sigma < 0 or self.radius < 0:
            raise ParameterError("sigmas and blur radius must be non-negative")
        if self.permutations < 1 or self.sample_size < 1:
            raise ParameterError("permutations and sample_size must be at least 1")
        if self.ranges is not None and any(lo > hi for lo, hi in self.ranges):
            raise ParameterError("uniform ranges need lo <= hi")

    @property
    def name(self) -> str:
        return self.method

    @classmethod
    def from_dict(cls, doc: dict) -> "BaselineSpec":
        doc = dict(doc)
        method = doc.pop("method", None)
        if method not in METHODS:
            raise ParameterError(f"unknown baseline method {method!r}")
        unknown = set(doc) - _KEYS[method]
        if unknown:
            raise ParameterError(f"baseline {method!r} does not take {sorted(unknown)}")
        if "value" in doc and isinstance(doc["value"], (list, tuple)):
            doc["value"] = tuple(float(v) for v in doc["value"])
        if "ranges" in doc:
            doc["ranges"] = tuple((float(lo), float(hi)) for lo, hi in doc["ranges"])
        return cls(method=method, **doc)

    def to_dict(self) -> dict:
        out = {"method": self.method}
        for f in fields(self):
            if f.name in _KEYS[self.method]:
                v = getattr(self, f.name)
                out[f.name] = list(map(list, v)) if f.name == "ranges" and v is not None else (
                    list(v) if isinstance(v, tuple) else v)
        return out


@dataclass(frozen=True)
class BaselineVector:
    values: np.ndarray
    method: str


def gaussian_kernel(sigma: float, radius: int) -> np.ndarray:
    """Normalised truncated Gaussian weights for offsets -radius..radius."""
    offsets = np.arange(-radius, radius + 1, dtype=float)
    if sigma == 0:
        return (offsets == 0).astype(float)
    # squaring |offset| / sigma overflows for tiny sigma; exp(-inf) is the right limit
    with np.errstate(over="ignore"):
        k = np.exp(-0.5 * (offsets / sigma) ** 2)
    return k / k.sum()


def blur_rows(X: np.ndarray, sigma: float, radius: int) -> np.ndarray:
    """Convolve each row with the Gaussian kernel, clamping at the edges."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    kernel = gaussian_kernel(sigma, radius)
    m = X.shape[1]
    out = np.zeros_like(X)
    for t, w in zip(range(-radius, radius + 1), kernel):
        src = np.clip(np.arange(m) + t, 0, m - 1)
        out += w * X[:, src]
    return out


def blurred_rows(X: np.ndarray, spec: BaselineSpec, rng: Rng) -> np.ndarray:
    """Blur under random feature orderings and average back in the original order."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    m = X.shape[1]
    prng = rng.split("permutations")
    acc = np.zeros_like(X)
    for _ in range(spec.permutations):
        perm = prng.permutation(m)
        blurred = blur_rows(X[:, perm], spec.blur_sigma, spec.radius)
        acc[:, perm] += blurred
    return acc / spec.permutations


def max_distance_rows(X: np.ndarray, reference: np.ndarray) -> np.ndarray:
    """Row of ``reference`` farthest from each row of ``X`` in l1 (first on ties)."""
    if len(reference) == 0:
        raise DataError("max_distance needs a non-empty reference set")
    out = np.empty_like(X)
    for i, x in enumerate(X):
        out[i] = reference[np.argmax(np.abs(reference - x).sum(axis=1))]
    return out


def expectation_reference(spec: BaselineSpec, dataset, rng: Rng) -> np.ndarray:
    """The training rows drawn as the expectation baseline's reference sample."""
    X_train = dataset.X_train
    if len(X_train) == 0:
        raise DataError("expectation baseline needs training rows")
    size = min(spec.sample_size, len(X_train))
    idx = rng.split("reference").choice(len(X_train), size)
    return X_train[np.sort(idx)]


def generate_batch(spec: BaselineSpec, X, dataset, rng: Rng) -> np.ndarray:
    """Baselines for every row of ``X`` from a single call of the method."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    n, m = X.shape
    if m != dataset.n_features:
        raise ParameterError(f"observation has {m} features, dataset has {dataset.n_features}")
    method = spec.method
    if method == "constant":
        value = np.broadcast_to(np.asarray(spec.value, dtype=float), (m,))
        return np.tile(value, (n, 1))
    if method == "max_distance":
        return max_distance_rows(X, dataset.X_train)
    if method == "blurred":
        return blurred_rows(X, spec, rng)
    if method == "gaussian":
        return np.stack([x + rng.split("row", i).normal(0.0, spec.sigma, size=m) for i, x in enumerate(X)])
    if method == "uniform":
        ranges = np.asarray(spec.ranges if spec.ranges is not None else dataset.valid_ranges, dtype=float)
        if ranges.shape != (m, 2):
            raise ParameterError(f"uniform ranges must have shape ({m}, 2)")
        return np.stack([rng.split("row", i).uniform(ranges[:, 0], ranges[:, 1]) for i in range(n)])
    if method == "expectation":
        mean = expectation_reference(spec, dataset, rng).mean(axis=0)
        return np.tile(mean, (n, 1))
    raise AssertionError(method)


def generate(spec: BaselineSpec, x, dataset, rng: Rng) -> BaselineVector:
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise ParameterError("generate() takes a single observation")
    return BaselineVector(generate_batch(spec, x[None, :], dataset, rng)[0], spec.method)


def declared_taxonomy(spec: BaselineSpec) -> TaxonomyLabel:
    return TAXONOMY[spec.method]


@dataclass(frozen=True)
class Verdict:
    label: str
    witness: tuple = ()


def check_static(spec: BaselineSpec, dataset, n_pairs: int, rng: Rng, atol: float = 1e-12) -> Verdict:
    """Empirical static/dynamic test.

    Each pair of distinct observations goes through one joint call of the
    method on one shared stream, so per-call draws are common to both
    observations. A pair whose baselines differ is returned as the witness.
    """
    if n_pairs < 1:
        raise ParameterError("n_pairs must be at least 1")
    X = dataset.features
    if len(X) < 2:
        raise DataError("need at least two observations")
    pick = rng.split("pairs")
    for k in range(n_pairs):
        i, j = (int(v) for v in pick.choice(len(X), 2))
        b = generate_batch(spec, X[[i, j]], dataset, rng.split("pair", k))
        if np.max(np.abs(b[0] - b[1])) > atol:
            return Verdict(DYNAMIC, (i, j))
    return Verdict(STATIC)


def check_deterministic(spec: BaselineSpec, x, dataset, n_runs: int, rng: Rng,
                        atol: float = 1e-12) -> Verdict:
    """Empirical deterministic/stochastic test over independent child streams."""
    if n_runs < 2:
        raise ParameterError("n_runs must be at least 2")
    first = generate(spec, x, dataset, rng.split("run", 0)).values
    for r in range(1, n_runs):
        other = generate(spec, x, dataset, rng.split("run", r)).values
        if np.max(np.abs(first - other)) > atol:
            return Verdict(STOCHASTIC, (0, r))
    return Verdict(DETERMINISTIC)


def empirical_taxonomy(spec: BaselineSpec, dataset, rng: Rng, n_pairs: int = 100,
                       n_runs: int = 20) -> TaxonomyLabel:
    x = dataset.X_test[0] if len(dataset.test_idx) else dataset.features[0]
    return TaxonomyLabel(
        check_static(spec, dataset, n_pairs, rng.split("static")).label,
        check_deterministic(spec, x, dataset, n_runs, rng.split("deterministic")).label,
    )
