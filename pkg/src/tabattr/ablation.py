"""Top-K ablation: mask the most-attributed features with noise, watch F1 drop.

Noise is addressed by ``rng.split("mask", k_percent, repeat)``: one stream
produces a full ``(rows, M)`` noise block, and a masked feature takes its
value from that block. Whatever the ranking, the same (row, feature) cell
therefore receives the same noise value, so curves computed with the same
``rng`` differ only through which features get masked.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .numerics import ParameterError, Rng

DEFAULT_K_GRID = tuple(range(0, 100, 10))


@dataclass(frozen=True)
class AblationCurve:
    k_grid: tuple[float, ...]
    f1_values: tuple[float, ...]
    f1_std: tuple[float, ...] = ()
    metadata: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if len(self.k_grid) != len(self.f1_values):
            raise ParameterError("k_grid and f1_values differ in length")
        check_k_grid(self.k_grid)


@dataclass(frozen=True)
class AggregateCurve:
    k_grid: tuple[float, ...]
    mean_f1: tuple[float, ...]
    std_f1: tuple[float, ...]
    n_curves: int


def check_k_grid(k_grid) -> None:
    k = list(k_grid)
    if not k or k[0] != 0:
        raise ParameterError("k_grid must start at 0")
    if any(b <= a for a, b in zip(k, k[1:])):
        raise ParameterError("k_grid must be strictly increasing")
    if k[-1] > 100:
        raise ParameterError("k_grid values must not exceed 100")


def rank_features(values, mode: str = "signed") -> np.ndarray:
    """Feature indices by descending attribution; ties keep the lower index first."""
    a = np.asarray(values, dtype=float)
    if mode == "absolute":
        a = np.abs(a)
    elif mode != "signed":
        raise ParameterError(f"ranking mode must be 'signed' or 'absolute', got {mode!r}")
    return np.argsort(-a, kind="stable")


def n_masked(m: int, k_percent: float) -> int:
    if not 0 <= k_percent <= 100:
        raise ParameterError(f"k_percent must lie in [0, 100], got {k_percent}")
    # exact rational arithmetic so that e.g. 10 features at 30% mask 3, not 4
    return math.ceil(Fraction(m) * Fraction(k_percent) / 100)


def draw_noise(n_rows: int, category_counts, rng: Rng) -> np.ndarray:
    """Noise block: standard normal, or a uniform code for categorical columns."""
    counts = np.asarray(category_counts)
    m = len(counts)
    normal = rng.normal(0.0, 1.0, size=(n_rows, m))
    u = rng.uniform(0.0, 1.0, size=(n_rows, m))
    codes = np.floor(u * np.maximum(counts, 1))
    return np.where(counts > 0, codes, normal)


def mask_top_k(x, ranking, k_percent: float, category_counts, rng: Rng) -> np.ndarray:
    """Replace the top ``ceil(M*k/100)`` ranked features of one observation with noise."""
    x = np.asarray(x, dtype=float)
    noise = draw_noise(1, category_counts, rng)[0]
    return _mask(x[None, :], np.asarray(ranking)[None, :], k_percent, noise[None, :])[0]


def _mask(X, rankings, k_percent, noise):
    count = n_masked(X.shape[1], k_percent)
    out = X.copy()
    if count:
        rows = np.arange(len(X))[:, None]
        cols = rankings[:, :count]
        out[rows, cols] = noise[rows, cols]
    return out


def f1_score(predictions, labels, scheme: str = "binary-positive", n_classes: int | None = None) -> float:
    """Binary F1 of class 1, or the unweighted mean of per-class F1 (``macro``).

    A class with no true positives scores 0, including classes that are
    neither predicted nor present.
    """
    p = np.asarray(predictions).astype(int)
    y = np.asarray(labels).astype(int)
    if p.shape != y.shape:
        raise ParameterError("predictions and labels differ in length")
    if p.size == 0:
        raise ParameterError("f1_score of an empty sample")

    def one(c):
        tp = np.sum((p == c) & (y == c))
        fp = np.sum((p == c) & (y != c))
        fn = np.sum((p != c) & (y == c))
        return 0.0 if tp == 0 else 2.0 * tp / (2.0 * tp + fp + fn)

    if scheme == "binary-positive":
        return float(one(1))
    if scheme == "macro":
        k = n_classes if n_classes is not None else int(max(p.max(), y.max())) + 1
        return float(np.mean([one(c) for c in range(k)]))
    raise ParameterError(f"unknown F1 scheme {scheme!r}")


def default_scheme(n_classes: int) -> str:
    return "binary-positive" if n_classes == 2 else "macro"


def _curve(model, X, y, rankings, k_grid, category_counts, rng, repeats, n_classes, metadata):
    check_k_grid(k_grid)
    if repeats < 1:
        raise ParameterError("repeats must be at least 1")
    scheme = default_scheme(n_classes)
    means, stds = [], []
    for k in k_grid:
        if k == 0:
            score = f1_score(model.predict_class(X), y, scheme, n_classes)
            means.append(score)
            stds.append(0.0)
            continue
        scores = []
        for r in range(repeats):
            noise = draw_noise(len(X), category_counts, rng.split("mask", float(k), r))
            masked = _mask(X, rankings, k, noise)
            scores.append(f1_score(model.predict_class(masked), y, scheme, n_classes))
        means.append(float(np.mean(scores)))
        stds.append(float(np.std(scores)))
    return AblationCurve(tuple(k_grid), tuple(means), tuple(stds), dict(metadata))


def ablation_curve(model, dataset, attributions, k_grid=DEFAULT_K_GRID, rng: Rng | None = None,
                   repeats: int = 10, rows=None, mode: str = "signed", metadata=None) -> AblationCurve:
    """F1 over masked-feature percentages, each row masked along its own ranking.

    ``attributions`` holds one row per evaluated observation; ``rows`` are
    their dataset indices (the whole test split by default).
    """
    rows = dataset.test_idx if rows is None else np.asarray(rows)
    A = np.atleast_2d(np.asarray(attributions, dtype=float))
    if A.shape != (len(rows), dataset.n_features):
        raise ParameterError(f"expected attributions of shape {(len(rows), dataset.n_features)}, got {A.shape}")
    rankings = np.stack([rank_features(a, mode) for a in A])
    return _curve(model, dataset.features[rows], dataset.labels[rows], rankings, k_grid,
                  dataset.category_counts, rng or Rng(0), repeats, dataset.n_classes, metadata or {})


def random_control_curve(model, dataset, k_grid=DEFAULT_K_GRID, rng: Rng | None = None,
                         repeats: int = 10, rows=None, metadata=None) -> AblationCurve:
    """Same protocol with a uniformly random ranking per row (stream ``rng.split("rank", i)``)."""
    rng = rng or Rng(0)
    rows = dataset.test_idx if rows is None else np.asarray(rows)
    m = dataset.n_features
    rankings = np.stack([rng.split("rank", i).permutation(m) for i in range(len(rows))])
    return _curve(model, dataset.features[rows], dataset.labels[rows], rankings, k_grid,
                  dataset.category_counts, rng, repeats, dataset.n_classes, metadata or {})


def aggregate_curves(curves) -> AggregateCurve:
    curves = list(curves)
    if not curves:
        raise ParameterError("nothing to aggregate")
    grid = tuple(curves[0].k_grid)
    if any(tuple(c.k_grid) != grid for c in curves):
        raise ParameterError("curves do not share a k_grid")
    F = np.array([c.f1_values for c in curves], dtype=float)
    return AggregateCurve(grid, tuple(F.mean(axis=0).tolist()), tuple(F.std(axis=0).tolist()), len(curves))


def area_under_curve(curve: AblationCurve) -> float:
    """Trapezoidal area under F1 over K/100; lower means more discriminative."""
    k = np.asarray(curve.k_grid, dtype=float) / 100.0
    f = np.asarray(curve.f1_values, dtype=float)
    return float(np.sum((k[1:] - k[:-1]) * (f[1:] + f[:-1]) / 2.0))
