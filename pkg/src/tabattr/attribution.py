"""Integrated Gradients, DeepLIFT (Rescale), KernelSHAP and DeepSHAP.

Gradient-based methods explain the class logit of :class:`MLPModel`
(``model.class_logit``). KernelSHAP only needs ``predict_proba`` and, when
configured with ``kshap_value="logit"``, ``class_logit``.
"""
from __future__ import annotations

from dataclasses import dataclass
from math import comb

import numpy as np

from .baselines import BaselineSpec, expectation_reference, generate_batch
from .model import MLPModel
from .numerics import ParameterError, Rng, ShapeError, solve_wls

METHODS = ("ig", "deeplift", "kernel_shap", "deep_shap")

DEEPLIFT_EPS = 1e-9
IG_RULES = ("auto", "midpoint", "segments")


class CapabilityError(TypeError):
    pass


@dataclass(frozen=True)
class AttributionConfig:
    ig_steps: int = 300
    ig_rule: str = "auto"
    kshap_samples: int = 2048
    kshap_exhaustive_threshold: int = 12
    kshap_value: str = "probability"
    deepshap_background_size: int | None = None
    baseline_draws: int = 1

    def __post_init__(self):
        if self.ig_steps < 1 or self.kshap_exhaustive_threshold < 1 or self.baseline_draws < 1:
            raise ParameterError(f"invalid attribution config {self}")
        if self.ig_rule not in IG_RULES:
            raise ParameterError(f"ig_rule must be one of {IG_RULES}")
        if self.kshap_value not in ("probability", "logit"):
            raise ParameterError("kshap_value must be 'probability' or 'logit'")
        if self.deepshap_background_size is not None and self.deepshap_background_size < 1:
            raise ParameterError("deepshap_background_size must be at least 1")


@dataclass(frozen=True)
class AttributionVector:
    values: np.ndarray
    target_class: int
    method: str
    baseline: np.ndarray
    baseline_method: str = "explicit"


def _pair(x, b):
    x = np.asarray(x, dtype=float)
    b = np.asarray(b, dtype=float)
    if x.ndim != 1 or x.shape != b.shape:
        raise ShapeError(f"observation {x.shape} and baseline {b.shape} must be equal-length vectors")
    return x, b


def path_cells(model, x, b, steps: int, rule: str = "auto"):
    """Quadrature cells on the straight path from ``b`` (alpha=0) to ``x`` (alpha=1).

    Returns ``(midpoints, widths)`` in alpha. ``midpoint`` is the uniform
    ``steps``-cell rule. ``segments`` further cuts each uniform cell where a
    hidden ReLU pre-activation changes sign, so the gradient is constant on
    every cell and the rule integrates a ReLU network's path exactly.
    ``auto`` picks ``segments`` when the model exposes ``hidden_pre``.
    """
    if steps < 1:
        raise ParameterError("steps must be at least 1")
    if rule not in IG_RULES:
        raise ParameterError(f"unknown quadrature rule {rule!r}")
    edges = np.linspace(0.0, 1.0, steps + 1)
    if rule == "segments" or (rule == "auto" and hasattr(model, "hidden_pre")):
        z0, z1 = model.hidden_pre(np.stack([b, x]))
        dz = z1 - z0
        moving = dz != 0
        cross = -z0[moving] / dz[moving]
        edges = np.unique(np.concatenate([edges, cross[(cross > 0) & (cross < 1)]]))
    widths = np.diff(edges)
    keep = widths > 0
    return (edges[:-1] + edges[1:])[keep] / 2, widths[keep]


def integrated_gradients(model, x, b, c: int, steps: int = 300, rule: str = "auto") -> AttributionVector:
    """Path integral of the class-logit gradient (see :func:`path_cells`)."""
    x, b = _pair(x, b)
    alphas, widths = path_cells(model, x, b, steps, rule)
    path = b + alphas[:, None] * (x - b)
    grads = model.input_gradients(path, c)
    return AttributionVector((x - b) * (widths @ grads), c, "ig", b)


def _require_mlp(model):
    if not isinstance(model, MLPModel):
        raise CapabilityError(f"DeepLIFT propagation is only defined for MLPModel, got {type(model).__name__}")


def deeplift_rescale(model, x, b, c: int) -> AttributionVector:
    """Rescale-rule multipliers through the single ReLU layer."""
    _require_mlp(model)
    x, b = _pair(x, b)
    return AttributionVector(_deeplift_many(model, x, b[None, :], c).mean(axis=0), c, "deeplift", b)


def _deeplift_many(model: MLPModel, x: np.ndarray, B: np.ndarray, c: int) -> np.ndarray:
    """DeepLIFT attributions of ``x`` against each reference row of ``B``."""
    w_out, _ = model.head(c)
    z = x @ model.W1 + model.b1
    z0 = B @ model.W1 + model.b1
    dz = z - z0
    safe = np.abs(dz) > DEEPLIFT_EPS
    ratio = (np.maximum(z, 0.0) - np.maximum(z0, 0.0)) / np.where(safe, dz, 1.0)
    mult = np.where(safe, ratio, (z > 0.0).astype(float))
    return (x - B) * ((mult * w_out) @ model.W1.T)


def deep_shap(model, x, background, c: int) -> AttributionVector:
    """DeepLIFT averaged over a background set of references."""
    _require_mlp(model)
    B = np.atleast_2d(np.asarray(background, dtype=float))
    if B.shape[0] == 0 or B.size == 0:
        raise ParameterError("deep_shap needs a non-empty background")
    x = np.asarray(x, dtype=float)
    if B.shape[1] != x.shape[0]:
        raise ShapeError("background rows and observation differ in length")
    return AttributionVector(_deeplift_many(model, x, B, c).mean(axis=0), c, "deep_shap", B)


def shapley_kernel_weight(m: int, s: int) -> float:
    return (m - 1) / (comb(m, s) * s * (m - s))


def all_coalitions(m: int) -> np.ndarray:
    """Every coalition except the empty and the full one, as 0/1 rows."""
    codes = np.arange(1, 2**m - 1)
    return ((codes[:, None] >> np.arange(m)) & 1).astype(float)


def sample_coalitions(m: int, n: int, rng: Rng) -> np.ndarray:
    """``n`` coalitions drawn with probability proportional to the Shapley kernel."""
    sizes = np.arange(1, m)
    size_mass = (m - 1) / (sizes * (m - sizes))
    drawn = rng.generator.choice(sizes, size=n, p=size_mass / size_mass.sum())
    Z = np.zeros((n, m))
    for k, s in enumerate(drawn):
        Z[k, rng.generator.choice(m, size=s, replace=False)] = 1.0
    return Z


def _value_fn(predictor, c: int, kind: str):
    if kind == "logit":
        if not hasattr(predictor, "class_logit"):
            raise CapabilityError("kshap_value='logit' needs a predictor with class_logit()")
        return lambda H: np.asarray(predictor.class_logit(H, c), dtype=float)
    return lambda H: np.asarray(predictor.predict_proba(H), dtype=float)[:, c]


def kernel_shap(predictor, x, b, c: int, config: AttributionConfig = AttributionConfig(),
                rng: Rng | None = None) -> AttributionVector:
    """Shapley values of the coalition game ``v(z) = f(x where z else b)``.

    The efficiency constraint ``sum(phi) = v(full) - v(empty)`` is eliminated
    by solving for the last feature's value, and the remaining coefficients
    come from the Shapley-kernel weighted regression. With at most
    ``kshap_exhaustive_threshold`` features every coalition is enumerated and
    the result is exact.
    """
    x, b = _pair(x, b)
    m = len(x)
    value = _value_fn(predictor, c, config.kshap_value)
    v_ends = value(np.stack([b, x]))
    v_empty, v_full = float(v_ends[0]), float(v_ends[1])
    delta = v_full - v_empty
    if m == 1:
        return AttributionVector(np.array([delta]), c, "kernel_shap", b)

    if m <= config.kshap_exhaustive_threshold:
        Z = all_coalitions(m)
        sizes = Z.sum(axis=1).astype(int)
        weights = np.array([shapley_kernel_weight(m, s) for s in sizes])
    else:
        if config.kshap_samples < m + 2:
            raise ParameterError(f"need at least {m + 2} coalition samples for {m} features")
        if rng is None:
            raise ParameterError("sampled KernelSHAP needs an rng")
        Z = sample_coalitions(m, config.kshap_samples, rng)
        weights = np.ones(len(Z))

    hybrid = np.where(Z > 0, x, b)
    v = value(hybrid)
    last = Z[:, -1]
    design = Z[:, :-1] - last[:, None]
    target = v - v_empty - last * delta
    beta = solve_wls(design, target, weights)
    phi = np.append(beta, delta - beta.sum())
    return AttributionVector(phi, c, "kernel_shap", b)


def _explain_row(method, model, x, b, c, config, rng):
    if method == "ig":
        return integrated_gradients(model, x, b, c, config.ig_steps, config.ig_rule).values
    if method == "deeplift":
        return deeplift_rescale(model, x, b, c).values
    if method == "kernel_shap":
        return kernel_shap(model, x, b, c, config, rng).values
    if method == "deep_shap":
        return deep_shap(model, x, b[None, :], c).values
    raise ParameterError(f"unknown attribution method {method!r}; choose from {METHODS}")


def attribute_rows(method: str, model, X, spec: BaselineSpec, dataset,
                   config: AttributionConfig, rng: Rng):
    """Attribute every row of ``X`` to its predicted class.

    Baselines for all rows come from one call of the baseline method per
    draw (stream ``rng.split("baseline", d)``), so static methods give every
    row the same reference. DeepSHAP with the expectation baseline uses the
    drawn reference rows as its background instead of their mean.

    Returns ``(attributions, target_classes, baselines)``; ``baselines`` holds
    the first draw's references (the background mean for DeepSHAP/expectation).
    """
    if method not in METHODS:
        raise ParameterError(f"unknown attribution method {method!r}; choose from {METHODS}")
    X = np.atleast_2d(np.asarray(X, dtype=float))
    targets = model.predict_class(X)
    out = np.zeros_like(X)
    first_baselines = None
    for d in range(config.baseline_draws):
        stream = rng.split("baseline", d)
        if method == "deep_shap" and spec.method == "expectation":
            background = expectation_reference(spec, dataset, stream)
            if config.deepshap_background_size is not None:
                background = background[: config.deepshap_background_size]
            B = np.tile(background.mean(axis=0), (len(X), 1))
            for i, x in enumerate(X):
                out[i] += deep_shap(model, x, background, int(targets[i])).values
        else:
            B = generate_batch(spec, X, dataset, stream)
            for i, x in enumerate(X):
                out[i] += _explain_row(method, model, x, B[i], int(targets[i]), config,
                                       rng.split("kshap", d, i))
        if first_baselines is None:
            first_baselines = B
    return out / config.baseline_draws, targets, first_baselines


def attribute(method: str, model, x, spec: BaselineSpec, dataset,
              config: AttributionConfig, rng: Rng) -> AttributionVector:
    values, targets, baselines = attribute_rows(method, model, np.asarray(x, dtype=float)[None, :],
                                                spec, dataset, config, rng)
    return AttributionVector(values[0], int(targets[0]), method, baselines[0], spec.method)
