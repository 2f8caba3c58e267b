"""Dense linear algebra helpers and the seedable random stream used everywhere.

Matrices are plain ``float64`` numpy arrays. The helpers here add the shape and
finiteness checks the rest of the package relies on.

Random numbers come from :class:`Rng`, a thin wrapper around numpy's PCG64
bit generator. Child streams are derived with :meth:`Rng.split`, which hashes
the parent seed together with a label path (BLAKE2b, 8-byte digest) into a new
64-bit seed. Splitting never advances the parent, so ``rng.split("a", 3)``
always names the same stream no matter when or how often it is called.
"""
from __future__ import annotations

import hashlib

import numpy as np

__all__ = [
    "ShapeError",
    "SingularMatrixError",
    "ParameterError",
    "as_matrix",
    "matmul",
    "solve_wls",
    "Rng",
    "rng_uniform",
    "rng_normal",
    "rng_permutation",
]


class ShapeError(ValueError):
    pass


class SingularMatrixError(ArithmeticError):
    pass


class ParameterError(ValueError):
    pass


def as_matrix(a, name="matrix"):
    """Return ``a`` as a finite 2-d float64 array."""
    m = np.asarray(a, dtype=np.float64)
    if m.ndim != 2:
        raise ShapeError(f"{name} must be 2-d, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError(f"{name} has non-finite entries")
    return m


def matmul(a, b):
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    out = a @ b
    if not np.all(np.isfinite(out)):
        raise ArithmeticError("matrix product overflowed")
    return out


def _cholesky_solve(gram, rhs):
    # numpy's cholesky accepts some numerically singular matrices; reject a
    # vanishing pivot explicitly.
    lower = np.linalg.cholesky(gram)
    pivots = np.diag(lower) ** 2
    if pivots.min() <= 1e-13 * max(pivots.max(), np.finfo(float).tiny):
        raise np.linalg.LinAlgError("near-zero pivot")
    y = np.linalg.solve(lower, rhs)
    return np.linalg.solve(lower.T, y)


def solve_wls(design, targets, weights, ridge_fallback=True):
    """Weighted least squares via the normal equations.

    Minimises ``sum(w * (y - X @ beta) ** 2)``. When the weighted Gram matrix
    cannot be Cholesky-factorised, a ridge term ``1e-10 * trace / n`` is added
    to the diagonal and the factorisation retried (only if ``ridge_fallback``).

    Raises:
        SingularMatrixError: the normal equations stay singular.
    """
    X = as_matrix(design, "design")
    y = np.asarray(targets, dtype=np.float64).ravel()
    w = np.asarray(weights, dtype=np.float64).ravel()
    if y.shape[0] != X.shape[0] or w.shape[0] != X.shape[0]:
        raise ShapeError(
            f"design has {X.shape[0]} rows but targets/weights have {y.shape[0]}/{w.shape[0]}"
        )
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise ParameterError("weights must be finite and non-negative")

    Xw = X * w[:, None]
    gram = X.T @ Xw
    rhs = Xw.T @ y
    try:
        return _cholesky_solve(gram, rhs)
    except np.linalg.LinAlgError:
        if not ridge_fallback:
            raise SingularMatrixError("weighted normal equations are singular") from None
    n = gram.shape[0]
    lam = 1e-10 * np.trace(gram) / n
    if lam <= 0:
        raise SingularMatrixError("weighted design is identically zero")
    try:
        return _cholesky_solve(gram + lam * np.eye(n), rhs)
    except np.linalg.LinAlgError:
        raise SingularMatrixError("normal equations singular even after ridge fallback") from None


class Rng:
    """Reproducible random stream with label-addressed child streams."""

    def __init__(self, seed: int):
        seed = int(seed)
        if not 0 <= seed < 2**64:
            raise ParameterError(f"seed must be a 64-bit unsigned integer, got {seed}")
        self.seed = seed
        self._gen = np.random.Generator(np.random.PCG64(seed))

    def __repr__(self):
        return f"Rng(seed={self.seed})"

    @property
    def generator(self) -> np.random.Generator:
        return self._gen

    def split(self, *labels) -> "Rng":
        path = "/".join(str(label) for label in labels)
        digest = hashlib.blake2b(f"{self.seed}|{path}".encode(), digest_size=8).digest()
        return Rng(int.from_bytes(digest, "little"))

    def uniform(self, lo=0.0, hi=1.0, size=None):
        lo_a, hi_a = np.asarray(lo, dtype=float), np.asarray(hi, dtype=float)
        if np.any(lo_a > hi_a) or not (np.all(np.isfinite(lo_a)) and np.all(np.isfinite(hi_a))):
            raise ParameterError(f"invalid uniform bounds [{lo}, {hi}]")
        u = self._gen.random(size=size if size is not None else np.broadcast(lo_a, hi_a).shape)
        out = lo_a + (hi_a - lo_a) * u
        # keep degenerate intervals exact
        out = np.where(lo_a == hi_a, lo_a, out)
        return float(out) if np.ndim(out) == 0 else out

    def normal(self, mean=0.0, sd=1.0, size=None):
        sd_a = np.asarray(sd, dtype=float)
        if np.any(sd_a < 0) or not np.all(np.isfinite(sd_a)):
            raise ParameterError(f"invalid standard deviation {sd}")
        mean_a = np.asarray(mean, dtype=float)
        z = self._gen.standard_normal(size=size if size is not None else np.broadcast(mean_a, sd_a).shape)
        out = mean_a + sd_a * z
        return float(out) if np.ndim(out) == 0 else out

    def integers(self, high, size=None):
        return self._gen.integers(0, high, size=size)

    def permutation(self, n: int) -> np.ndarray:
        if n < 0:
            raise ParameterError("permutation length must be non-negative")
        return self._gen.permutation(n)

    def choice(self, n: int, k: int) -> np.ndarray:
        """``k`` distinct indices from ``range(n)``."""
        if not 0 <= k <= n:
            raise ParameterError(f"cannot choose {k} of {n} without replacement")
        return self._gen.choice(n, size=k, replace=False)


def rng_uniform(rng: Rng, lo: float, hi: float) -> float:
    return rng.uniform(lo, hi)


def rng_normal(rng: Rng, mean: float, sd: float) -> float:
    return rng.normal(mean, sd)


def rng_permutation(rng: Rng, n: int) -> np.ndarray:
    return rng.permutation(n)
